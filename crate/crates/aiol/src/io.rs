//! File formats: sample CSV splits, the per-epoch training-trace CSV, and
//! the versioned binary checkpoint with an embedded config hash.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use aiol_core::data::{DatasetBundle, OodTruth, Sample};
use aiol_core::nn::{Activation, Layer, ParameterSet};
use aiol_core::trainer::TrainingTrace;
use anyhow::{bail, Context, Result};

/// CSV header exactly matching the trace schema; empty cells where an epoch
/// has no value (stage 1 thresholds, undefined AUROC).
pub const TRACE_HEADER: &str = "epoch,T_t,tau_in,tau_out,n_sel_in,n_sel_out,loss_s,loss_cr,loss_emin,loss_emax,sel_P_in,sel_R_in,sel_F_in,sel_P_out,sel_R_out,sel_F_out,auroc_U";

const SPLIT_NAMES: [&str; 6] = [
    "labeled",
    "unlabeled",
    "validation",
    "test_id",
    "test_seen_ood",
    "test_unseen_ood",
];

fn truth_str(t: OodTruth) -> &'static str {
    match t {
        OodTruth::Id => "id",
        OodTruth::SeenOod => "seen",
        OodTruth::UnseenOod => "unseen",
    }
}

/// Write one split as CSV with header `f1,...,fd[,label][,ood_truth]`.
/// The label column is emitted when any sample is labeled; the ood_truth
/// column when the split mixes truth values or holds OOD samples.
pub fn write_samples_csv(path: &Path, samples: &[Sample], d: usize) -> Result<()> {
    let with_label = samples.iter().any(|s| s.label.is_some());
    let with_truth = samples.iter().any(|s| s.ood_truth != OodTruth::Id) || !with_label;
    let mut out = String::new();
    for i in 1..=d {
        if i > 1 {
            out.push(',');
        }
        out.push_str(&format!("f{i}"));
    }
    if with_label {
        out.push_str(",label");
    }
    if with_truth {
        out.push_str(",ood_truth");
    }
    out.push('\n');
    for s in samples {
        let feats: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
        out.push_str(&feats.join(","));
        if with_label {
            out.push(',');
            if let Some(y) = s.label {
                out.push_str(&y.to_string());
            }
        }
        if with_truth {
            out.push(',');
            out.push_str(truth_str(s.ood_truth));
        }
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Read a sample CSV produced by `write_samples_csv` (or hand-written in the
/// same schema). Malformed rows are reported with their 1-based line number.
pub fn load_csv(path: &Path) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read data file {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .with_context(|| format!("{}: empty file, header expected", path.display()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let mut d = 0usize;
    let mut label_col = None;
    let mut truth_col = None;
    for (i, c) in cols.iter().enumerate() {
        match *c {
            "label" => label_col = Some(i),
            "ood_truth" => truth_col = Some(i),
            c if c == format!("f{}", i + 1) => d = i + 1,
            other => bail!("{}: line 1: unexpected column `{other}`", path.display()),
        }
    }
    if d == 0 {
        bail!("{}: line 1: no feature columns found", path.display());
    }
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            bail!(
                "{}: line {lineno}: expected {} cells, found {}",
                path.display(),
                cols.len(),
                cells.len()
            );
        }
        let mut features = Vec::with_capacity(d);
        for (i, cell) in cells[..d].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                anyhow::anyhow!(
                    "{}: line {lineno}: non-numeric value `{cell}` in column f{}",
                    path.display(),
                    i + 1
                )
            })?;
            if !v.is_finite() {
                bail!("{}: line {lineno}: non-finite feature", path.display());
            }
            features.push(v);
        }
        let label = match label_col {
            Some(i) if !cells[i].is_empty() => Some(cells[i].parse::<usize>().map_err(|_| {
                anyhow::anyhow!(
                    "{}: line {lineno}: invalid label `{}`",
                    path.display(),
                    cells[i]
                )
            })?),
            _ => None,
        };
        let ood_truth = match truth_col {
            Some(i) => match cells[i] {
                "id" => OodTruth::Id,
                "seen" => OodTruth::SeenOod,
                "unseen" => OodTruth::UnseenOod,
                other => bail!(
                    "{}: line {lineno}: invalid ood_truth `{other}`",
                    path.display()
                ),
            },
            None => OodTruth::Id,
        };
        if label.is_some() && ood_truth != OodTruth::Id {
            bail!(
                "{}: line {lineno}: labeled sample marked as OOD",
                path.display()
            );
        }
        samples.push(Sample {
            features,
            label,
            ood_truth,
        });
    }
    Ok(samples)
}

/// Paths of the six split files inside a data directory.
pub fn split_paths(dir: &Path) -> [PathBuf; 6] {
    SPLIT_NAMES.map(|n| dir.join(format!("{n}.csv")))
}

pub fn write_bundle(dir: &Path, bundle: &DatasetBundle, d: usize) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let paths = split_paths(dir);
    let splits = [
        &bundle.labeled,
        &bundle.unlabeled,
        &bundle.validation,
        &bundle.test_id,
        &bundle.test_seen_ood,
        &bundle.test_unseen_ood,
    ];
    for (path, split) in paths.iter().zip(splits) {
        write_samples_csv(path, split, d)?;
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let paths = split_paths(dir);
    for p in &paths {
        if !p.exists() {
            bail!("config error: missing data file {}", p.display());
        }
    }
    let [l, u, v, tid, tseen, tunseen] = paths;
    Ok(DatasetBundle {
        labeled: load_csv(&l)?,
        unlabeled: load_csv(&u)?,
        validation: load_csv(&v)?,
        test_id: load_csv(&tid)?,
        test_seen_ood: load_csv(&tseen)?,
        test_unseen_ood: load_csv(&tunseen)?,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render the trace with the exact column schema of `TRACE_HEADER`.
pub fn trace_to_csv(trace: &TrainingTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.epochs {
        let prf_in = r.sel_prf_in.as_ref();
        let prf_out = r.sel_prf_out.as_ref();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.t_t,
            fmt_opt(r.tau_in),
            fmt_opt(r.tau_out),
            r.n_sel_in,
            r.n_sel_out,
            r.loss_s,
            r.loss_cr,
            r.loss_emin,
            r.loss_emax,
            fmt_opt(prf_in.map(|p| p.precision)),
            fmt_opt(prf_in.map(|p| p.recall)),
            fmt_opt(prf_in.map(|p| p.f_score)),
            fmt_opt(prf_out.map(|p| p.precision)),
            fmt_opt(prf_out.map(|p| p.recall)),
            fmt_opt(prf_out.map(|p| p.f_score)),
            fmt_opt(r.auroc_u),
        ));
    }
    out
}

pub fn write_trace(path: &Path, trace: &TrainingTrace) -> Result<()> {
    fs::write(path, trace_to_csv(trace))
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"AIOLCKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub seed: u64,
    pub params: ParameterSet,
    pub ema: ParameterSet,
}

fn write_params(buf: &mut Vec<u8>, params: &ParameterSet) {
    let slope = match params.activation {
        Activation::LeakyRelu { slope } => slope,
    };
    buf.extend_from_slice(&slope.to_le_bytes());
    buf.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        buf.extend_from_slice(&(layer.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.cols as u32).to_le_bytes());
        for v in layer.weights.iter().chain(&layer.bias) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            bail!("checkpoint truncated");
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_params(r: &mut Reader) -> Result<ParameterSet> {
    let slope = r.f64()?;
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 64 {
        bail!("checkpoint corrupt: implausible layer count {n_layers}");
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows == 0 || cols == 0 || rows > 1 << 20 || cols > 1 << 20 {
            bail!("checkpoint corrupt: implausible layer shape {rows}x{cols}");
        }
        let mut weights = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            weights.push(r.f64()?);
        }
        let mut bias = Vec::with_capacity(rows);
        for _ in 0..rows {
            bias.push(r.f64()?);
        }
        layers.push(Layer {
            rows,
            cols,
            weights,
            bias,
        });
    }
    let params = ParameterSet {
        layers,
        activation: Activation::LeakyRelu { slope },
    };
    if !params.is_finite() {
        bail!("checkpoint corrupt: non-finite parameters");
    }
    Ok(params)
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&ckpt.config_hash);
    buf.extend_from_slice(&ckpt.seed.to_le_bytes());
    write_params(&mut buf, &ckpt.params);
    write_params(&mut buf, &ckpt.ema);
    let mut f = fs::File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    f.write_all(&buf)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut data = Vec::new();
    fs::File::open(path)
        .with_context(|| format!("cannot open checkpoint {}", path.display()))?
        .read_to_end(&mut data)
        .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(8)? != CKPT_MAGIC {
        bail!("{}: not a checkpoint file (bad magic)", path.display());
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        bail!(
            "{}: unsupported checkpoint version {version} (expected {CKPT_VERSION})",
            path.display()
        );
    }
    let mut config_hash = [0u8; 32];
    config_hash.copy_from_slice(r.take(32)?);
    let seed = r.u64()?;
    let params = read_params(&mut r)?;
    let ema = read_params(&mut r)?;
    if r.pos != data.len() {
        bail!("{}: trailing bytes after checkpoint payload", path.display());
    }
    Ok(Checkpoint {
        config_hash,
        seed,
        params,
        ema,
    })
}
