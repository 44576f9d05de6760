//! Subcommand implementations. Errors are classified into the process exit
//! codes: 1 usage/config, 2 training divergence, 3 I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use aiol_core::data::{generate_synthetic, DatasetBundle};
use aiol_core::temperature;
use aiol_core::trainer::{self, TrainOutput};
use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, ThresholdModeName};
use crate::io::{self, Checkpoint};
use crate::report::{evaluate_model, mean_std, Report, SeedEntry, SCHEMA_VERSION};

/// Failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: bad usage, bad config, failed verification.
    Config(String),
    /// Exit 2: training diverged.
    Diverged(String),
    /// Exit 3: filesystem trouble.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Diverged(_) => 2,
            CliError::Io(_) => 3,
        }
    }
    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Diverged(m) | CliError::Io(m) => m,
        }
    }
}

pub type CliResult = std::result::Result<(), CliError>;

fn cfg_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn io_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Io(e.to_string())
}

fn ensure_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(io_err)?;
    fs::write(path, text + "\n")
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn obtain_bundle(
    config: &ExperimentConfig,
    data_dir: Option<&Path>,
) -> Result<DatasetBundle, CliError> {
    match data_dir {
        Some(dir) => io::load_bundle(dir).map_err(cfg_err),
        None => generate_synthetic(&config.data.to_spec()).map_err(cfg_err),
    }
}

pub fn cmd_gen_data(config: &ExperimentConfig, out: &Path) -> CliResult {
    let spec = config.data.to_spec();
    let bundle = generate_synthetic(&spec).map_err(cfg_err)?;
    ensure_out(out)?;
    io::write_bundle(out, &bundle, spec.d).map_err(io_err)?;
    println!(
        "wrote 6 splits to {} (|L|={}, |U|={}, |V|={})",
        out.display(),
        bundle.labeled.len(),
        bundle.unlabeled.len(),
        bundle.validation.len()
    );
    Ok(())
}

/// Train every seed, writing trace/checkpoint files and a report.
pub fn cmd_train(
    config: &ExperimentConfig,
    out: &Path,
    data_dir: Option<&Path>,
) -> CliResult {
    let bundle = obtain_bundle(config, data_dir)?;
    ensure_out(out)?;
    let hash = config.content_hash();
    let mut entries = Vec::new();
    let mut diverged: Option<String> = None;

    for &seed in &config.seeds {
        let tc = config.train_config(seed);
        let result: TrainOutput = trainer::train(&tc, &bundle).map_err(cfg_err)?;

        let trace_name = format!("trace_seed{seed}.csv");
        let ckpt_name = format!("checkpoint_seed{seed}.bin");
        io::write_trace(&out.join(&trace_name), &result.trace).map_err(io_err)?;
        io::write_checkpoint(
            &out.join(&ckpt_name),
            &Checkpoint {
                config_hash: hash,
                seed,
                params: result.params.clone(),
                ema: result.ema.clone(),
            },
        )
        .map_err(io_err)?;

        if let Some(epoch) = result.diverged_at {
            diverged = Some(format!(
                "training diverged at epoch {epoch} (seed {seed}); partial trace written to {trace_name}"
            ));
            break;
        }

        // final detector: EMA parameters, confidence at T = 1
        let mut entry: SeedEntry = evaluate_model(&result.ema, &bundle, 1.0, seed).map_err(cfg_err)?;
        entry.trace_file = Some(trace_name);
        entry.checkpoint_file = Some(ckpt_name);
        println!(
            "seed {seed}: accuracy {:.4}, seen AUROC {:.4}, unseen AUROC {:.4}",
            entry.accuracy, entry.seen.auroc, entry.unseen.auroc
        );
        entries.push(entry);
    }

    if !entries.is_empty() {
        let report = Report::new(config.content_hash_hex(), entries);
        write_json(&out.join("report.json"), &report)?;
    }
    match diverged {
        Some(msg) => Err(CliError::Diverged(msg)),
        None => Ok(()),
    }
}

pub fn cmd_eval(
    config: &ExperimentConfig,
    out: &Path,
    checkpoint: &Path,
    data_dir: Option<&Path>,
) -> CliResult {
    let ckpt = io::read_checkpoint(checkpoint).map_err(cfg_err)?;
    if ckpt.config_hash != config.content_hash() {
        return Err(CliError::Config(format!(
            "checkpoint {} was produced under a different configuration \
             (hash {} != current {}); re-train or restore the original config",
            checkpoint.display(),
            hex(&ckpt.config_hash),
            config.content_hash_hex()
        )));
    }
    let bundle = obtain_bundle(config, data_dir)?;
    let entry =
        evaluate_model(&ckpt.ema, &bundle, config.eval.temperature, ckpt.seed).map_err(cfg_err)?;
    let report = Report::new(config.content_hash_hex(), vec![entry]);
    let text = serde_json::to_string_pretty(&report).map_err(io_err)?;
    println!("{text}");
    ensure_out(out)?;
    fs::write(out.join("eval_report.json"), text + "\n").map_err(io_err)?;
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Serialize)]
struct PairVerdict {
    s_in: f64,
    s_out: f64,
    eq4_verdict: bool,
    eq5_verdict: bool,
    c_estimate: serde_json::Value,
}

#[derive(Serialize)]
struct TheoremSummary {
    schema_version: u32,
    grid_t_max: f64,
    grid_step: f64,
    total: usize,
    passed: usize,
    pairs: Vec<PairVerdict>,
}

/// Verify the gap monotonicity for explicit pairs and/or random pairs.
/// Explicit pairs also get a gap-curve CSV each.
pub fn cmd_verify_theorem(
    out: &Path,
    explicit: &[(f64, f64)],
    random: Option<usize>,
    t_max: f64,
    step: f64,
) -> CliResult {
    if explicit.is_empty() && random.is_none() {
        return Err(CliError::Config(
            "verify-theorem needs --pair S_IN,S_OUT and/or --random N".into(),
        ));
    }
    let grid = temperature::default_grid(t_max, step);
    ensure_out(out)?;

    let mut pairs: Vec<(f64, f64)> = explicit.to_vec();
    if let Some(n) = random {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..n {
            let s_out = 0.5 + rng.random::<f64>() * 0.499;
            let s_in = s_out + (1.0 - 1e-9 - s_out) * rng.random::<f64>().max(1e-6);
            pairs.push((s_in, s_out));
        }
    }

    let mut verdicts = Vec::with_capacity(pairs.len());
    let mut passed = 0usize;
    for (i, &(s_in, s_out)) in pairs.iter().enumerate() {
        let report = temperature::verify_theorem1(s_in, s_out, &grid).map_err(cfg_err)?;
        if report.eq4_verdict && report.eq5_verdict {
            passed += 1;
        }
        if i < explicit.len() {
            let mut csv = String::from("T,gap\n");
            for (t, gap) in &report.gap_curve {
                let _ = writeln!(csv, "{t},{gap}");
            }
            let curve_path = out.join(format!("gap_curve_{}.csv", i + 1));
            fs::write(&curve_path, csv)
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", curve_path.display())))?;
        }
        verdicts.push(PairVerdict {
            s_in,
            s_out,
            eq4_verdict: report.eq4_verdict,
            eq5_verdict: report.eq5_verdict,
            c_estimate: serde_json::to_value(&report.c_estimate).map_err(io_err)?,
        });
    }

    let total = verdicts.len();
    let summary = TheoremSummary {
        schema_version: SCHEMA_VERSION,
        grid_t_max: t_max,
        grid_step: step,
        total,
        passed,
        pairs: verdicts,
    };
    write_json(&out.join("theorem_report.json"), &summary)?;
    println!("{passed}/{total} pairs satisfied both monotonicity claims");
    if passed != total {
        return Err(CliError::Config(format!(
            "{} of {total} pairs violated the expected monotonicity",
            total - passed
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    variant: String,
    seen_auroc: crate::report::MeanStd,
    unseen_auroc: crate::report::MeanStd,
    accuracy: crate::report::MeanStd,
    /// Detection AUROC on U at the final epoch, when defined.
    #[serde(skip_serializing_if = "Option::is_none")]
    final_auroc_u: Option<crate::report::MeanStd>,
    /// Final-epoch selection F-scores, when selection ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    final_f_in: Option<crate::report::MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_f_out: Option<crate::report::MeanStd>,
    seen_auroc_delta_vs_reference: f64,
}

#[derive(Serialize)]
struct AblationReport {
    schema_version: u32,
    ablation: String,
    seeds: Vec<u64>,
    rows: Vec<AblationRow>,
}

fn run_variant(
    label: &str,
    config: &ExperimentConfig,
    bundle: &DatasetBundle,
) -> Result<AblationRow, CliError> {
    let mut seen = Vec::new();
    let mut unseen = Vec::new();
    let mut acc = Vec::new();
    let mut auroc_u = Vec::new();
    let mut f_in = Vec::new();
    let mut f_out = Vec::new();
    for &seed in &config.seeds {
        let tc = config.train_config(seed);
        let result = trainer::train(&tc, bundle).map_err(cfg_err)?;
        if let Some(epoch) = result.diverged_at {
            return Err(CliError::Diverged(format!(
                "variant {label}, seed {seed}: diverged at epoch {epoch}"
            )));
        }
        let entry = evaluate_model(&result.ema, bundle, 1.0, seed).map_err(cfg_err)?;
        seen.push(entry.seen.auroc);
        unseen.push(entry.unseen.auroc);
        acc.push(entry.accuracy);
        if let Some(last) = result.trace.epochs.last() {
            if let Some(a) = last.auroc_u {
                auroc_u.push(a);
            }
            if let Some(p) = &last.sel_prf_in {
                f_in.push(p.f_score);
            }
            if let Some(p) = &last.sel_prf_out {
                f_out.push(p.f_score);
            }
        }
    }
    let opt = |v: &Vec<f64>| {
        if v.len() == config.seeds.len() {
            Some(mean_std(v))
        } else {
            None
        }
    };
    println!(
        "variant {label}: seen AUROC {:.4}, unseen AUROC {:.4}",
        mean_std(&seen).mean,
        mean_std(&unseen).mean
    );
    Ok(AblationRow {
        variant: label.to_string(),
        seen_auroc: mean_std(&seen),
        unseen_auroc: mean_std(&unseen),
        accuracy: mean_std(&acc),
        final_auroc_u: opt(&auroc_u),
        final_f_in: opt(&f_in),
        final_f_out: opt(&f_out),
        seen_auroc_delta_vs_reference: 0.0,
    })
}

/// Run a matched group of configurations (identical data and seeds) and
/// emit side-by-side metrics. The first variant is the reference.
pub fn cmd_ablate(config: &ExperimentConfig, out: &Path, id: &str) -> CliResult {
    let mut variants: Vec<(String, ExperimentConfig)> = Vec::new();
    let base = config.clone();
    match id {
        "temperature" => {
            variants.push(("adaptive".into(), base.clone()));
            for t in [1.0, 0.5, 2.0, 4.0] {
                let mut v = base.clone();
                v.train.adaptive_temperature = false;
                v.train.fixed_temperature = t;
                variants.push((format!("fixed-T={t}"), v));
            }
        }
        "thresholds" => {
            let mut dynamic = base.clone();
            dynamic.train.threshold_mode = ThresholdModeName::DynamicGmm;
            variants.push(("dynamic-gmm".into(), dynamic));
            for (ti, to) in [(0.9, 0.3), (0.7, 0.5)] {
                let mut v = base.clone();
                v.train.threshold_mode = ThresholdModeName::Fixed;
                v.train.fixed_tau_in = ti;
                v.train.fixed_tau_out = to;
                variants.push((format!("fixed-{ti}-{to}"), v));
            }
        }
        "mixup" => {
            for mode in ["modified", "vanilla", "off"] {
                let mut v = base.clone();
                v.train.mixup_mode = match mode {
                    "modified" => aiol_core::trainer::MixupMode::Modified,
                    "vanilla" => aiol_core::trainer::MixupMode::Vanilla,
                    _ => aiol_core::trainer::MixupMode::Off,
                };
                variants.push((format!("mixup-{mode}"), v));
            }
        }
        "modules" => {
            variants.push(("full".into(), base.clone()));
            let mut sup = base.clone();
            sup.train.supervised_only = true;
            variants.push(("supervised-only".into(), sup));
            let mut no_aug = base.clone();
            no_aug.train.selection_augment = false;
            variants.push(("no-selection-augment".into(), no_aug));
            let mut fixed_t = base.clone();
            fixed_t.train.adaptive_temperature = false;
            fixed_t.train.fixed_temperature = 1.0;
            variants.push(("fixed-T=1".into(), fixed_t));
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown ablation id `{other}` (expected temperature, thresholds, mixup, or modules)"
            )));
        }
    }

    let bundle = obtain_bundle(config, None)?;
    ensure_out(out)?;
    let mut rows = Vec::new();
    for (label, variant) in &variants {
        rows.push(run_variant(label, variant, &bundle)?);
    }
    let reference = rows[0].seen_auroc.mean;
    for row in &mut rows {
        row.seen_auroc_delta_vs_reference = row.seen_auroc.mean - reference;
    }
    let report = AblationReport {
        schema_version: SCHEMA_VERSION,
        ablation: id.to_string(),
        seeds: config.seeds.clone(),
        rows,
    };
    write_json(&out.join(format!("ablation_{id}.json")), &report)?;
    Ok(())
}
