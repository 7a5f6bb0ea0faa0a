//! The `mar-rppg` command line: `synth`, `train`, `eval`, `infer` and
//! `gradcheck`.
//!
//! Exit codes: 0 success, 1 operational error, 2 verification failure.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

use crate::data::{load_manifest, read_chunk, synth_dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, predict_trace, Clip};
use crate::metrics::bland_altman;
use crate::model::Erea;
use crate::numerics::rng::{stream, substream};
use crate::numerics::{checkpoint, ParamStore};
use crate::signal::{bandpass, detect_peaks, detrend, heart_rate, hrv_lf_hf, interbeat_intervals, HrvReport, SignalConfig};
use crate::training::{log_csv, train_with};
use crate::verify::{registry, run_checks, CheckResult, GradCase, POINTS, TOLERANCE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;

pub const TRAIN_LOG_FILE: &str = "training_log.csv";
pub const METRICS_FILE: &str = "metrics_report.csv";
pub const BLAND_ALTMAN_FILE: &str = "bland_altman.csv";
pub const HRV_FILE: &str = "hrv_report.csv";

#[derive(Debug, Parser)]
#[command(name = "mar-rppg", version, about = "Remote PPG with masked attention regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration file (`key = value` lines)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (the dataset directory for `synth`)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Omit the timestamp comment line from CSV outputs
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest
    Synth(Common),
    /// Train a model on the manifest's train split
    Train(Common),
    /// Score a checkpoint on the manifest's test split
    Eval(Common),
    /// Run a checkpoint on one chunk file
    Infer {
        #[command(flatten)]
        common: Common,
        /// Chunk file (.marc)
        chunk: PathBuf,
    },
    /// Compare every backward rule against central differences
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Random points per check
        #[arg(long, default_value_t = POINTS)]
        points: usize,
    },
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Synth(c) => resolve(c, true).and_then(|cfg| cmd_synth(&cfg)),
        Command::Train(c) => resolve(c, false).and_then(|cfg| cmd_train(&cfg, c.deterministic)),
        Command::Eval(c) => resolve(c, false).and_then(|cfg| cmd_eval(&cfg, c.deterministic)),
        Command::Infer { common, chunk } => resolve(common, false).and_then(|cfg| cmd_infer(&cfg, chunk, common.deterministic)),
        Command::Gradcheck { common, points } => {
            return match resolve(common, false) {
                Ok(cfg) => cmd_gradcheck(&registry(), *points, cfg.seed),
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_ERROR
                }
            };
        }
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

/// Defaults, then the config file, then command-line overrides.
fn resolve(c: &Common, out_is_data_dir: bool) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        if out_is_data_dir {
            cfg.data_dir = o.clone();
        } else {
            cfg.out_dir = o.clone();
        }
    }
    Ok(cfg)
}

/// Prepends a creation-time comment unless `deterministic`.
fn stamp(csv: String, deterministic: bool) -> String {
    if deterministic {
        return csv;
    }
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("# created_unix={secs}\n{csv}")
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let synth = cfg.synth_config();
    let manifest = synth_dataset(&synth, cfg.n_train, cfg.n_val, cfg.n_test, &cfg.data_dir)?;
    println!(
        "{} ({} train, {} val, {} test chunks)",
        cfg.data_dir.join(config::MANIFEST_FILE).display(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, deterministic: bool) -> Result<()> {
    let manifest = load_manifest(&cfg.manifest_path())?;
    let chunks = manifest.load_split(Split::Train)?;
    create_dir(&cfg.out_dir)?;
    let tcfg = cfg.train_config();
    let per_epoch = tcfg.batches_per_epoch(chunks.len()).max(1);
    let mut records = Vec::new();
    let outcome = train_with(&tcfg, &cfg.model_config(), &chunks, |r| {
        if r.step % per_epoch == per_epoch - 1 {
            eprintln!("epoch {}/{} loss {:.6}", r.step / per_epoch + 1, tcfg.epochs, r.loss_total);
        }
        records.push(*r);
    });
    let log_path = cfg.out_dir.join(TRAIN_LOG_FILE);
    write(&log_path, &stamp(log_csv(&records), deterministic))?;
    let run = match outcome {
        Ok(run) => run,
        Err(e @ Error::Diverged { .. }) => {
            eprintln!("training diverged; {} completed steps logged to {}", records.len(), log_path.display());
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    let ckpt = cfg.out_dir.join(config::CHECKPOINT_FILE);
    checkpoint::save(&ckpt, &run.store)?;
    cfg.save(&cfg.out_dir.join(config::CONFIG_FILE))?;
    match run.log.last() {
        Some(r) => println!("final loss {:.6} after {} steps", r.loss_total, run.log.len()),
        None => println!("no training steps run"),
    }
    println!("{}", ckpt.display());
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<(Erea, ParamStore)> {
    let mut store = ParamStore::new();
    let model = Erea::new(cfg.model_config(), &mut store, &mut substream(cfg.seed, stream::MODEL_INIT))?;
    checkpoint::load_into(&cfg.checkpoint_path(), &mut store)?;
    Ok((model, store))
}

/// HRV of a predicted trace, when it holds enough beats.
fn trace_hrv(trace: &[f64], fs: f64, cfg: &SignalConfig) -> Result<HrvReport> {
    let s = bandpass(&detrend(trace, cfg.detrend_lambda)?, fs, cfg.hr_band)?;
    hrv_lf_hf(&interbeat_intervals(&detect_peaks(&s, fs)?, fs)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cmd_eval(cfg: &RunConfig, deterministic: bool) -> Result<()> {
    let manifest = load_manifest(&cfg.manifest_path())?;
    let (model, store) = load_model(cfg)?;
    let clips: Vec<Clip> = manifest.load_clips(Split::Test)?;
    if clips.is_empty() {
        return Err(Error::InsufficientData("manifest has no test chunks".into()));
    }
    let scfg = cfg.signal_config();
    let mut hrv_rows = String::new();
    let mut clip_ids = clips.iter().map(|(id, _)| id.clone());
    let report = evaluate_with(&clips, &scfg, |chunks| {
        let trace = predict_trace(&model, &store, chunks)?;
        let id = clip_ids.next().unwrap_or_default();
        if let Ok(h) = trace_hrv(&trace, chunks[0].fs, &scfg) {
            let _ = writeln!(
                hrv_rows,
                "{id},{},{},{},{}",
                h.lf_power,
                h.hf_power,
                opt(h.lf_hf_ratio),
                opt(h.rf_hz)
            );
        }
        Ok(trace)
    })?;
    create_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join(METRICS_FILE), &stamp(report.to_csv(), deterministic))?;
    let ba = bland_altman(&report.gt(), &report.pred())?;
    write(&cfg.out_dir.join(BLAND_ALTMAN_FILE), &stamp(ba.to_csv(), deterministic))?;
    if !hrv_rows.is_empty() {
        let csv = format!("source_id,lf_power,hf_power,lf_hf_ratio,rf_hz\n{hrv_rows}");
        write(&cfg.out_dir.join(HRV_FILE), &stamp(csv, deterministic))?;
    }
    println!(
        "n={} mae={:.4} rmse={:.4} mape={:.2}% r={}",
        report.n,
        report.mae,
        report.rmse,
        100.0 * report.mape,
        report.pearson_r.map(|r| format!("{r:.4}")).unwrap_or_else(|| "undefined".into())
    );
    println!("{}", cfg.out_dir.join(METRICS_FILE).display());
    Ok(())
}

pub fn cmd_infer(cfg: &RunConfig, chunk_path: &Path, deterministic: bool) -> Result<()> {
    let chunk = read_chunk(chunk_path)?;
    let (model, store) = load_model(cfg)?;
    let (signal, maps) = model.infer(&store, &chunk.frames)?;
    let bpm = heart_rate(&signal, chunk.fs, &cfg.signal_config())?;

    create_dir(&cfg.out_dir)?;
    let stem = chunk_path.file_stem().and_then(|s| s.to_str()).unwrap_or("chunk");
    let signal_path = cfg.out_dir.join(format!("{stem}_signal.csv"));
    let csv = crate::signal::csv::signal_to_csv(&signal, chunk.fs);
    write(&signal_path, &stamp(csv, deterministic))?;

    let s = maps.shape();
    let (t, e, h, w) = (s[0], s[1], s[2], s[3]);
    let mut csv = String::from("t,expert,h,w,value\n");
    let mut values = maps.data().iter();
    for ti in 0..t {
        for ei in 0..e {
            for y in 0..h {
                for x in 0..w {
                    let v = values.next().expect("maps size");
                    let _ = writeln!(csv, "{ti},{ei},{y},{x},{v}");
                }
            }
        }
    }
    let attention_path = cfg.out_dir.join(format!("{stem}_attention.csv"));
    write(&attention_path, &stamp(csv, deterministic))?;
    println!("HR {bpm:.2} BPM");
    println!("{}", signal_path.display());
    println!("{}", attention_path.display());
    Ok(())
}

/// Table of check results, one row per op.
pub fn gradcheck_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(2).max(2);
    let mut out = format!("{:width$}  {:>13}  status\n", "op", "max_rel_error");
    for r in results {
        let status = if r.passed { "ok" } else { "FAIL" };
        let _ = writeln!(out, "{:width$}  {:>13.3e}  {status}", r.name, r.max_rel_error);
    }
    out
}

/// Runs `cases`, prints the table and returns the exit code.
pub fn cmd_gradcheck(cases: &[GradCase], points: usize, seed: u64) -> i32 {
    let results = run_checks(cases, points, seed);
    print!("{}", gradcheck_table(&results));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        println!("all {} checks below {TOLERANCE:e}", results.len());
        EXIT_OK
    } else {
        eprintln!("gradcheck failed: {}", failed.join(", "));
        EXIT_VERIFY
    }
}
