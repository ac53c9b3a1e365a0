//! `fairface`: synthesize, evaluate and train from the command line.
//!
//! Exit codes: 0 ok, 1 gradient check failed, 2 configuration, 3 I/O or
//! file format, 4 degenerate data, 5 training divergence. Progress goes to
//! stderr; stdout carries only machine-readable output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairface_core::embedding::{export_csv, import_csv, load_dataset, save_dataset};
use fairface_core::evaluate::{analyze_with, evaluate, EvalOptions, THRESHOLD_BINS};
use fairface_core::kv::KvFile;
use fairface_core::metrics::format_sig9;
use fairface_core::mixfair::{
    grad_check, save_params, scaled_decay_epochs, toy_eval, train, GradCheckConfig, LossMode,
};
use fairface_core::synth::{gen_population, BiasProfile, TrainingSet};
use fairface_core::{
    EngineConfig, Error, TrainConfig, DEFAULT_BINS, DEFAULT_K, DEFAULT_TARGET_FPR,
};

#[derive(Parser)]
#[command(
    name = "fairface",
    version,
    about = "Pairwise fairness evaluation of face embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population from a bias profile.
    Synth {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full evaluation: threshold, rates, similarity and histograms.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TARGET_FPR)]
        target_fpr: f64,
        #[command(flatten)]
        common: EvalArgs,
        /// Writes report.json, identities.csv, hist_intra.csv and hist_inter.csv
        /// instead of printing the report.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Recorded in the report.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Intra- and inter-identity similarity only, as CSV on stdout.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Train the toy model and evaluate it on held-out images.
    TrainToy {
        /// FFEB training data; a quarter of each identity's images is held out.
        #[arg(long, conflicts_with = "profile", required_unless_present = "profile")]
        data: Option<PathBuf>,
        /// Bias profile to generate the training data from.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Key-value training config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// FPR target of the post-training evaluation.
        #[arg(long, default_value_t = 1e-3)]
        target_fpr: f64,
        #[command(flatten)]
        common: EvalArgs,
        /// Receives params.ffmp, trace.csv and report.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        configs: usize,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative control: corrupts the analytic gradient.
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
    /// Convert between CSV and FFEB, chosen by file extension.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct EngineArgs {
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "FAIRFACE_WORKERS", default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value_t = EngineConfig::default().tile)]
    tile: usize,
}

impl EngineArgs {
    fn config(&self) -> EngineConfig {
        EngineConfig::default()
            .with_workers(self.workers)
            .with_tile(self.tile)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[command(flatten)]
    engine: EngineArgs,
}

impl EvalArgs {
    fn options(&self, target_fpr: f64, seed: Option<u64>) -> EvalOptions {
        EvalOptions {
            target_fpr,
            k: self.k,
            bins: self.bins,
            threshold_bins: THRESHOLD_BINS,
            engine: self.engine.config(),
            seed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mixfair,
    Cosface,
}

/// Error with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Io { .. } | Error::Format { .. } | Error::Json(_) => 3,
            Error::Validation(_) | Error::Degenerate(_) | Error::Consistency(_) => 4,
            Error::Divergence { .. } | Error::NonFiniteGradient { .. } => 5,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 3,
        message: format!("i/o error on {}: {e}", path.display()),
    }
}

/// Errors while reading a profile or config are configuration errors.
fn as_config(e: Error) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

fn write_file(
    path: &Path,
    fill: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| io_failure(path, e))?;
    let mut out = BufWriter::new(file);
    fill(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| io_failure(path, e))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

fn print_json(value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string(value).map_err(|e| Failure::from(Error::Json(e)))?;
    println!("{text}");
    Ok(())
}

fn load_profile(path: &Path) -> Result<BiasProfile, Failure> {
    BiasProfile::from_kv(&KvFile::read(path).map_err(as_config)?).map_err(as_config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { profile, seed, out } => {
            let profile = load_profile(&profile)?;
            profile.validate().map_err(as_config)?;
            let (set, _) = gen_population(&profile, seed)?;
            save_dataset(&set, &out)?;
            eprintln!(
                "wrote {} images of {} identities to {}",
                set.len(),
                set.num_identities(),
                out.display()
            );
        }
        Command::Eval {
            input,
            target_fpr,
            common,
            out_dir,
            seed,
        } => {
            let set = load_dataset(&input)?;
            eprintln!(
                "evaluating {} images of {} identities",
                set.len(),
                set.num_identities()
            );
            let mut report = evaluate(&set, &common.options(target_fpr, seed))?.report;
            if report.threshold.degenerate {
                eprintln!(
                    "warning: the FPR budget covers every negative pair; every pair is accepted"
                );
            }
            match out_dir {
                None => print!("{}", report.to_json()?),
                Some(dir) => {
                    create_dir(&dir)?;
                    report.per_identity_csv_path = Some("identities.csv".into());
                    write_file(&dir.join("identities.csv"), |o| {
                        report.write_identity_csv(o)
                    })?;
                    for h in &report.histograms {
                        write_file(&dir.join(format!("hist_{}.csv", h.kind)), |o| {
                            h.table.write_csv(o)
                        })?;
                    }
                    let json = report.to_json()?;
                    write_file(&dir.join("report.json"), |o| o.write_all(json.as_bytes()))?;
                    eprintln!("wrote report to {}", dir.display());
                }
            }
        }
        Command::Analyze { input, k, engine } => {
            let set = load_dataset(&input)?;
            let sim = analyze_with(&set, k, &engine.config())?;
            let mut out = std::io::stdout().lock();
            let fill = |o: &mut std::io::StdoutLock| -> std::io::Result<()> {
                writeln!(o, "identity,name,s_intra,s_inter")?;
                for (k, (a, e)) in sim.intra.iter().zip(&sim.inter).enumerate() {
                    let name = set.labels().identity_name(k);
                    writeln!(o, "{k},{name},{},{}", format_sig9(*a), format_sig9(*e))?;
                }
                Ok(())
            };
            fill(&mut out).map_err(|e| io_failure(Path::new("<stdout>"), e))?;
        }
        Command::TrainToy {
            data,
            profile,
            config,
            mode,
            epochs,
            lr,
            batch_size,
            seed,
            target_fpr,
            common,
            out_dir,
        } => {
            let mut cfg = match &config {
                Some(path) => TrainConfig::from_kv(&KvFile::read(path).map_err(as_config)?)
                    .map_err(as_config)?,
                None => TrainConfig::default(),
            };
            if let Some(epochs) = epochs {
                cfg.epochs = epochs;
                cfg.decay_epochs = scaled_decay_epochs(epochs);
            }
            if let Some(lr) = lr {
                cfg.lr = lr;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            if let Some(mode) = mode {
                cfg.mode = match mode {
                    Mode::Mixfair => LossMode::MixFair,
                    Mode::Cosface => LossMode::CosFace,
                };
            }
            cfg.seed = seed;
            cfg.validate().map_err(as_config)?;
            let set = match (&data, &profile) {
                (Some(path), _) => load_dataset(path)?,
                (None, Some(path)) => gen_population(&load_profile(path)?, seed)?.0,
                (None, None) => unreachable!("clap requires one input"),
            };
            let held = (set.len() / set.num_identities().max(1) / 4).max(1);
            let data = TrainingSet::from_embeddings(&set, held, seed)?;
            create_dir(&out_dir)?;
            let epochs = cfg.epochs;
            let outcome = train(&cfg, &data, |epoch, loss| {
                eprintln!("epoch {}/{epochs} loss {loss:.6}", epoch + 1);
            })?;
            save_params(&outcome.params, out_dir.join("params.ffmp"))?;
            write_file(&out_dir.join("trace.csv"), |o| outcome.trace.write_csv(o))?;
            let report = toy_eval(
                &outcome.params,
                &data,
                &common.options(target_fpr, Some(seed)),
            )?
            .report;
            let json = report.to_json()?;
            write_file(&out_dir.join("report.json"), |o| {
                o.write_all(json.as_bytes())
            })?;
            print_json(&serde_json::json!({
                "final_mean_abs_eps": outcome.trace.mean_abs_eps.last(),
                "tail_mean_abs_eps": outcome.trace.tail_mean_abs_eps(500),
                "ifpr_std": report.identities_summary.ifpr_std,
                "iterations": outcome.trace.len(),
                "skipped_batches": outcome.skipped_batches,
            }))?;
        }
        Command::GradCheck {
            configs,
            step,
            tolerance,
            seed,
            inject_sign_flip,
        } => {
            let report = grad_check(&GradCheckConfig {
                configs,
                step,
                tolerance,
                seed,
                inject_sign_flip,
            })?;
            for c in &report.cases {
                eprintln!(
                    "config {:2} shape {:?} max relative error {:.3e}",
                    c.index, c.shape, c.max_error
                );
            }
            print_json(&serde_json::json!({
                "configs": report.cases.len(),
                "step": step,
                "max_error": report.max_error,
                "tolerance": report.tolerance,
                "passed": report.passed,
            }))?;
            if !report.passed {
                return Err(Failure {
                    code: 1,
                    message: format!(
                        "max relative error {:e} exceeds {:e}",
                        report.max_error, tolerance
                    ),
                });
            }
        }
        Command::Convert { input, output } => {
            let is_csv = |p: &Path| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            let set = if is_csv(&input) {
                import_csv(&input)?
            } else {
                load_dataset(&input)?
            };
            if is_csv(&output) {
                export_csv(&set, &output)?;
            } else {
                save_dataset(&set, &output)?;
            }
            eprintln!("converted {} images", set.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
