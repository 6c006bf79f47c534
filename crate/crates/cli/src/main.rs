use std::path::{Path, PathBuf};
use std::process::ExitCode;

use callmove::corpus::parse_transcript_file;
use callmove::eval::{EvalReport, MetricsFile};
use callmove::model::Checkpoint;
use callmove::pipeline::{self, BaselineMethod, RunConfig};
use callmove::synth::SyntheticSpec;
use callmove::{Error, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "callmove",
    version,
    about = "Earnings-call answers to next-day stock movement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-signal corpus plus a config that points at it.
    Synth {
        /// Generator spec (TOML); defaults are used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
        /// Overrides the spec's signal strength.
        #[arg(long)]
        strength: Option<f64>,
    },
    /// Train on the holdout training split; writes a checkpoint and metrics.
    Train(Common),
    /// Score a checkpoint on the holdout test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a comparison method on the holdout test split.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
        /// Also write the train and test feature matrices (text methods only).
        #[arg(long)]
        export_features: bool,
    },
    /// Compare analytic and finite-difference gradients on small models.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Score transcripts from a JSONL file with a checkpoint.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        transcript: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mr,
    Tfidf,
    Log1p,
}

impl From<Method> for BaselineMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Mr => BaselineMethod::MeanReversion,
            Method::Tfidf => BaselineMethod::Tfidf,
            Method::Log1p => BaselineMethod::Log1p,
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::MissingFile => 2,
        ErrorKind::Parse => 3,
        ErrorKind::Validation => 4,
        ErrorKind::Internal => 5,
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.paths.output_dir = std::path::absolute(out).map_err(|e| Error::io(out, e))?;
    }
    Ok(cfg)
}

fn write_metrics(
    dir: &Path,
    name: &str,
    report: &EvalReport,
    metrics: &MetricsFile,
) -> Result<(), Error> {
    print!("{}", report.table());
    let path = pipeline::write_output(dir, name, metrics.to_json().as_bytes())?;
    println!("metrics written to {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth {
            config,
            seed,
            out,
            strength,
        } => {
            let mut spec = match config {
                Some(path) => SyntheticSpec::load(&path)?,
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if let Some(s) = strength {
                spec.signal_strength = s;
            }
            pipeline::write_synthetic(&out, &spec)?;
            println!(
                "wrote {} companies x {} transcripts to {}",
                spec.n_companies,
                spec.transcripts_per_company,
                out.display()
            );
        }
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            let outcome = pipeline::run_train(&cfg)?;
            let dir = cfg.output_dir();
            let ckpt = dir.join("model.ckpt");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            outcome.checkpoint.save(&ckpt)?;
            let log = serde_json::to_vec_pretty(&outcome.log).expect("log serializes");
            pipeline::write_output(&dir, "training_log.json", &log)?;
            println!(
                "best epoch {}, train accuracy {:.4}",
                outcome.log.best_epoch, outcome.train_accuracy
            );
            if let Some(r) = outcome.attention_ratio {
                println!("attention on signal sentences: {r:.3} x uniform");
            }
            println!("checkpoint written to {}", ckpt.display());
            write_metrics(&dir, "metrics.json", &outcome.report, &outcome.metrics)?;
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (report, metrics) = pipeline::run_evaluate(&cfg, &ckpt)?;
            write_metrics(
                &cfg.output_dir(),
                "evaluate_metrics.json",
                &report,
                &metrics,
            )?;
        }
        Command::Baseline {
            common,
            method,
            export_features,
        } => {
            let cfg = load_config(&common)?;
            let method = BaselineMethod::from(method);
            let dir = cfg.output_dir();
            if export_features {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            let (report, metrics) =
                pipeline::run_baseline(&cfg, method, export_features.then_some(dir.as_path()))?;
            write_metrics(
                &dir,
                &format!("baseline_{}.json", method.name()),
                &report,
                &metrics,
            )?;
        }
        Command::Gradcheck { common, tolerance } => {
            let cfg = load_config(&common)?;
            let reports = pipeline::run_gradcheck(&cfg)?;
            for (i, r) in reports.iter().enumerate() {
                println!(
                    "seed {}: max relative error {:.3e} at {} ({} parameters)",
                    cfg.seed.wrapping_add(i as u64),
                    r.max_relative_error,
                    r.worst_parameter,
                    r.parameters_checked
                );
            }
            let worst = reports
                .iter()
                .map(|r| r.max_relative_error)
                .fold(0.0, f64::max);
            println!("max relative error {worst:.3e}");
            if !(worst < tolerance) {
                return Err(Error::Invariant(format!(
                    "gradient check error {worst:.3e} exceeds {tolerance:e}"
                )));
            }
        }
        Command::Predict {
            common,
            checkpoint,
            transcript,
        } => {
            let cfg = load_config(&common)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let transcripts = parse_transcript_file(&transcript)?;
            if transcripts.is_empty() {
                return Err(Error::validation(format!(
                    "{} holds no transcripts",
                    transcript.display()
                )));
            }
            for p in pipeline::predict_transcripts(&cfg, &ckpt, &transcripts)? {
                println!(
                    "{}",
                    serde_json::to_string(&p).expect("prediction serializes")
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
