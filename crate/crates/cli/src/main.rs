//! Command-line front end for the `cllac-core` pipeline.
//!
//! Subcommands cover the full loop: `synth` and `ingest` produce datasets,
//! `run` trains and reports, `sweep` scans a perturbation parameter, `eval`
//! scores a saved checkpoint, and `verify` replays the estimator checks.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 malformed input file,
//! 3 training divergence, 4 verification failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cllac_core::config::ExperimentConfig;
use cllac_core::experiment::{self, ReportMetrics, SweepParameter};
use cllac_core::train::{evaluate, DecisionRule};
use cllac_core::{io, verify, Error, Scalar};

#[derive(Parser)]
#[command(
    name = "cllac",
    version,
    about = "Train and audit one-versus-rest classifiers that learn from \
             complementary labels plus unlabeled data and flag augmented classes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample synthetic datasets from a config and write binary containers
    Synth {
        /// Experiment config (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for cl.bin, unlabeled.bin, test.bin
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse an IDX image/label pair into a raw labeled container
    Ingest {
        /// IDX image file (magic 0x00000803)
        images: PathBuf,
        /// IDX label file (magic 0x00000801)
        labels: PathBuf,
        /// Output directory for raw.bin
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model per the config and print a JSON report
    Run {
        /// Experiment config (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Also write report.json, history.csv, model.bin here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scan eta or mu over a value grid and print CSV
    Sweep {
        /// Experiment config (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Which perturbation to scan
        #[arg(long)]
        parameter: Parameter,
        /// Comma-separated grid, e.g. 0.6,1.0,1.4
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<Scalar>,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the scan
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Also write sweep.csv here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay the estimator verification suite and print its reports
    Verify {
        /// Seed for the randomized checks
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a saved checkpoint against a test container
    Eval {
        /// Model checkpoint (model.bin)
        model: PathBuf,
        /// Test container (test.bin)
        test: PathBuf,
        /// Number of known classes in the container
        #[arg(long)]
        known: usize,
        /// Decision rule at prediction time
        #[arg(long, value_enum, default_value_t = Rule::Full)]
        rule: Rule,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Parameter {
    Eta,
    Mu,
}

impl From<Parameter> for SweepParameter {
    fn from(p: Parameter) -> Self {
        match p {
            Parameter::Eta => SweepParameter::Eta,
            Parameter::Mu => SweepParameter::Mu,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    /// Argmax over all K + 1 scores
    Full,
    /// Argmax over the K known-class scores only
    KnownOnly,
}

impl From<Rule> for DecisionRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::Full => DecisionRule::Full,
            Rule::KnownOnly => DecisionRule::KnownOnly,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits; everything
            // else is a usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Format { .. } => 2,
        Error::Diverged { .. } => 3,
        _ => 1,
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig<Scalar>, Error> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Synth { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let prepared = experiment::prepare(&cfg)?;
            fs::create_dir_all(&out)?;
            let cl = out.join("cl.bin");
            let unlabeled = out.join("unlabeled.bin");
            let test = out.join("test.bin");
            io::save_complementary(&cl, &prepared.cl)?;
            io::save_unlabeled(&unlabeled, &prepared.unlabeled)?;
            io::save_test(&test, &prepared.test)?;
            let summary = serde_json::json!({
                "k": prepared.cl.k,
                "d": prepared.d,
                "n_kcl": prepared.cl.len(),
                "n_u": prepared.unlabeled.len(),
                "n_test": prepared.test.len(),
                "cl": cl,
                "unlabeled": unlabeled,
                "test": test,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Ingest { images, labels, out } => {
            let raw = io::ingest_idx::<Scalar>(&images, &labels)?;
            fs::create_dir_all(&out)?;
            let path = out.join("raw.bin");
            io::save_raw(&path, &raw)?;
            let mut counts = [0usize; 10];
            for &y in &raw.labels {
                counts[y] += 1;
            }
            let summary = serde_json::json!({
                "out": path,
                "n": raw.len(),
                "d": raw.d,
                "class_counts": counts,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let mut outcome = experiment::run(&cfg)?;
            if let Some(dir) = out {
                experiment::write_outcome(&dir, &mut outcome)?;
            }
            println!("{}", serde_json::to_string_pretty(&outcome.report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            parameter,
            values,
            seed,
            threads,
            out,
        } => {
            let cfg = load_config(&config, seed)?;
            let rows = experiment::sweep(&cfg, parameter.into(), &values, threads)?;
            let csv = experiment::sweep_csv(&rows);
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("sweep.csv"), &csv)?;
            }
            print!("{csv}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { seed } => {
            let reports = verify::run_all(seed)?;
            println!("{}", serde_json::to_string_pretty(&reports)?);
            if reports.iter().all(|r| r.pass) {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(4))
            }
        }
        Command::Eval {
            model,
            test,
            known,
            rule,
        } => {
            let model = io::load_model::<Scalar>(&model)?;
            let test = io::load_test::<Scalar>(&test, known)?;
            let metrics = evaluate(&model, &test, rule.into())?;
            let metrics = ReportMetrics::from(metrics);
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
