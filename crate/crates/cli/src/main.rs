use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ais_core::arima::Criterion;
use ais_core::backtest::StrategyMode;
use ais_core::config::{IndexSpec, RunConfig};
use ais_core::hybrid::ModelKind;
use ais_core::market_data::CsvSchema;
use ais_core::pipeline::{self, RunOptions, RunSummary};
use ais_core::synth::{synthetic_series, SynthParams};

#[derive(Parser)]
#[command(name = "ais", version, about = "Walk-forward ARIMA / LSTM / LSTM-ARIMA trading backtests")]
struct Cli {
    /// Directory holding one sub-directory per run.
    #[arg(long, env = "AIS_ARTIFACT_ROOT", default_value = "artifacts", global = true)]
    artifact_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate input CSVs, write canonical copies and descriptive statistics.
    Ingest {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra input as LABEL=PATH (Yahoo column names).
        #[arg(long = "input", value_parser = parse_labeled)]
        inputs: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute or resume a run.
    Run(RunArgs),
    /// Run every single-parameter deviation of a completed base run.
    Sensitivity(RunArgs),
    /// Regenerate report tables of completed runs.
    Report {
        /// Run directories; with --config, the run it describes.
        runs: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Equal-weight ensemble of equity-curve CSVs.
    Ensemble {
        /// Component as LABEL=PATH.
        #[arg(long = "input", value_parser = parse_labeled, required = true)]
        inputs: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic OHLCV series.
    Synth {
        #[arg(long, default_value_t = 1750)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Restrict to these models (repeatable).
    #[arg(long)]
    model: Vec<ModelKind>,
    /// Restrict to these strategy modes (repeatable).
    #[arg(long)]
    mode: Vec<StrategyMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Artifact root for this invocation.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    arima_max_order: Option<usize>,
    #[arg(long, value_parser = parse_criterion)]
    criterion: Option<Criterion>,
    /// Allow overrides outside the sensitivity sets.
    #[arg(long = "unsafe")]
    allow_unsafe: bool,
}

fn parse_labeled(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((l, p)) if !l.is_empty() && !p.is_empty() => Ok((l.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected LABEL=PATH, got `{s}`")),
    }
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    match s.to_ascii_lowercase().as_str() {
        "aic" => Ok(Criterion::Aic),
        "bic" => Ok(Criterion::Bic),
        _ => Err(format!("unknown criterion `{s}`")),
    }
}

impl RunArgs {
    fn resolve(&self, root: &Path) -> Result<(RunConfig, RunOptions)> {
        let mut cfg = RunConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if !self.model.is_empty() {
            cfg.models = self.model.clone();
        }
        if !self.mode.is_empty() {
            cfg.modes = self.mode.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let s = &mut cfg.sensitivity;
        s.dropout = self.dropout.or(s.dropout);
        s.batch_size = self.batch_size.or(s.batch_size);
        s.arima_max_order = self.arima_max_order.or(s.arima_max_order);
        s.criterion = self.criterion.or(s.criterion);
        cfg.allow_unsafe |= self.allow_unsafe;
        cfg.validate()?;
        let opts = RunOptions {
            jobs: self.jobs,
            ..RunOptions::new(self.out.clone().unwrap_or_else(|| root.to_path_buf()))
        };
        Ok((cfg, opts))
    }
}

fn print_run(s: &RunSummary) {
    println!("run {} -> {}", s.run_hash, s.run_dir.display());
    println!("walk units: {} computed, {} reused", s.computed_units, s.reused_units);
    for f in &s.failed_walks {
        let mode = f.mode.map(|m| format!(" {m}")).unwrap_or_default();
        println!("failed: {} {}{} walk {}: {}", f.label, f.model, mode, f.walk_index, f.reason);
    }
    match &s.artifact_hash {
        Some(h) => println!("artifact {h}"),
        None => println!("incomplete"),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { config, inputs, out } => {
            let mut specs = match &config {
                Some(p) => RunConfig::load(p)?.indices,
                None => Vec::new(),
            };
            specs.extend(inputs.into_iter().map(|(label, path)| IndexSpec {
                label,
                path,
                schema: CsvSchema::default(),
            }));
            if specs.is_empty() {
                bail!("nothing to ingest: give --config or --input");
            }
            for s in pipeline::ingest(&specs, &out)? {
                println!(
                    "{}: {} rows kept of {} read ({} dropped, {} missing volume) -> {}",
                    s.label,
                    s.stats.count,
                    s.report.rows_read,
                    s.report.dropped_count,
                    s.report.missing_volume,
                    s.canonical_path.display()
                );
            }
            println!("{}", out.join("descriptive_stats.csv").display());
        }
        Command::Run(args) => {
            let (cfg, opts) = args.resolve(&cli.artifact_root)?;
            print_run(&pipeline::run(&cfg, &opts)?);
        }
        Command::Sensitivity(args) => {
            let (cfg, opts) = args.resolve(&cli.artifact_root)?;
            let out = pipeline::sensitivity(&cfg, &opts)?;
            for (name, s) in &out.runs {
                println!("{name}: run {} artifact {}", s.run_hash, s.artifact_hash.as_deref().unwrap_or("-"));
            }
            for t in &out.tables {
                println!("{}", t.display());
            }
        }
        Command::Report { mut runs, config, out } => {
            if let Some(p) = config {
                let cfg = RunConfig::load(&p)?;
                runs.push(cli.artifact_root.join(cfg.run_hash()?));
            }
            if runs.is_empty() {
                bail!("no run given");
            }
            let many = runs.len() > 1;
            for run in &runs {
                let dest = out.as_ref().map(|o| {
                    if many {
                        o.join(run.file_name().unwrap_or_default())
                    } else {
                        o.clone()
                    }
                });
                for p in pipeline::report(run, dest.as_deref())? {
                    println!("{}", p.display());
                }
            }
        }
        Command::Ensemble { inputs, out } => {
            let m = pipeline::ensemble_files(&inputs, &out)?;
            println!(
                "ensemble ARC {:.2} ASD {:.2} MD {:.2} MLD {:.2} IR* {:.4} IR** {:.4}",
                m.arc, m.asd, m.md, m.mld, m.ir_star, m.ir_double_star
            );
        }
        Command::Synth { days, seed, out } => {
            let s = synthetic_series(days, seed, &SynthParams::default())?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            s.write_csv(fs::File::create(&out)?, &CsvSchema::default())?;
            println!("{} days -> {}", days, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
