//! `aspsched`: generate datasets, solve scheduling cells, evaluate
//! schedules and build report tables.

use std::path::PathBuf;
use std::process::ExitCode;

use asp_core::distributions::Family;
use asp_core::experiment::{
    cmd_evaluate, cmd_generate, cmd_report, cmd_solve, exit_code, fmt_sig6, ExperimentConfig, Method, HOLDOUT_FILE, RESULTS_FILE,
};
use asp_core::{CostParams, Error, Exec};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aspsched", version, about = "Data-driven appointment scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand that reads an experiment config.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Duration family: normal, logistic, beta or uniform.
    #[arg(long)]
    family: Option<String>,
    /// Jobs per period.
    #[arg(long)]
    n: Option<usize>,
    /// Number of periods.
    #[arg(long = "T", alias = "periods")]
    periods: Option<usize>,
    /// Comma-separated waiting costs.
    #[arg(long, value_delimiter = ',')]
    cw_list: Option<Vec<f64>>,
    /// Comma-separated idling costs.
    #[arg(long, value_delimiter = ',')]
    ci_list: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (CSV plus JSON sidecar).
    Generate(ConfigArgs),
    /// Solve every (method, cost, rep) cell and update the results table.
    Solve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated subset of saa, dro, seo, ieo.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        saa_reps: Option<usize>,
        /// Solve cells one at a time.
        #[arg(long)]
        sequential: bool,
    },
    /// Mean realised cost of a schedule file on held-out periods.
    Evaluate {
        /// CSV of allowances: one row for a fixed schedule or one per period.
        #[arg(long)]
        schedule: PathBuf,
        /// Held-out dataset CSV (defaults to <out>/holdout.csv).
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        cw: f64,
        #[arg(long)]
        ci: f64,
    },
    /// Summarise a results table into CSV and JSON reports.
    Report {
        /// Results CSV (defaults to <out>/results.csv).
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn resolve(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(f) = &args.family {
        cfg.family = f.parse::<Family>()?;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(t) = args.periods {
        cfg.periods = t;
    }
    if let Some(v) = &args.cw_list {
        cfg.cw_list = v.clone();
    }
    if let Some(v) = &args.ci_list {
        cfg.ci_list = v.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = resolve(&args)?;
            let rows = cmd_generate(&cfg)?;
            println!("wrote {rows} rows ({} periods of {} jobs) to {}", cfg.periods, cfg.n, cfg.out.display());
            Ok(())
        }
        Command::Solve { config, methods, saa_reps, sequential } => {
            let mut cfg = resolve(&config)?;
            if let Some(ms) = methods {
                cfg.methods = ms.iter().map(|m| m.parse::<Method>()).collect::<Result<_, _>>()?;
            }
            if let Some(r) = saa_reps {
                cfg.saa_reps = r;
            }
            cfg.validate()?;
            let exec = if sequential { Exec::Sequential } else { Exec::default() };
            let outcome = cmd_solve(&cfg, &cfg.methods.clone(), exec)?;
            println!("solved {} cells into {}", outcome.outputs.len(), cfg.out.join(RESULTS_FILE).display());
            if !outcome.failures.is_empty() {
                for (cell, err) in &outcome.failures {
                    eprintln!("cell {cell} failed: {err}");
                }
                let total = outcome.failures.len() + outcome.outputs.len();
                return Err(Error::NumericalBreakdown(format!("{} of {total} cells failed", outcome.failures.len())));
            }
            Ok(())
        }
        Command::Evaluate { schedule, holdout, out, cw, ci } => {
            let costs = CostParams::new(cw, ci)?;
            let holdout = holdout.unwrap_or_else(|| out.join(HOLDOUT_FILE));
            let value = cmd_evaluate(&schedule, &holdout, &costs)?;
            println!("{}", fmt_sig6(value));
            Ok(())
        }
        Command::Report { results, out } => {
            let results = results.unwrap_or_else(|| out.join(RESULTS_FILE));
            for p in cmd_report(&results, &out)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
