//! `peek`: build fact datasets, probe an LLM and train linear heads that
//! predict what it knows from fact embeddings.
//!
//! Any config key can be overridden with a flag of the same dotted name,
//! e.g. `--dataset.fraction 0.01` or `--backend.model=gpt-4o`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use peek_core::pipeline::{overall_report, sweep, Pipeline, RunConfig, SweepAxis};
use peek_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "peek", version, about = "Estimate what an LLM knows from fact embeddings")]
struct Cli {
    /// Run config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; run directories are created inside it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, global = true)]
    max_parallel: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Http,
    Mock,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AxisArg {
    Negatives,
    Fraction,
    Temperature,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the knowledge graph and write facts and split statistics.
    BuildDataset,
    /// Probe the facts and write one record per fact.
    Probe,
    /// Train heads over every embedding and write models and reports.
    TrainEval,
    /// Repeat the whole pipeline over values of one setting.
    Sweep {
        #[arg(long, value_enum)]
        axis: Option<AxisArg>,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Rank embeddings across finished runs.
    Report {
        /// Run directories; defaults to every run under the output directory.
        runs: Vec<PathBuf>,
        /// Settings left out of the overall rank.
        #[arg(long)]
        exclude: Vec<String>,
    },
}

/// Pulls `--dotted.key value` and `--dotted.key=value` pairs out of the
/// argument list.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = inline.or_else(|| iter.next()).unwrap_or_default();
        overrides.push((key, value));
    }
    (rest, overrides)
}

fn toml_quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if c.is_control() => out.push_str(&format!("\\u{:04X}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn load_config(cli: &Cli, mut overrides: Vec<(String, String)>) -> Result<RunConfig> {
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(out) = &cli.out {
        let out = std::path::absolute(out).unwrap_or_else(|_| out.clone());
        overrides.push(("output_dir".into(), toml_quote(&out.to_string_lossy())));
    }
    if let Some(b) = cli.backend {
        let name = match b {
            BackendArg::Http => "http",
            BackendArg::Mock => "mock",
        };
        overrides.push(("probe.backend".into(), toml_quote(name)));
    }
    if let Some(n) = cli.max_parallel {
        overrides.push(("backend.max_parallel".into(), n.to_string()));
    }
    RunConfig::load(cli.config.as_deref(), &overrides)
}

fn run_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with("run-"))
                && p.join("comparison.json").is_file()
        })
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: &Cli, overrides: Vec<(String, String)>) -> Result<()> {
    let cfg = load_config(cli, overrides)?;
    match &cli.command {
        Command::BuildDataset => {
            let p = Pipeline::new(cfg)?;
            let s = p.build_dataset()?;
            println!("run directory: {}", p.paths().root.display());
            println!(
                "facts: {} ({} positive, {} negative)",
                s.facts, s.positives, s.negatives
            );
            println!("splits: train {} / val {} / test {}", s.splits.0, s.splits.1, s.splits.2);
            println!(
                "entities: train {} / val {} / test {} / test-train {}",
                s.stats.train_entities,
                s.stats.val_entities,
                s.stats.test_entities,
                s.stats.test_minus_train
            );
        }
        Command::Probe => {
            let p = Pipeline::new(cfg)?;
            let s = p.probe()?;
            println!("run directory: {}", p.paths().root.display());
            println!(
                "records: {} (requests {}, backend errors {}, unparsed {})",
                s.records, s.requests, s.backend_errors, s.unparsed
            );
            if let Some(acc) = s.base_accuracy {
                println!(
                    "base LLM accuracy: {:.2} ({} facts, {} excluded)",
                    acc.percent, acc.used, acc.excluded
                );
            }
        }
        Command::TrainEval => {
            let p = Pipeline::new(cfg)?;
            let s = p.train_eval()?;
            println!("run directory: {}", p.paths().root.display());
            print!("{}", s.table);
        }
        Command::Sweep { axis, values } => {
            let axis = match axis {
                Some(AxisArg::Negatives) => SweepAxis::Negatives,
                Some(AxisArg::Fraction) => SweepAxis::Fraction,
                Some(AxisArg::Temperature) => SweepAxis::Temperature,
                None => cfg.sweep.axis.ok_or_else(|| {
                    Error::Invalid("no sweep axis given (--axis or [sweep] axis)".into())
                })?,
            };
            let values = if values.is_empty() { cfg.sweep.values.clone() } else { values.clone() };
            let s = sweep(&cfg, axis, &values)?;
            for dir in &s.runs {
                println!("run directory: {}", dir.display());
            }
            println!("backend requests: {}", s.requests);
            println!("wrote {} rows to {}", s.rows, s.csv.display());
        }
        Command::Report { runs, exclude } => {
            let out = cfg.output_dir();
            let runs = if runs.is_empty() { run_dirs(&out)? } else { runs.clone() };
            let r = overall_report(&runs, exclude)?;
            write(&out.join("overall-rank.txt"), &r.table)?;
            write(&out.join("overall-rank.json"), &r.json)?;
            print!("{}", r.table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
