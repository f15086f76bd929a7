use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use ssa_lab::commands::{self, Done};
use ssa_lab::config::resolve;
use ssa_lab::io::{print_table, OutFormat};
use ssa_lab::run::{now, Record, RunDir};
use ssa_lab::{report, LabError, Result};

/// Experiment runner for search-trace verification studies.
#[derive(Parser, Debug)]
#[command(name = "ssa-lab", version)]
struct Cli {
    /// JSON file with a single object configuring the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the command's `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run directory.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Format of the summary printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    /// Extra override KEY=VALUE (VALUE parsed as JSON, else a string).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate reference solver traces.
    GenTraces,
    /// Train a model on the run's traces.
    Train,
    /// Solve held-out instances under each inference protocol.
    Eval,
    /// Transplant agreement and the padding control.
    Transplant,
    /// Verifier metrics on the frozen probe bank.
    ProbeBench,
    /// Verifier-corruption sweeps and the survival simulation.
    Corruption,
    /// Exact identity checks over random discrete worlds.
    Theory,
    /// Star-tree branching-factor sweep.
    StarSweep,
    /// Render metric tables into Markdown and SVG.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenTraces => "gen-traces",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Transplant => "transplant",
            Command::ProbeBench => "probe-bench",
            Command::Corruption => "corruption",
            Command::Theory => "theory",
            Command::StarSweep => "star-sweep",
            Command::Report => "report",
        }
    }
}

fn flags(cli: &Cli) -> Result<Map<String, Value>> {
    let mut m = Map::new();
    for s in &cli.set {
        let (k, v) = s.split_once('=').ok_or_else(|| LabError::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        m.insert(k.to_string(), serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())));
    }
    if let Some(seed) = cli.seed {
        m.insert("seed".into(), seed.into());
    }
    Ok(m)
}

fn execute<C>(cli: &Cli, run: &RunDir, f: fn(&RunDir, &C) -> Result<Done>) -> Result<()>
where
    C: Serialize + DeserializeOwned + Default,
{
    let started = now();
    let cfg: C = resolve(cli.config.as_deref(), std::env::vars(), flags(cli)?)?;
    let done = f(run, &cfg)?;
    run.record(Record {
        command: cli.command.name(),
        config: serde_json::to_value(&cfg).map_err(LabError::internal)?,
        seeds: done.seeds.clone(),
        inputs: &done.inputs,
        outputs: &done.outputs,
        started,
    })?;
    if let Some(p) = &done.summary {
        print_table(p, cli.format)?;
    }
    Ok(())
}

fn main_inner(cli: &Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(LabError::Config("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().map_err(LabError::internal)?;
    }
    let run = RunDir::new(&cli.out);
    match cli.command {
        Command::GenTraces => execute(cli, &run, commands::gen_traces),
        Command::Train => execute(cli, &run, commands::train_cmd),
        Command::Eval => execute(cli, &run, commands::eval_cmd),
        Command::Transplant => execute(cli, &run, commands::transplant_cmd),
        Command::ProbeBench => execute(cli, &run, commands::probe_bench_cmd),
        Command::Corruption => execute(cli, &run, commands::corruption_cmd),
        Command::Theory => execute(cli, &run, commands::theory_cmd),
        Command::StarSweep => execute(cli, &run, commands::star_sweep_cmd),
        Command::Report => {
            let outputs = report::render(&run)?;
            for p in &outputs {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = main_inner(&cli) {
        eprintln!("ssa-lab: {e}");
        std::process::exit(e.exit_code());
    }
}
