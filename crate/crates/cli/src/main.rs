//! `dynann`: generate workloads, run and sweep indexes, and report results.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a runtime error.

mod config;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynann::harness::{assign_speedups, expand_grid, run, sweep, warm_cache, RunConfig, RunRecord};
use dynann::scenario::ScenarioKind;
use dynann::report::{plot_speedup_recall, read_results, rows, write_results};
use dynann::workload::WorkloadScript;
use dynann::{GroundTruthCache, Params};

use config::Config;

#[derive(Parser)]
#[command(name = "dynann", version, about = "Benchmark dynamic nearest-neighbour indexes on changing datasets")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct Inputs {
    /// Replay this script instead of generating one from the config.
    #[arg(long, value_name = "PATH")]
    script: Option<PathBuf>,
    /// Ground-truth cache written by `gt`.
    #[arg(long, value_name = "PATH")]
    gt: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a workload script from the config's data and workload sections.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Precompute exact answers for every search of a script.
    Gt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Neighbours per search; defaults to the config's k.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Run the config's [run] method and the exhaustive reference.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Run every point of the config's [sweep] grids and the reference.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Write results.csv, results.json and one SVG per scenario from
    /// stored records.
    Report {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(common: &Common) -> Result<Config, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("this subcommand needs --config <PATH>".into()))?;
    let mut config = Config::load(path).map_err(Failure::Runtime)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn script_for(config: &Config, inputs: &Inputs) -> Result<WorkloadScript<f32>, Failure> {
    match &inputs.script {
        Some(path) => WorkloadScript::read(path).map_err(runtime),
        None => Ok(config.plan().generate().map_err(runtime)?.script),
    }
}

fn cache_for(inputs: &Inputs) -> Result<GroundTruthCache, Failure> {
    match &inputs.gt {
        Some(path) => GroundTruthCache::load(path).map_err(runtime),
        None => Ok(GroundTruthCache::new()),
    }
}

fn scenario_name(config: &Config) -> &'static str {
    match config.scenario {
        ScenarioKind::Odc => "odc",
        ScenarioKind::Ofl => "ofl",
    }
}

fn gen(common: &Common) -> Result<(), Failure> {
    let config = load_config(common)?;
    let script = config.plan().generate().map_err(runtime)?.script;
    std::fs::create_dir_all(&common.out).map_err(runtime)?;
    let path = common.out.join(format!("{}.dynw", scenario_name(&config)));
    script.write(&path).map_err(runtime)?;
    println!(
        "{}: {} initial, {} events, {} searches, digest {:016x}",
        path.display(),
        script.meta.n0,
        script.event_count(),
        script.search_count(),
        script.digest()
    );
    Ok(())
}

fn gt(common: &Common, inputs: &Inputs, k: Option<usize>) -> Result<(), Failure> {
    let (script, k) = match (&inputs.script, &common.config) {
        (Some(path), None) => (WorkloadScript::read(path).map_err(runtime)?, k.unwrap_or(dynann::harness::DEFAULT_K)),
        _ => {
            let config = load_config(common)?;
            (script_for(&config, inputs)?, k.unwrap_or(config.k))
        }
    };
    let mut cache = cache_for(inputs)?;
    warm_cache(&script, k, &mut cache).map_err(runtime)?;
    std::fs::create_dir_all(&common.out).map_err(runtime)?;
    let path = common.out.join(format!("{}.gt.json", script.meta.scenario));
    cache.save(&path).map_err(runtime)?;
    println!("{}: {} exact results", path.display(), cache.len());
    Ok(())
}

fn reference(config: &Config) -> RunConfig {
    RunConfig { k: config.k, seed: config.seed, ..RunConfig::new("baseline", Params::new()) }
}

fn finish(mut records: Vec<RunRecord>, out: &Path) -> Result<(), Failure> {
    assign_speedups(&mut records).map_err(runtime)?;
    write_results(&records, out).map_err(runtime)?;
    for r in &records {
        match (&r.error, r.speedup) {
            (Some(e), _) => println!("{} {}: failed: {e}", r.method, r.params_string()),
            (None, Some(s)) => println!(
                "{} {}: recall {:.4} speedup {:.3} audit {}",
                r.method,
                r.params_string(),
                r.mean_recall,
                s,
                if r.audit.is_empty() { "ok".to_string() } else { format!("{} violations", r.audit.len()) }
            ),
            (None, None) => {}
        }
    }
    Ok(())
}

fn run_one(common: &Common, inputs: &Inputs) -> Result<(), Failure> {
    let config = load_config(common)?;
    let section = config
        .run
        .as_ref()
        .ok_or_else(|| Failure::Usage("config has no [run] section".into()))?;
    let script = script_for(&config, inputs)?;
    let mut cache = cache_for(inputs)?;
    let base = reference(&config);
    let mut records = vec![run(&base, &script, &mut cache).map_err(runtime)?];
    let chosen = RunConfig { method: section.method.clone(), params: section.params.clone(), ..base.clone() };
    if !(chosen.method == base.method && dynann::is_reference(&chosen.method, &chosen.params)) {
        records.push(run(&chosen, &script, &mut cache).map_err(runtime)?);
    }
    finish(records, &common.out)
}

fn run_sweep(common: &Common, inputs: &Inputs) -> Result<(), Failure> {
    let config = load_config(common)?;
    let section = config
        .sweep
        .as_ref()
        .ok_or_else(|| Failure::Usage("config has no [sweep] section".into()))?;
    let script = script_for(&config, inputs)?;
    let mut cache = cache_for(inputs)?;
    let base = reference(&config);
    let mut records = vec![run(&base, &script, &mut cache).map_err(runtime)?];
    for (method, grid) in &section.grid {
        let points = expand_grid(grid);
        records.extend(sweep(method, &points, &base, &script, &mut cache).map_err(runtime)?);
    }
    finish(records, &common.out)
}

fn report(input: &Path, out: &Path) -> Result<(), Failure> {
    let records = read_results(input).map_err(runtime)?;
    write_results(&records, out).map_err(runtime)?;
    let table = rows(&records);
    let scenarios: BTreeSet<&str> = table.iter().map(|r| r.scenario.as_str()).collect();
    for s in scenarios {
        let path = out.join(format!("{s}.svg"));
        plot_speedup_recall(&table, s, &path).map_err(runtime)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Gen { common } => gen(common),
        Command::Gt { common, inputs, k } => gt(common, inputs, *k),
        Command::Run { common, inputs } => run_one(common, inputs),
        Command::Sweep { common, inputs } => run_sweep(common, inputs),
        Command::Report { input, out } => report(input, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `dynann --help` for usage.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
