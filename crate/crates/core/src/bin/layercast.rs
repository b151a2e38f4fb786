use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use layercast::config::{parse_modes, Mode, ScenarioConfig, SeedRange, Sweep};
use layercast::runner::{execute, read_rows, replay, summarize, write_csv, write_outputs, SummaryRow};
use layercast::simulation::SimulationParams;
use layercast::RunError;

#[derive(Parser)]
#[command(name = "layercast", version, about = "Layered P2P streaming bandwidth auction simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed × sweep point × mode and write results.
    Run(RunArgs),
    /// Average a results CSV across seeds.
    Summarize {
        /// results.csv written by `run`.
        csv: PathBuf,
        /// Write the summary CSV here instead of printing a table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run one mode on a saved overlay and print its metrics report.
    Replay {
        /// Overlay JSON from a previous run.
        overlay: PathBuf,
        #[arg(long, default_value = "proposed")]
        mode: Mode,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config, then print it with defaults filled in.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inclusive seed range `A..B` or a single seed.
    #[arg(long)]
    seeds: Option<SeedRange>,
    /// Comma separated list of `proposed`, `baseline`.
    #[arg(long)]
    modes: Option<String>,
    /// Sweep axis, `KEY=LO..HI:STEP` or `KEY=V1,V2,...`.
    #[arg(long)]
    sweep: Option<Sweep>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-round JSON-lines traces.
    #[arg(long)]
    trace: bool,
}

fn load(path: Option<&Path>) -> Result<ScenarioConfig, RunError> {
    Ok(match path {
        Some(p) => ScenarioConfig::from_path(p)?,
        None => ScenarioConfig::default(),
    })
}

fn print_summary(rows: &[SummaryRow]) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    println!(
        "{:<9} {:>5} {:>5} {:>14} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>5}",
        "mode", "down", "up", "upload", "runs", "dr0", "dr5", "useless", "cost", "q1", "q3", "rnds"
    );
    for r in rows {
        println!(
            "{:<9} {:>5} {:>5} {:>14} {:>5} {:>7} {:>7} {:>7.3} {:>7} {:>7} {:>7} {:>5}",
            r.mode.as_str(),
            r.n_downstream,
            r.n_upstream,
            format!("{:.0}..{:.0}", r.upload_lo, r.upload_hi),
            r.runs,
            fmt(r.delivery_ratio_0),
            fmt(r.delivery_ratio_5),
            r.useless_ratio,
            fmt(r.cost_all),
            fmt(r.cost_q1),
            fmt(r.cost_q3),
            r.max_rounds
        );
    }
}

fn run(args: RunArgs) -> Result<(), RunError> {
    let mut config = load(args.config.as_deref())?;
    if let Some(s) = args.seeds {
        config.seeds = s;
    }
    if let Some(m) = &args.modes {
        config.modes = parse_modes(m)?;
    }
    if let Some(s) = args.sweep {
        config.sweep = Some(s);
    }
    if let Some(o) = args.out {
        config.out = o;
    }
    config.validate()?;
    let out = config.out.clone();
    std::fs::create_dir_all(&out).map_err(|source| RunError::Io {
        path: out.clone(),
        source,
    })?;
    log::info!(
        "running {} seeds x {} modes into {}",
        config.seeds.len(),
        config.modes.len(),
        out.display()
    );
    let runs = execute(&config, &SimulationParams::default(), args.trace)?;
    let rows = write_outputs(&out, &config, &runs)?;
    println!("{} runs written to {}", rows.len(), out.join("results.csv").display());
    print_summary(&summarize(&rows));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LAYERCAST_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(args) => run(args),
        Command::Summarize { csv, out } => read_rows(&csv).and_then(|rows| {
            let s = summarize(&rows);
            match out {
                Some(p) => write_csv(&p, &s),
                None => {
                    print_summary(&s);
                    Ok(())
                }
            }
        }),
        Command::Replay { overlay, mode, out } => {
            replay(&overlay, mode, &SimulationParams::default()).and_then(|r| {
                let json = r.to_json();
                match out {
                    Some(p) => std::fs::write(&p, json).map_err(|source| RunError::Io { path: p, source }),
                    None => {
                        println!("{json}");
                        Ok(())
                    }
                }
            })
        }
        Command::ValidateConfig { config } => ScenarioConfig::from_path(&config)
            .map(|c| println!("{}", serde_json::to_string_pretty(&c).expect("config serializes")))
            .map_err(RunError::from),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
