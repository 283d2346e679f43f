use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qdyne_cli::commands::{self, ScalingResult};
use qdyne_cli::presets;
use qdyne_cli::report::{RunReport, Timings};
use qdyne_cli::{CliError, Config};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "qdyne", version, about = "Quantum heterodyne spectroscopy: simulate, analyse, resolve")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a named preset instead of a file.
    #[arg(long, global = true, conflicts_with = "config")]
    preset: Option<String>,
    /// Output directory for traces, CSV files and report.json.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use this many consecutive seeds, starting at the config's first seed.
    #[arg(long, global = true)]
    seeds: Option<u64>,
    /// Worker threads; QDYNE_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated photon traces.
    Simulate,
    /// Reconstruct the signal from trace files.
    Analyze {
        traces: Vec<PathBuf>,
        #[arg(long)]
        window_bins: Option<usize>,
        /// Sign of the beat from an earlier resolution step.
        #[arg(long, allow_hyphen_values = true)]
        beat_sign: Option<i8>,
    },
    /// Scaling exponents over the configured ladder of total times.
    Scaling,
    /// Settle sign, alias and amplitude branch from modified measurements.
    Resolve,
    /// Metric versus one parameter.
    Sweep,
    /// Print a preset, list presets or check a config file.
    Config {
        #[arg(long)]
        list: bool,
    },
}

fn load(common: &Common) -> Result<Config, CliError> {
    let mut config = match (&common.config, &common.preset) {
        (Some(path), _) => Config::load(path)?,
        (None, Some(name)) => presets::preset(name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown preset `{name}`; available: {}",
                presets::NAMES.join(", ")
            ))
        })?,
        (None, None) => Config::default(),
    };
    if let Some(n) = common.seeds {
        if n == 0 {
            return Err(CliError::Config("--seeds must be at least 1".into()));
        }
        let first = config.seeds.first().copied().unwrap_or(1);
        config.seeds = (first..first + n).collect();
    }
    config.check()?;
    Ok(config)
}

fn init_threads(requested: Option<usize>) -> Result<(), CliError> {
    let from_env = match std::env::var("QDYNE_THREADS") {
        Ok(v) => Some(
            v.parse::<usize>()
                .map_err(|_| CliError::Config(format!("QDYNE_THREADS={v} is not a count")))?,
        ),
        Err(_) => None,
    };
    if let Some(n) = from_env.or(requested) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn finish<T: Serialize>(
    command: &str,
    config: Config,
    result: T,
    mut artifacts: Vec<String>,
    csv: Option<(String, String)>,
    common: &Common,
    started: Instant,
) -> Result<(), CliError> {
    if let (Some(dir), Some((file, text))) = (&common.out, &csv) {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(file);
        std::fs::write(&path, text)?;
        artifacts.push(path.display().to_string());
    }
    let mut report = RunReport {
        command: command.into(),
        scenario: config,
        result,
        artifacts,
        timings: Timings {
            wall_s: started.elapsed().as_secs_f64(),
        },
    };
    if let Some(dir) = &common.out {
        report.write(dir)?;
    }
    match (common.format, csv) {
        (Format::Csv, Some((_, text))) => print!("{text}"),
        _ => println!("{}", report.to_json()),
    }
    Ok(())
}

fn scaling_csv(r: &ScalingResult) -> String {
    let mut s = String::from(
        "total_time_s,n_sequences,runs,failed_runs,window_bins,frequency_ci_hz,linewidth_hz,\
         amplitude_ci_t,phase_ci_rad,noise_floor_t\n",
    );
    for g in &r.rungs {
        s.push_str(&format!(
            "{:e},{},{},{},{},{:e},{:e},{:e},{:e},{:e}\n",
            g.total_time_s,
            g.n_sequences,
            g.runs,
            g.failed_runs,
            g.window_bins,
            g.frequency_ci_hz.mean,
            g.linewidth_hz.mean,
            g.amplitude_ci_t.mean,
            g.phase_ci_rad.mean,
            g.noise_floor_t.mean
        ));
    }
    s
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let started = Instant::now();
    let common = cli.common;
    match cli.command {
        Command::Config { list } => {
            if list {
                for name in presets::NAMES {
                    println!("{name}");
                }
            } else {
                println!("{}", load(&common)?.to_json());
            }
            Ok(0)
        }
        Command::Simulate => {
            let config = load(&common)?;
            init_threads(common.threads)?;
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let traces = commands::simulate(&config, &dir)?;
            let artifacts = traces.iter().map(|t| t.path.clone()).collect();
            let common = Common {
                out: Some(dir),
                ..common
            };
            finish("simulate", config, traces, artifacts, None, &common, started)?;
            Ok(0)
        }
        Command::Analyze {
            traces,
            window_bins,
            beat_sign,
        } => {
            let mut config = load(&common)?;
            if let Some(w) = window_bins {
                config.analysis.window_bins = w;
                config.analysis.window_hz = None;
            }
            if beat_sign.is_some() {
                config.analysis.beat_sign = beat_sign;
            }
            config.check()?;
            init_threads(common.threads)?;
            let results = commands::analyze(&traces, &config, common.out.as_deref())?;
            let artifacts = results.iter().filter_map(|r| r.spectrum_csv.clone()).collect();
            finish("analyze", config, results, artifacts, None, &common, started)?;
            Ok(0)
        }
        Command::Scaling => {
            let config = load(&common)?;
            init_threads(common.threads)?;
            let result = commands::scaling(&config)?;
            let csv = ("scaling.csv".to_string(), scaling_csv(&result));
            finish("scaling", config, result, Vec::new(), Some(csv), &common, started)?;
            Ok(0)
        }
        Command::Resolve => {
            let config = load(&common)?;
            init_threads(common.threads)?;
            let result = commands::resolve(&config)?;
            let code = if result.inconclusive() > 0 { 3 } else { 0 };
            finish("resolve", config, result, Vec::new(), None, &common, started)?;
            Ok(code)
        }
        Command::Sweep => {
            let config = load(&common)?;
            init_threads(common.threads)?;
            let result = commands::sweep(&config)?;
            let csv = ("sweep.csv".to_string(), result.to_csv());
            finish("sweep", config, result, Vec::new(), Some(csv), &common, started)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
