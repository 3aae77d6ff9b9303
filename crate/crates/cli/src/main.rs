use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use byzgossip_core::sim::{self, run_to_dir, ConfigError, RunArtifact, SimConfig, SimError, PRESETS};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "byzgossip", version, about = "Byzantine-resilient gossip learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation.
    Run {
        #[command(flatten)]
        common: Common,
        /// Directory receiving metrics.csv and summary.json. Without it the
        /// CSV goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cartesian product of one or more parameter lists.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `key=v1,v2,...`; repeat for more dimensions.
        #[arg(long = "grid", required = true)]
        grid: Vec<String>,
        /// Directory receiving one sub-directory per run and sweep.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// List the built-in scenario names.
    Presets,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named scenario applied on top of the file.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed, overriding the file.
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value` override with a dotted key, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load(common: &Common) -> Result<SimConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            SimConfig::from_json(&text)?
        }
        None => SimConfig::default(),
    };
    if let Some(name) = &common.preset {
        config = config.with_preset(name)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config = config.with_overrides(&common.set)?;
    config.validate()?;
    Ok(config)
}

fn run_one(config: SimConfig, out: Option<PathBuf>) -> Result<RunArtifact, Failure> {
    match out.or_else(|| config.output.clone()) {
        Some(dir) => Ok(run_to_dir(config, &dir)?),
        None => {
            let stdout = io::stdout();
            let mut writer = csv::Writer::from_writer(stdout.lock());
            writer
                .write_record(byzgossip_core::metrics::RoundMetrics::CSV_HEADER)
                .map_err(SimError::from)?;
            let artifact = sim::run_with(config, |row| {
                writer.write_record(row.csv_record())?;
                writer.flush().map_err(|e| SimError::Io {
                    path: "<stdout>".into(),
                    source: e,
                })
            })?;
            Ok(artifact)
        }
    }
}

fn report(artifact: &RunArtifact) {
    let s = artifact.summary();
    let f1 = s
        .final_f1_mean
        .map(|m| format!("{m:.4} ± {:.4}", s.final_f1_std.unwrap_or(0.0)))
        .unwrap_or_else(|| "n/a".into());
    eprintln!(
        "{} rounds in {:.2}s: final F1 {f1}, mean f_in {:.4}, min HSSR {:.4}, max Byzantine slots {}",
        s.rounds, s.wall_clock_secs, s.mean_f_in_out, s.min_hssr, s.max_byz_in_view
    );
}

/// Splits `key=v1,v2` into override strings `key=v1`, `key=v2`.
fn parse_axis(raw: &str) -> Result<Vec<String>, Failure> {
    let (key, values) = raw
        .split_once('=')
        .filter(|(k, v)| !k.trim().is_empty() && !v.trim().is_empty())
        .ok_or_else(|| Failure::Config(format!("malformed grid {raw:?}, expected key=v1,v2,...")))?;
    Ok(values.split(',').map(|v| format!("{}={}", key.trim(), v.trim())).collect())
}

fn sweep(common: &Common, grid: &[String], out: &Path) -> Result<(), Failure> {
    let base = load(common)?;
    let axes = grid.iter().map(|g| parse_axis(g)).collect::<Result<Vec<_>, _>>()?;
    let mut combos: Vec<Vec<String>> = vec![Vec::new()];
    for axis in &axes {
        combos = combos
            .iter()
            .flat_map(|prefix| {
                axis.iter().map(move |o| {
                    let mut c = prefix.clone();
                    c.push(o.clone());
                    c
                })
            })
            .collect();
    }
    // validate every point before running any of them
    let configs = combos
        .iter()
        .map(|c| {
            let cfg = base.with_overrides(c)?;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, Failure>>()?;

    if !out.is_dir() {
        return Err(io_failure(out, io::Error::new(io::ErrorKind::NotFound, "no such directory")));
    }
    let index_path = out.join("sweep.csv");
    let mut index = csv::Writer::from_path(&index_path).map_err(|e| Failure::Runtime(e.to_string()))?;
    index
        .write_record(["run", "overrides", "final_f1_mean", "mean_f_in_out", "min_hssr", "wall_clock_secs"])
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    for (k, (cfg, combo)) in configs.into_iter().zip(&combos).enumerate() {
        let name = format!("run-{k:03}");
        let dir = out.join(&name);
        fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
        eprintln!("{name}: {}", combo.join(" "));
        let artifact = run_to_dir(cfg, &dir)?;
        report(&artifact);
        let s = artifact.summary();
        index
            .write_record([
                name,
                combo.join(" "),
                s.final_f1_mean.map(|m| m.to_string()).unwrap_or_default(),
                s.mean_f_in_out.to_string(),
                s.min_hssr.to_string(),
                s.wall_clock_secs.to_string(),
            ])
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        index.flush().map_err(|e| io_failure(&index_path, e))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { common, out } => {
            let config = load(&common)?;
            let artifact = run_one(config, out)?;
            report(&artifact);
            Ok(())
        }
        Command::Sweep { common, grid, out } => sweep(&common, &grid, &out),
        Command::Presets => {
            let mut stdout = io::stdout().lock();
            for p in PRESETS {
                writeln!(stdout, "{p}").map_err(|e| Failure::Runtime(e.to_string()))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
