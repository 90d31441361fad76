//! `omnirotor`: efficiency sweeps, one-shot allocation, simulated flights and
//! allocator comparison.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Job;
use config::{Format, RunConfig};
use omnirotor::simulation::AllocatorKind;

const LOG_ENV: &str = "OMNIROTOR_LOG";

#[derive(Debug, Parser)]
#[command(name = "omnirotor", version, about = "Fully-actuated rotating-arm multirotor toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Hover efficiency over sampled up directions.
    Efficiency(Common),
    /// Allocate a single wrench demand read from a JSON file.
    Allocate {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fly a sweep maneuver in simulation.
    Fly(Common),
    /// Fly the same maneuver with both allocators and compare peak errors.
    Compare(Common),
}

/// Flags shared by all commands. They override the config files.
#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON). Repeat to run several jobs in parallel.
    #[arg(long = "config", short = 'c')]
    configs: Vec<PathBuf>,
    /// Catalog layout name or geometry file.
    #[arg(long)]
    geometry: Option<String>,
    #[arg(long, value_parser = parse_allocator)]
    allocator: Option<AllocatorKind>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Up directions of the efficiency sweep.
    #[arg(long)]
    samples: Option<usize>,
    /// Seed of the measurement noise.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_allocator(s: &str) -> Result<AllocatorKind, String> {
    s.parse::<AllocatorKind>().map_err(|e| e.to_string())
}

impl Common {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(g) = &self.geometry {
            cfg.geometry = g.clone();
        }
        if let Some(a) = self.allocator {
            cfg.flight.allocator = a;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        if let Some(n) = self.samples {
            cfg.samples = n;
        }
        if let Some(s) = self.seed {
            cfg.flight.noise.seed = s;
        }
    }

    fn jobs(&self, default_name: &str) -> omnirotor::Result<Vec<Job>> {
        let mut jobs = Vec::new();
        if self.configs.is_empty() {
            let mut config = RunConfig::default();
            self.apply(&mut config);
            config.validate()?;
            jobs.push(Job {
                name: default_name.to_string(),
                config,
            });
        }
        for path in &self.configs {
            let mut config = RunConfig::load(path)?;
            self.apply(&mut config);
            config.validate()?;
            jobs.push(Job { name: job_name(path), config });
        }
        for (i, a) in jobs.iter().enumerate() {
            if jobs[..i].iter().any(|b| b.name == a.name && b.config.out == a.config.out) {
                return Err(omnirotor::Error::InvalidInput(format!(
                    "two configs named `{}` would write the same files",
                    a.name
                )));
            }
        }
        Ok(jobs)
    }
}

fn job_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned())
}

/// Runs every job on its own thread and prints each result as one JSON line,
/// in config order.
fn run_all<T, F>(jobs: &[Job], f: F) -> omnirotor::Result<()>
where
    T: serde::Serialize + Send,
    F: Fn(&Job) -> omnirotor::Result<T> + Sync,
{
    let results: Vec<omnirotor::Result<T>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs.iter().map(|j| s.spawn(|| f(j))).collect();
        handles.into_iter().map(|h| h.join().expect("job thread panicked")).collect()
    });
    let mut first_err = None;
    for (job, res) in jobs.iter().zip(results) {
        match res {
            Ok(v) => println!("{}", serde_json::to_string(&v)?),
            Err(e) => {
                eprintln!("error: {}: {e}", job.name);
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn jobs(c: &Common, default_name: &str) -> omnirotor::Result<Vec<Job>> {
    c.jobs(default_name).inspect_err(|e| eprintln!("error: {e}"))
}

fn run(cli: Cli) -> omnirotor::Result<()> {
    match cli.command {
        Command::Efficiency(c) => run_all(&jobs(&c, "efficiency")?, commands::efficiency),
        Command::Allocate { input, common } => {
            let name = job_name(&input);
            run_all(&jobs(&common, &name)?, |j| commands::allocate(j, &input))
        }
        Command::Fly(c) => run_all(&jobs(&c, "fly")?, commands::fly),
        Command::Compare(c) => run_all(&jobs(&c, "compare")?, commands::compare),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_numerical() => ExitCode::from(2),
        Err(_) => ExitCode::from(1),
    }
}
