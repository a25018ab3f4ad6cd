use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use fgf_core::config::{parse_orders, FeatureSpec, KeyValueConfig, Settings};
use fgf_core::experiment::{
    density_table, kl_csv, kl_table, run_seeds, write_reports, ExperimentConfig,
};
use fgf_core::oracle::DEFAULT_GRID_POINTS;
use fgf_core::Error;

const DEFAULT_DENSITY_GRID: usize = 201;

#[derive(Parser, Debug)]
#[command(
    name = "fgf",
    version,
    about = "Gaussian and feature Gaussian filter experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a model, run the GF and the requested feature filters, write
    /// per-step reports and a summary.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long)]
        seeds: Option<usize>,
        /// Monte Carlo sample count.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Tabulate exact, GF and FGF conditionals of x given y after one
    /// prediction from the prior.
    Density {
        #[command(flatten)]
        common: Common,
        /// Measurement window, e.g. `-20,20`.
        #[arg(long, value_name = "LO,HI", allow_hyphen_values = true)]
        y_range: Option<String>,
        /// Grid points per axis.
        #[arg(long, default_value_t = DEFAULT_DENSITY_GRID)]
        grid: usize,
    },
    /// KL objective of the conditional fit for each feature order.
    Kl {
        #[command(flatten)]
        common: Common,
        /// Grid points per axis.
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid: usize,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// noise_magnitude | heaviside
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Comma-separated monomial feature orders, e.g. `1,2,3`.
    #[arg(long)]
    orders: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<KeyValueConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => KeyValueConfig::load(path)?,
            None => KeyValueConfig::default(),
        };
        if let Some(model) = &self.model {
            cfg.set("model", model.as_str())?;
        }
        if let Some(seed) = self.seed {
            cfg.set("experiment.seed", seed.to_string())?;
        }
        if let Some(steps) = self.steps {
            cfg.set("experiment.steps", steps.to_string())?;
        }
        if let Some(orders) = &self.orders {
            parse_orders(orders)?;
            cfg.set("experiment.orders", orders.as_str())?;
        }
        Ok(cfg)
    }
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Simulate {
            common,
            seeds,
            samples,
        } => {
            let mut cfg = common.load()?;
            if let Some(n) = seeds {
                cfg.set("experiment.seeds", n.to_string())?;
            }
            if let Some(n) = samples {
                cfg.set("engine.samples", n.to_string())?;
            }
            simulate(&Settings::from_config(&cfg)?, &common.out)
        }
        Command::Density {
            common,
            y_range,
            grid,
        } => {
            let settings = Settings::from_config(&common.load()?)?;
            let range = y_range.as_deref().map(parse_range).transpose()?;
            density(&settings, &common.out, grid, range)
        }
        Command::Kl { common, grid } => {
            let settings = Settings::from_config(&common.load()?)?;
            kl(&settings, &common.out, grid)
        }
    }
}

fn parse_range(text: &str) -> Result<(f64, f64), Failure> {
    let bad = || {
        Failure::Usage(format!(
            "invalid --y-range `{text}`; expected LO,HI with LO < HI"
        ))
    };
    let (lo, hi) = text.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if lo >= hi || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn simulate(settings: &Settings, out: &Path) -> Result<ExitCode, Failure> {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_settings(settings, settings.seed);
    let seeds: Vec<u64> = (0..settings.seeds as u64)
        .map(|i| settings.seed + i)
        .collect();
    let reports = run_seeds(&cfg, &seeds)?;
    let written = write_reports(out, &reports)?;

    let mut failed = false;
    for report in &reports {
        for s in report.summary() {
            print!("seed {} feature {} rmse {:.6}", s.seed, s.feature, s.rmse);
            if let (Some(near), Some(far)) = (s.rmse_near_step, s.rmse_far_step) {
                print!(" near_step {near:.6} far_step {far:.6}");
            }
            if let Some(step) = s.failed_step {
                failed = true;
                print!(" FAILED at step {}", step + 1);
            }
            println!();
        }
    }
    for path in &written {
        println!("wrote {}", path.display());
    }
    println!("runtime {:.3} s", start.elapsed().as_secs_f64());
    if failed {
        eprintln!("error: at least one filter diverged; see summary.csv");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

/// The FGF shown next to the GF: the highest configured feature.
fn fgf_feature(settings: &Settings) -> FeatureSpec {
    settings
        .features
        .iter()
        .rev()
        .find(|f| **f != FeatureSpec::Monomial(1))
        .cloned()
        .unwrap_or(FeatureSpec::Monomial(1))
}

fn density(
    settings: &Settings,
    out: &Path,
    grid: usize,
    range: Option<(f64, f64)>,
) -> Result<ExitCode, Failure> {
    let start = Instant::now();
    let table = density_table(
        &settings.model,
        &fgf_feature(settings),
        settings.standardize,
        grid,
        range,
    )?;
    fs::create_dir_all(out).map_err(Error::from)?;
    let name = settings.model.name();
    let grid_path = out.join(format!("density_{name}.csv"));
    let means_path = out.join(format!("density_{name}_means.csv"));
    fs::write(&grid_path, table.grid_csv()).map_err(Error::from)?;
    fs::write(&means_path, table.means_csv()).map_err(Error::from)?;
    println!("wrote {}", grid_path.display());
    println!("wrote {}", means_path.display());
    println!("runtime {:.3} s", start.elapsed().as_secs_f64());
    Ok(ExitCode::SUCCESS)
}

fn kl(settings: &Settings, out: &Path, grid: usize) -> Result<ExitCode, Failure> {
    let start = Instant::now();
    let rows = kl_table(
        &settings.model,
        &settings.engine,
        &settings.features,
        settings.standardize,
        grid,
    )?;
    fs::create_dir_all(out).map_err(Error::from)?;
    let path = out.join(format!("kl_{}.csv", settings.model.name()));
    fs::write(&path, kl_csv(&rows)).map_err(Error::from)?;
    for r in &rows {
        println!(
            "feature {} kl_oracle_fit {:.8} kl_engine_fit {:.8}",
            r.feature, r.kl_oracle_fit, r.kl_engine_fit
        );
    }
    println!("wrote {}", path.display());
    println!("runtime {:.3} s", start.elapsed().as_secs_f64());
    Ok(ExitCode::SUCCESS)
}
