use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rollscan::config::{BaselineMode, ControlMode, ExperimentConfig};
use rollscan::harness::{self, RunReport};
use rollscan::{Error, Result};

#[derive(Parser)]
#[command(name = "rollscan", version, about = "Spherical-robot LiDAR coverage simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration (all repeats) and write its artifacts.
    Run(RunArgs),
    /// Tabulate report files or run directories side by side.
    Compare {
        /// `report.csv` files or directories containing one.
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        /// Also write the table to `<dir>/comparison.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run once per value of a single config key.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Dotted key, for example `oscillation.amplitude`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Baseline: fixed_horizontal, static_tilt, active_rotation, passive_excitation.
    #[arg(long)]
    mode: Option<BaselineMode>,
    /// Pose source for the controller and map: gt or lio.
    #[arg(long)]
    control: Option<ControlMode>,
    #[arg(long)]
    repeats: Option<u32>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("`--set {kv}`: expected KEY=VALUE")))?;
            cfg = cfg.with_override(k.trim(), v.trim())?;
        }
        let e = &mut cfg.experiment;
        if let Some(s) = self.seed {
            e.seed = s;
        }
        if let Some(o) = &self.out {
            e.out = o.clone();
        }
        if let Some(m) = self.mode {
            e.baseline = m;
        }
        if let Some(c) = self.control {
            e.control = c;
        }
        if let Some(r) = self.repeats {
            e.repeats = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_reports(paths: &[PathBuf]) -> Result<Vec<RunReport>> {
    let mut all = Vec::new();
    for p in paths {
        let file = if p.is_dir() { p.join("report.csv") } else { p.clone() };
        let reports = harness::read_reports(&file).map_err(|e| Error::Run { context: file.display().to_string(), source: Box::new(e) })?;
        all.extend(reports);
    }
    Ok(all)
}

fn print_run(out: &Path, reports: &[RunReport]) {
    for r in reports {
        println!(
            "{} repeat {} (seed {}): completeness {:.4}, tracking error {:.4} m",
            r.baseline, r.repeat, r.seed, r.completeness, r.mean_tracking_error
        );
    }
    println!("artifacts in {}", out.display());
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let reports = harness::run_experiment(&cfg)?;
            print_run(&cfg.experiment.out, &reports);
        }
        Command::Compare { reports, out } => {
            let table = harness::compare(&load_reports(&reports)?)?.render();
            print!("{table}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("comparison.txt"), &table)?;
            }
        }
        Command::Sweep { run, param, values } => {
            let cfg = run.resolve()?;
            for (value, reports) in harness::sweep(&cfg, &param, &values)? {
                let mean = |f: fn(&RunReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
                println!(
                    "{param}={value}: completeness {:.4}, tracking error {:.4} m",
                    mean(|r| r.completeness),
                    mean(|r| r.mean_tracking_error)
                );
            }
            println!("table in {}", cfg.experiment.out.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
