use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use posebench::config::ExperimentConfig;
use posebench::error::{ConfigError, Result};
use posebench::{experiments, io, stages};

/// Synthetic RGB-D pose denoising benchmark.
#[derive(Debug, Parser)]
#[command(name = "posebench", version)]
struct Cli {
    /// JSON experiment config; defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the clean scene corpus and write meshes.
    Simulate,
    /// Corrupt rendered scenes with the configured sensor noise.
    Corrupt,
    /// Fit calibration and write denoised patches for each cell.
    Denoise,
    /// Fit poses to denoised patches.
    Estimate,
    /// Score an estimates file per cell.
    Evaluate {
        /// Defaults to `<out>/estimates.json`.
        #[arg(long)]
        estimates: Option<PathBuf>,
    },
    /// Run the whole ablation grid in memory.
    Ablate,
    /// Run the calibration-fraction study.
    Fractions {
        /// Comma-separated fractions; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Pool depth error statistics over the corpus.
    Stats,
    /// Print the effective config as JSON.
    Config,
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let (mut cfg, base) = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => (ExperimentConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok((cfg, base))
}

fn run(cli: &Cli) -> Result<()> {
    let (cfg, base) = load(cli)?;
    let out: &Path = &cfg.output_dir;
    if matches!(cli.command, Command::Config) {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let meshes = cfg.build_meshes(&base)?;
    io::create_dir(out)?;
    match &cli.command {
        Command::Simulate => stages::simulate(&cfg, &meshes, out)?,
        Command::Corrupt => stages::corrupt(&cfg, out)?,
        Command::Denoise => stages::denoise(&cfg, &meshes, out)?,
        Command::Estimate => {
            let recs = stages::estimate(&cfg, &meshes, out)?;
            eprintln!("{} estimates written to {}", recs.len(), out.join("estimates.json").display());
        }
        Command::Evaluate { estimates } => {
            let path = estimates.clone().unwrap_or_else(|| out.join("estimates.json"));
            let records: Vec<experiments::EstimateRecord> = io::read_json(&path)?;
            let reports = stages::evaluate(&meshes, &records)?;
            stages::write_evaluation(out, &reports)?;
            print_table(reports.iter().map(|(c, r)| (c.clone(), r)));
        }
        Command::Ablate => {
            let outcome = experiments::run_ablation(&cfg, &meshes)?;
            stages::write_ablation(out, &outcome)?;
            print_table(outcome.cells.iter().map(|c| (c.cell.label(), &c.report)));
        }
        Command::Fractions { fractions } => {
            let fr = fractions.clone().unwrap_or_else(|| cfg.fractions.clone());
            if let Some(f) = fr.iter().find(|f| !(0.0..=1.0).contains(*f)) {
                return Err(ConfigError::Invalid(vec![posebench::FieldIssue {
                    field: "--fractions".into(),
                    message: format!("{f} is outside [0, 1]"),
                }])
                .into());
            }
            let rows = experiments::run_real_fraction_study(&cfg, &meshes, &fr)?;
            stages::write_fractions(out, &rows)?;
            for r in &rows {
                let avg = &r.report.avg_class_weighted;
                println!(
                    "{:>5.2} {:<16} AUC ADD-S {:6.2}  ADD(S) {:6.2}",
                    r.fraction,
                    r.cell.label(),
                    avg.auc_adds,
                    avg.auc_add_s
                );
            }
        }
        Command::Stats => {
            let stats = experiments::run_noise_stats(&cfg, &meshes)?;
            stages::write_stats(out, &stats)?;
            println!(
                "pixels {}  holes {:.4}  mean |e| {:.5} m  signed {:.5} ± {:.5} m",
                stats.pixels, stats.hole_fraction, stats.mean, stats.signed_mean, stats.signed_std
            );
        }
        Command::Config => unreachable!(),
    }
    Ok(())
}

fn print_table<'a>(rows: impl Iterator<Item = (String, &'a posebench_core::metrics::MetricReport)>) {
    println!("{:<16} {:>6} {:>10} {:>10} {:>10}", "cell", "count", "AUC ADD-S", "AUC ADD(S)", "ACC 0.1d");
    for (cell, r) in rows {
        let a = &r.avg_class_weighted;
        println!("{:<16} {:>6} {:>10.2} {:>10.2} {:>10.2}", cell, a.count, a.auc_adds, a.auc_add_s, a.acc_0_1d);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
