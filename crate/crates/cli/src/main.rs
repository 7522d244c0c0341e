use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use risense::dataset::RisPipeline;
use risense_cli::commands::{
    cmd_detect, cmd_evaluate, cmd_experiment, cmd_generate, cmd_ris_study, report_table,
};
use risense_cli::config::{Overrides, RunConfig};
use risense_cli::Result;

/// RIS-aided spectrum sensing: dataset generation, RIS studies, baseline
/// detection and AP evaluation.
///
/// Exit codes: 0 success, 1 other failure, 3 invalid config, 4 generation
/// failure, 5 I/O failure, 6 schema mismatch in inputs.
#[derive(Debug, Parser)]
#[command(name = "risense", version)]
struct Cli {
    /// TOML run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root (overrides `output.root`).
    #[arg(long, global = true, env = "RISENSE_OUT")]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Master seed for scenarios and RIS studies.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// RIS pipeline for `generate`.
    #[arg(long, global = true, value_enum)]
    ris: Option<RisArg>,
    /// Store the received IQ of every capture.
    #[arg(long, global = true)]
    save_iq: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RisArg {
    Off,
    Optimized,
    Ideal,
}

impl From<RisArg> for RisPipeline {
    fn from(r: RisArg) -> Self {
        match r {
            RisArg::Off => RisPipeline::Off,
            RisArg::Optimized => RisPipeline::Optimized,
            RisArg::Ideal => RisPipeline::Ideal,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled spectrogram dataset under `<out>/<pipeline>`.
    Generate,
    /// Monte-Carlo study of the greedy RIS optimizer.
    RisStudy {
        /// Trials (overrides `study.trials`).
        #[arg(long)]
        trials: Option<usize>,
        /// Surface size (overrides `channel.n_elements`).
        #[arg(long)]
        elements: Option<usize>,
        /// Compare with exhaustive search (N ≤ 24).
        #[arg(long)]
        exhaustive: bool,
    },
    /// Run the baseline detector on a generated dataset.
    Detect {
        /// Dataset directory holding `manifest.json`.
        dataset: PathBuf,
    },
    /// Score detections; Off and Optimized datasets together give a delta table.
    Evaluate {
        /// One or more dataset directories.
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        /// Detection directory (single dataset only).
        #[arg(long)]
        detections: Option<PathBuf>,
        /// COCO annotation file to use as ground truth (single dataset only).
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Generate, detect and evaluate every configured pipeline.
    Experiment,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply(&Overrides {
        out: cli.out,
        jobs: cli.jobs,
        seed: cli.seed,
        ris: cli.ris.map(Into::into),
        save_iq: cli.save_iq,
    });
    let started = Instant::now();
    match cli.command {
        Command::Generate => {
            cfg.validate()?;
            let o = cmd_generate(&cfg, cfg.ris_pipeline)?;
            println!("manifest: {}", o.manifest_path.display());
            println!(
                "images: {} train, {} test, {} failed captures",
                o.train_images, o.test_images, o.failed
            );
        }
        Command::RisStudy {
            trials,
            elements,
            exhaustive,
        } => {
            if let Some(t) = trials {
                cfg.study.trials = t;
            }
            if let Some(n) = elements {
                cfg.channel.n_elements = n;
            }
            cfg.study.exhaustive |= exhaustive;
            cfg.validate()?;
            let o = cmd_ris_study(&cfg)?;
            print!("{}", o.summary.to_table());
            println!("written to {}", o.dir.display());
        }
        Command::Detect { dataset } => {
            cfg.validate()?;
            let o = cmd_detect(&dataset, &cfg.detector, cfg.output.jobs)?;
            for (id, reason) in &o.failures {
                eprintln!("{id}: {reason}");
            }
            println!(
                "{} detection files in {}, {} captures failed",
                o.written,
                o.dir.display(),
                o.failures.len()
            );
        }
        Command::Evaluate {
            datasets,
            detections,
            gt,
        } => {
            cfg.validate()?;
            let o = cmd_evaluate(
                &datasets,
                detections.as_deref(),
                gt.as_deref(),
                &cfg.evaluation,
                &cfg.output.root,
            )?;
            for e in &o.evaluations {
                print!("{}", report_table(e));
            }
            if let Some(table) = &o.comparison {
                print!("\n{table}");
            }
        }
        Command::Experiment => {
            cfg.validate()?;
            let summary = cmd_experiment(&cfg)?;
            print!("{}", summary.to_text());
        }
    }
    eprintln!("done in {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
