use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lio_core::sim::ScenarioPreset;
use lio_tools::config::{ClassifierKind, PipelineConfig};
use lio_tools::evaluate::{evaluate, inspect, Metric};
use lio_tools::manifest::DatasetManifest;
use lio_tools::pipeline::{run_pipeline, write_outputs};
use lio_tools::simulate::simulate;

#[derive(Parser)]
#[command(name = "lio", version, about = "Laser-inertial odometry and mapping for highway scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum World {
    HighwayStatic,
    HighwayDynamic,
    Smoke,
}

#[derive(Clone, Copy, ValueEnum)]
enum Classifier {
    Heuristic,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Ate,
    Kitti,
}

#[derive(Subcommand)]
enum Command {
    /// Write a simulated dataset directory.
    Simulate {
        #[arg(long, value_enum)]
        world: World,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run odometry and mapping over a dataset.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// `key = value` file; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_detection: bool,
        #[arg(long, value_enum)]
        classifier: Option<Classifier>,
        /// Override one config key, `key=value`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Compare an estimated trajectory with a reference.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_enum, default_value = "ate")]
        metric: MetricArg,
        /// Association tolerance, seconds.
        #[arg(long, default_value_t = 0.02)]
        max_dt: f64,
        /// Relative-error segments start at every n-th pose.
        #[arg(long, default_value_t = 10)]
        kitti_step: usize,
    },
    /// Print extent and density of a map file.
    Inspect {
        #[arg(long)]
        map: PathBuf,
    },
    /// Print the configuration with every key.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn load_config(path: Option<&PathBuf>, set: &[String]) -> Result<PipelineConfig, String> {
    let mut config = match path {
        Some(p) => PipelineConfig::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => PipelineConfig::default(),
    };
    config.apply_overrides(set).map_err(|e| format!("--set: {e}"))?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Simulate { world, out, seed } => {
            let preset = match world {
                World::HighwayStatic => ScenarioPreset::HighwayStatic,
                World::HighwayDynamic => ScenarioPreset::HighwayDynamic,
                World::Smoke => ScenarioPreset::Smoke,
            };
            let m = simulate(preset, seed, &out).map_err(|e| e.to_string())?;
            println!("wrote {} scans to {}", m.scans.len(), out.display());
        }
        Command::Run {
            dataset,
            config,
            out,
            no_detection,
            classifier,
            set,
        } => {
            let mut config = load_config(config.as_ref(), &set)?;
            if no_detection {
                config.detection_enabled = false;
            }
            if let Some(c) = classifier {
                config.classifier = match c {
                    Classifier::Heuristic => ClassifierKind::Heuristic,
                    Classifier::Oracle => ClassifierKind::Oracle,
                };
            }
            let manifest = DatasetManifest::load(&dataset).map_err(|e| e.to_string())?;
            let outputs = run_pipeline(&manifest, &config).map_err(|e| e.to_string())?;
            write_outputs(&out, &outputs, &config).map_err(|e| e.to_string())?;
            let r = &outputs.report;
            println!(
                "{} scans, {} odometry poses, {} mapping events, {} map points in {:.1} s",
                r.scans,
                r.odometry_poses,
                r.map_records.len(),
                r.map_points,
                r.wall_seconds
            );
        }
        Command::Evaluate {
            est,
            reference,
            metric,
            max_dt,
            kitti_step,
        } => {
            let metric = match metric {
                MetricArg::Ate => Metric::Ate,
                MetricArg::Kitti => Metric::Kitti,
            };
            print!("{}", evaluate(&est, &reference, metric, max_dt, kitti_step).map_err(|e| e.to_string())?);
        }
        Command::Inspect { map } => print!("{}", inspect(&map).map_err(|e| e.to_string())?),
        Command::Config { config, set } => print!("{}", load_config(config.as_ref(), &set)?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
