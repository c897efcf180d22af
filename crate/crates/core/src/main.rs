use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use emg_finger::controller::write_calibration_csv;
use emg_finger::harness::control::{prepare_control, run_prosthesis_control_experiment, run_scripted_control};
use emg_finger::harness::estimation::{evaluate_saved, save_estimation};
use emg_finger::harness::{
    run_force_estimation_experiment, run_tension_calibration, ConsoleServer, ControlAssets, ExperimentConfig,
    MetricsReport, Pacing, ReplaySource, ServeOptions, TrialRecord,
};
use emg_finger::Result;

#[derive(Parser)]
#[command(name = "emg-finger", version, about = "EMG-driven force control of a simulated tendon finger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct AssetPaths {
    /// Trained control estimator; trained afresh when omitted.
    #[arg(long, requires = "tension")]
    estimator: Option<PathBuf>,
    /// Tension model; calibrated afresh when omitted.
    #[arg(long, requires = "estimator")]
    tension: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every estimator on each synthetic subject and score it.
    Train(Common),
    /// Re-score the models and datasets written by `train`.
    Evaluate(Common),
    /// Run the closed-loop control experiment.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        assets: AssetPaths,
        /// Replay the activation column of a logged trial instead of the
        /// scripted operator.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Sweep the plant and fit the force-to-tension model.
    CalibrateTension(Common),
    /// Serve one live session to a console client.
    Serve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        assets: AssetPaths,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, value_enum, default_value = "realtime")]
        pacing: PacingArg,
    },
    /// Merge the stage reports under the output directory and print them.
    Report {
        #[command(flatten)]
        common: Common,
        /// Report files to merge instead of the stage reports.
        reports: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PacingArg {
    Realtime,
    Lockstep,
}

const STAGES: [&str; 4] = ["estimation", "calibration", "control", "session"];

fn assets(cfg: &ExperimentConfig, paths: &AssetPaths, dir: &Path) -> Result<ControlAssets> {
    match (&paths.estimator, &paths.tension) {
        (Some(e), Some(t)) => ControlAssets::load(e, t),
        _ => {
            eprintln!("training the control estimator and calibrating the tension model");
            let a = prepare_control(cfg)?;
            a.save(dir)?;
            Ok(a)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.load()?;
            let dir = common.out.join("estimation");
            let outcome = run_force_estimation_experiment(&cfg)?;
            save_estimation(&cfg, &outcome, &dir)?;
            print!("{}", outcome.report.render());
        }
        Command::Evaluate(common) => {
            let cfg = common.load()?;
            let dir = common.out.join("estimation");
            let report = evaluate_saved(&cfg, &dir)?;
            report.save(&dir.join("evaluation.json"))?;
            print!("{}", report.render());
        }
        Command::CalibrateTension(common) => {
            let cfg = common.load()?;
            let dir = common.out.join("calibration");
            std::fs::create_dir_all(&dir)?;
            let out = run_tension_calibration(&cfg)?;
            write_calibration_csv(File::create(dir.join("calibration.csv"))?, &out.samples)?;
            write_calibration_csv(File::create(dir.join("validation.csv"))?, &out.validation)?;
            out.model.save(&dir.join(ControlAssets::TENSION_FILE))?;
            let report = out.report(cfg.seed);
            report.save(&dir.join("report.json"))?;
            print!("{}", report.render());
        }
        Command::Simulate { common, assets: paths, replay } => {
            let cfg = common.load()?;
            let dir = common.out.join("control");
            let assets = assets(&cfg, &paths, &dir)?;
            let outcome = match replay {
                Some(path) => {
                    let log = TrialRecord::read_csv(File::open(path)?, cfg.control.period)?;
                    run_prosthesis_control_experiment(&cfg, &assets, &mut ReplaySource::new(log.activations()))?
                }
                None => run_scripted_control(&cfg, &assets)?,
            };
            std::fs::create_dir_all(&dir)?;
            outcome.record.write_csv(File::create(dir.join("trial.csv"))?)?;
            outcome.report.save(&dir.join("report.json"))?;
            print!("{}", outcome.report.render());
        }
        Command::Serve {
            common,
            assets: paths,
            port,
            pacing,
        } => {
            let cfg = common.load()?;
            let assets = assets(&cfg, &paths, &common.out.join("control"))?;
            let server = ConsoleServer::bind(port)?;
            eprintln!("waiting for a console on {}", server.local_addr()?);
            let opts = ServeOptions {
                pacing: match pacing {
                    PacingArg::Realtime => Pacing::Realtime,
                    PacingArg::Lockstep => Pacing::Lockstep,
                },
                out: Some(common.out.join("session")),
            };
            let summary = server.run(&cfg, &assets, &opts)?;
            if summary.input_timeout {
                eprintln!("input went stale for {} ticks; the last activation was held", summary.held_ticks);
            }
            print!("{}", summary.report.render());
        }
        Command::Report { common, reports } => {
            let paths: Vec<PathBuf> = if reports.is_empty() {
                STAGES
                    .iter()
                    .map(|s| common.out.join(s).join("report.json"))
                    .filter(|p| p.exists())
                    .collect()
            } else {
                reports
            };
            let mut merged: Option<MetricsReport> = None;
            for p in &paths {
                let r = MetricsReport::load(p)?;
                match &mut merged {
                    Some(m) => m.merge(r),
                    None => merged = Some(r),
                }
            }
            let Some(merged) = merged else {
                return Err(emg_finger::Error::Config(format!(
                    "no reports found under {}",
                    common.out.display()
                )));
            };
            std::fs::create_dir_all(&common.out)?;
            merged.save(&common.out.join("report.json"))?;
            std::fs::write(common.out.join("report.txt"), merged.render())?;
            print!("{}", merged.render());
        }
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
