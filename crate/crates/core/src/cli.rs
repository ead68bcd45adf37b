//! The `fishform` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::cpg::{self, CpgConfig, CpgState, DEFAULT_DT};
use crate::dynamics::{self, NUM_ACTIONS};
use crate::eval::{self, EvalError, EvalSettings, ScenarioScript, SWITCH_INTERVAL};
use crate::marl::{self, log_csv};
use crate::nn;

#[derive(Debug, Parser)]
#[command(name = "fishform", version, about = "Circle-formation control of fish-like robots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a controller from a TOML experiment config.
    Train {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write a report plus trajectories.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..))]
        agents: u64,
        #[arg(long, default_value_t = 70.0)]
        radius: f64,
        /// regular, equilateral, square, decagon, isosceles-right,
        /// right-30-60, or switch (the three-triangle switching timeline).
        #[arg(long, default_value = "regular")]
        formation: String,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        episodes: u64,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        noise: Switch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Steps per episode (defaults to 1500, or three switch intervals).
        #[arg(long)]
        episode_length: Option<usize>,
        /// Leading steps excluded from the metrics (defaults to half an
        /// episode, or 0 for the switching timeline).
        #[arg(long)]
        settle_steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value = "eval_out")]
        out: PathBuf,
    },
    /// Dump the joint-angle signals of the CPG for one action class.
    CpgTrace {
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(0..NUM_ACTIONS as u64))]
        action_id: u64,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the 15-action motion catalog as CSV.
    Catalog,
    /// Print the effective default experiment config.
    Config,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidSettings(_) | EvalError::InvalidScenario(_) => Failure::usage(e.to_string()),
            _ => Failure::runtime(e.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", path.display())))
}

/// Parse `args` (including the program name), run the command and return
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { config, output_dir } => cmd_train(&config, output_dir),
        Command::Eval {
            checkpoint,
            agents,
            radius,
            formation,
            episodes,
            noise,
            seed,
            episode_length,
            settle_steps,
            threads,
            out,
        } => {
            let switching = formation == "switch";
            let episode_length = episode_length.unwrap_or(if switching { 3 * SWITCH_INTERVAL } else { 1500 });
            let settings = EvalSettings {
                radius,
                episodes: episodes as usize,
                episode_length,
                settle_steps: settle_steps.unwrap_or(if switching { 0 } else { episode_length / 2 }),
                noise: noise == Switch::On,
                seed,
                threads,
                ..EvalSettings::default()
            };
            let scenario = if switching {
                if agents != 3 {
                    return Err(Failure::usage("the switch timeline uses 3 agents"));
                }
                eval::formation_switch_scenario(SWITCH_INTERVAL)
            } else {
                ScenarioScript::fixed(eval::named_formation(&formation, agents as usize)?)
            };
            cmd_eval(&checkpoint, &scenario, &settings, &out)
        }
        Command::CpgTrace { seconds, action_id, out } => cmd_cpg_trace(seconds, action_id as usize, out.as_deref()),
        Command::Catalog => {
            print!("{}", dynamics::catalog_csv());
            Ok(())
        }
        Command::Config => {
            print!("{}", ExperimentConfig::default().to_toml());
            Ok(())
        }
    }
}

fn cmd_train(path: &Path, output_dir: Option<PathBuf>) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    let out = cfg.output_dir.clone();
    create_dir(&out)?;
    write_file(&out.join("config.toml"), cfg.to_toml())?;
    let total = cfg.learner.episodes;
    let outcome = marl::train(&cfg.learner, &cfg.env, cfg.seed, |row| {
        if row.episode % 100 == 0 || row.episode == total {
            eprintln!("episode {}/{}: mean team reward {:.3}", row.episode, total, row.mean_team_reward);
        }
    })
    .map_err(|e| Failure::runtime(e.to_string()))?;
    let meta = marl::checkpoint_meta(cfg.learner.algorithm, &cfg.hash());
    write_file(&out.join("train_log.csv"), log_csv(&outcome.log))?;
    write_file(&out.join("checkpoint_final.json"), nn::serialize(&outcome.final_net, &meta))?;
    write_file(&out.join("checkpoint_best.json"), nn::serialize(&outcome.best_net, &meta))?;
    println!(
        "trained {} for {} episodes; best moving average at episode {}; outputs in {}",
        outcome.algorithm,
        outcome.log.len(),
        outcome.best_episode,
        out.display()
    );
    Ok(())
}

fn cmd_eval(checkpoint: &Path, scenario: &ScenarioScript, settings: &EvalSettings, out: &Path) -> Result<(), Failure> {
    settings.validate()?;
    if !checkpoint.exists() {
        return Err(Failure::runtime(format!("checkpoint not found: {}", checkpoint.display())));
    }
    let (bank, meta) = eval::load_checkpoint(checkpoint)?;
    let run = eval::evaluate(&bank, &meta.algorithm, scenario, settings, true)?;
    create_dir(out)?;
    let traj_dir = out.join("trajectories");
    create_dir(&traj_dir)?;
    write_file(&out.join("eval_settings.toml"), toml::to_string(settings).expect("settings serialize"))?;
    write_file(&out.join("report.json"), run.report.to_json())?;
    for (k, traj) in run.trajectories.iter().enumerate() {
        write_file(&traj_dir.join(format!("episode_{k:03}.csv")), traj.to_csv())?;
    }
    if let Some(first) = run.trajectories.first() {
        eval::write_svg(first, &out.join("episode_000.svg"))?;
    }
    let r = &run.report;
    println!(
        "{} agents, {} episodes: err_t_rmse {:.3} ± {:.3} cm, err_f_rmse {:.3} ± {:.3} cm",
        r.n_agents, r.n_episodes, r.err_t_rmse, r.err_t_rmse_std, r.err_f_rmse, r.err_f_rmse_std
    );
    Ok(())
}

fn cmd_cpg_trace(seconds: f64, action_id: usize, out: Option<&Path>) -> Result<(), Failure> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Failure::usage("--seconds must be positive"));
    }
    let entry = dynamics::action(action_id).ok_or_else(|| Failure::usage(format!("invalid action id {action_id}")))?;
    let cfg = CpgConfig::for_action(entry);
    let steps = (seconds / DEFAULT_DT).round() as usize;
    let rows = cpg::trace(&cfg, CpgState::zeros(cfg.joints()), DEFAULT_DT, steps)
        .map_err(|e| Failure::runtime(e.to_string()))?;
    let mut csv = String::from("t");
    for j in 1..=cfg.joints() {
        let _ = write!(csv, ",theta_{j}");
    }
    csv.push('\n');
    for (t, theta) in rows {
        let _ = write!(csv, "{t:.6}");
        for v in theta {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    match out {
        Some(path) => write_file(path, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
