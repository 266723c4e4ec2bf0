//! `evio`: run the estimator on a dataset, generate synthetic datasets, compare
//! ablation variants and evaluate trajectories.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use evio_core::config::load_toml;
use evio_core::eval::{ate_rmse, Metrics, Trajectory, DEFAULT_MAX_DT};
use evio_core::pipeline::{run_pipeline, RunArtifacts};
use evio_core::sim::{export_dataset, SimConfig};
use evio_core::{Error, PipelineConfig, Variant};

#[derive(Parser, Debug)]
#[command(name = "evio", version, about = "Event-based stereo visual-inertial odometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for synthetic data.
    #[arg(long)]
    seed: Option<u64>,
    /// Configuration override `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the estimator on the dataset named by the configuration.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = VariantArg::Full)]
        variant: VariantArg,
    },
    /// Generate a synthetic dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the full pipeline and one ablated variant on the same input.
    Ablate {
        /// Component to disable in the baseline.
        #[arg(value_enum)]
        switch: Switch,
        #[command(flatten)]
        common: Common,
        /// Dataset configuration used when the pipeline configuration names no input.
        #[arg(long)]
        sim_config: Option<PathBuf>,
        /// Dataset override `key=value`; repeatable.
        #[arg(long = "sim-set", value_name = "KEY=VALUE")]
        sim_set: Vec<String>,
    },
    /// Absolute trajectory error of an estimate against a reference.
    Eval {
        /// Estimated trajectory (TUM format).
        est: PathBuf,
        /// Reference trajectory (TUM format).
        gt: PathBuf,
        /// Directory for `metrics.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
#[value(rename_all = "snake_case")]
enum VariantArg {
    Full,
    NoSelection,
    NoManagement,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
#[value(rename_all = "snake_case")]
enum Switch {
    NoSelection,
    NoManagement,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoSelection => Variant::NoSelection,
            VariantArg::NoManagement => Variant::NoManagement,
        }
    }
}

impl From<Switch> for Variant {
    fn from(s: Switch) -> Self {
        match s {
            Switch::NoSelection => Variant::NoSelection,
            Switch::NoManagement => Variant::NoManagement,
        }
    }
}

fn pipeline_config(common: &Common) -> anyhow::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(common.config.as_deref(), &common.set)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn sim_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> anyhow::Result<SimConfig> {
    let mut cfg: SimConfig = load_toml(path, overrides)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(name: &str, a: &RunArtifacts) {
    println!("[{name}] trajectory: {}", a.trajectory.display());
    match a.ate_rmse_m {
        Some(ate) => println!("[{name}] ATE RMSE: {ate:.4} m"),
        None => println!("[{name}] no ground truth; ATE not computed"),
    }
    println!("{}", a.timing_report);
}

fn run(common: &Common, variant: Variant) -> anyhow::Result<()> {
    let cfg = pipeline_config(common)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let artifacts = run_pipeline(&cfg, variant, &out)?;
    report(variant.name(), &artifacts);
    Ok(())
}

fn generate(common: &Common) -> anyhow::Result<()> {
    let cfg = sim_config(common.config.as_deref(), &common.set, common.seed)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("dataset"));
    let meta = export_dataset(&cfg, &out)?;
    println!(
        "wrote {} ({:.1} s, {} + {} events, {} + {} spurious)",
        out.display(),
        meta.duration,
        meta.event_counts[0],
        meta.event_counts[1],
        meta.noise_counts[0],
        meta.noise_counts[1]
    );
    Ok(())
}

#[derive(Serialize)]
struct AblationSummary {
    switch: &'static str,
    full_ate_rmse_m: f64,
    baseline_ate_rmse_m: f64,
    full_not_worse: bool,
}

fn ablate(switch: Switch, common: &Common, sim_path: Option<&Path>, sim_set: &[String]) -> anyhow::Result<()> {
    let mut cfg = pipeline_config(common)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let has_input = cfg.input_dir.is_some() || cfg.imu.is_some();
    if !has_input {
        let sim = sim_config(sim_path, sim_set, common.seed)?;
        let dir = out.join("dataset");
        export_dataset(&sim, &dir)?;
        println!("generated {}", dir.display());
        cfg.input_dir = Some(dir);
    }
    let baseline: Variant = switch.into();
    let mut ates = Vec::new();
    for variant in [Variant::Full, baseline] {
        let a = run_pipeline(&cfg, variant, &out.join(variant.name()))?;
        report(variant.name(), &a);
        ates.push(a.ate_rmse_m.context("ablation needs ground truth (gt.tum) to compare variants")?);
    }
    let summary = AblationSummary {
        switch: baseline.name(),
        full_ate_rmse_m: ates[0],
        baseline_ate_rmse_m: ates[1],
        full_not_worse: ates[0] <= ates[1],
    };
    let path = out.join("ablation.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    println!(
        "full {:.4} m vs {} {:.4} m -> {}",
        summary.full_ate_rmse_m,
        summary.switch,
        summary.baseline_ate_rmse_m,
        if summary.full_not_worse { "full not worse" } else { "full worse" }
    );
    Ok(())
}

fn eval(est: &Path, gt: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let est_traj = Trajectory::read_tum(est)?;
    let gt_traj = Trajectory::read_tum(gt)?;
    let r = ate_rmse(&est_traj, &gt_traj, DEFAULT_MAX_DT)?;
    let length = gt_traj.path_length();
    println!(
        "ATE RMSE: {:.6} m over {} pairs ({:.3} % of {length:.2} m)",
        r.rmse,
        r.n_pairs,
        100.0 * r.rmse / length.max(1e-12)
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let m = Metrics {
            ate_rmse_m: Some(r.rmse),
            n_pairs: Some(r.n_pairs),
            trajectory_length_m: Some(length),
            timing: Default::default(),
        };
        m.write_json(&dir.join("metrics.json"))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, variant } => run(common, (*variant).into()),
        Command::Generate { common } => generate(common),
        Command::Ablate {
            switch,
            common,
            sim_config,
            sim_set,
        } => ablate(*switch, common, sim_config.as_deref(), sim_set),
        Command::Eval { est, gt, out } => eval(est, gt, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(Error::Diverged(_)) = e.downcast_ref::<Error>() {
                eprintln!("{e}");
                return ExitCode::from(3);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
