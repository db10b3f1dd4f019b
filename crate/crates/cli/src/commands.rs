use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use drilmpc_core::iterate::{Checkpoint, ExperimentOptions};
use drilmpc_core::report::{parse_summary, parse_trajectories_csv, to_json_string, verify_report};
use drilmpc_core::{
    emit_report, parse_config, parse_config_str, run_experiment, ExperimentConfig, ExperimentReport, RadiusSchedule,
    RunSettings, Scenario,
};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::{Cli, Command, Common};

struct Loaded {
    config: ExperimentConfig,
    settings: RunSettings,
    scenario: Scenario,
}

fn load(path: Option<&Path>) -> Result<Loaded> {
    let (config, settings) = match path {
        Some(p) => parse_config(p).with_context(|| format!("reading {}", p.display()))?,
        None => parse_config_str("")?,
    };
    let scenario = config.scenario()?;
    Ok(Loaded {
        config,
        settings,
        scenario,
    })
}

impl Loaded {
    fn apply(&mut self, common: &Common, theta: Option<f64>) -> Result<()> {
        if let Some(seed) = common.seed {
            self.settings.seed = seed;
        }
        if let Some(j) = common.iterations {
            self.settings.iterations = j;
        }
        if let Some(theta) = theta {
            let schedule = RadiusSchedule::Constant { theta };
            schedule.validate().context("--theta")?;
            self.settings.iteration.schedule = schedule;
        }
        Ok(())
    }

    fn out_dir(&self, common: &Common) -> PathBuf {
        common
            .out
            .clone()
            .or_else(|| self.config.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn experiment(&self, seed: u64, options: ExperimentOptions) -> Result<ExperimentReport> {
        let start = Instant::now();
        let report = run_experiment(
            &self.scenario,
            &self.settings.iteration,
            seed,
            self.settings.iterations,
            options,
        )?;
        info!(
            "seed {seed}: {} iterations in {:.2?}",
            report.iterations.len(),
            start.elapsed()
        );
        Ok(report)
    }
}

pub fn dispatch(cli: Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Run {
            common,
            theta,
            checkpoints,
            resume,
        } => run(&common, theta, checkpoints, resume.as_deref()),
        Command::Sweep { common, thetas } => sweep(&common, &thetas),
        Command::Replicate { common, theta, n } => replicate(&common, theta, n),
        Command::Check { config, out } => check(config.as_deref(), out.as_deref()),
    }
}

fn print_summary(report: &ExperimentReport) {
    let costs: Vec<String> = report.costs().iter().map(|c| format!("{c:.4}")).collect();
    println!("seed {}: costs [{}]", report.seed, costs.join(", "));
    println!("colliding iterations: {:?}", report.collision_iterations());
}

fn run(common: &Common, theta: Option<f64>, checkpoints: bool, resume: Option<&Path>) -> Result<ExitCode> {
    let mut loaded = load(common.config.as_deref())?;
    loaded.apply(common, theta)?;
    let out = loaded.out_dir(common);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let checkpoint_dir = out.join("checkpoints");
    if checkpoints || loaded.config.checkpoints() {
        std::fs::create_dir_all(&checkpoint_dir)?;
    }
    let resume = resume
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let options = ExperimentOptions {
        checkpoint_dir: (checkpoints || loaded.config.checkpoints()).then_some(checkpoint_dir.as_path()),
        resume,
    };
    let report = loaded.experiment(loaded.settings.seed, options)?;
    emit_report(&report, &loaded.scenario, &loaded.config.report_paths(Some(&out)))?;
    print_summary(&report);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SweepRow {
    theta: f64,
    final_cost: f64,
    colliding_iterations: usize,
    final_min_clearance: f64,
    safety_frequency: Option<f64>,
    directory: String,
}

fn sweep(common: &Common, thetas: &[f64]) -> Result<ExitCode> {
    if thetas.is_empty() {
        bail!("no radii to sweep");
    }
    let base = load(common.config.as_deref())?;
    let out = base.out_dir(common);
    let rows: Vec<SweepRow> = thetas
        .par_iter()
        .map(|&theta| -> Result<SweepRow> {
            let mut loaded = load(common.config.as_deref())?;
            loaded.apply(common, Some(theta))?;
            let name = format!("theta_{theta:e}");
            let dir = out.join(&name);
            std::fs::create_dir_all(&dir)?;
            let report = loaded.experiment(loaded.settings.seed, ExperimentOptions::default())?;
            emit_report(&report, &loaded.scenario, &loaded.config.report_paths(Some(&dir)))?;
            let last = report.iterations.last();
            Ok(SweepRow {
                theta,
                final_cost: last.map_or(report.seed_trajectory.cost, |r| r.cost),
                colliding_iterations: report.collision_iterations().len(),
                final_min_clearance: last.map_or(f64::NAN, |r| r.min_clearance),
                safety_frequency: report.safety_frequency(),
                directory: name,
            })
        })
        .collect::<Result<_>>()?;

    let mut csv = String::from("theta,final_cost,colliding_iterations,final_min_clearance,safety_frequency\n");
    for r in &rows {
        let freq = r.safety_frequency.map(|f| format!("{f:.16e}")).unwrap_or_default();
        writeln!(
            csv,
            "{:.16e},{:.16e},{},{:.16e},{freq}",
            r.theta, r.final_cost, r.colliding_iterations, r.final_min_clearance
        )?;
        println!(
            "theta {:<8e} cost {:>10.4}  colliding iterations {:>2}  clearance {:.4}",
            r.theta, r.final_cost, r.colliding_iterations, r.final_min_clearance
        );
    }
    std::fs::write(out.join("sweep.csv"), csv)?;
    std::fs::write(out.join("sweep.json"), to_json_string(&rows)?)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct Replication {
    seed: u64,
    iterations: usize,
    safe_iterations: usize,
    colliding_iterations: usize,
    final_cost: f64,
}

#[derive(Serialize)]
struct ReplicationTable {
    theta: f64,
    confidence: Option<f64>,
    replications: Vec<Replication>,
    /// Fraction of all iterations, pooled over replications, whose
    /// trajectory met the risk bound under the true distribution.
    safety_frequency: f64,
    collision_frequency: f64,
}

fn replicate(common: &Common, theta: Option<f64>, n: u64) -> Result<ExitCode> {
    if n == 0 {
        bail!("--n must be at least 1");
    }
    let mut loaded = load(common.config.as_deref())?;
    loaded.apply(common, theta)?;
    let out = loaded.out_dir(common);
    std::fs::create_dir_all(&out)?;
    let base_seed = loaded.settings.seed;
    let replications: Vec<Replication> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Replication> {
            let seed = base_seed.wrapping_add(i);
            let report = loaded.experiment(seed, ExperimentOptions::default())?;
            Ok(Replication {
                seed,
                iterations: report.iterations.len(),
                safe_iterations: report.iterations.iter().filter(|r| r.true_risk_safe).count(),
                colliding_iterations: report.collision_iterations().len(),
                final_cost: report.iterations.last().map_or(report.seed_trajectory.cost, |r| r.cost),
            })
        })
        .collect::<Result<_>>()?;

    let total: usize = replications.iter().map(|r| r.iterations).sum();
    let safe: usize = replications.iter().map(|r| r.safe_iterations).sum();
    let colliding: usize = replications.iter().map(|r| r.colliding_iterations).sum();
    let ratio = |k: usize| if total == 0 { f64::NAN } else { k as f64 / total as f64 };
    let table = ReplicationTable {
        theta: loaded.settings.iteration.schedule.initial(),
        confidence: loaded.settings.confidence,
        safety_frequency: ratio(safe),
        collision_frequency: ratio(colliding),
        replications,
    };

    let mut csv = String::from("seed,iterations,safe_iterations,colliding_iterations,final_cost\n");
    for r in &table.replications {
        writeln!(
            csv,
            "{},{},{},{},{:.16e}",
            r.seed, r.iterations, r.safe_iterations, r.colliding_iterations, r.final_cost
        )?;
    }
    std::fs::write(out.join("replications.csv"), csv)?;
    std::fs::write(out.join("replications.json"), to_json_string(&table)?)?;
    println!("replications: {n}, iterations: {total}");
    println!("safety frequency:    {:.4}", table.safety_frequency);
    println!("collision frequency: {:.4}", table.collision_frequency);
    Ok(ExitCode::SUCCESS)
}

fn check(config: Option<&Path>, out: Option<&Path>) -> Result<ExitCode> {
    let loaded = load(config)?;
    let paths = loaded.config.report_paths(out);
    let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let summary = parse_summary(&read(&paths.summary)?)?;
    let rows = parse_trajectories_csv(&read(&paths.trajectories)?)?;
    let problems = verify_report(&loaded.scenario, &summary, &rows)?;
    if problems.is_empty() {
        println!("ok: {} iterations verified", summary.iterations.len());
        Ok(ExitCode::SUCCESS)
    } else {
        for p in &problems {
            println!("violation: {p}");
        }
        Ok(ExitCode::FAILURE)
    }
}
