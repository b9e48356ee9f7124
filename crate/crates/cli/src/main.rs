use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mgmp::bench::{self, ExperimentSpec};
use mgmp::costmodel::{
    self, DatasetConfig, Featurizer, FeaturizerConfig, GbtParams, LearnedCost, PlanningDataset, Target,
};
use mgmp::planner::{self, CostKind, Guidance, PlanError, PlannerConfig, SingleGoalMp, TrajectoryFile};
use mgmp::scene::{self, RandomInstanceSpec};

#[derive(Parser)]
#[command(name = "mgmp", version, about = "Multi-goal kinodynamic motion planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random scene from a JSON instance spec.
    GenScene {
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Layout seed; overrides the spec.
        #[arg(long)]
        seed: u64,
        /// Goal placement seed; defaults to the layout seed.
        #[arg(long)]
        goal_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the single-goal planner over sampled pairs of a scene's layout.
    GenDataset {
        #[arg(long)]
        scene: PathBuf,
        /// JSON dataset config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        omega: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        time_limit: Option<f64>,
        #[arg(long)]
        max_pairs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one regressor and report held-out accuracy.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        target: Target,
        /// Output directory for the model file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Plan a multi-goal trajectory.
    Plan {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "ml")]
        cost: CostKind,
        /// Directory holding both trained models (ml only).
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30.0)]
        time_limit: f64,
        /// JSON planner config; flags above override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write an SVG of the solution.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run an experiment batch and print summary tables.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Force sequential execution with phase timings.
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        svg: bool,
    },
    /// Render a scene and optional trajectory file as SVG.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenScene { spec, seed, goal_seed, out } => {
            let base: RandomInstanceSpec = match spec {
                Some(p) => read_json(&p)?,
                None => RandomInstanceSpec::default(),
            };
            let spec = RandomInstanceSpec { seed, goal_seed: goal_seed.or(base.goal_seed), ..base };
            let scene = scene::generate_scene(&spec)?;
            scene::save_scene(&scene, &out)?;
            println!("{} obstacles, {} goals, fingerprint {}", scene.obstacles.len(), scene.goals.len(), scene.fingerprint());
        }
        Command::GenDataset { scene, config, omega, runs, time_limit, max_pairs, seed, sequential, out } => {
            let scene = scene::load_scene(&scene)?;
            let mut cfg: DatasetConfig = match config {
                Some(p) => read_json(&p)?,
                None => DatasetConfig::default(),
            };
            cfg.omega_count = omega.unwrap_or(cfg.omega_count);
            cfg.runs_per_pair = runs.unwrap_or(cfg.runs_per_pair);
            cfg.time_limit = time_limit.unwrap_or(cfg.time_limit);
            cfg.max_pairs = max_pairs.or(cfg.max_pairs);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.parallel &= !sequential;
            let mp = SingleGoalMp::new(&scene, PlannerConfig::default())?;
            let ds = costmodel::generate_dataset(&scene, &mp, &cfg)?;
            ds.save(&out)?;
            let failed = ds.instances.iter().filter(|i| i.success_fraction < 1.0).count();
            println!("{} instances ({} with failed runs) -> {}", ds.instances.len(), failed, out.display());
        }
        Command::Train { dataset, scene, target, out, train_fraction, split_seed } => {
            let ds = PlanningDataset::load(&dataset)?;
            let scene = scene::load_scene(&scene)?;
            if ds.fingerprint != scene.layout_fingerprint() {
                bail!("dataset was generated on a different layout");
            }
            let featurizer = Featurizer::new(&scene, FeaturizerConfig::default())?;
            let (train, test) = costmodel::split_instances(ds.instances.len(), train_fraction, split_seed);
            let (model, report) = costmodel::train_gbt(&ds, &train, &featurizer, target, &GbtParams::default())?;
            println!(
                "{target}: {} train / {} test, loss {:.4e} -> {:.4e}",
                train.len(),
                test.len(),
                report.loss_per_round[0],
                report.loss_per_round.last().copied().unwrap_or(f64::NAN)
            );
            if report.degenerate {
                println!("warning: constant targets, model predicts the mean");
            }
            let held_out: Vec<_> = test.iter().map(|&i| ds.instances[i]).collect();
            for row in costmodel::accuracy_table(&model, &featurizer, &held_out, &[0.05, 0.1, 0.2, 0.3, 0.4]) {
                println!("  within {:>3.0}%: {:>5.1}%", 100.0 * row.tolerance, 100.0 * row.within);
            }
            fs::create_dir_all(&out)?;
            let path = out.join(costmodel::model_file_name(target));
            model.save(&path)?;
            println!("-> {}", path.display());
        }
        Command::Plan { scene, cost, models, seed, time_limit, config, alpha, out, svg } => {
            let scene = scene::load_scene(&scene)?;
            let mut cfg: PlannerConfig = match config {
                Some(p) => read_json(&p)?,
                None => PlannerConfig::default(),
            };
            cfg.seed = seed;
            cfg.t_max = time_limit;
            cfg.alpha = alpha.unwrap_or(cfg.alpha);
            let learned;
            let guidance = match cost {
                CostKind::Ed => Guidance::Euclidean,
                CostKind::Rm => Guidance::Roadmap,
                CostKind::Ml => {
                    let Some(dir) = models else { bail!("--cost ml requires --models") };
                    learned = LearnedCost::load(&scene, &dir, cfg.alpha)?;
                    Guidance::Learned(&learned)
                }
            };
            match planner::plan(&scene, &cfg, guidance) {
                Ok(sol) => {
                    let mut config_json = serde_json::to_value(&cfg)?;
                    config_json["cost"] = serde_json::Value::String(cost.to_string());
                    let file = TrajectoryFile {
                        scene_fingerprint: scene.fingerprint(),
                        config: config_json.to_string(),
                        trajectory: sol.trajectory,
                    };
                    file.save(&out)?;
                    if let Some(svg) = svg {
                        fs::write(svg, bench::render_svg(&scene, Some(&file.trajectory)))?;
                    }
                    println!("{}; distance {:.3}", sol.report, file.trajectory.distance());
                }
                Err(PlanError::Timeout(report)) => bail!("no solution: {report}"),
                Err(e) => return Err(e.into()),
            }
        }
        Command::Bench { spec, out, sequential, svg } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let mut spec = ExperimentSpec::from_json(&text)?;
            if sequential {
                spec.sequential = true;
                spec.timing = true;
            }
            spec.svg |= svg;
            fs::create_dir_all(&out)?;
            let records = bench::run_experiment(&spec, &out)?;
            let summary = bench::summary_table(&records, spec.trim);
            let breakdown = bench::breakdown_table(&records);
            fs::write(out.join("summary.txt"), &summary)?;
            fs::write(out.join("breakdown.txt"), &breakdown)?;
            println!("{summary}\n{breakdown}");
        }
        Command::Render { scene, trajectory, out } => {
            let scene = scene::load_scene(&scene)?;
            let traj = match trajectory {
                Some(p) => Some(TrajectoryFile::load(&p)?),
                None => None,
            };
            if let Some(t) = &traj {
                if t.scene_fingerprint != scene.fingerprint() {
                    bail!("trajectory was planned on a different scene");
                }
            }
            fs::write(&out, bench::render_svg(&scene, traj.as_ref().map(|t| &t.trajectory)))?;
        }
    }
    Ok(())
}
