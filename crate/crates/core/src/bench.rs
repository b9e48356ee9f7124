//! Experiment harness: instance batches, trimmed statistics, runtime
//! breakdowns and SVG rendering.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{model_file_name, CostModelError, LearnedCost, Target};
use crate::dynamics::Trajectory;
use crate::planner::{self, CostKind, Guidance, PhaseTimes, PlanError, PlannerConfig, Profiler, TrajectoryFile};
use crate::scene::{self, RandomInstanceSpec, Scene, SceneError};
use crate::stats;

const RECORDS_HEADER: &str = "method,scene,goals,instance,outcome,runtime,distance,sampling,prediction,tsp,collision_simulate,other";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("no trained models for scene {scene} (expected {path})")]
    MissingModel { scene: u64, path: PathBuf },
    #[error("relative increase with zero baseline")]
    DivisionByZero,
    #[error("records file line {line}: {message}")]
    Records { line: usize, message: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Model(#[from] CostModelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    /// Layout seeds; each names one scene.
    pub scene_seeds: Vec<u64>,
    pub goal_counts: Vec<usize>,
    pub instances_per_cell: usize,
    pub methods: Vec<CostKind>,
    /// Per-run limit in seconds.
    pub time_limit: f64,
    pub trim: f64,
    pub seed: u64,
    /// Holds `scene-<seed>/` subdirectories with trained models.
    pub model_dir: Option<PathBuf>,
    pub scene: RandomInstanceSpec,
    pub planner: PlannerConfig,
    /// Collect per-phase timings; forces sequential execution.
    pub timing: bool,
    pub sequential: bool,
    pub svg: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scene_seeds: vec![1, 2, 3, 4],
            goal_counts: vec![5, 10, 15],
            instances_per_cell: 20,
            methods: vec![CostKind::Ml, CostKind::Rm, CostKind::Ed],
            time_limit: 30.0,
            trim: 0.2,
            seed: 0,
            model_dir: None,
            scene: RandomInstanceSpec::default(),
            planner: PlannerConfig::default(),
            timing: true,
            sequential: true,
            svg: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidSpec(m.into()));
        if self.instances_per_cell < 5 {
            return bad("instances_per_cell must be at least 5");
        }
        if !(0.0..0.4).contains(&self.trim) {
            return bad("trim must lie in [0, 0.4)");
        }
        if self.scene_seeds.is_empty() || self.goal_counts.is_empty() || self.methods.is_empty() {
            return bad("scene_seeds, goal_counts and methods must be nonempty");
        }
        if !(self.time_limit > 0.0) {
            return bad("time_limit must be positive");
        }
        let unique = |n: usize, m: usize| n == m;
        if !unique(self.methods.iter().collect::<HashSet<_>>().len(), self.methods.len())
            || !unique(self.scene_seeds.iter().collect::<HashSet<_>>().len(), self.scene_seeds.len())
            || !unique(self.goal_counts.iter().collect::<HashSet<_>>().len(), self.goal_counts.len())
        {
            return bad("methods, scene_seeds and goal_counts must not repeat");
        }
        self.planner.validate().map_err(|e| BenchError::InvalidSpec(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Model directory of one layout.
    pub fn models_for(&self, scene_seed: u64) -> Option<PathBuf> {
        self.model_dir.as_ref().map(|d| d.join(format!("scene-{scene_seed}")))
    }

    fn instance_seed(&self, scene_seed: u64, goals: usize, instance: usize) -> u64 {
        stats::derive_seed(stats::derive_seed(self.seed, scene_seed), (goals as u64) << 32 | instance as u64)
    }

    /// Task instance shared by every method.
    pub fn instance(&self, scene_seed: u64, goals: usize, instance: usize) -> Result<Scene, SceneError> {
        scene::generate_scene(&RandomInstanceSpec {
            seed: scene_seed,
            goal_seed: Some(self.instance_seed(scene_seed, goals, instance)),
            goal_count: goals,
            ..self.scene.clone()
        })
    }

    /// Planner seed of an instance; identical across methods.
    pub fn planner_seed(&self, scene_seed: u64, goals: usize, instance: usize) -> u64 {
        stats::derive_seed(self.instance_seed(scene_seed, goals, instance), 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub method: CostKind,
    pub scene: u64,
    pub goals: usize,
    pub instance: usize,
}

impl Ord for CostKind {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

impl PartialOrd for CostKind {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub key: CellKey,
    pub solved: bool,
    /// Seconds from opening the instance file to the planner's answer.
    pub runtime: f64,
    /// Solution path length; present iff solved.
    pub distance: Option<f64>,
    pub phases: Option<PhaseTimes>,
}

impl RunRecord {
    fn to_csv_line(&self) -> String {
        let k = &self.key;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let p = self.phases;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            k.method,
            k.scene,
            k.goals,
            k.instance,
            if self.solved { "solved" } else { "timeout" },
            self.runtime,
            opt(self.distance),
            opt(p.map(|p| p.sampling)),
            opt(p.map(|p| p.prediction)),
            opt(p.map(|p| p.tsp)),
            opt(p.map(|p| p.collision_simulate)),
            opt(p.map(|p| p.other)),
        )
    }

    fn from_csv_line(line: &str, n: usize) -> Result<RunRecord, BenchError> {
        let err = |m: String| BenchError::Records { line: n, message: m };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(err(format!("expected 12 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        let int = |s: &str| s.parse::<u64>().map_err(|e| err(format!("{s:?}: {e}")));
        let solved = match f[4] {
            "solved" => true,
            "timeout" => false,
            other => return Err(err(format!("unknown outcome {other:?}"))),
        };
        let phase_fields: Vec<Option<f64>> = f[7..12].iter().map(|s| opt(s)).collect::<Result<_, _>>()?;
        let phases = match phase_fields.as_slice() {
            [Some(a), Some(b), Some(c), Some(d), Some(e)] => {
                Some(PhaseTimes { sampling: *a, prediction: *b, tsp: *c, collision_simulate: *d, other: *e })
            }
            [None, None, None, None, None] => None,
            _ => return Err(err("partial phase timings".into())),
        };
        let distance = opt(f[6])?;
        if distance.is_some() != solved {
            return Err(err("distance must be present exactly for solved runs".into()));
        }
        Ok(RunRecord {
            key: CellKey {
                method: f[0].parse().map_err(err)?,
                scene: int(f[1])?,
                goals: int(f[2])? as usize,
                instance: int(f[3])? as usize,
            },
            solved,
            runtime: num(f[5])?,
            distance,
            phases,
        })
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<(), BenchError> {
    let mut text = format!("{RECORDS_HEADER}\n");
    for r in records {
        text.push_str(&r.to_csv_line());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads a records file. A trailing line without a newline (an interrupted
/// append) is ignored.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, BenchError> {
    let text = fs::read_to_string(path)?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut lines = complete.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == RECORDS_HEADER => {}
        Some(_) => return Err(BenchError::Records { line: 1, message: "unexpected header".into() }),
        None => return Ok(Vec::new()),
    }
    lines.map(|(i, l)| RunRecord::from_csv_line(l, i + 1)).collect()
}

/// File stem shared by an instance's scene, trajectory and SVG files.
pub fn instance_stem(scene: u64, goals: usize, instance: usize) -> String {
    format!("scene-{scene}-g{goals}-i{instance}")
}

/// Plans one cell. The clock starts before the instance (and any model)
/// files are read.
pub fn run_cell(spec: &ExperimentSpec, key: CellKey, scene_path: &Path, timing: bool) -> Result<(RunRecord, Option<Trajectory>), BenchError> {
    let start = Instant::now();
    let mut profiler = Profiler::started_at(start, timing);
    let scene = scene::load_scene(scene_path)?;
    let config = PlannerConfig {
        t_max: spec.time_limit,
        seed: spec.planner_seed(key.scene, key.goals, key.instance),
        ..spec.planner.clone()
    };
    let learned;
    let guidance = match key.method {
        CostKind::Ed => Guidance::Euclidean,
        CostKind::Rm => Guidance::Roadmap,
        CostKind::Ml => {
            let prev = profiler.enter(planner::Phase::Prediction);
            let dir = spec.models_for(key.scene).ok_or(BenchError::MissingModel { scene: key.scene, path: PathBuf::new() })?;
            learned = LearnedCost::load(&scene, dir, config.alpha)?;
            profiler.enter(prev);
            Guidance::Learned(&learned)
        }
    };
    match planner::plan_with(&scene, &config, guidance, None, profiler) {
        Ok(sol) => {
            let record = RunRecord {
                key,
                solved: true,
                runtime: sol.report.runtime,
                distance: Some(sol.trajectory.distance()),
                phases: sol.report.phases,
            };
            Ok((record, Some(sol.trajectory)))
        }
        Err(PlanError::Timeout(report)) => {
            Ok((RunRecord { key, solved: false, runtime: report.runtime, distance: None, phases: report.phases }, None))
        }
        Err(e) => Err(e.into()),
    }
}

/// Every (method, scene, goals, instance) cell in a fixed order.
pub fn cells(spec: &ExperimentSpec) -> Vec<CellKey> {
    let mut out = Vec::new();
    for &scene in &spec.scene_seeds {
        for &goals in &spec.goal_counts {
            for instance in 0..spec.instances_per_cell {
                for &method in &spec.methods {
                    out.push(CellKey { method, scene, goals, instance });
                }
            }
        }
    }
    out
}

/// Runs all cells not already in `out/records.csv`, appending each record
/// as it completes; returns every record in cell order.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<Vec<RunRecord>, BenchError> {
    spec.validate()?;
    if spec.methods.contains(&CostKind::Ml) {
        for &s in &spec.scene_seeds {
            let dir = spec.models_for(s).unwrap_or_default();
            for target in [Target::Distance, Target::Runtime] {
                let path = dir.join(model_file_name(target));
                if spec.model_dir.is_none() || !path.is_file() {
                    return Err(BenchError::MissingModel { scene: s, path });
                }
            }
        }
    }
    let instances_dir = out.join("instances");
    let traj_dir = out.join("trajectories");
    fs::create_dir_all(&instances_dir)?;
    fs::create_dir_all(&traj_dir)?;
    for &s in &spec.scene_seeds {
        for &g in &spec.goal_counts {
            for i in 0..spec.instances_per_cell {
                let path = instances_dir.join(format!("{}.json", instance_stem(s, g, i)));
                if !path.exists() {
                    scene::save_scene(&spec.instance(s, g, i)?, &path)?;
                }
            }
        }
    }

    let records_path = out.join("records.csv");
    let existing = if records_path.exists() { read_records(&records_path)? } else { Vec::new() };
    // rewrite without any torn trailing line
    write_records(&records_path, &existing)?;
    let done: HashSet<CellKey> = existing.iter().map(|r| r.key).collect();
    let pending: Vec<CellKey> = cells(spec).into_iter().filter(|k| !done.contains(k)).collect();

    let (tx, rx) = mpsc::channel::<RunRecord>();
    let writer = {
        let path = records_path.clone();
        std::thread::spawn(move || -> std::io::Result<Vec<RunRecord>> {
            let mut file = OpenOptions::new().append(true).open(path)?;
            let mut got = Vec::new();
            for r in rx {
                writeln!(file, "{}", r.to_csv_line())?;
                file.flush()?;
                got.push(r);
            }
            Ok(got)
        })
    };
    let sequential = spec.sequential || spec.timing;
    let run = |key: &CellKey, tx: &mpsc::Sender<RunRecord>| -> Result<(), BenchError> {
        let stem = instance_stem(key.scene, key.goals, key.instance);
        let scene_path = instances_dir.join(format!("{stem}.json"));
        let (record, traj) = run_cell(spec, *key, &scene_path, spec.timing)?;
        if let Some(t) = traj {
            let scene = scene::load_scene(&scene_path)?;
            let file = TrajectoryFile {
                scene_fingerprint: scene.fingerprint(),
                config: format!("{{\"method\":\"{}\"}}", key.method),
                trajectory: t,
            };
            file.save(traj_dir.join(format!("{}-{stem}.csv", key.method)))?;
            if spec.svg {
                fs::write(traj_dir.join(format!("{}-{stem}.svg", key.method)), render_svg(&scene, Some(&file.trajectory)))?;
            }
        }
        tx.send(record).expect("writer alive");
        Ok(())
    };
    let result = if sequential {
        pending.iter().try_for_each(|k| run(k, &tx))
    } else {
        pending.par_iter().try_for_each_with(tx.clone(), |tx, k| run(k, tx))
    };
    drop(tx);
    let written = writer.join().expect("writer thread")?;
    result?;

    let mut all = existing;
    all.extend(written);
    let order: BTreeMap<CellKey, usize> = cells(spec).into_iter().enumerate().map(|(i, k)| (k, i)).collect();
    all.retain(|r| order.contains_key(&r.key));
    all.sort_by_key(|r| order[&r.key]);
    Ok(all)
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimmedStats {
    pub runs: usize,
    pub kept: usize,
    pub mean_runtime: f64,
    /// Over kept solved runs; `None` when none of them solved.
    pub mean_distance: Option<f64>,
    /// Over all runs, before trimming.
    pub success_rate: f64,
}

/// Sorts by runtime, drops `floor(trim * n)` runs from each end and
/// averages the rest.
pub fn trimmed_stats(records: &[RunRecord], trim: f64) -> Option<TrimmedStats> {
    if records.is_empty() {
        return None;
    }
    let runtimes: Vec<f64> = records.iter().map(|r| r.runtime).collect();
    let kept = stats::trimmed_indices(&runtimes, trim);
    let mean_runtime = kept.iter().map(|&i| runtimes[i]).sum::<f64>() / kept.len() as f64;
    let distances: Vec<f64> = kept.iter().filter_map(|&i| records[i].distance).collect();
    Some(TrimmedStats {
        runs: records.len(),
        kept: kept.len(),
        mean_runtime,
        mean_distance: stats::mean(&distances),
        success_rate: records.iter().filter(|r| r.solved).count() as f64 / records.len() as f64,
    })
}

/// `(a - b) / b`.
pub fn relative_increase(a: f64, b: f64) -> Result<f64, BenchError> {
    if b == 0.0 {
        return Err(BenchError::DivisionByZero);
    }
    Ok((a - b) / b)
}

/// Per goal count and method: runs, success rate, trimmed runtime and
/// distance, and the runtime increase over the ML method when present.
pub fn summary_table(records: &[RunRecord], trim: f64) -> String {
    let mut cells: BTreeMap<(usize, CostKind), Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.key.goals, r.key.method)).or_default().push(r.clone());
    }
    let mut out = String::new();
    writeln!(out, "{:>6} {:>6} {:>5} {:>8} {:>12} {:>12} {:>10}", "goals", "method", "runs", "solved", "runtime[s]", "distance", "vs ml").unwrap();
    for (&(goals, method), rs) in &cells {
        let Some(s) = trimmed_stats(rs, trim) else { continue };
        let ml = cells.get(&(goals, CostKind::Ml)).and_then(|m| trimmed_stats(m, trim));
        let rel = match ml {
            Some(m) if method != CostKind::Ml => {
                relative_increase(s.mean_runtime, m.mean_runtime).map(|v| format!("{v:+.3}")).unwrap_or_else(|_| "n/a".into())
            }
            _ => "-".into(),
        };
        let dist = s.mean_distance.map(|d| format!("{d:.2}")).unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{:>6} {:>6} {:>5} {:>7.1}% {:>12.4} {:>12} {:>10}",
            goals,
            method.to_string(),
            s.runs,
            100.0 * s.success_rate,
            s.mean_runtime,
            dist,
            rel
        )
        .unwrap();
    }
    out
}

/// Share of total runtime per phase, per method, over runs with timings.
pub fn breakdown_table(records: &[RunRecord]) -> String {
    let mut sums: BTreeMap<CostKind, (PhaseTimes, f64, usize)> = BTreeMap::new();
    for r in records {
        if let Some(p) = r.phases {
            let e = sums.entry(r.key.method).or_default();
            e.0.sampling += p.sampling;
            e.0.prediction += p.prediction;
            e.0.tsp += p.tsp;
            e.0.collision_simulate += p.collision_simulate;
            e.0.other += p.other;
            e.1 += r.runtime;
            e.2 += 1;
        }
    }
    let mut out = String::new();
    writeln!(out, "{:>6} {:>5} {:>9} {:>10} {:>6} {:>10} {:>6}", "method", "runs", "sampling", "prediction", "tsp", "coll+sim", "other").unwrap();
    for (method, (p, total, n)) in sums {
        let pct = |v: f64| if total > 0.0 { 100.0 * v / total } else { 0.0 };
        writeln!(
            out,
            "{:>6} {:>5} {:>8.1}% {:>9.1}% {:>5.1}% {:>9.1}% {:>5.1}%",
            method.to_string(),
            n,
            pct(p.sampling),
            pct(p.prediction),
            pct(p.tsp),
            pct(p.collision_simulate),
            pct(p.other)
        )
        .unwrap();
    }
    out
}

// ---------------------------------------------------------------------------
// SVG

/// Obstacles, numbered goal squares and an optional trajectory polyline
/// with a start marker. Coordinates are printed with fixed precision, so
/// equal inputs give identical bytes.
pub fn render_svg(scene: &Scene, trajectory: Option<&Trajectory>) -> String {
    let w = scene.world;
    let scale = 800.0 / w.width().max(w.height());
    let px = |x: f64| (x - w.min.x) * scale;
    let py = |y: f64| (w.max.y - y) * scale;
    let (width, height) = (w.width() * scale, w.height() * scale);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.3} {height:.3}">"#).unwrap();
    writeln!(s, r##"<rect class="world" x="0" y="0" width="{width:.3}" height="{height:.3}" fill="#ffffff" stroke="#000000"/>"##).unwrap();
    for o in &scene.obstacles {
        let pts: Vec<String> = o.vertices().iter().map(|v| format!("{:.3},{:.3}", px(v.x), py(v.y))).collect();
        writeln!(s, r##"<polygon class="obstacle" points="{}" fill="#808080"/>"##, pts.join(" ")).unwrap();
    }
    for g in &scene.goals {
        let side = 2.0 * g.half_side * scale;
        writeln!(
            s,
            r##"<rect class="goal" x="{:.3}" y="{:.3}" width="{side:.3}" height="{side:.3}" fill="#4caf50" fill-opacity="0.5"/>"##,
            px(g.center.x - g.half_side),
            py(g.center.y + g.half_side)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" font-size="12" text-anchor="middle">{}</text>"#,
            px(g.center.x),
            py(g.center.y) + 4.0,
            g.id
        )
        .unwrap();
    }
    if let Some(t) = trajectory {
        let pts: Vec<String> = t.states.iter().map(|st| format!("{:.3},{:.3}", px(st.x), py(st.y))).collect();
        writeln!(s, r##"<polyline class="trajectory" points="{}" fill="none" stroke="#1565c0" stroke-width="1.5"/>"##, pts.join(" ")).unwrap();
    }
    let s0 = scene.initial_state;
    writeln!(s, r##"<circle class="start" cx="{:.3}" cy="{:.3}" r="4" fill="#d32f2f"/>"##, px(s0.x), py(s0.y)).unwrap();
    s.push_str("</svg>\n");
    s
}
