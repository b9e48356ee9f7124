//! Learned from-to costs.
//!
//! A single-goal planner is run repeatedly between pairs of free points of a
//! layout; the trimmed runtime and distance of each pair become regression
//! targets for two gradient-boosted tree ensembles. At planning time the two
//! predictions are min-max normalized and blended with weight `alpha`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{State, Trajectory};
use crate::geom::{Point2, Polygon};
use crate::roadmap::{self, Roadmap, RoadmapError};
use crate::scene::{GoalRegion, Scene};
use crate::stats;

pub const FEATURE_ARITY: usize = 6;
pub const MODEL_FORMAT: &str = "mgmp-gbt";
pub const MODEL_VERSION: u32 = 1;
pub const DATASET_FORMAT: &str = "mgmp-dataset";
const DATASET_HEADER: [&str; 7] = ["px", "py", "gx", "gy", "t", "d", "success_fraction"];

#[derive(Debug, Error)]
pub enum CostModelError {
    #[error("need at least 2 training instances, got {0}")]
    InsufficientData(usize),
    #[error("model parse error: {0}")]
    Parse(String),
    #[error("feature arity mismatch: model has {found}, featurizer produces {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("model was trained on layout {model}, scene layout is {scene}")]
    SceneMismatch { model: String, scene: String },
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sampling(#[from] RoadmapError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Runtime,
    Distance,
}

impl Target {
    pub fn of(self, inst: &PlanningInstance) -> f64 {
        match self {
            Target::Runtime => inst.t,
            Target::Distance => inst.d,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Runtime => "runtime",
            Target::Distance => "distance",
        })
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "runtime" => Ok(Target::Runtime),
            "distance" => Ok(Target::Distance),
            other => Err(format!("unknown target {other:?} (expected runtime or distance)")),
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset generation

/// A planner that solves single-goal tasks; implemented by the tree planner.
pub trait SingleGoalPlanner: Sync {
    /// `scene` has exactly one goal and an at-rest initial state.
    fn solve(&self, scene: &Scene, time_limit: f64, seed: u64) -> Option<Trajectory>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanningInstance {
    pub p: Point2,
    pub g: Point2,
    /// Trimmed mean runtime in seconds.
    pub t: f64,
    /// Trimmed mean solution length in world units.
    pub d: f64,
    pub success_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub omega_count: usize,
    pub runs_per_pair: usize,
    /// Per-run limit in seconds.
    pub time_limit: f64,
    pub trim: f64,
    pub seed: u64,
    /// Random subset of ordered pairs; all pairs when `None`.
    pub max_pairs: Option<usize>,
    pub goal_half_side: f64,
    pub parallel: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            omega_count: 40,
            runs_per_pair: 20,
            time_limit: 10.0,
            trim: 0.2,
            seed: 0,
            max_pairs: None,
            goal_half_side: 1.5,
            parallel: true,
        }
    }
}

impl DatasetConfig {
    fn validate(&self) -> Result<(), CostModelError> {
        let bad = |m: &str| Err(CostModelError::Config(m.into()));
        if self.omega_count < 2 {
            return bad("omega_count must be at least 2");
        }
        if self.runs_per_pair == 0 {
            return bad("runs_per_pair must be positive");
        }
        if !(self.time_limit > 0.0) {
            return bad("time_limit must be positive");
        }
        if !(0.0..0.5).contains(&self.trim) {
            return bad("trim must lie in [0, 0.5)");
        }
        if !(self.goal_half_side > 0.0) {
            return bad("goal_half_side must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanningDataset {
    /// Layout fingerprint of the scene the runs were made in.
    pub fingerprint: String,
    pub config: DatasetConfig,
    pub omega: Vec<Point2>,
    pub instances: Vec<PlanningInstance>,
}

/// Outcome of one single-goal run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub runtime: f64,
    pub distance: Option<f64>,
}

/// Collapses repeated runs of one pair into an instance. Runs are ordered
/// by runtime and trimmed; failed runs count as `time_limit`.
pub fn summarize_runs(p: Point2, g: Point2, runs: &[RunOutcome], time_limit: f64, trim: f64, sentinel: f64) -> PlanningInstance {
    let times: Vec<f64> = runs
        .iter()
        .map(|r| if r.distance.is_some() { r.runtime } else { time_limit })
        .collect();
    let successes = runs.iter().filter(|r| r.distance.is_some()).count();
    let success_fraction = successes as f64 / runs.len().max(1) as f64;
    if successes == 0 {
        return PlanningInstance { p, g, t: time_limit, d: sentinel, success_fraction };
    }
    let kept = stats::trimmed_indices(&times, trim);
    let t = kept.iter().map(|&i| times[i]).sum::<f64>() / kept.len() as f64;
    let kept_d: Vec<f64> = kept.iter().filter_map(|&i| runs[i].distance).collect();
    let all_d: Vec<f64> = runs.iter().filter_map(|r| r.distance).collect();
    let d = stats::mean(&kept_d).or_else(|| stats::mean(&all_d)).unwrap_or(sentinel);
    PlanningInstance { p, g, t, d, success_fraction }
}

/// Free points where the robot can rest (heading 0) and a goal square fits.
pub fn sample_omega(scene: &Scene, count: usize, half_side: f64, seed: u64) -> Result<Vec<Point2>, CostModelError> {
    let layout = scene.layout();
    let w = layout.world;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = count * 1000;
    let mut points = Vec::with_capacity(count);
    let mut draws = 0;
    while points.len() < count {
        if draws == budget {
            return Err(RoadmapError::SamplingFailed { requested: count, found: points.len(), draws }.into());
        }
        draws += 1;
        let p = Point2::new(rng.gen_range(w.min.x..w.max.x), rng.gen_range(w.min.y..w.max.y));
        if layout.in_collision(&State::at_rest(p)) || points.contains(&p) {
            continue;
        }
        let square = Polygon::square(p, half_side).expect("positive half side");
        let bb = square.bounding_box();
        if !(w.contains(bb.min) && w.contains(bb.max)) {
            continue;
        }
        if layout.obstacles.iter().any(|o| crate::geom::polygons_overlap(o, &square)) {
            continue;
        }
        points.push(p);
    }
    Ok(points)
}

/// Single-goal task from `p` (at rest, heading 0) to a square around `g`.
pub fn single_goal_task(scene: &Scene, p: Point2, g: Point2, half_side: f64) -> Scene {
    scene.layout().with_task(State::at_rest(p), vec![GoalRegion { id: 0, center: g, half_side }])
}

/// Ordered pairs `(i, j)`, `i != j`, optionally subsampled.
fn select_pairs(n: usize, max_pairs: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    match max_pairs {
        Some(m) if m < all.len() => {
            let mut picked = rand::seq::index::sample(rng, all.len(), m).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|k| all[k]).collect()
        }
        _ => all,
    }
}

pub fn generate_dataset(
    scene: &Scene,
    mp: &dyn SingleGoalPlanner,
    config: &DatasetConfig,
) -> Result<PlanningDataset, CostModelError> {
    config.validate()?;
    let omega = sample_omega(scene, config.omega_count, config.goal_half_side, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stats::derive_seed(config.seed, u64::MAX));
    let pairs = select_pairs(omega.len(), config.max_pairs, &mut rng);
    let sentinel = scene.unreachable_sentinel();

    let run_pair = |(k, &(i, j)): (usize, &(usize, usize))| {
        let (p, g) = (omega[i], omega[j]);
        let runs: Vec<RunOutcome> = (0..config.runs_per_pair)
            .map(|r| {
                let seed = stats::derive_seed(config.seed, (k * config.runs_per_pair + r) as u64);
                let start = Instant::now();
                let task = single_goal_task(scene, p, g, config.goal_half_side);
                let traj = mp.solve(&task, config.time_limit, seed);
                let runtime = start.elapsed().as_secs_f64();
                RunOutcome { runtime, distance: traj.map(|t| t.distance()) }
            })
            .collect();
        summarize_runs(p, g, &runs, config.time_limit, config.trim, sentinel)
    };
    let instances = if config.parallel {
        pairs.par_iter().enumerate().map(run_pair).collect()
    } else {
        pairs.iter().enumerate().map(run_pair).collect()
    };
    Ok(PlanningDataset { fingerprint: scene.layout_fingerprint(), config: config.clone(), omega, instances })
}

impl PlanningDataset {
    /// Delimited text: `# key=value` metadata lines, then a header row and
    /// one record per instance.
    pub fn write_to(&self, mut out: impl Write) -> Result<(), CostModelError> {
        let json = |v: &dyn erased::Json| v.to_json();
        writeln!(out, "# format={DATASET_FORMAT}")?;
        writeln!(out, "# fingerprint={}", self.fingerprint)?;
        writeln!(out, "# config={}", json(&self.config))?;
        writeln!(out, "# omega={}", json(&self.omega))?;
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| CostModelError::Io(e.into());
        w.write_record(DATASET_HEADER).map_err(io)?;
        for inst in &self.instances {
            let fields = [inst.p.x, inst.p.y, inst.g.x, inst.g.y, inst.t, inst.d, inst.success_fraction];
            w.write_record(fields.iter().map(f64::to_string)).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<PlanningDataset, CostModelError> {
        let mut reader = BufReader::new(input);
        let mut meta = BTreeMap::new();
        let mut line_no = 0;
        let mut line = String::new();
        let mut body = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            line_no += 1;
            match line.strip_prefix("# ") {
                Some(kv) => {
                    let (k, v) = kv.trim_end().split_once('=').ok_or_else(|| CostModelError::Dataset {
                        line: line_no,
                        message: "metadata line without '='".into(),
                    })?;
                    meta.insert(k.to_string(), (line_no, v.to_string()));
                }
                None => {
                    body.push_str(&line);
                    reader.read_to_string(&mut body)?;
                    break;
                }
            }
        }
        let header_line = line_no;
        let get = |k: &str| {
            meta.get(k).ok_or_else(|| CostModelError::Dataset { line: header_line, message: format!("missing metadata key {k:?}") })
        };
        let format = get("format")?;
        if format.1 != DATASET_FORMAT {
            return Err(CostModelError::Dataset { line: format.0, message: format!("unknown format {:?}", format.1) });
        }
        let parse_json = |k: &str| -> Result<serde_json::Value, CostModelError> {
            let (l, v) = get(k)?;
            serde_json::from_str(v).map_err(|e| CostModelError::Dataset { line: *l, message: e.to_string() })
        };
        let config: DatasetConfig = serde_json::from_value(parse_json("config")?)
            .map_err(|e| CostModelError::Dataset { line: get("config").unwrap().0, message: e.to_string() })?;
        let omega: Vec<Point2> = serde_json::from_value(parse_json("omega")?)
            .map_err(|e| CostModelError::Dataset { line: get("omega").unwrap().0, message: e.to_string() })?;
        let fingerprint = get("fingerprint")?.1.clone();

        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let headers = rdr.headers().map_err(|e| CostModelError::Dataset { line: header_line, message: e.to_string() })?;
        if headers.iter().ne(DATASET_HEADER.iter().copied()) {
            return Err(CostModelError::Dataset { line: header_line, message: format!("unexpected header {headers:?}") });
        }
        let mut instances = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let line = header_line + 1 + k;
            let rec = rec.map_err(|e| CostModelError::Dataset { line, message: e.to_string() })?;
            let v: Vec<f64> = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CostModelError::Dataset { line, message: e.to_string() })?;
            let inst = PlanningInstance {
                p: Point2::new(v[0], v[1]),
                g: Point2::new(v[2], v[3]),
                t: v[4],
                d: v[5],
                success_fraction: v[6],
            };
            if !(inst.t >= 0.0 && inst.d >= 0.0 && (0.0..=1.0).contains(&inst.success_fraction)) {
                return Err(CostModelError::Dataset { line, message: "targets out of range".into() });
            }
            if !omega.contains(&inst.p) || !omega.contains(&inst.g) {
                return Err(CostModelError::Dataset { line, message: "instance endpoint not in the recorded sample set".into() });
            }
            instances.push(inst);
        }
        Ok(PlanningDataset { fingerprint, config, omega, instances })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CostModelError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PlanningDataset, CostModelError> {
        PlanningDataset::read_from(std::fs::File::open(path)?)
    }
}

mod erased {
    pub trait Json {
        fn to_json(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_json(&self) -> String {
            serde_json::to_string(self).expect("serializable")
        }
    }
}

/// Deterministic train/test split of instance indices.
pub fn split_instances(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * train_fraction).round() as usize;
    let test = idx.split_off(cut.min(n));
    (idx, test)
}

// ---------------------------------------------------------------------------
// Features

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub roadmap_samples: usize,
    pub neighbors: usize,
    pub seed: u64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self { roadmap_samples: 300, neighbors: roadmap::DEFAULT_NEIGHBORS, seed: 0x5eed }
    }
}

/// `[p.x, p.y, g.x, g.y, |g - p|, roadmap distance p -> g]` over a fixed
/// roadmap of the scene layout. Mutually visible points get their
/// straight-line distance as the roadmap feature.
#[derive(Debug, Clone)]
pub struct Featurizer {
    config: FeaturizerConfig,
    layout: Scene,
    roadmap: Roadmap,
    /// Single-source distances, filled on first use.
    rows: Vec<OnceLock<Vec<f64>>>,
    sentinel: f64,
}

impl Featurizer {
    pub fn new(scene: &Scene, config: FeaturizerConfig) -> Result<Self, CostModelError> {
        let layout = scene.layout();
        let samples = roadmap::sample_free(&layout, config.roadmap_samples, config.seed)?;
        let rm = Roadmap::build(&layout, samples, config.neighbors);
        Ok(Featurizer {
            config,
            rows: (0..rm.samples().len()).map(|_| OnceLock::new()).collect(),
            roadmap: rm,
            sentinel: scene.unreachable_sentinel(),
            layout,
        })
    }

    pub fn config(&self) -> FeaturizerConfig {
        self.config
    }

    pub fn roadmap_distance(&self, p: Point2, g: Point2) -> f64 {
        if self.layout.segment_free(p, g) {
            return p.distance(g);
        }
        let rm = &self.roadmap;
        let d = roadmap::via_roadmap(rm.samples().points(), p, g, |a, b| {
            self.rows[a].get_or_init(|| rm.distances_from(a))[b]
        });
        if d.is_finite() {
            d
        } else {
            self.sentinel
        }
    }

    pub fn features(&self, p: Point2, g: Point2) -> [f64; FEATURE_ARITY] {
        [p.x, p.y, g.x, g.y, p.distance(g), self.roadmap_distance(p, g)]
    }
}

// ---------------------------------------------------------------------------
// Gradient-boosted trees

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { rounds: 48, learning_rate: 0.5, max_leaves: 16, max_depth: 12, min_samples_leaf: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GbtNode {
    Leaf { value: f64 },
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Root is node 0; children always have larger indices than their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<GbtNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                GbtNode::Leaf { value } => return value,
                GbtNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, GbtNode::Leaf { .. })).count()
    }

    /// Depth of the deepest leaf; a lone leaf has depth 0.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            if let GbtNode::Split { left, right, .. } = *n {
                depth[left] = depth[i] + 1;
                depth[right] = depth[i] + 1;
                max = max.max(depth[i] + 1);
            }
        }
        max
    }

    fn check(&self, arity: usize) -> Result<(), CostModelError> {
        if self.nodes.is_empty() {
            return Err(CostModelError::Parse("empty tree".into()));
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                GbtNode::Leaf { value } if !value.is_finite() => {
                    return Err(CostModelError::Parse(format!("non-finite leaf at node {i}")));
                }
                GbtNode::Leaf { .. } => {}
                GbtNode::Split { feature, threshold, left, right } => {
                    if feature >= arity {
                        return Err(CostModelError::ArityMismatch { expected: arity, found: feature + 1 });
                    }
                    if !threshold.is_finite() {
                        return Err(CostModelError::Parse(format!("non-finite threshold at node {i}")));
                    }
                    for c in [left, right] {
                        if c <= i || c >= self.nodes.len() {
                            return Err(CostModelError::Parse(format!("bad child index {c} at node {i}")));
                        }
                        parents[c] += 1;
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(CostModelError::Parse("nodes do not form a tree".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub feature_arity: usize,
    pub max_leaves: usize,
    pub max_depth: usize,
    pub trees: Vec<RegressionTree>,
}

impl GbtModel {
    pub fn constant(value: f64, arity: usize, params: &GbtParams) -> Self {
        GbtModel {
            base_score: value,
            learning_rate: params.learning_rate,
            feature_arity: arity,
            max_leaves: params.max_leaves,
            max_depth: params.max_depth,
            trees: Vec::new(),
        }
    }

    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Clamped below at 0.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_raw(x).max(0.0)
    }

    fn check(&self) -> Result<(), CostModelError> {
        if !(self.base_score.is_finite() && self.learning_rate.is_finite()) {
            return Err(CostModelError::Parse("non-finite base score or learning rate".into()));
        }
        for (k, t) in self.trees.iter().enumerate() {
            t.check(self.feature_arity)?;
            if t.leaf_count() > self.max_leaves || t.depth() > self.max_depth {
                return Err(CostModelError::Parse(format!("tree {k} exceeds the recorded size limits")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean squared training error; entry 0 is the base score alone, entry
    /// `k` is after round `k`.
    pub loss_per_round: Vec<f64>,
    /// All targets were equal; the model is the constant base score.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    order: &'a [Vec<usize>],
    params: &'a GbtParams,
}

impl TreeBuilder<'_> {
    /// Best variance-reducing split of the samples assigned to `node`.
    fn best_split(&self, assign: &[usize], residual: &[f64], node: usize) -> Option<SplitChoice> {
        let min = self.params.min_samples_leaf.max(1);
        let (mut n, mut total, mut sq) = (0usize, 0.0, 0.0);
        for (i, &a) in assign.iter().enumerate() {
            if a == node {
                n += 1;
                total += residual[i];
                sq += residual[i] * residual[i];
            }
        }
        if n < 2 * min {
            return None;
        }
        let parent = total * total / n as f64;
        let tol = 1e-12 * sq.max(f64::MIN_POSITIVE);
        let mut best: Option<SplitChoice> = None;
        for (f, order) in self.order.iter().enumerate() {
            let (mut nl, mut sl) = (0usize, 0.0);
            let mut prev: Option<usize> = None;
            for &i in order.iter().filter(|&&i| assign[i] == node) {
                if let Some(p) = prev {
                    let (a, b) = (self.x[p][f], self.x[i][f]);
                    let nr = n - nl;
                    if a < b && nl >= min && nr >= min {
                        let sr = total - sl;
                        let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
                        if gain > tol && best.map_or(true, |c| gain > c.gain) {
                            let mid = a + (b - a) / 2.0;
                            let threshold = if mid < b { mid } else { a };
                            best = Some(SplitChoice { feature: f, threshold, gain });
                        }
                    }
                }
                nl += 1;
                sl += residual[i];
                prev = Some(i);
            }
        }
        best
    }

    /// Leaf-wise growth: always split the leaf with the largest gain.
    fn fit(&self, residual: &[f64]) -> RegressionTree {
        let n = residual.len();
        let mut assign = vec![0usize; n];
        let mut nodes = vec![GbtNode::Leaf { value: 0.0 }];
        let mut depth = vec![0usize];
        let mut frontier: Vec<(usize, Option<SplitChoice>)> = vec![(0, self.best_split(&assign, residual, 0))];
        let mut leaves = 1;
        while leaves < self.params.max_leaves {
            let pick = frontier
                .iter()
                .enumerate()
                .filter_map(|(k, (_, c))| c.map(|c| (k, c)))
                .fold(None, |acc: Option<(usize, SplitChoice)>, (k, c)| match acc {
                    Some((_, b)) if b.gain >= c.gain => acc,
                    _ => Some((k, c)),
                });
            let Some((k, choice)) = pick else { break };
            let (node, _) = frontier.swap_remove(k);
            let (left, right) = (nodes.len(), nodes.len() + 1);
            nodes.push(GbtNode::Leaf { value: 0.0 });
            nodes.push(GbtNode::Leaf { value: 0.0 });
            depth.push(depth[node] + 1);
            depth.push(depth[node] + 1);
            nodes[node] = GbtNode::Split { feature: choice.feature, threshold: choice.threshold, left, right };
            for (i, a) in assign.iter_mut().enumerate() {
                if *a == node {
                    *a = if self.x[i][choice.feature] <= choice.threshold { left } else { right };
                }
            }
            leaves += 1;
            for child in [left, right] {
                let split = if depth[child] < self.params.max_depth { self.best_split(&assign, residual, child) } else { None };
                frontier.push((child, split));
            }
            // keep creation order so equal gains resolve to the oldest leaf
            frontier.sort_by_key(|&(node, _)| node);
        }
        let mut sums = vec![(0.0, 0usize); nodes.len()];
        for (i, &a) in assign.iter().enumerate() {
            sums[a].0 += residual[i];
            sums[a].1 += 1;
        }
        for (node, (s, c)) in nodes.iter_mut().zip(sums) {
            if let GbtNode::Leaf { value } = node {
                *value = if c > 0 { s / c as f64 } else { 0.0 };
            }
        }
        RegressionTree { nodes }
    }
}

fn mse(residual: &[f64]) -> f64 {
    residual.iter().map(|r| r * r).sum::<f64>() / residual.len() as f64
}

/// Squared-error gradient boosting on row-major features `x`.
pub fn fit_gbt(x: &[Vec<f64>], y: &[f64], params: &GbtParams) -> Result<(GbtModel, TrainReport), CostModelError> {
    if x.len() != y.len() {
        return Err(CostModelError::Config(format!("{} feature rows but {} targets", x.len(), y.len())));
    }
    if y.len() < 2 {
        return Err(CostModelError::InsufficientData(y.len()));
    }
    if params.rounds > 0 && !(params.learning_rate > 0.0 && params.max_leaves >= 1) {
        return Err(CostModelError::Config("learning_rate must be positive and max_leaves at least 1".into()));
    }
    let arity = x[0].len();
    if x.iter().any(|r| r.len() != arity) {
        return Err(CostModelError::Config("ragged feature rows".into()));
    }
    let base = stats::mean(y).expect("nonempty");
    let mut model = GbtModel::constant(base, arity, params);
    let mut residual: Vec<f64> = y.iter().map(|v| v - base).collect();
    let mut report = TrainReport { loss_per_round: vec![mse(&residual)], degenerate: false };
    if y.iter().all(|&v| v == y[0]) {
        report.degenerate = true;
        return Ok((model, report));
    }
    let order: Vec<Vec<usize>> = (0..arity)
        .map(|f| {
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let builder = TreeBuilder { x, order: &order, params };
    for _ in 0..params.rounds {
        let tree = builder.fit(&residual);
        for (r, row) in residual.iter_mut().zip(x) {
            *r -= params.learning_rate * tree.predict(row);
        }
        model.trees.push(tree);
        report.loss_per_round.push(mse(&residual));
    }
    Ok((model, report))
}

/// A fitted ensemble plus everything needed to featurize and normalize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub target: Target,
    pub layout_fingerprint: String,
    pub featurizer: FeaturizerConfig,
    /// (min, max) of the training targets.
    pub target_range: (f64, f64),
    pub gbt: GbtModel,
}

pub fn train_gbt(
    dataset: &PlanningDataset,
    train_idx: &[usize],
    featurizer: &Featurizer,
    target: Target,
    params: &GbtParams,
) -> Result<(TrainedModel, TrainReport), CostModelError> {
    let x: Vec<Vec<f64>> = train_idx
        .iter()
        .map(|&i| featurizer.features(dataset.instances[i].p, dataset.instances[i].g).to_vec())
        .collect();
    let y: Vec<f64> = train_idx.iter().map(|&i| target.of(&dataset.instances[i])).collect();
    let (gbt, report) = fit_gbt(&x, &y, params)?;
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let model = TrainedModel {
        target,
        layout_fingerprint: dataset.fingerprint.clone(),
        featurizer: featurizer.config(),
        target_range: (lo, hi),
        gbt,
    };
    Ok((model, report))
}

#[derive(Serialize)]
struct ModelDocRef<'a> {
    format: &'a str,
    version: u32,
    #[serde(flatten)]
    model: &'a TrainedModel,
}

#[derive(Deserialize)]
struct ModelHeader {
    format: String,
    version: u32,
    gbt: ArityOnly,
}

#[derive(Deserialize)]
struct ArityOnly {
    feature_arity: usize,
}

impl TrainedModel {
    pub fn predict(&self, featurizer: &Featurizer, p: Point2, g: Point2) -> f64 {
        self.gbt.predict(&featurizer.features(p, g))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDocRef { format: MODEL_FORMAT, version: MODEL_VERSION, model: self })
            .expect("serializable")
    }

    /// Parses and validates a model document: format tag, version, feature
    /// arity and tree structure.
    pub fn from_json(text: &str) -> Result<TrainedModel, CostModelError> {
        let header: ModelHeader = serde_json::from_str(text).map_err(|e| CostModelError::Parse(e.to_string()))?;
        if header.format != MODEL_FORMAT || header.version != MODEL_VERSION {
            return Err(CostModelError::Parse(format!("unsupported model format {} v{}", header.format, header.version)));
        }
        if header.gbt.feature_arity != FEATURE_ARITY {
            return Err(CostModelError::ArityMismatch { expected: FEATURE_ARITY, found: header.gbt.feature_arity });
        }
        let model: TrainedModel = serde_json::from_str(text).map_err(|e| CostModelError::Parse(e.to_string()))?;
        model.gbt.check()?;
        let (lo, hi) = model.target_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(CostModelError::Parse("invalid target range".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CostModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel, CostModelError> {
        TrainedModel::from_json(&std::fs::read_to_string(path)?)
    }
}

/// File name of a model inside a model directory.
pub fn model_file_name(target: Target) -> String {
    format!("{target}.model.json")
}

// ---------------------------------------------------------------------------
// Blended cost

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModelConfig {
    pub alpha: f64,
    pub distance_range: (f64, f64),
    pub runtime_range: (f64, f64),
}

pub const DEFAULT_ALPHA: f64 = 0.9;

fn normalize(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).max(0.0)
    } else {
        0.0
    }
}

/// `alpha * norm(d) + (1 - alpha) * norm(t)` from raw predictions.
pub fn from_to_cost(cfg: &CostModelConfig, d_pred: f64, t_pred: f64) -> f64 {
    cfg.alpha * normalize(d_pred, cfg.distance_range) + (1.0 - cfg.alpha) * normalize(t_pred, cfg.runtime_range)
}

/// Distance and runtime models bound to one layout.
#[derive(Debug, Clone)]
pub struct LearnedCost {
    featurizer: Featurizer,
    distance: TrainedModel,
    runtime: TrainedModel,
    config: CostModelConfig,
}

impl LearnedCost {
    pub fn new(scene: &Scene, distance: TrainedModel, runtime: TrainedModel, alpha: f64) -> Result<Self, CostModelError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(CostModelError::Config(format!("alpha {alpha} outside [0, 1]")));
        }
        if distance.target != Target::Distance || runtime.target != Target::Runtime {
            return Err(CostModelError::Config("model targets are swapped".into()));
        }
        let layout = scene.layout_fingerprint();
        for m in [&distance, &runtime] {
            if m.layout_fingerprint != layout {
                return Err(CostModelError::SceneMismatch { model: m.layout_fingerprint.clone(), scene: layout });
            }
        }
        if distance.featurizer != runtime.featurizer {
            return Err(CostModelError::Config("models use different featurizers".into()));
        }
        let featurizer = Featurizer::new(scene, distance.featurizer)?;
        let config = CostModelConfig { alpha, distance_range: distance.target_range, runtime_range: runtime.target_range };
        Ok(LearnedCost { featurizer, distance, runtime, config })
    }

    /// Loads both models from `dir` (see [`model_file_name`]).
    pub fn load(scene: &Scene, dir: impl AsRef<Path>, alpha: f64) -> Result<Self, CostModelError> {
        let dir = dir.as_ref();
        let distance = TrainedModel::load(dir.join(model_file_name(Target::Distance)))?;
        let runtime = TrainedModel::load(dir.join(model_file_name(Target::Runtime)))?;
        LearnedCost::new(scene, distance, runtime, alpha)
    }

    pub fn config(&self) -> &CostModelConfig {
        &self.config
    }

    pub fn predict(&self, target: Target, p: Point2, g: Point2) -> f64 {
        match target {
            Target::Distance => self.distance.predict(&self.featurizer, p, g),
            Target::Runtime => self.runtime.predict(&self.featurizer, p, g),
        }
    }

    pub fn cost(&self, p: Point2, g: Point2) -> f64 {
        if p == g {
            return 0.0;
        }
        let x = self.featurizer.features(p, g);
        let d = if self.config.alpha > 0.0 { self.distance.gbt.predict(&x) } else { 0.0 };
        let t = if self.config.alpha < 1.0 { self.runtime.gbt.predict(&x) } else { 0.0 };
        from_to_cost(&self.config, d, t)
    }
}

// ---------------------------------------------------------------------------
// Accuracy

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyRow {
    /// Relative tolerance, e.g. 0.2 for 20%.
    pub tolerance: f64,
    /// Fraction of test instances predicted within the tolerance.
    pub within: f64,
}

/// Share of test instances whose prediction lies within each relative
/// tolerance of the true target.
pub fn accuracy_table(
    model: &TrainedModel,
    featurizer: &Featurizer,
    test: &[PlanningInstance],
    tolerances: &[f64],
) -> Vec<AccuracyRow> {
    let errors: Vec<(f64, f64)> = test
        .iter()
        .map(|inst| {
            let y = model.target.of(inst);
            ((model.predict(featurizer, inst.p, inst.g) - y).abs(), y.abs())
        })
        .collect();
    tolerances
        .iter()
        .map(|&tol| {
            let hits = errors.iter().filter(|&&(e, y)| e <= tol * y).count();
            AccuracyRow { tolerance: tol, within: hits as f64 / errors.len().max(1) as f64 }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::RobotModel;
    use crate::geom::Aabb;
    use proptest::prelude::{any, prop_assert, proptest};

    fn empty_scene() -> Scene {
        Scene {
            world: Aabb::new(Point2::new(0.0, 0.0), Point2::new(100.0, 100.0)),
            robot: RobotModel::default(),
            obstacles: Vec::new(),
            goals: Vec::new(),
            initial_state: State::at_rest(Point2::new(50.0, 50.0)),
        }
    }

    fn rows(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&v| vec![v]).collect()
    }

    /// Straight-line "planner": succeeds iff the segment is free, at a
    /// cost proportional to its length.
    struct LinePlanner;

    impl SingleGoalPlanner for LinePlanner {
        fn solve(&self, scene: &Scene, _limit: f64, _seed: u64) -> Option<Trajectory> {
            let a = scene.initial_state.position();
            let b = scene.goals[0].center;
            if !scene.segment_free(a, b) {
                return None;
            }
            let mut t = Trajectory::single(scene.initial_state);
            t.states.push(State::at_rest(b));
            t.actions.push(crate::dynamics::Action::new(0.0, 0.0));
            Some(t)
        }
    }

    #[test]
    fn trimmed_runtime_semantics() {
        let (p, g) = (Point2::new(0.0, 0.0), Point2::new(1.0, 0.0));
        let runs: Vec<RunOutcome> = (1..=10).map(|t| RunOutcome { runtime: t as f64, distance: Some(4.0) }).collect();
        let inst = summarize_runs(p, g, &runs, 10.0, 0.2, 1000.0);
        assert_eq!(inst.t, 5.5);
        assert_eq!(inst.d, 4.0);
        assert_eq!(inst.success_fraction, 1.0);

        let same: Vec<RunOutcome> = (0..7).map(|_| RunOutcome { runtime: 2.0, distance: Some(1.0) }).collect();
        assert_eq!(summarize_runs(p, g, &same, 10.0, 0.2, 1000.0).t, 2.0);

        let failed: Vec<RunOutcome> = (0..5).map(|_| RunOutcome { runtime: 10.3, distance: None }).collect();
        let inst = summarize_runs(p, g, &failed, 10.0, 0.2, 1000.0);
        assert_eq!((inst.t, inst.d, inst.success_fraction), (10.0, 1000.0, 0.0));

        // one fast success, four failures: trimming keeps only failures
        let mut mixed = failed.clone();
        mixed[0] = RunOutcome { runtime: 0.5, distance: Some(3.0) };
        let inst = summarize_runs(p, g, &mixed, 10.0, 0.2, 1000.0);
        assert_eq!(inst.t, 10.0);
        assert_eq!(inst.d, 3.0);
        assert_eq!(inst.success_fraction, 0.2);
    }

    #[test]
    fn omega_two_gives_two_pairs() {
        let cfg = DatasetConfig { omega_count: 2, runs_per_pair: 3, parallel: false, ..Default::default() };
        let ds = generate_dataset(&empty_scene(), &LinePlanner, &cfg).unwrap();
        assert_eq!(ds.instances.len(), 2);
        assert_eq!(ds.instances[0].p, ds.instances[1].g);
        for inst in &ds.instances {
            assert!((inst.d - inst.p.distance(inst.g)).abs() < 1e-12);
            assert_eq!(inst.success_fraction, 1.0);
        }
    }

    #[test]
    fn pair_subsampling_is_recorded_and_deterministic() {
        let cfg = DatasetConfig { omega_count: 6, runs_per_pair: 1, max_pairs: Some(7), ..Default::default() };
        let a = generate_dataset(&empty_scene(), &LinePlanner, &cfg).unwrap();
        let b = generate_dataset(&empty_scene(), &LinePlanner, &cfg).unwrap();
        assert_eq!(a.instances.len(), 7);
        assert_eq!(a.config.max_pairs, Some(7));
        let pairs = |d: &PlanningDataset| d.instances.iter().map(|i| (i.p, i.g)).collect::<Vec<_>>();
        assert_eq!(pairs(&a), pairs(&b));
        assert!(a.instances.iter().all(|i| i.p != i.g && a.omega.contains(&i.p) && a.omega.contains(&i.g)));
    }

    #[test]
    fn omega_rejects_bad_config() {
        let cfg = DatasetConfig { omega_count: 1, ..Default::default() };
        assert!(matches!(generate_dataset(&empty_scene(), &LinePlanner, &cfg), Err(CostModelError::Config(_))));
    }

    #[test]
    fn sealed_world_fails_sampling() {
        let mut scene = empty_scene();
        scene.obstacles.push(Polygon::rectangle(Point2::new(-1.0, -1.0), Point2::new(101.0, 101.0)).unwrap());
        let err = sample_omega(&scene, 3, 1.0, 0).unwrap_err();
        assert!(matches!(err, CostModelError::Sampling(RoadmapError::SamplingFailed { found: 0, .. })));
    }

    #[test]
    fn dataset_file_round_trip() {
        let cfg = DatasetConfig { omega_count: 4, runs_per_pair: 2, parallel: false, ..Default::default() };
        let ds = generate_dataset(&empty_scene(), &LinePlanner, &cfg).unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("px,py,gx,gy,t,d,success_fraction\n"));
        assert_eq!(PlanningDataset::read_from(&buf[..]).unwrap(), ds);

        let bad = text.replacen("px,py", "px,pz", 1);
        assert!(matches!(PlanningDataset::read_from(bad.as_bytes()), Err(CostModelError::Dataset { .. })));
        let mut lines: Vec<&str> = text.lines().collect();
        let last = lines.len() - 1;
        lines[last] = "1,2,3,4,5,6,0.5";
        let foreign = lines.join("\n");
        match PlanningDataset::read_from(foreign.as_bytes()) {
            Err(CostModelError::Dataset { line, .. }) => assert_eq!(line, last + 1),
            other => panic!("expected dataset error, got {other:?}"),
        }
    }

    #[test]
    fn featurizer_examples() {
        let f = Featurizer::new(&empty_scene(), FeaturizerConfig::default()).unwrap();
        let p = Point2::new(20.0, 30.0);
        let x = f.features(p, p);
        assert_eq!((x[4], x[5]), (0.0, 0.0));

        let g = Point2::new(75.0, 60.0);
        let (a, b) = (f.features(p, g), f.features(g, p));
        assert_eq!([a[0], a[1], a[2], a[3]], [b[2], b[3], b[0], b[1]]);
        assert_eq!(a[4], b[4]);
        assert!((a[5] - b[5]).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = Point2::new(rng.gen_range(5.0..95.0), rng.gen_range(5.0..95.0));
            let g = Point2::new(rng.gen_range(5.0..95.0), rng.gen_range(5.0..95.0));
            let x = f.features(p, g);
            assert!(x[5] >= x[4] - 1e-9);
            assert!(x[5] <= 1.05 * x[4], "roadmap {} vs euclid {}", x[5], x[4]);
        }
    }

    #[test]
    fn constant_targets_give_constant_model() {
        let (m, r) = fit_gbt(&rows(&[1.0, 2.0, 3.0]), &[4.0, 4.0, 4.0], &GbtParams::default()).unwrap();
        assert!(r.degenerate);
        assert!(m.trees.is_empty());
        assert_eq!(m.predict(&[17.0]), 4.0);
        assert!(matches!(fit_gbt(&rows(&[1.0]), &[1.0], &GbtParams::default()), Err(CostModelError::InsufficientData(1))));
    }

    #[test]
    fn step_function_split() {
        let xs = [0.0, 0.25, 0.5, 1.0, 2.0, 2.5, 2.75, 3.0];
        let ys = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let params = GbtParams { rounds: 1, learning_rate: 1.0, ..Default::default() };
        let (m, _) = fit_gbt(&rows(&xs), &ys, &params).unwrap();
        let tree = &m.trees[0];
        assert_eq!(tree.leaf_count(), 2);
        assert!(matches!(tree.nodes[0], GbtNode::Split { feature: 0, threshold, .. } if threshold == 1.5));
        for (x, y) in xs.iter().zip(ys) {
            assert_eq!(m.predict(&[*x]), y);
        }
    }

    #[test]
    fn overfit_fixture_reproduces_targets() {
        // eight distinct inputs, each duplicated to satisfy the leaf minimum
        let xs: Vec<f64> = (0..16).map(|i| (i / 2) as f64).collect();
        let ys: Vec<f64> = (0..16).map(|i| ((i / 2) as f64 * 1.7).sin() + 2.0).collect();
        let (m, report) = fit_gbt(&rows(&xs), &ys, &GbtParams::default()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.predict(&[*x]) - y).abs() < 1e-9);
        }
        assert!(report.loss_per_round.last().unwrap() < &1e-18);
    }

    #[test]
    fn linear_target_fits_tightly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(0.0..10.0), rng.gen_range(0.0..1.0)]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let (m, report) = fit_gbt(&x, &y, &GbtParams::default()).unwrap();
        let rmse = (x.iter().zip(&y).map(|(r, v)| (m.predict_raw(r) - v).powi(2)).sum::<f64>() / 200.0).sqrt();
        let std = report.loss_per_round[0].sqrt();
        assert!(rmse <= 0.05 * std, "rmse {rmse} std {std}");
        for t in &m.trees {
            assert!(t.leaf_count() <= 16 && t.depth() <= 12);
        }
    }

    #[test]
    fn negative_sum_is_clamped() {
        let (m, _) = fit_gbt(&rows(&[0.0, 0.0, 1.0, 1.0]), &[-5.0, -5.0, 1.0, 1.0], &GbtParams::default()).unwrap();
        assert!(m.predict_raw(&[0.0]) < 0.0);
        assert_eq!(m.predict(&[0.0]), 0.0);
    }

    #[test]
    fn blend_examples() {
        let cfg = CostModelConfig { alpha: 0.5, distance_range: (0.0, 10.0), runtime_range: (0.0, 1.0) };
        assert!((from_to_cost(&cfg, 2.0, 0.6) - 0.4).abs() < 1e-12);
        let only_d = CostModelConfig { alpha: 1.0, ..cfg };
        assert_eq!(from_to_cost(&only_d, 5.0, 123.0), 0.5);
        let only_t = CostModelConfig { alpha: 0.0, ..cfg };
        assert_eq!(from_to_cost(&only_t, 123.0, 0.25), 0.25);
        assert_eq!(from_to_cost(&cfg, -1.0, -1.0), 0.0);
    }

    fn trained_pair() -> (Scene, PlanningDataset, Featurizer, TrainedModel, TrainedModel) {
        let scene = empty_scene();
        let cfg = DatasetConfig { omega_count: 8, runs_per_pair: 1, parallel: false, ..Default::default() };
        let ds = generate_dataset(&scene, &LinePlanner, &cfg).unwrap();
        let f = Featurizer::new(&scene, FeaturizerConfig { roadmap_samples: 60, ..Default::default() }).unwrap();
        let all: Vec<usize> = (0..ds.instances.len()).collect();
        let (md, _) = train_gbt(&ds, &all, &f, Target::Distance, &GbtParams::default()).unwrap();
        let (mt, _) = train_gbt(&ds, &all, &f, Target::Runtime, &GbtParams::default()).unwrap();
        (scene, ds, f, md, mt)
    }

    #[test]
    fn model_file_round_trip_and_errors() {
        let (scene, _, f, md, _) = trained_pair();
        let text = md.to_json();
        let back = TrainedModel::from_json(&text).unwrap();
        assert_eq!(back, md);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let p = Point2::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
            let g = Point2::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
            assert_eq!(back.predict(&f, p, g), md.predict(&f, p, g));
        }

        let wrong_arity = text.replacen("\"feature_arity\": 6", "\"feature_arity\": 5", 1);
        assert!(matches!(
            TrainedModel::from_json(&wrong_arity),
            Err(CostModelError::ArityMismatch { expected: 6, found: 5 })
        ));
        let corrupted = text.replacen("\"kind\": \"split\"", "\"kind\": \"spilt\"", 1);
        assert!(matches!(TrainedModel::from_json(&corrupted), Err(CostModelError::Parse(_))));
        assert!(matches!(TrainedModel::from_json(&text[..text.len() - 40]), Err(CostModelError::Parse(_))));

        let mut other = scene.clone();
        other.obstacles.push(Polygon::square(Point2::new(10.0, 10.0), 1.0).unwrap());
        let (_, _, _, md, mt) = trained_pair();
        assert!(matches!(LearnedCost::new(&other, md, mt, 0.9), Err(CostModelError::SceneMismatch { .. })));
    }

    #[test]
    fn learned_cost_properties() {
        let (scene, ds, f, md, mt) = trained_pair();
        let lc = LearnedCost::new(&scene, md.clone(), mt, 0.9).unwrap();
        let p = ds.omega[0];
        assert_eq!(lc.cost(p, p), 0.0);
        for inst in &ds.instances {
            assert!(lc.cost(inst.p, inst.g) >= 0.0);
        }
        let table = accuracy_table(&md, &f, &ds.instances, &[0.05, 0.5, 10.0]);
        assert!(table.windows(2).all(|w| w[0].within <= w[1].within));
        assert_eq!(table[2].within, 1.0);
    }

    #[test]
    fn split_is_a_partition() {
        let (train, test) = split_instances(10, 0.8, 4);
        assert_eq!((train.len(), test.len()), (8, 2));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn training_loss_never_increases(seed in any::<u64>(), n in 4usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
            let params = GbtParams { rounds: 12, ..Default::default() };
            let (_, report) = fit_gbt(&x, &y, &params).unwrap();
            for w in report.loss_per_round.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
            }
        }

        #[test]
        fn blend_is_monotone(a in 0.0..1.0f64, d in 0.0..20.0f64, t in 0.0..2.0f64, dd in 0.0..5.0f64) {
            let cfg = CostModelConfig { alpha: a, distance_range: (1.0, 15.0), runtime_range: (0.1, 1.5) };
            prop_assert!(from_to_cost(&cfg, d + dd, t) >= from_to_cost(&cfg, d, t));
            prop_assert!(from_to_cost(&cfg, d, t + dd) >= from_to_cost(&cfg, d, t));
            prop_assert!(from_to_cost(&cfg, d, t) >= 0.0);
        }
    }
}
