//! Multi-goal tree planner.
//!
//! The motion tree is partitioned into groups keyed by (nearest roadmap
//! sample, reached goals). Each group carries an open TSP tour over the goals
//! it has not reached. Every iteration picks the heaviest group, a random
//! member node, a target near that node biased toward the first goal of the
//! group's tour, and extends the tree toward the target with the
//! steer-to-point controller.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{LearnedCost, SingleGoalPlanner};
use crate::dynamics::{self, Action, DynamicsError, State, Trajectory};
use crate::geom::{self, Point2};
use crate::roadmap::{self, Roadmap, RoadmapError, SampleSet};
use crate::scene::Scene;
use crate::stats;
use crate::tsp::{self, CostMatrix};

pub const MAX_GOALS: usize = 128;
/// Guard against division by a zero tour cost in the group weight.
pub const WEIGHT_EPS: f64 = 1e-9;
pub const TRAJECTORY_FORMAT: &str = "mgmp-trajectory";
const TRAJECTORY_HEADER: &str = "step,x,y,theta,psi,v,acc,steer_rate";

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("time limit reached: {0}")]
    Timeout(Box<PlanReport>),
    #[error("scene has {0} goals; at most {MAX_GOALS} are supported")]
    TooManyGoals(usize),
    #[error("invalid planner input: {0}")]
    Invalid(String),
    #[error("leaf is missing goals {missing:?}")]
    IncompleteSolution { missing: Vec<usize> },
    #[error(transparent)]
    Sampling(#[from] RoadmapError),
}

// ---------------------------------------------------------------------------
// Goal sets and the motion tree

/// Bitset over goal ids `0..128`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct GoalSet(u128);

impl GoalSet {
    pub const EMPTY: GoalSet = GoalSet(0);

    /// `{0, .., n-1}`.
    pub fn all(n: usize) -> GoalSet {
        assert!(n <= MAX_GOALS);
        if n == MAX_GOALS {
            GoalSet(u128::MAX)
        } else {
            GoalSet((1u128 << n) - 1)
        }
    }

    pub fn contains(self, id: usize) -> bool {
        id < MAX_GOALS && self.0 >> id & 1 == 1
    }

    pub fn with(self, id: usize) -> GoalSet {
        GoalSet(self.0 | 1u128 << id)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_superset(self, other: GoalSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..MAX_GOALS).filter(move |&i| self.contains(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub state: State,
    /// Action that produced `state` from the parent; zero at the root.
    pub action: Action,
    pub goals: GoalSet,
    /// Index of the nearest partition sample.
    pub sample: usize,
}

#[derive(Debug, Clone, Default)]
pub struct MotionTree {
    nodes: Vec<TreeNode>,
}

impl MotionTree {
    pub fn new(root: TreeNode) -> Self {
        MotionTree { nodes: vec![root] }
    }

    pub fn add(&mut self, node: TreeNode) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids from the root to `leaf`.
    pub fn path_to(&self, leaf: usize) -> Vec<usize> {
        let mut path = vec![leaf];
        let mut cur = leaf;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }
}

/// Root-to-leaf trajectory; fails unless the leaf has reached all `goal_count` goals.
pub fn extract_solution(tree: &MotionTree, leaf: usize, goal_count: usize) -> Result<Trajectory, PlanError> {
    let all = GoalSet::all(goal_count);
    let goals = tree.node(leaf).goals;
    if !goals.is_superset(all) {
        return Err(PlanError::IncompleteSolution { missing: all.iter().filter(|&g| !goals.contains(g)).collect() });
    }
    let path = tree.path_to(leaf);
    Ok(Trajectory {
        states: path.iter().map(|&i| tree.node(i).state).collect(),
        actions: path[1..].iter().map(|&i| tree.node(i).action).collect(),
    })
}

// ---------------------------------------------------------------------------
// Partition

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupKey {
    pub sample: usize,
    pub goals: GoalSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub key: GroupKey,
    pub nodes: Vec<usize>,
    /// Remaining goal ids in tour order.
    pub tour: Vec<usize>,
    pub tour_cost: f64,
    pub nr_sel: u32,
}

impl Group {
    pub fn weight(&self, beta: f64, gamma: f64) -> f64 {
        group_weight(beta, gamma, self.nr_sel, self.key.goals.len(), self.tour_cost)
    }
}

/// `beta^nr_sel * gamma^goals / max(cost, eps)`.
pub fn group_weight(beta: f64, gamma: f64, nr_sel: u32, goals: usize, tour_cost: f64) -> f64 {
    beta.powi(nr_sel as i32) * gamma.powi(goals as i32) / tour_cost.max(WEIGHT_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    weight: f64,
    group: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on weight; earlier groups first on ties
        self.weight.total_cmp(&other.weight).then_with(|| other.group.cmp(&self.group))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Groups in creation order with a max-heap on their weights. Only the
/// selected group's weight changes, so the heap never holds stale entries.
#[derive(Debug, Clone)]
pub struct Partition {
    beta: f64,
    gamma: f64,
    groups: Vec<Group>,
    index: HashMap<GroupKey, usize>,
    heap: BinaryHeap<HeapEntry>,
}

impl Partition {
    pub fn new(beta: f64, gamma: f64) -> Self {
        Partition { beta, gamma, groups: Vec::new(), index: HashMap::new(), heap: BinaryHeap::new() }
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, id: usize) -> &Group {
        &self.groups[id]
    }

    pub fn find(&self, key: &GroupKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Adds a group holding `node`; returns its id.
    pub fn insert(&mut self, key: GroupKey, node: usize, tour: Vec<usize>, tour_cost: f64) -> usize {
        let id = self.groups.len();
        let group = Group { key, nodes: vec![node], tour, tour_cost, nr_sel: 0 };
        self.heap.push(HeapEntry { weight: group.weight(self.beta, self.gamma), group: id });
        self.groups.push(group);
        self.index.insert(key, id);
        id
    }

    pub fn add_node(&mut self, group: usize, node: usize) {
        self.groups[group].nodes.push(node);
    }

    /// Heaviest group; bumps its selection count.
    pub fn select_group(&mut self) -> Option<usize> {
        let HeapEntry { group, .. } = self.heap.pop()?;
        let g = &mut self.groups[group];
        g.nr_sel += 1;
        let weight = g.weight(self.beta, self.gamma);
        self.heap.push(HeapEntry { weight, group });
        Some(group)
    }

    /// Membership violations: nodes in no group, nodes in several groups,
    /// and nodes whose (sample, goals) differ from their group's key.
    pub fn audit(&self, tree: &MotionTree) -> usize {
        let mut seen = vec![0usize; tree.len()];
        let mut violations = 0;
        for g in &self.groups {
            if g.nodes.is_empty() {
                violations += 1;
            }
            for &n in &g.nodes {
                if n >= tree.len() {
                    violations += 1;
                    continue;
                }
                seen[n] += 1;
                let node = tree.node(n);
                if node.sample != g.key.sample || node.goals != g.key.goals {
                    violations += 1;
                }
            }
        }
        violations + seen.iter().filter(|&&c| c != 1).count()
    }
}

/// Uniform draw from the group's members.
pub fn select_node(group: &Group, rng: &mut impl Rng) -> usize {
    group.nodes[rng.gen_range(0..group.nodes.len())]
}

// ---------------------------------------------------------------------------
// Cost providers

/// From-to cost between two positions. Implementations return 0 for
/// identical points and finite nonnegative values otherwise.
pub trait CostProvider {
    fn cost(&mut self, a: Point2, b: Point2) -> f64;
}

pub struct EuclideanCost;

impl CostProvider for EuclideanCost {
    fn cost(&mut self, a: Point2, b: Point2) -> f64 {
        a.distance(b)
    }
}

/// Shortest roadmap path via the nearest vertices, with lazily cached
/// single-source distances.
pub struct RoadmapCost<'a> {
    roadmap: &'a Roadmap,
    rows: HashMap<usize, Vec<f64>>,
    sentinel: f64,
}

impl<'a> RoadmapCost<'a> {
    pub fn new(roadmap: &'a Roadmap, sentinel: f64) -> Self {
        RoadmapCost { roadmap, rows: HashMap::new(), sentinel }
    }
}

impl CostProvider for RoadmapCost<'_> {
    fn cost(&mut self, a: Point2, b: Point2) -> f64 {
        let rm = self.roadmap;
        let rows = &mut self.rows;
        let d = roadmap::via_roadmap(rm.samples().points(), a, b, |s, t| {
            rows.entry(s).or_insert_with(|| rm.distances_from(s))[t]
        });
        if d.is_finite() {
            d
        } else {
            self.sentinel
        }
    }
}

pub struct LearnedProvider<'a>(pub &'a LearnedCost);

impl CostProvider for LearnedProvider<'_> {
    fn cost(&mut self, a: Point2, b: Point2) -> f64 {
        self.0.cost(a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Ml,
    Ed,
    Rm,
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostKind::Ml => "ml",
            CostKind::Ed => "ed",
            CostKind::Rm => "rm",
        })
    }
}

impl FromStr for CostKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ml" => Ok(CostKind::Ml),
            "ed" => Ok(CostKind::Ed),
            "rm" => Ok(CostKind::Rm),
            other => Err(format!("unknown cost provider {other:?} (expected ml, ed or rm)")),
        }
    }
}

/// Which from-to cost guides the tours.
#[derive(Clone, Copy)]
pub enum Guidance<'a> {
    Euclidean,
    Roadmap,
    Learned(&'a LearnedCost),
}

impl Guidance<'_> {
    pub fn kind(&self) -> CostKind {
        match self {
            Guidance::Euclidean => CostKind::Ed,
            Guidance::Roadmap => CostKind::Rm,
            Guidance::Learned(_) => CostKind::Ml,
        }
    }
}

// ---------------------------------------------------------------------------
// Phase timing

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Sampling,
    Prediction,
    Tsp,
    CollisionSimulate,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub sampling: f64,
    pub prediction: f64,
    pub tsp: f64,
    pub collision_simulate: f64,
    pub other: f64,
}

impl PhaseTimes {
    pub fn sum(&self) -> f64 {
        self.sampling + self.prediction + self.tsp + self.collision_simulate + self.other
    }

    fn slot(&mut self, p: Phase) -> &mut f64 {
        match p {
            Phase::Sampling => &mut self.sampling,
            Phase::Prediction => &mut self.prediction,
            Phase::Tsp => &mut self.tsp,
            Phase::CollisionSimulate => &mut self.collision_simulate,
            Phase::Other => &mut self.other,
        }
    }
}

/// Exclusive phase clock: time is charged to whichever phase is current.
/// When disabled only the overall start instant is kept.
#[derive(Debug, Clone)]
pub struct Profiler {
    enabled: bool,
    start: Instant,
    mark: Instant,
    current: Phase,
    times: PhaseTimes,
}

impl Profiler {
    pub fn new(enabled: bool) -> Self {
        Profiler::started_at(Instant::now(), enabled)
    }

    pub fn started_at(start: Instant, enabled: bool) -> Self {
        Profiler { enabled, start, mark: start, current: Phase::Other, times: PhaseTimes::default() }
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    /// Switches to `phase` and returns the previous one.
    pub fn enter(&mut self, phase: Phase) -> Phase {
        let prev = self.current;
        if self.enabled && phase != prev {
            let now = Instant::now();
            *self.times.slot(prev) += (now - self.mark).as_secs_f64();
            self.mark = now;
        }
        self.current = phase;
        prev
    }

    /// Closes the current phase; returns (total, per-phase) when enabled.
    pub fn finish(&mut self) -> (f64, Option<PhaseTimes>) {
        let now = Instant::now();
        if self.enabled {
            *self.times.slot(self.current) += (now - self.mark).as_secs_f64();
            self.mark = now;
        }
        let total = (now - self.start).as_secs_f64();
        (total, self.enabled.then_some(self.times))
    }
}

// ---------------------------------------------------------------------------
// Configuration, context and report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub phi_count: usize,
    pub roadmap_neighbors: usize,
    pub target_samples: usize,
    pub target_radius: f64,
    pub extend_max_steps: usize,
    pub reach_tolerance: f64,
    /// Wall-clock budget in seconds.
    pub t_max: f64,
    pub seed: u64,
    pub max_iterations: Option<u64>,
    /// Run a partition audit every this many iterations.
    pub audit_every: Option<u64>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            alpha: crate::costmodel::DEFAULT_ALPHA,
            beta: 0.99,
            gamma: 8.0,
            phi_count: 500,
            roadmap_neighbors: roadmap::DEFAULT_NEIGHBORS,
            target_samples: 6,
            target_radius: 10.0,
            extend_max_steps: 50,
            reach_tolerance: 1.0,
            t_max: 30.0,
            seed: 0,
            max_iterations: None,
            audit_every: None,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::Invalid(m.into()));
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must lie in (0, 1)");
        }
        if !(self.gamma > 1.0) {
            return bad("gamma must exceed 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.phi_count == 0 || self.target_samples == 0 || self.extend_max_steps == 0 {
            return bad("phi_count, target_samples and extend_max_steps must be positive");
        }
        if !(self.target_radius > 0.0 && self.reach_tolerance >= 0.0 && self.t_max >= 0.0) {
            return bad("target_radius must be positive; reach_tolerance and t_max nonnegative");
        }
        Ok(())
    }
}

/// Partition samples plus the roadmap over them.
#[derive(Debug, Clone)]
pub struct PlanContext {
    roadmap: Roadmap,
}

impl PlanContext {
    /// `phi_count` free samples of `scene` (goal centers appended).
    pub fn new(scene: &Scene, phi_count: usize, neighbors: usize, seed: u64) -> Result<Self, RoadmapError> {
        let samples = roadmap::sample_free(scene, phi_count, seed)?;
        Ok(PlanContext { roadmap: Roadmap::build(scene, samples, neighbors) })
    }

    pub fn samples(&self) -> &SampleSet {
        self.roadmap.samples()
    }

    pub fn roadmap(&self) -> &Roadmap {
        &self.roadmap
    }
}

/// Seed of the partition samples for a planner seed.
pub fn phi_seed(seed: u64) -> u64 {
    stats::derive_seed(seed, 0x0f1)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanReport {
    pub solved: bool,
    pub iterations: u64,
    pub tree_size: usize,
    pub groups: usize,
    pub tsp_calls: usize,
    pub best_goals_reached: usize,
    /// Seconds since the profiler started.
    pub runtime: f64,
    pub phases: Option<PhaseTimes>,
    pub audits: u64,
    pub audit_violations: usize,
}

impl fmt::Display for PlanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} after {:.3} s: {} iterations, {} nodes, {} groups, {} TSP calls, best {} goals",
            if self.solved { "solved" } else { "unsolved" },
            self.runtime,
            self.iterations,
            self.tree_size,
            self.groups,
            self.tsp_calls,
            self.best_goals_reached
        )
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub trajectory: Trajectory,
    pub report: PlanReport,
}

// ---------------------------------------------------------------------------
// Planner

struct Search<'s> {
    scene: &'s Scene,
    config: &'s PlannerConfig,
    samples: &'s [Point2],
    provider: Box<dyn CostProvider + 's>,
    tree: MotionTree,
    partition: Partition,
    /// Costs between sites: samples `0..n`, then goal `j` as `n + j`.
    site_costs: HashMap<(usize, usize), f64>,
    rng: ChaCha8Rng,
    profiler: Profiler,
    all: GoalSet,
    tsp_calls: usize,
    best_goals: usize,
}

impl Search<'_> {
    fn site_point(&self, site: usize) -> Point2 {
        let n = self.samples.len();
        if site < n {
            self.samples[site]
        } else {
            self.scene.goals[site - n].center
        }
    }

    fn site_cost(&mut self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        if let Some(&c) = self.site_costs.get(&(a, b)) {
            return c;
        }
        let (pa, pb) = (self.site_point(a), self.site_point(b));
        let c = if pa == pb { 0.0 } else { self.provider.cost(pa, pb) };
        self.site_costs.insert((a, b), c);
        c
    }

    /// Finds or creates the group of `node`.
    fn update_groups(&mut self, node: usize) {
        let n = self.tree.node(node);
        let key = GroupKey { sample: n.sample, goals: n.goals };
        if let Some(g) = self.partition.find(&key) {
            self.partition.add_node(g, node);
            return;
        }
        let remaining: Vec<usize> = self.all.iter().filter(|&g| !key.goals.contains(g)).collect();
        let ns = self.samples.len();
        let sites: Vec<usize> = std::iter::once(key.sample).chain(remaining.iter().map(|&g| ns + g)).collect();
        let prev = self.profiler.enter(Phase::Prediction);
        let mut entries = Vec::with_capacity(sites.len() * sites.len());
        for &a in &sites {
            for &b in &sites {
                entries.push(self.site_cost(a, b));
            }
        }
        self.profiler.enter(Phase::Tsp);
        let matrix = CostMatrix::new(sites.len(), entries).expect("costs are finite, nonnegative, zero diagonal");
        let tour = tsp::solve_open_tour(&matrix);
        self.tsp_calls += 1;
        self.profiler.enter(prev);
        let order = tour.order.iter().map(|&i| remaining[i - 1]).collect();
        self.partition.insert(key, node, order, tour.cost);
    }

    /// Best of `target_samples` points in the disk around `from` by
    /// cost(from, p) + cost(p, goal).
    fn select_target(&mut self, from: Point2, goal: Point2) -> Point2 {
        let prev = self.profiler.enter(Phase::Sampling);
        let w = self.scene.world;
        let r = self.config.target_radius;
        let candidates: Vec<Point2> = (0..self.config.target_samples)
            .map(|_| {
                let mut p = from;
                for _ in 0..TARGET_REDRAWS {
                    let rho = r * self.rng.gen::<f64>().sqrt();
                    let phi = self.rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                    p = from + Point2::new(rho * phi.cos(), rho * phi.sin());
                    if w.contains(p) {
                        break;
                    }
                }
                w.clamp(p)
            })
            .collect();
        if candidates.len() == 1 {
            self.profiler.enter(prev);
            return candidates[0];
        }
        self.profiler.enter(Phase::Prediction);
        let mut best = candidates[0];
        let mut best_cost = f64::INFINITY;
        for &p in &candidates {
            let c = self.provider.cost(from, p) + self.provider.cost(p, goal);
            if c < best_cost {
                best = p;
                best_cost = c;
            }
        }
        self.profiler.enter(prev);
        best
    }

    /// Grows the tree from `from` toward `target`. Returns the new node ids;
    /// stops early once a node has reached every goal.
    fn extend(&mut self, from: usize, target: Point2) -> Vec<usize> {
        let prev = self.profiler.enter(Phase::CollisionSimulate);
        let model = &self.scene.robot;
        let mut added = Vec::new();
        let mut cur = from;
        for _ in 0..self.config.extend_max_steps {
            let node = self.tree.node(cur);
            let a = dynamics::steer_controller(&node.state, target, model);
            let s = dynamics::simulate(&node.state, &a, model);
            if geom::state_in_collision(&s, &model.shape, self.scene) {
                break;
            }
            let goals = match first_new_goal(self.scene, &s, node.goals) {
                Some(g) => node.goals.with(g),
                None => node.goals,
            };
            self.profiler.enter(Phase::Other);
            let sample = roadmap::nearest(self.samples, s.position());
            let id = self.tree.add(TreeNode { parent: Some(cur), state: s, action: a, goals, sample });
            self.profiler.enter(Phase::CollisionSimulate);
            added.push(id);
            cur = id;
            if goals == self.all || s.position().distance(target) <= self.config.reach_tolerance {
                break;
            }
        }
        self.profiler.enter(prev);
        added
    }

    fn report(&mut self, solved: bool, iterations: u64, audits: u64, violations: usize) -> PlanReport {
        let (runtime, phases) = self.profiler.finish();
        PlanReport {
            solved,
            iterations,
            tree_size: self.tree.len(),
            groups: self.partition.len(),
            tsp_calls: self.tsp_calls,
            best_goals_reached: self.best_goals,
            runtime,
            phases,
            audits,
            audit_violations: violations,
        }
    }
}

const TARGET_REDRAWS: usize = 16;

/// Lowest-id goal containing `s` that is not already in `reached`.
pub fn first_new_goal(scene: &Scene, s: &State, reached: GoalSet) -> Option<usize> {
    scene.goals.iter().find(|g| !reached.contains(g.id) && geom::goal_reached(s, g)).map(|g| g.id)
}

pub fn plan(scene: &Scene, config: &PlannerConfig, guidance: Guidance<'_>) -> Result<Solution, PlanError> {
    plan_with(scene, config, guidance, None, Profiler::new(false))
}

/// Full planner entry point. `context` supplies precomputed partition
/// samples (built from the scene when absent); the wall-clock budget is
/// measured from the profiler's start.
pub fn plan_with(
    scene: &Scene,
    config: &PlannerConfig,
    guidance: Guidance<'_>,
    context: Option<&PlanContext>,
    mut profiler: Profiler,
) -> Result<Solution, PlanError> {
    config.validate()?;
    if scene.goals.len() > MAX_GOALS {
        return Err(PlanError::TooManyGoals(scene.goals.len()));
    }
    if scene.goals.iter().enumerate().any(|(i, g)| g.id != i) {
        return Err(PlanError::Invalid("goal ids must be 0..n-1 in order".into()));
    }
    let owned;
    let context = match context {
        Some(c) => c,
        None => {
            let prev = profiler.enter(Phase::Sampling);
            owned = PlanContext::new(scene, config.phi_count, config.roadmap_neighbors, phi_seed(config.seed))?;
            profiler.enter(prev);
            &owned
        }
    };
    let provider: Box<dyn CostProvider> = match guidance {
        Guidance::Euclidean => Box::new(EuclideanCost),
        Guidance::Roadmap => Box::new(RoadmapCost::new(context.roadmap(), scene.unreachable_sentinel())),
        Guidance::Learned(m) => Box::new(LearnedProvider(m)),
    };
    let mut search = Search {
        scene,
        config,
        samples: context.samples().points(),
        provider,
        tree: MotionTree::default(),
        partition: Partition::new(config.beta, config.gamma),
        site_costs: HashMap::new(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        profiler,
        all: GoalSet::all(scene.goals.len()),
        tsp_calls: 0,
        best_goals: 0,
    };

    let s0 = scene.initial_state;
    let mut root_goals = GoalSet::EMPTY;
    while let Some(g) = first_new_goal(scene, &s0, root_goals) {
        root_goals = root_goals.with(g);
    }
    let root_sample = roadmap::nearest(search.samples, s0.position());
    search.tree = MotionTree::new(TreeNode {
        parent: None,
        state: s0,
        action: Action::new(0.0, 0.0),
        goals: root_goals,
        sample: root_sample,
    });
    search.best_goals = root_goals.len();
    search.update_groups(0);
    if root_goals == search.all {
        let trajectory = extract_solution(&search.tree, 0, scene.goals.len())?;
        return Ok(Solution { trajectory, report: search.report(true, 0, 0, 0) });
    }

    let mut iterations = 0u64;
    let (mut audits, mut violations) = (0u64, 0usize);
    while search.profiler.elapsed() < config.t_max && config.max_iterations.map_or(true, |m| iterations < m) {
        iterations += 1;
        let gid = search.partition.select_group().expect("root group exists");
        let group = search.partition.group(gid);
        let node = select_node(group, &mut search.rng);
        let goal = group.tour[0];
        let from = search.tree.node(node).state.position();
        let target = search.select_target(from, scene.goals[goal].center);
        let added = search.extend(node, target);
        for &id in &added {
            search.update_groups(id);
            let goals = search.tree.node(id).goals;
            search.best_goals = search.best_goals.max(goals.len());
            if goals == search.all {
                let trajectory = extract_solution(&search.tree, id, scene.goals.len())?;
                return Ok(Solution { trajectory, report: search.report(true, iterations, audits, violations) });
            }
        }
        if config.audit_every.is_some_and(|k| k > 0 && iterations % k == 0) {
            audits += 1;
            violations += search.partition.audit(&search.tree);
        }
    }
    Err(PlanError::Timeout(Box::new(search.report(false, iterations, audits, violations))))
}

// ---------------------------------------------------------------------------
// Single-goal planner

/// Roadmap-guided planner for one goal, with partition samples drawn once
/// for the layout and shared by all runs.
#[derive(Debug, Clone)]
pub struct SingleGoalMp {
    config: PlannerConfig,
    context: PlanContext,
}

impl SingleGoalMp {
    pub fn new(scene: &Scene, config: PlannerConfig) -> Result<Self, PlanError> {
        config.validate()?;
        let layout = scene.layout();
        let context = PlanContext::new(&layout, config.phi_count, config.roadmap_neighbors, phi_seed(config.seed))?;
        Ok(SingleGoalMp { config, context })
    }

    /// Plans from `start` (at rest, heading 0) to the single goal of `scene`.
    pub fn run(&self, scene: &Scene, time_limit: f64, seed: u64) -> Result<Solution, PlanError> {
        if scene.goals.len() != 1 {
            return Err(PlanError::Invalid(format!("single-goal planner given {} goals", scene.goals.len())));
        }
        let config = PlannerConfig { t_max: time_limit, seed, ..self.config.clone() };
        plan_with(scene, &config, Guidance::Roadmap, Some(&self.context), Profiler::new(false))
    }
}

impl SingleGoalPlanner for SingleGoalMp {
    fn solve(&self, scene: &Scene, time_limit: f64, seed: u64) -> Option<Trajectory> {
        self.run(scene, time_limit, seed).ok().map(|s| s.trajectory)
    }
}

/// Single-goal task from `start` to one goal square, planned with roadmap guidance.
pub fn single_goal_mp(scene: &Scene, start: Point2, config: &PlannerConfig) -> Result<Solution, PlanError> {
    if scene.goals.len() != 1 {
        return Err(PlanError::Invalid(format!("single-goal planner given {} goals", scene.goals.len())));
    }
    let task = scene.with_task(State::at_rest(start), scene.goals.clone());
    plan(&task, config, Guidance::Roadmap)
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("trajectory is empty")]
    Empty,
    #[error("trajectory does not start at the initial state")]
    WrongStart,
    #[error(transparent)]
    Replay(#[from] DynamicsError),
    #[error("inadmissible action at step {0}")]
    InadmissibleAction(usize),
    #[error("state {0} is in collision")]
    Collision(usize),
    #[error("goals never reached: {0:?}")]
    MissingGoals(Vec<usize>),
}

/// Re-simulates the trajectory against the scene: start state, exact
/// replay, admissible actions, no collisions, every goal visited.
pub fn validate_trajectory(scene: &Scene, traj: &Trajectory) -> Result<(), ValidationError> {
    let model = &scene.robot;
    let first = traj.states.first().ok_or(ValidationError::Empty)?;
    if first != &scene.initial_state {
        return Err(ValidationError::WrongStart);
    }
    traj.check_replay(model, 0.0)?;
    if let Some(i) = traj.actions.iter().position(|a| !model.action_admissible(a)) {
        return Err(ValidationError::InadmissibleAction(i));
    }
    let mut visited = vec![false; scene.goals.len()];
    for (i, s) in traj.states.iter().enumerate() {
        if geom::state_in_collision(s, &model.shape, scene) {
            return Err(ValidationError::Collision(i));
        }
        for g in &scene.goals {
            if geom::goal_reached(s, g) {
                visited[g.id] = true;
            }
        }
    }
    let missing: Vec<usize> = (0..visited.len()).filter(|&g| !visited[g]).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(ValidationError::MissingGoals(missing))
    }
}

/// Order in which goals are first entered along a trajectory.
pub fn visit_order(scene: &Scene, traj: &Trajectory) -> Vec<usize> {
    let mut reached = GoalSet::EMPTY;
    let mut order = Vec::new();
    for s in &traj.states {
        while let Some(g) = first_new_goal(scene, s, reached) {
            reached = reached.with(g);
            order.push(g);
        }
    }
    order
}

// ---------------------------------------------------------------------------
// Trajectory files

#[derive(Debug, Error)]
pub enum TrajectoryFileError {
    #[error("trajectory file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub scene_fingerprint: String,
    /// Planner configuration and provider as JSON.
    pub config: String,
    pub trajectory: Trajectory,
}

impl TrajectoryFile {
    /// `#` header lines, a column header, then one row per state with the
    /// action applied from it (empty on the last row).
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# format={TRAJECTORY_FORMAT}")?;
        writeln!(out, "# scene={}", self.scene_fingerprint)?;
        writeln!(out, "# config={}", self.config)?;
        writeln!(out, "{TRAJECTORY_HEADER}")?;
        let t = &self.trajectory;
        for (i, s) in t.states.iter().enumerate() {
            write!(out, "{i},{},{},{},{},{}", s.x, s.y, s.theta, s.psi, s.v)?;
            match t.actions.get(i) {
                Some(a) => writeln!(out, ",{},{}", a.acc, a.steer_rate)?,
                None => writeln!(out, ",,")?,
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_from(input: impl Read) -> Result<TrajectoryFile, TrajectoryFileError> {
        let err = |line: usize, message: String| TrajectoryFileError::Parse { line, message };
        let mut meta: HashMap<String, String> = HashMap::new();
        let mut states = Vec::new();
        let mut actions = Vec::new();
        let mut header_seen = false;
        let mut ended = false;
        for (k, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            let n = k + 1;
            if let Some(kv) = line.strip_prefix("# ") {
                let (key, value) = kv.split_once('=').ok_or_else(|| err(n, "metadata line without '='".into()))?;
                meta.insert(key.into(), value.into());
                continue;
            }
            if !header_seen {
                if line != TRAJECTORY_HEADER {
                    return Err(err(n, format!("expected header {TRAJECTORY_HEADER:?}")));
                }
                header_seen = true;
                continue;
            }
            if ended {
                return Err(err(n, "row after the final state".into()));
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(err(n, format!("expected 8 fields, found {}", fields.len())));
            }
            if fields[0].parse::<usize>().ok() != Some(states.len()) {
                return Err(err(n, "step index out of sequence".into()));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(n, format!("{s:?}: {e}")));
            states.push(State::new(num(fields[1])?, num(fields[2])?, num(fields[3])?, num(fields[4])?, num(fields[5])?));
            if fields[6].is_empty() && fields[7].is_empty() {
                ended = true;
            } else {
                actions.push(Action::new(num(fields[6])?, num(fields[7])?));
            }
        }
        if !ended {
            return Err(err(0, "missing final state row".into()));
        }
        if meta.get("format").map(String::as_str) != Some(TRAJECTORY_FORMAT) {
            return Err(err(1, "missing or unknown format tag".into()));
        }
        Ok(TrajectoryFile {
            scene_fingerprint: meta.remove("scene").unwrap_or_default(),
            config: meta.remove("config").unwrap_or_default(),
            trajectory: Trajectory { states, actions },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrajectoryFile, TrajectoryFileError> {
        TrajectoryFile::read_from(std::fs::File::open(path)?)
    }
}
