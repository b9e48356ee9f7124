//! World description, random instance generation and the scene file format.
//!
//! A scene file is a single JSON document:
//!
//! ```text
//! {
//!   "format": "mgmp-scene", "version": 1,
//!   "world": { "min": {"x":..,"y":..}, "max": {"x":..,"y":..} },
//!   "robot": { "shape": [{x,y}..], "wheelbase", "dt", "limits": {..}, "gains": {..} },
//!   "obstacles": [ [{x,y}, ..], .. ],
//!   "goals": [ {"id": 0, "center": {x,y}, "half_side": 1.5}, .. ],
//!   "initial_state": { "x", "y", "theta", "psi", "v" }
//! }
//! ```
//!
//! Numbers are written in shortest round-trip form, so `load(save(s)) == s`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{RobotModel, State};
use crate::geom::{self, Aabb, Point2, Polygon};
use crate::roadmap::{self, Roadmap};

pub const SCENE_FORMAT: &str = "mgmp-scene";
pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scene: {0}")]
    Validation(String),
    #[error("scene generation failed: {0}")]
    GenerationFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub id: usize,
    pub center: Point2,
    pub half_side: f64,
}

impl GoalRegion {
    pub fn polygon(&self) -> Polygon {
        Polygon::square(self.center, self.half_side).expect("validated half_side")
    }

    pub fn bounding_box(&self) -> Aabb {
        let h = Point2::new(self.half_side, self.half_side);
        Aabb::new(self.center - h, self.center + h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub world: Aabb,
    pub robot: RobotModel,
    pub obstacles: Vec<Polygon>,
    pub goals: Vec<GoalRegion>,
    pub initial_state: State,
}

#[derive(Serialize)]
struct SceneDocRef<'a> {
    format: &'a str,
    version: u32,
    world: &'a Aabb,
    robot: &'a RobotModel,
    obstacles: &'a [Polygon],
    goals: &'a [GoalRegion],
    initial_state: &'a State,
}

#[derive(Deserialize)]
struct SceneDoc {
    format: String,
    version: u32,
    world: Aabb,
    robot: RobotModel,
    obstacles: Vec<Polygon>,
    goals: Vec<GoalRegion>,
    initial_state: State,
}

#[derive(Serialize)]
struct Layout<'a> {
    world: &'a Aabb,
    robot: &'a RobotModel,
    obstacles: &'a [Polygon],
}

impl Scene {
    /// Scene with the same world, robot and obstacles but no goals.
    pub fn layout(&self) -> Scene {
        Scene { goals: Vec::new(), ..self.clone() }
    }

    /// Copy of this scene with a different start and goal set.
    pub fn with_task(&self, initial_state: State, goals: Vec<GoalRegion>) -> Scene {
        Scene { initial_state, goals, ..self.clone() }
    }

    pub fn in_collision(&self, s: &State) -> bool {
        geom::state_in_collision(s, &self.robot.shape, self)
    }

    /// Point-robot freeness: inside the world and outside every obstacle.
    pub fn point_free(&self, p: Point2) -> bool {
        self.world.contains(p) && !self.obstacles.iter().any(|o| geom::point_in_polygon(p, o))
    }

    pub fn segment_free(&self, a: Point2, b: Point2) -> bool {
        self.world.contains(a)
            && self.world.contains(b)
            && !self.obstacles.iter().any(|o| geom::segment_hits_polygon(a, b, o))
    }

    /// Lowest-id goal whose region contains the state position.
    pub fn goal_at(&self, s: &State) -> Option<usize> {
        self.goals.iter().find(|g| geom::goal_reached(s, g)).map(|g| g.id)
    }

    /// Unreachable-distance stand-in: ten times the world diagonal.
    pub fn unreachable_sentinel(&self) -> f64 {
        10.0 * self.world.diagonal()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let invalid = |m: String| Err(SceneError::Validation(m));
        self.robot.validate().map_err(|e| SceneError::Validation(e.to_string()))?;
        if !(self.world.width() > 0.0 && self.world.height() > 0.0) || !self.world.min.is_finite() || !self.world.max.is_finite() {
            return invalid("world bounds must have positive finite extent".into());
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.is_convex() {
                return invalid(format!("obstacle {i} is not convex"));
            }
        }
        for (i, g) in self.goals.iter().enumerate() {
            if g.id != i {
                return invalid(format!("goal at position {i} has id {}", g.id));
            }
            if !(g.half_side.is_finite() && g.half_side > 0.0) || !g.center.is_finite() {
                return invalid(format!("goal {i} has invalid geometry"));
            }
            let bb = g.bounding_box();
            if !self.world.contains(bb.min) || !self.world.contains(bb.max) {
                return invalid(format!("goal {i} extends outside the world"));
            }
            let square = g.polygon();
            if let Some(j) = self.obstacles.iter().position(|o| geom::polygons_overlap(&square, o)) {
                return invalid(format!("goal {i} overlaps obstacle {j}"));
            }
            for other in &self.goals[..i] {
                if bb.intersects(&other.bounding_box()) {
                    return invalid(format!("goals {} and {i} overlap", other.id));
                }
            }
        }
        if !self.robot.state_admissible(&self.initial_state) {
            return invalid("initial state violates speed/steering/heading bounds".into());
        }
        if self.in_collision(&self.initial_state) {
            return invalid("initial state is in collision".into());
        }
        Ok(())
    }

    /// Pretty-printed scene document.
    pub fn to_json(&self) -> String {
        let doc = SceneDocRef {
            format: SCENE_FORMAT,
            version: SCENE_VERSION,
            world: &self.world,
            robot: &self.robot,
            obstacles: &self.obstacles,
            goals: &self.goals,
            initial_state: &self.initial_state,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("scene serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Scene, SceneError> {
        let doc: SceneDoc = serde_json::from_str(text).map_err(|e| SceneError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if doc.format != SCENE_FORMAT || doc.version != SCENE_VERSION {
            return Err(SceneError::Parse {
                line: 1,
                column: 1,
                message: format!("unsupported format {:?} version {}", doc.format, doc.version),
            });
        }
        let scene = Scene {
            world: doc.world,
            robot: doc.robot,
            obstacles: doc.obstacles,
            goals: doc.goals,
            initial_state: doc.initial_state,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// SHA-256 of the serialized scene.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// SHA-256 over world, robot and obstacles only; shared by every goal
    /// placement in the same layout.
    pub fn layout_fingerprint(&self) -> String {
        let layout = Layout { world: &self.world, robot: &self.robot, obstacles: &self.obstacles };
        let text = serde_json::to_string(&layout).expect("layout serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<(), SceneError> {
    fs::write(path, scene.to_json())?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    Scene::from_json(&fs::read_to_string(path)?)
}

/// Parameters of a procedurally generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomInstanceSpec {
    pub world_size: f64,
    pub obstacle_count: usize,
    pub obstacle_radius_min: f64,
    pub obstacle_radius_max: f64,
    /// Minimum clearance between obstacles and from obstacles to the border.
    pub obstacle_gap: f64,
    pub goal_count: usize,
    pub goal_half_side: f64,
    /// Layout (obstacle) seed.
    pub seed: u64,
    /// Seed for start and goals; defaults to `seed`.
    pub goal_seed: Option<u64>,
    pub robot: RobotModel,
    pub connectivity_samples: usize,
    pub max_attempts: usize,
}

impl Default for RandomInstanceSpec {
    fn default() -> Self {
        Self {
            world_size: 100.0,
            obstacle_count: 30,
            obstacle_radius_min: 3.0,
            obstacle_radius_max: 7.0,
            obstacle_gap: 4.0,
            goal_count: 5,
            goal_half_side: 1.5,
            seed: 0,
            goal_seed: None,
            robot: RobotModel::default(),
            connectivity_samples: 300,
            max_attempts: 20,
        }
    }
}

impl RandomInstanceSpec {
    fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::GenerationFailed(format!("invalid spec: {m}")));
        if self.goal_count == 0 {
            return bad("goal_count must be at least 1");
        }
        if !(self.world_size > 0.0 && self.goal_half_side > 0.0) {
            return bad("world_size and goal_half_side must be positive");
        }
        if !(self.obstacle_radius_min > 0.0 && self.obstacle_radius_min <= self.obstacle_radius_max) {
            return bad("obstacle radius range must satisfy 0 < min <= max");
        }
        if self.obstacle_gap < 0.0 {
            return bad("obstacle_gap must be nonnegative");
        }
        self.robot.validate().map_err(|e| SceneError::GenerationFailed(e.to_string()))
    }
}

/// Counters describing how much rejection sampling a generation needed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenerationStats {
    pub layout_attempts: usize,
    /// Start-and-goal placement attempts on the final layout.
    pub attempts: usize,
    pub obstacle_draws: usize,
    pub goal_draws: usize,
    /// Goal draws rejected because of obstacle clearance (not spacing).
    pub goal_obstacle_rejections: usize,
}

const DRAWS_PER_OBSTACLE: usize = 200;
const DRAWS_PER_GOAL: usize = 2000;
const CONNECTIVITY_K: usize = 10;

pub fn generate_scene(spec: &RandomInstanceSpec) -> Result<Scene, SceneError> {
    generate_scene_with_stats(spec).map(|(s, _)| s)
}

/// Obstacles depend only on `spec.seed`; the start and goals depend only on
/// the goal seed, so several tasks can share one layout.
pub fn generate_scene_with_stats(spec: &RandomInstanceSpec) -> Result<(Scene, GenerationStats), SceneError> {
    spec.validate()?;
    let mut stats = GenerationStats::default();
    let world = Aabb::new(Point2::new(0.0, 0.0), Point2::new(spec.world_size, spec.world_size));
    let mut layout_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut task_rng = ChaCha8Rng::seed_from_u64(spec.goal_seed.unwrap_or(spec.seed) ^ 0x9e37_79b9_7f4a_7c15);
    let mut last_failure = String::from("no attempts made");

    let mut obstacles = None;
    for _ in 0..spec.max_attempts.max(1) {
        stats.layout_attempts += 1;
        obstacles = place_obstacles(spec, world, &mut layout_rng, &mut stats);
        if obstacles.is_some() {
            break;
        }
    }
    let Some(obstacles) = obstacles else {
        return Err(SceneError::GenerationFailed(format!(
            "could not place {} obstacles with the requested clearance",
            spec.obstacle_count
        )));
    };
    let layout = Scene {
        world,
        robot: spec.robot.clone(),
        obstacles,
        goals: Vec::new(),
        initial_state: State::default(),
    };

    for _ in 0..spec.max_attempts.max(1) {
        stats.attempts += 1;
        let mut scene = layout.clone();
        let Some(start) = place_start(&scene, &mut task_rng) else {
            last_failure = "no collision-free start state found".into();
            continue;
        };
        scene.initial_state = start;
        let Some(goals) = place_goals(&scene, spec, &mut task_rng, &mut stats) else {
            last_failure = format!("could not place {} goals in free space", spec.goal_count);
            continue;
        };
        scene.goals = goals;
        if scene.validate().is_err() {
            last_failure = "generated scene failed validation".into();
            continue;
        }
        if !goals_connected(&scene, spec, task_rng.gen()) {
            last_failure = "roadmap does not connect the start to every goal".into();
            continue;
        }
        return Ok((scene, stats));
    }
    Err(SceneError::GenerationFailed(last_failure))
}

fn place_obstacles(
    spec: &RandomInstanceSpec,
    world: Aabb,
    rng: &mut ChaCha8Rng,
    stats: &mut GenerationStats,
) -> Option<Vec<Polygon>> {
    let inner = Aabb::new(
        world.min + Point2::new(spec.obstacle_gap, spec.obstacle_gap),
        world.max - Point2::new(spec.obstacle_gap, spec.obstacle_gap),
    );
    let mut obstacles: Vec<Polygon> = Vec::with_capacity(spec.obstacle_count);
    for _ in 0..spec.obstacle_count {
        let mut placed = false;
        for _ in 0..DRAWS_PER_OBSTACLE {
            stats.obstacle_draws += 1;
            let candidate = random_convex_obstacle(spec, world, rng);
            let bb = candidate.bounding_box();
            if !(inner.contains(bb.min) && inner.contains(bb.max)) {
                continue;
            }
            if obstacles.iter().all(|o| geom::polygon_distance(o, &candidate) >= spec.obstacle_gap) {
                obstacles.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(obstacles)
}

/// Vertices on a jittered circle, stretched and rotated; affine images of
/// inscribed polygons stay convex.
fn random_convex_obstacle(spec: &RandomInstanceSpec, world: Aabb, rng: &mut ChaCha8Rng) -> Polygon {
    use std::f64::consts::TAU;
    let radius = rng.gen_range(spec.obstacle_radius_min..=spec.obstacle_radius_max);
    let center = Point2::new(rng.gen_range(world.min.x..world.max.x), rng.gen_range(world.min.y..world.max.y));
    let n = rng.gen_range(3..=7usize);
    let stretch = rng.gen_range(0.5..1.5);
    let rotation = rng.gen_range(0.0..TAU);
    let step = TAU / n as f64;
    let vertices = (0..n)
        .map(|i| {
            let a = step * (i as f64 + rng.gen_range(-0.3..0.3));
            let local = Point2::new(radius * stretch * a.cos(), radius / stretch * a.sin());
            center + local.rotate(rotation)
        })
        .collect();
    Polygon::new(vertices).unwrap_or_else(|_| Polygon::square(center, radius / 2.0).expect("positive radius"))
}

fn clearance_ok(scene: &Scene, p: Point2, clearance: f64) -> bool {
    let area = Polygon::square(p, clearance).expect("positive clearance");
    let bb = area.bounding_box();
    scene.world.contains(bb.min)
        && scene.world.contains(bb.max)
        && !scene.obstacles.iter().any(|o| geom::polygons_overlap(&area, o))
}

fn place_start(scene: &Scene, rng: &mut ChaCha8Rng) -> Option<State> {
    let w = scene.world;
    let clearance = scene.robot.reach() + 1.0;
    for _ in 0..DRAWS_PER_GOAL {
        let p = Point2::new(rng.gen_range(w.min.x..w.max.x), rng.gen_range(w.min.y..w.max.y));
        let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let s = State { theta: heading, ..State::at_rest(p) };
        if clearance_ok(scene, p, clearance) && !scene.in_collision(&s) {
            return Some(s);
        }
    }
    None
}

fn place_goals(
    scene: &Scene,
    spec: &RandomInstanceSpec,
    rng: &mut ChaCha8Rng,
    stats: &mut GenerationStats,
) -> Option<Vec<GoalRegion>> {
    let w = scene.world;
    let h = spec.goal_half_side;
    // room for the footprint to sit with its reference point anywhere in the square
    let clearance = h + scene.robot.reach();
    let start = scene.initial_state.position();
    let mut goals: Vec<GoalRegion> = Vec::with_capacity(spec.goal_count);
    for id in 0..spec.goal_count {
        let mut placed = false;
        for _ in 0..DRAWS_PER_GOAL {
            stats.goal_draws += 1;
            let c = Point2::new(rng.gen_range(w.min.x + h..w.max.x - h), rng.gen_range(w.min.y + h..w.max.y - h));
            let separated = |q: Point2, gap: f64| (c.x - q.x).abs().max((c.y - q.y).abs()) > gap;
            if !separated(start, h + 1.0) || !goals.iter().all(|g| separated(g.center, 2.0 * h + 1.0)) {
                continue;
            }
            let square = Polygon::square(c, h).expect("positive half side");
            let bb = square.bounding_box();
            if !(w.contains(bb.min) && w.contains(bb.max)) {
                continue;
            }
            if clearance_ok(scene, c, clearance) {
                goals.push(GoalRegion { id, center: c, half_side: h });
                placed = true;
                break;
            }
            stats.goal_obstacle_rejections += 1;
        }
        if !placed {
            return None;
        }
    }
    Some(goals)
}

fn goals_connected(scene: &Scene, spec: &RandomInstanceSpec, seed: u64) -> bool {
    let Ok(mut samples) = roadmap::sample_free(scene, spec.connectivity_samples.max(1), seed) else {
        return false;
    };
    let start = samples.push(scene.initial_state.position());
    let rm = Roadmap::build(scene, samples, CONNECTIVITY_K);
    let dist = rm.distances_from(start);
    rm.samples()
        .goal_indices()
        .iter()
        .all(|&g| dist[g].is_finite())
}
