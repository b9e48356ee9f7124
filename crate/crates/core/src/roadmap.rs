//! Free-space samples, nearest-sample lookup and a PRM-style roadmap with
//! Dijkstra shortest paths.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::Point2;
use crate::scene::Scene;

/// Draw budget per requested sample before giving up.
const DRAWS_PER_SAMPLE: usize = 1000;

pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoadmapError {
    #[error("free space too sparse: {found} of {requested} samples after {draws} draws")]
    SamplingFailed { requested: usize, found: usize, draws: usize },
}

/// Sample points; goal centers are appended after the random points.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<Point2>,
    goal_indices: Vec<usize>,
}

impl SampleSet {
    pub fn new(points: Vec<Point2>, goal_indices: Vec<usize>) -> Self {
        assert!(goal_indices.iter().all(|&i| i < points.len()));
        Self { points, goal_indices }
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Goal id -> sample index of that goal's center.
    pub fn goal_indices(&self) -> &[usize] {
        &self.goal_indices
    }

    pub fn push(&mut self, p: Point2) -> usize {
        self.points.push(p);
        self.points.len() - 1
    }

    /// Euclidean-nearest sample; ties go to the lowest index.
    pub fn nearest(&self, p: Point2) -> usize {
        nearest(&self.points, p)
    }
}

pub fn nearest(points: &[Point2], p: Point2) -> usize {
    assert!(!points.is_empty(), "nearest on an empty sample set");
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, q) in points.iter().enumerate() {
        let d = q.distance_sq(p);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// `count` rejection-sampled free points followed by every goal center.
pub fn sample_free(scene: &Scene, count: usize, seed: u64) -> Result<SampleSet, RoadmapError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = scene.world;
    let budget = count.saturating_mul(DRAWS_PER_SAMPLE).max(DRAWS_PER_SAMPLE);
    let mut points = Vec::with_capacity(count + scene.goals.len());
    let mut draws = 0;
    while points.len() < count {
        if draws == budget {
            return Err(RoadmapError::SamplingFailed { requested: count, found: points.len(), draws });
        }
        draws += 1;
        let p = Point2::new(rng.gen_range(w.min.x..=w.max.x), rng.gen_range(w.min.y..=w.max.y));
        if scene.point_free(p) {
            points.push(p);
        }
    }
    let goal_indices = scene
        .goals
        .iter()
        .map(|g| {
            points.push(g.center);
            points.len() - 1
        })
        .collect();
    Ok(SampleSet { points, goal_indices })
}

/// Undirected graph over a sample set, weighted by Euclidean edge length.
#[derive(Debug, Clone)]
pub struct Roadmap {
    samples: SampleSet,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Roadmap {
    /// Connects every vertex to its `k` nearest neighbours when the joining
    /// segment is collision-free.
    pub fn build(scene: &Scene, samples: SampleSet, k: usize) -> Roadmap {
        let n = samples.len();
        let pts = samples.points();
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n);
        for i in 0..n {
            candidates.clear();
            candidates.extend((0..n).filter(|&j| j != i).map(|j| (pts[i].distance_sq(pts[j]), j)));
            let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            let k = k.min(candidates.len());
            if k == 0 {
                continue;
            }
            if k < candidates.len() {
                candidates.select_nth_unstable_by(k - 1, by_dist);
                candidates.truncate(k);
            }
            for &(_, j) in candidates.iter() {
                if adjacency[i].iter().any(|&(v, _)| v == j) {
                    continue;
                }
                if scene.segment_free(pts[i], pts[j]) {
                    let w = pts[i].distance(pts[j]);
                    adjacency[i].push((j, w));
                    adjacency[j].push((i, w));
                }
            }
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(v, _)| v);
        }
        Roadmap { samples, adjacency }
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Single-source Dijkstra; unreachable vertices get `f64::INFINITY`.
    pub fn distances_from(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.adjacency.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry { dist: 0.0, vertex: source });
        while let Some(Entry { dist: d, vertex: u }) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &self.adjacency[u] {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Entry { dist: nd, vertex: v });
                }
            }
        }
        dist
    }

    /// `None` when the two vertices are in different components.
    pub fn shortest_path_dist(&self, from: usize, to: usize) -> Option<f64> {
        if from == to {
            return Some(0.0);
        }
        let d = self.distances_from(from)[to];
        d.is_finite().then_some(d)
    }
}

/// All-pairs shortest-path distances over a roadmap.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    n: usize,
    dist: Vec<f64>,
}

impl DistanceTable {
    pub fn new(roadmap: &Roadmap) -> Self {
        let n = roadmap.samples().len();
        let mut dist = Vec::with_capacity(n * n);
        for s in 0..n {
            dist.extend(roadmap.distances_from(s));
        }
        DistanceTable { n, dist }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `f64::INFINITY` when unreachable.
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.dist[from * self.n + to]
    }
}

/// Path length between two free-space points routed through their nearest
/// roadmap vertices. When both snap to the same vertex the straight-line
/// distance is used, so `via_roadmap(p, p, ..) == 0`.
pub fn via_roadmap(points: &[Point2], p: Point2, g: Point2, vertex_dist: impl FnOnce(usize, usize) -> f64) -> f64 {
    let np = nearest(points, p);
    let ng = nearest(points, g);
    if np == ng {
        return p.distance(g);
    }
    p.distance(points[np]) + vertex_dist(np, ng) + points[ng].distance(g)
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    dist: f64,
    vertex: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then on vertex index
        other.dist.total_cmp(&self.dist).then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
