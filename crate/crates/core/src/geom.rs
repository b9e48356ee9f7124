//! Planar geometry: points, polygons, rigid placement and the collision /
//! goal-containment predicates used by every other module.
//!
//! Boundary contact is treated as overlap everywhere: a point on a polygon
//! edge is inside, two polygons sharing a vertex collide.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::State;
use crate::scene::{GoalRegion, Scene};

/// Absolute slack used by the orientation and on-segment tests.
const EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has a non-finite coordinate")]
    NonFinite,
    #[error("polygon vertices must be counter-clockwise with positive area (signed area {0})")]
    NotCounterClockwise(f64),
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn distance_sq(self, other: Point2) -> f64 {
        let d = self - other;
        d.x * d.x + d.y * d.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn rotate(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(angle: f64) -> f64 {
    if (-PI..PI).contains(&angle) {
        return angle;
    }
    let two_pi = 2.0 * PI;
    let mut a = (angle + PI).rem_euclid(two_pi) - PI;
    // rem_euclid can return exactly two_pi after rounding
    if a >= PI {
        a -= two_pi;
    }
    a
}

/// Axis-aligned rectangle, used for world bounds and quick rejection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point2,
    pub max: Point2,
}

impl Aabb {
    pub fn new(min: Point2, max: Point2) -> Self {
        Self { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point2>) -> Self {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    /// Closed containment.
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Closed intersection test.
    pub fn intersects(&self, other: &Aabb) -> bool {
        self.min.x <= other.max.x
            && other.min.x <= self.max.x
            && self.min.y <= other.max.y
            && other.min.y <= self.max.y
    }

    pub fn clamp(&self, p: Point2) -> Point2 {
        Point2::new(p.x.clamp(self.min.x, self.max.x), p.y.clamp(self.min.y, self.max.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Point2,
    pub heading: f64,
}

impl Pose {
    pub fn new(position: Point2, heading: f64) -> Self {
        Self { position, heading: normalize_angle(heading) }
    }
}

/// Simple polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct Polygon {
    vertices: Vec<Point2>,
}

impl TryFrom<Vec<Point2>> for Polygon {
    type Error = GeomError;
    fn try_from(vertices: Vec<Point2>) -> Result<Self, GeomError> {
        Polygon::new(vertices)
    }
}

impl From<Polygon> for Vec<Point2> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

impl Polygon {
    /// Validates and wraps a vertex list.
    pub fn new(vertices: Vec<Point2>) -> Result<Self, GeomError> {
        if vertices.len() < 3 {
            return Err(GeomError::TooFewVertices(vertices.len()));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        let area = signed_area(&vertices);
        if !(area > 0.0) {
            return Err(GeomError::NotCounterClockwise(area));
        }
        let n = vertices.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // adjacent edges share a vertex by construction
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(GeomError::SelfIntersecting(i, j));
                }
            }
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle `[min, max]`.
    pub fn rectangle(min: Point2, max: Point2) -> Result<Self, GeomError> {
        Polygon::new(vec![min, Point2::new(max.x, min.y), max, Point2::new(min.x, max.y)])
    }

    /// Axis-aligned square around `center`.
    pub fn square(center: Point2, half_side: f64) -> Result<Self, GeomError> {
        let h = Point2::new(half_side, half_side);
        Polygon::rectangle(center - h, center + h)
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn centroid(&self) -> Point2 {
        let a = self.area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let w = p.cross(q);
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        Point2::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    pub fn bounding_box(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            (b - a).cross(c - b) >= -EPS
        })
    }
}

fn signed_area(vertices: &[Point2]) -> f64 {
    let n = vertices.len();
    0.5 * (0..n).map(|i| vertices[i].cross(vertices[(i + 1) % n])).sum::<f64>()
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn sign(v: f64) -> i8 {
    if v > EPS {
        1
    } else if v < -EPS {
        -1
    } else {
        0
    }
}

/// `p` lies on the closed segment `[a, b]`.
pub fn point_on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    if sign(orient(a, b, p)) != 0 {
        return false;
    }
    p.x >= a.x.min(b.x) - EPS
        && p.x <= a.x.max(b.x) + EPS
        && p.y >= a.y.min(b.y) - EPS
        && p.y <= a.y.max(b.y) + EPS
}

/// Closed segments `[a, b]` and `[c, d]` share at least one point.
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = sign(orient(c, d, a));
    let d2 = sign(orient(c, d, b));
    let d3 = sign(orient(a, b, c));
    let d4 = sign(orient(a, b, d));
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && point_on_segment(a, c, d))
        || (d2 == 0 && point_on_segment(b, c, d))
        || (d3 == 0 && point_on_segment(c, a, b))
        || (d4 == 0 && point_on_segment(d, a, b))
}

/// Closed point-in-polygon test (crossing number plus explicit boundary check).
pub fn point_in_polygon(p: Point2, poly: &Polygon) -> bool {
    let mut inside = false;
    for (a, b) in poly.edges() {
        if point_on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Interiors intersect or boundaries touch.
pub fn polygons_overlap(a: &Polygon, b: &Polygon) -> bool {
    if !a.bounding_box().intersects(&b.bounding_box()) {
        return false;
    }
    for (p, q) in a.edges() {
        for (r, s) in b.edges() {
            if segments_intersect(p, q, r, s) {
                return true;
            }
        }
    }
    point_in_polygon(a.vertices[0], b) || point_in_polygon(b.vertices[0], a)
}

/// Closed segment touches or crosses the polygon.
pub fn segment_hits_polygon(a: Point2, b: Point2, poly: &Polygon) -> bool {
    let bb = Aabb::from_points([a, b].iter());
    if !bb.intersects(&poly.bounding_box()) {
        return false;
    }
    poly.edges().any(|(c, d)| segments_intersect(a, b, c, d)) || point_in_polygon(a, poly)
}

/// Euclidean distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len_sq = ab.dot(ab);
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// Distance between two polygons; zero when they overlap.
pub fn polygon_distance(a: &Polygon, b: &Polygon) -> f64 {
    if polygons_overlap(a, b) {
        return 0.0;
    }
    let one_way = |p: &Polygon, q: &Polygon| {
        p.vertices
            .iter()
            .flat_map(|v| q.edges().map(move |(c, d)| point_segment_distance(*v, c, d)))
            .fold(f64::INFINITY, f64::min)
    };
    one_way(a, b).min(one_way(b, a))
}

/// Rotates a body-frame shape by the pose heading, then translates it.
pub fn place(shape: &Polygon, pose: Pose) -> Polygon {
    let (s, c) = pose.heading.sin_cos();
    let vertices = shape
        .vertices
        .iter()
        .map(|v| Point2::new(c * v.x - s * v.y + pose.position.x, s * v.x + c * v.y + pose.position.y))
        .collect();
    // rigid motions preserve orientation and simplicity
    Polygon { vertices }
}

/// Robot footprint overlaps an obstacle or leaves the world.
pub fn state_in_collision(s: &State, robot_shape: &Polygon, scene: &Scene) -> bool {
    let placed = place(robot_shape, s.pose());
    if placed.vertices.iter().any(|v| !scene.world.contains(*v)) {
        return true;
    }
    scene.obstacles.iter().any(|o| polygons_overlap(&placed, o))
}

/// Only the position of the state matters.
pub fn goal_reached(s: &State, g: &GoalRegion) -> bool {
    (s.x - g.center.x).abs() <= g.half_side && (s.y - g.center.y).abs() <= g.half_side
}
