//! Kinematic car (bicycle) model.
//!
//! State `(x, y, theta, psi, v)` evolves as
//! `x' = v cos(theta) cos(psi)`, `y' = v sin(theta) cos(psi)`,
//! `theta' = v sin(psi) / L`, `v' = acc`, `psi' = steer_rate`.
//! One `simulate` call advances a single RK4 step of length `dt` and then
//! clamps speed and steering into their admissible ranges.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{normalize_angle, Point2, Polygon, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("trajectory has {states} states but {actions} actions")]
    LengthMismatch { states: usize, actions: usize },
    #[error("trajectory step {step} does not replay (component error {error:e})")]
    ReplayMismatch { step: usize, error: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub psi: f64,
    pub v: f64,
}

impl State {
    pub fn new(x: f64, y: f64, theta: f64, psi: f64, v: f64) -> Self {
        Self { x, y, theta, psi, v }
    }

    /// State at rest at `p` with zero heading and steering.
    pub fn at_rest(p: Point2) -> Self {
        Self { x: p.x, y: p.y, ..Self::default() }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn pose(&self) -> Pose {
        Pose { position: self.position(), heading: self.theta }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.x, self.y, self.theta, self.psi, self.v]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    /// Largest per-component difference, with heading compared modulo 2*pi.
    pub fn max_abs_diff(&self, other: &State) -> f64 {
        let d_theta = normalize_angle(self.theta - other.theta).abs();
        [
            (self.x - other.x).abs(),
            (self.y - other.y).abs(),
            d_theta,
            (self.psi - other.psi).abs(),
            (self.v - other.v).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub acc: f64,
    pub steer_rate: f64,
}

impl Action {
    pub fn new(acc: f64, steer_rate: f64) -> Self {
        Self { acc, steer_rate }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlLimits {
    pub v_max: f64,
    pub psi_max: f64,
    pub acc_max: f64,
    pub steer_rate_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self { v_max: 3.0, psi_max: 0.7, acc_max: 2.0, steer_rate_max: 2.0 }
    }
}

/// Proportional steer-to-point controller settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub k_steer: f64,
    pub k_speed: f64,
    pub v_cruise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    /// Body-frame footprint; the reference point (rear axle center) is the origin.
    pub shape: Polygon,
    pub wheelbase: f64,
    pub dt: f64,
    pub limits: ControlLimits,
    pub gains: ControllerGains,
}

impl Default for RobotModel {
    fn default() -> Self {
        let limits = ControlLimits::default();
        Self {
            shape: Self::rectangle_shape(2.0, 1.0),
            wheelbase: 2.0,
            dt: 0.1,
            limits,
            gains: ControllerGains { k_steer: 2.0, k_speed: 1.0, v_cruise: limits.v_max / 2.0 },
        }
    }
}

impl RobotModel {
    /// `length x width` rectangle extending forward from the rear axle.
    pub fn rectangle_shape(length: f64, width: f64) -> Polygon {
        Polygon::rectangle(Point2::new(0.0, -width / 2.0), Point2::new(length, width / 2.0))
            .expect("positive rectangle dimensions")
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let l = &self.limits;
        let checks = [
            (self.wheelbase, "wheelbase"),
            (self.dt, "dt"),
            (l.v_max, "v_max"),
            (l.psi_max, "psi_max"),
            (l.acc_max, "acc_max"),
            (l.steer_rate_max, "steer_rate_max"),
            (self.gains.k_steer, "k_steer"),
            (self.gains.k_speed, "k_speed"),
        ];
        for (value, name) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(DynamicsError::InvalidModel(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.gains.v_cruise > 0.0 && self.gains.v_cruise <= l.v_max) {
            return Err(DynamicsError::InvalidModel(format!(
                "v_cruise must lie in (0, v_max], got {}",
                self.gains.v_cruise
            )));
        }
        if l.psi_max >= std::f64::consts::FRAC_PI_2 {
            return Err(DynamicsError::InvalidModel("psi_max must be below pi/2".into()));
        }
        Ok(())
    }

    /// Smaller side of the footprint's bounding box.
    pub fn min_body_dimension(&self) -> f64 {
        let bb = self.shape.bounding_box();
        bb.width().min(bb.height())
    }

    /// Largest distance from the reference point to a footprint vertex.
    pub fn reach(&self) -> f64 {
        self.shape.vertices().iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn clamp_action(&self, a: Action) -> Action {
        let l = &self.limits;
        Action {
            acc: a.acc.clamp(-l.acc_max, l.acc_max),
            steer_rate: a.steer_rate.clamp(-l.steer_rate_max, l.steer_rate_max),
        }
    }

    pub fn action_admissible(&self, a: &Action) -> bool {
        a.acc.abs() <= self.limits.acc_max && a.steer_rate.abs() <= self.limits.steer_rate_max
    }

    pub fn state_admissible(&self, s: &State) -> bool {
        s.is_finite()
            && s.v.abs() <= self.limits.v_max
            && s.psi.abs() <= self.limits.psi_max
            && (-std::f64::consts::PI..std::f64::consts::PI).contains(&s.theta)
    }
}

fn derivative(s: [f64; 5], a: &Action, wheelbase: f64) -> [f64; 5] {
    let [_, _, theta, psi, v] = s;
    let (sin_t, cos_t) = theta.sin_cos();
    let (sin_p, cos_p) = psi.sin_cos();
    [v * cos_t * cos_p, v * sin_t * cos_p, v * sin_p / wheelbase, a.steer_rate, a.acc]
}

fn axpy(s: [f64; 5], k: [f64; 5], h: f64) -> [f64; 5] {
    std::array::from_fn(|i| s[i] + h * k[i])
}

/// One RK4 step of length `model.dt`, then clamping and heading wrap.
pub fn simulate(s: &State, a: &Action, model: &RobotModel) -> State {
    let h = model.dt;
    let y = s.to_array();
    let k1 = derivative(y, a, model.wheelbase);
    let k2 = derivative(axpy(y, k1, h / 2.0), a, model.wheelbase);
    let k3 = derivative(axpy(y, k2, h / 2.0), a, model.wheelbase);
    let k4 = derivative(axpy(y, k3, h), a, model.wheelbase);
    let next: [f64; 5] = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    let mut out = State::from_array(next);
    let l = &model.limits;
    out.v = out.v.clamp(-l.v_max, l.v_max);
    out.psi = out.psi.clamp(-l.psi_max, l.psi_max);
    out.theta = normalize_angle(out.theta);
    out
}

/// Time-indexed state sequence with the actions that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn single(s: State) -> Self {
        Self { states: vec![s], actions: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Arc length of the position path.
    pub fn distance(&self) -> f64 {
        self.states.windows(2).map(|w| w[0].position().distance(w[1].position())).sum()
    }

    /// Checks the length invariant and that every state is the simulation of
    /// its predecessor within `tol`.
    pub fn check_replay(&self, model: &RobotModel, tol: f64) -> Result<(), DynamicsError> {
        if self.states.len() != self.actions.len() + 1 {
            return Err(DynamicsError::LengthMismatch {
                states: self.states.len(),
                actions: self.actions.len(),
            });
        }
        for (j, a) in self.actions.iter().enumerate() {
            let replayed = simulate(&self.states[j], a, model);
            let error = replayed.max_abs_diff(&self.states[j + 1]);
            if !(error <= tol) {
                return Err(DynamicsError::ReplayMismatch { step: j + 1, error });
            }
        }
        Ok(())
    }
}

pub fn propagate(s0: &State, actions: &[Action], model: &RobotModel) -> Trajectory {
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(*s0);
    for a in actions {
        let next = simulate(states.last().expect("nonempty"), a, model);
        states.push(next);
    }
    Trajectory { states, actions: actions.to_vec() }
}

/// Stateless proportional controller steering `s` toward `target`.
///
/// Steering rate drives `theta + psi` toward the bearing of the target;
/// acceleration tracks the cruise speed. Both outputs are saturated.
pub fn steer_controller(s: &State, target: Point2, model: &RobotModel) -> Action {
    let to_target = target - s.position();
    let desired = to_target.y.atan2(to_target.x);
    let g = &model.gains;
    let heading_error = normalize_angle(desired - s.theta - s.psi);
    model.clamp_action(Action {
        acc: g.k_speed * (g.v_cruise - s.v),
        steer_rate: g.k_steer * heading_error,
    })
}
