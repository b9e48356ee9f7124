//! Multi-goal kinodynamic motion planning.
//!
//! A motion tree for a car-like robot is expanded toward goal regions in an
//! order suggested by open TSP tours. Tours are computed per group of tree
//! nodes (nearest roadmap sample, reached goals) over cost matrices that come
//! from Euclidean distance, roadmap shortest paths, or gradient-boosted
//! regressors trained on single-goal planning runs.

pub mod bench;
pub mod costmodel;
pub mod dynamics;
pub mod geom;
pub mod planner;
pub mod roadmap;
pub mod scene;
pub mod stats;
pub mod tsp;

pub use dynamics::{Action, RobotModel, State, Trajectory};
pub use geom::{Point2, Polygon, Pose};
pub use scene::{GoalRegion, Scene};
