//! Semantic belief behavior graphs for autonomous inspection.
//!
//! The math core ([`geometry`], [`sensing`], [`filter`], entropy and the
//! graph predicates) is generic over the scalar type; the planners, the
//! executor and the simulator work in `f64`. The aliases below name the
//! `f64` instantiations.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod behaviors;
pub mod experiment;
pub mod filter;
pub mod geometry;
pub mod graph;
pub mod scalar;
pub mod sensing;
pub mod session;
pub mod sim;
pub mod types;

pub use graph::executor::{replay, run, Agent, Method, RunError, RunOutput};
pub use sim::scenario::{ScenarioError, WorldScenario};
pub use sim::trace::{RunSummary, Trace};
pub use sim::Simulation;

pub type Vec2 = geometry::Vec2<f64>;
pub type Cov2 = geometry::Cov2<f64>;
pub type RobotState = types::RobotState<f64>;
pub type ObjectBelief = types::ObjectBelief<f64>;
pub type ObjectTruth = types::ObjectTruth<f64>;
pub type Observation = types::Observation<f64>;
pub type GeoSemanticBelief = types::GeoSemanticBelief<f64>;
pub type ControlInput = types::ControlInput<f64>;
pub type SensorModel = sensing::SensorModel<f64>;
pub type FilterConfig = filter::FilterConfig<f64>;
