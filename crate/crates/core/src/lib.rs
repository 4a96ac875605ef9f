//! Schrödinger map flows from periodic source tori into embedded almost Hermitian targets.
//!
//! All numerical types are generic over [`Real`] (`f32` or `f64`); the aliases below fix `f64`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flow;
pub mod gauge;
pub mod pullback;
pub mod scalar;
pub mod scenario;
pub mod source;
pub mod target;

pub use error::{GeoflowError, Result};
pub use flow::{evolve, FlowConfig, Scheme, TrajectoryRecord};
pub use pullback::{MapState, Section};
pub use scalar::Real;
pub use scenario::{build_initial_data, Scenario};
pub use source::{GridFunction, SourceMetric};
pub use target::{EmbeddedTarget, TargetKind};

pub type Metric = SourceMetric<f64>;
pub type Target = EmbeddedTarget<f64>;
pub type State = MapState<f64>;
pub type Field = Section<f64>;
pub type Config = FlowConfig<f64>;
pub type Trajectory = TrajectoryRecord<f64>;
