//! Batched log-replay driving simulation.
//!
//! The numeric core is generic over the scalar type `R: Real` (`f32` or
//! `f64`); aliases for both precisions are provided below.

pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod num;
pub mod roads;
pub mod scenario;
pub mod simcore;

pub use error::{Error, Result};
pub use num::Real;

pub type EgoState32 = dynamics::EgoState<f32>;
pub type EgoState64 = dynamics::EgoState<f64>;
pub type Env32 = simcore::Env<f32>;
pub type Env64 = simcore::Env<f64>;
pub type SimState32 = simcore::SimStateBatch<f32>;
pub type SimState64 = simcore::SimStateBatch<f64>;
pub type Observations32 = simcore::ObservationBatch<f32>;
pub type Observations64 = simcore::ObservationBatch<f64>;
pub type Episode32 = simcore::EpisodeBatch<f32>;
pub type Episode64 = simcore::EpisodeBatch<f64>;
pub type RouteFrame32 = roads::RouteFrame<f32>;
pub type RouteFrame64 = roads::RouteFrame<f64>;
