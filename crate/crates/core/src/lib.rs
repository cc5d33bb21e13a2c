//! Discrete-event simulation of computation offloading at the network edge.
//!
//! Users arrive over time and ask to offload a task to one of several
//! cloudlets (co-located access point + edge server). An admission strategy
//! picks each user's decision pair -- the AP to connect through and the
//! server to execute on -- under coverage, connection, and memory
//! constraints, and the shared-resource delay model determines the latency
//! everyone experiences. The priced strategy maximizes the instant social
//! surplus and charges each admission its marginal cost, which makes
//! truthful deadline declaration a weakly dominant strategy; selfish
//! minimum-delay and random selection serve as baselines.
//!
//! Module map:
//! - [`model`]: domain types, topology, join/leave state transitions.
//! - [`latency`]: the transmission / transfer / computation delay model.
//! - [`mechanism`]: objectives, marginal-cost pricing, admission strategies,
//!   and the truthfulness probe.
//! - [`simulator`]: scenario synthesis, the seeded event loop, and metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the `f64` instantiations the simulator and CLI work with.

pub mod latency;
pub mod mechanism;
pub mod model;
pub mod scalar;
pub mod simulator;

pub use scalar::Scalar;

pub type Point64 = model::Point<f64>;
pub type Cloudlet64 = model::Cloudlet<f64>;
pub type Topology64 = model::Topology<f64>;
pub type TaskRequest64 = model::TaskRequest<f64>;
pub type SystemState64 = model::SystemState<f64>;
pub type DelayBreakdown64 = latency::DelayBreakdown<f64>;
pub type Rates64 = mechanism::Rates<f64>;
pub type AdmissionOutcome64 = mechanism::AdmissionOutcome<f64>;
pub type Scenario64 = simulator::Scenario<f64>;
pub type EventLog64 = simulator::EventLog<f64>;
pub type RunMetrics64 = simulator::RunMetrics<f64>;
