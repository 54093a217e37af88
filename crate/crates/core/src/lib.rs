//! Hybrid quantum-planner / spiking-controller multi-agent reinforcement learning.
//!
//! Each agent pairs a small QAOA circuit, which samples an abstract latent plan
//! from an observation-conditioned cost landscape, with a leaky integrate-and-fire
//! spiking Q-network that turns the plan into a motor action. Agents fly in a
//! partially observable voxel world with no-fly zones, and a shield replaces
//! unsafe proposals with hover while counting them as violations.
//!
//! Module map:
//!
//! * [`quantum`]: dense statevector simulator (gates, cost phases, sampling).
//! * [`qaoa`]: cost encoding, ansatz, parameter-shift training, error mitigation.
//! * [`snn`]: LIF dynamics, rate coding, spiking Q-network with surrogate BPTT.
//! * [`env`]: the 3D grid world, observations, safety predicates, coverage.
//! * [`marl`]: hybrid action selection, replay, the CTDE training loop, checkpoints.
//! * [`report`]: run configuration, metric exports, mutual information, SVG plots.

pub mod env;
pub mod error;
pub mod marl;
pub mod qaoa;
pub mod quantum;
pub mod report;
pub mod rng;
pub mod snn;

pub use env::{Action, Observation, SafetyVerdict, ViolationReason, WorldConfig, WorldState};
pub use error::{Error, Result};
pub use marl::{ExperimentConfig, TrainConfig, TrainRecord, Trainer};
pub use qaoa::{LatentPlan, PlanKind, PriorPolicy, QaoaPolicy};
pub use quantum::{CostTable, Gate, StateVector};
pub use report::RunConfig;
pub use snn::{LifConfig, SpikingQNet};
