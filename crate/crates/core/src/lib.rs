//! Performance model of speculative decoding embedded in a weight-offloading
//! inference pipeline.
//!
//! The crate is `no_std` (with `alloc`) and free of IO. It provides
//!
//! * [`specdec`]: the step-length distribution of draft-then-verify decoding,
//! * [`costmodel`]: closed-form latency, memory and throughput of a policy,
//! * [`placement`]: GPU/CPU/disk tier assignment and the prefetch schedule,
//! * [`simulator`]: a discrete-event simulation of the dual-batch pipeline,
//! * [`planner`]: policy grid search, calibration against measurements and
//!   ablation variants.
//!
//! File formats and the command-line tool live in the `specpipe` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod costmodel;
pub mod domain;
pub mod placement;
pub mod planner;
pub mod presets;
pub mod simulator;
pub mod specdec;

pub use costmodel::{evaluate, CostBreakdown, EvalOptions};
pub use domain::{HardwareProfile, ModelSpec, Policy, ValidationError, Workload};
pub use placement::{assign_tiers, prefetch_schedule, Phase, PlacementOptions, PlacementPlan, Tier};
pub use planner::{search, RankedPolicies, SearchSpace};
pub use presets::{preset, preset_by_name, Preset, PresetName};
pub use simulator::{simulate, SimEvent, SimResult};
pub use specdec::AcceptanceModel;
