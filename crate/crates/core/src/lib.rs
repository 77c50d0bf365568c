//! Operating-region computation for radial distribution feeders.
//!
//! A feeder ([`network::FeederNetwork`]) yields branch-flow sensitivities
//! ([`sensitivity::SensitivityMatrices`]). Per-node real-power intervals are
//! found by log-barrier programs ([`region`]) against fixed worst-case losses,
//! and checked against the nonlinear DistFlow equations ([`powerflow`],
//! [`validate`]).

pub mod barrier;
pub mod capability;
pub mod fixtures;
pub mod io;
pub mod network;
pub mod pipeline;
pub mod powerflow;
pub mod region;
pub mod sensitivity;
pub mod validate;

pub use nalgebra;

pub use capability::{CapabilitySpec, NodeCapability, ReactiveCase};
pub use io::{parse_feeder, CaseTag, Feeder};
pub use network::FeederNetwork;
pub use pipeline::{run_pipeline, ModelSelect, PipelineOptions, PipelineResult};
pub use region::{compare_regions, OperatingRegion};
pub use sensitivity::SensitivityMatrices;
