//! Jump-driven semilinear evolution equations on a truncated spectral basis:
//! simulation, Malliavin-type derivative estimators, change of measure and
//! long-time convergence diagnostics.

pub mod config;
pub mod convergence;
pub mod drift;
pub mod engine;
pub mod error;
pub mod girsanov;
pub mod harness;
pub mod malliavin;
pub mod noise;
pub mod report;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod system;

pub use config::ExperimentConfig;
pub use drift::DriftField;
pub use error::{Error, Result};
pub use harness::{Command, Harness};
pub use malliavin::{PerturbationField, TestFunction};
pub use noise::{JumpDensity, JumpPath, SecondaryNoise};
pub use report::{Report, Verdict};
pub use spectral::{CmSign, HVector, SpectralModel};
pub use stats::{EstimatorResult, McRunner};
pub use system::System;
