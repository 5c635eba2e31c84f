//! Simulation and analysis toolkit for passive time-bin reference-frame
//! independent QKD with a polarization / time-bin entangled source.
//!
//! Layers, bottom up: [`qstate`] (closed-form state model), [`stats`]
//! (estimators), [`keyrate`] (security bounds), [`montecarlo`] (phase-drift
//! smearing), [`photonics`] (tag-stream simulator), [`tags`] (coincidence
//! engine), [`pipeline`] (streaming analysis), plus file and config I/O.

// `!(x > 0.0)` style checks are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod keyrate;
pub mod montecarlo;
pub mod photonics;
pub mod pipeline;
pub mod qstate;
pub mod rng;
pub mod stats;
pub mod tagfile;
pub mod tags;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use keyrate::{ChannelEstimate, KeyResult, SecurityParams};
pub use montecarlo::{DriftScenario, SmearingResult};
pub use photonics::{ChannelModel, DetectorLayout, PhaseTrajectory, SourceModel};
pub use qstate::{AliceBasis, BasisPair, BobBasis, HybridPairState, Outcome, OutcomeProbs};
pub use stats::{BasisPairCounts, BlockEstimate, Estimate, FourfoldCounts};
pub use tags::{Coincidence, CoincidenceConfig, TimeTag};
