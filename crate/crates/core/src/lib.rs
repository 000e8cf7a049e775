//! Group-sparse signal recovery with HyGEC: expectation-consistent messages
//! over the linear mixing `z = Hx`, sum-product messages over the group
//! indicators, and an EM outer loop that learns the sparse rate.
//!
//! Module map:
//! - [`model`]: domain types and invariant checks.
//! - [`ensembles`]: synthetic instances (signals, matrices, channels).
//! - [`denoisers`]: scalar posterior moments and message algebra.
//! - [`hygec`]: the inner engine.
//! - [`em`]: sparse-rate learning.
//! - [`oracle`]: brute-force references and the NMSE metric.

pub mod denoisers;
pub mod em;
pub mod ensembles;
pub mod error;
pub mod hygec;
pub mod model;
pub mod oracle;
pub mod special;

pub use em::{em_hygec_run, EStep, EmConfig, EmOutput};
pub use ensembles::{generate_instance, InstanceSpec, MatrixKind, MatrixSpec};
pub use error::{Error, Result};
pub use hygec::{hygec_run, HygecConfig, HygecOutput, PzInit};
pub use model::{
    Channel, ChannelKind, GecState, GroupStructure, Observations, ProblemInstance, RecoveryReport, SpikeSlabPrior,
    Termination,
};
