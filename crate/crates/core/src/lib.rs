//! Conditional independence testing through learned Gaussian transports.
//!
//! `X` and `Y` are each pushed through a flow-matched conditional transport to
//! latents that are standard Gaussian and independent of `Z`; then
//! `X ⫫ Y | Z` reduces to an unconditional independence test on the latents.

pub mod citest;
pub mod cli;
pub mod data;
pub mod depmeasure;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod nn;
pub mod oracle;
pub mod seeds;
pub mod simlab;

pub use citest::{flowcit, flowcit_with, Direction, TestConfig, TestReport};
pub use data::{DataTriplet, Dims};
pub use depmeasure::MeasureKind;
pub use error::{Error, Result};
pub use flow::{FlowConfig, VelocityField};
pub use linalg::Matrix;
pub use nn::VelocityNet;
