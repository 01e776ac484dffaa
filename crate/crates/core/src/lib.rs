//! Dual-domain, cross-iteration squeeze-excitation reconstruction of
//! undersampled multi-coil MRI.
//!
//! The crate carries its own small numeric core ([`tensor`], [`autograd`],
//! [`optim`]) so every network here trains and gradient-checks without an
//! external ML framework.

pub mod autograd;
pub mod cascade;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod fourier;
pub mod gradcheck;
mod io;
pub mod metrics;
pub mod mri;
pub mod optim;
pub mod params;
pub mod pgm;
pub mod senet;
pub mod tensor;
pub mod training;

pub use autograd::{Gradients, Tape, Var};
pub use cascade::{CascadeConfig, DcConfig, DdCsenet};
pub use error::{Error, Result};
pub use fourier::{ComplexImage, Domain};
pub use params::{Bound, ParamId, ParamSet};
pub use senet::{SeNet, SeNetConfig};
pub use tensor::Tensor;
