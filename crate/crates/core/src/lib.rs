//! Joint modelling of amplitude variation, phase variation and duration of
//! sampled curves.
//!
//! The crate is `no_std` with `alloc`. File formats, configuration and the
//! command line live in the companion `warpfit` crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod fpca;
pub mod mvlme;
pub mod optim;
pub mod prep;
pub mod quad;
pub mod register;
pub mod rng;
pub mod simplex;
pub mod simulate;

pub use error::{Error, Result};
pub use prep::{RawCurve, SampledCurve};
pub use register::{RegistrationResult, WarpingFunction};
pub use simplex::CompositionVector;
