//! Precise large deviation laboratory for regularly varying time series.
//!
//! The crate is `no_std` with `alloc`. It holds the samplers, the stationary
//! model zoo, the limit constants and validity regions, the ratio and
//! condition estimators, and the regeneration machinery. Replication work is
//! expressed through [`exec::Executor`] so that a host crate can supply a
//! thread pool; results never depend on how blocks are scheduled.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod exec;
pub mod ldp;
pub mod math;
pub mod models;
pub mod noise;
pub mod regen;
pub mod rng;
pub mod rv;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
pub use exec::{Executor, Serial};
pub use models::{ALaw, ModelSpec, SamplePath, Variant};
pub use noise::NoiseLaw;
pub use rng::StreamKey;
pub use rv::TailSpec;
