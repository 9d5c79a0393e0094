//! Covert transmission through an extremely large reconfigurable surface
//! operating in the radiating near field.
//!
//! The crate covers channel synthesis, the warden's radiometer analysis,
//! and the joint optimizer for Alice's hybrid precoder and the surface
//! reflection vector, along with benchmark schemes and experiment plumbing.

pub mod analysis;
pub mod benchmarks;
pub mod channel;
pub mod config;
pub mod detection;
pub mod error;
pub mod experiment;
pub mod hybrid;
pub mod linalg;
pub mod orchestrator;
pub mod ris;
pub mod wmmse;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
