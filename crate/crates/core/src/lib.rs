//! Multi-target tracking with distributed multi-sensor control.
//!
//! Each sensor runs a particle LMB filter. Posteriors are combined with
//! adaptive complementary fusion, and sensors choose actions by coordinate
//! descent on an existence-divergence objective, either independently (I-SC),
//! within their communication neighborhood (DCD-SC) or across the whole
//! network through flooding (FDCD-SC).

pub mod error;
pub mod exec;
pub mod filter;
pub mod control;
pub mod fusion;
pub mod geometry;
pub mod lmb;
pub mod network;
pub mod sensor;
pub mod sim;

pub use error::{Error, Result};
