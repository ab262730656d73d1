//! Scenarios, the simulation loop, Monte Carlo driver, metrics and export.

pub mod export;
pub mod monte_carlo;
pub mod ospa;
pub mod pipeline;
pub mod scenario;
