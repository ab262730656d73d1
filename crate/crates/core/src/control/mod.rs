//! Sensor control: the objective, the descent engine and the planners that
//! connect them to filter densities.

pub mod descent;
pub mod objective;
pub mod planner;
