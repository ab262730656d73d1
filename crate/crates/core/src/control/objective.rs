//! Existence-divergence objective, dropped-target penalty and the two
//! collision-avoidance constraints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmb::LmbDensity;
use crate::sensor::SensorState;

/// Probabilities are clamped into `[LOG_CLAMP, 1 - LOG_CLAMP]` before logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// How the void-probability constraint is compared with its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoidConstraint {
    /// Feasible when psi < threshold.
    #[default]
    AsWritten,
    /// Feasible when psi > threshold, i.e. the exclusion disks are likely empty.
    Flipped,
}

impl VoidConstraint {
    pub fn feasible(self, psi: f64, threshold: f64) -> bool {
        match self {
            VoidConstraint::AsWritten => psi < threshold,
            VoidConstraint::Flipped => psi > threshold,
        }
    }
}

/// Log term charged for a label in the prediction but not in the
/// hypothesized posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DroppedTerm {
    /// `-ln r2`.
    #[default]
    AsWritten,
    /// `-ln(1 - r2)`, the Bernoulli KLD with `r1 = 0`.
    Exact,
}

impl DroppedTerm {
    pub fn value(self, r2: f64) -> f64 {
        match self {
            DroppedTerm::AsWritten => -clamp(r2).ln(),
            DroppedTerm::Exact => -(1.0 - clamp(r2)).ln(),
        }
    }

    /// KLD term plus penalty of one dropped label.
    pub fn net(self, r2: f64, lambda: f64) -> f64 {
        (1.0 - lambda) * self.value(r2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    pub epsilon: f64,
    pub lambda: f64,
    pub psi_threshold: f64,
    /// Minimum sensor separation, m.
    pub eta_threshold: f64,
    /// Radius of the exclusion disk around each sensor, m.
    pub exclusion_radius: f64,
    #[serde(default)]
    pub void_constraint: VoidConstraint,
    #[serde(default)]
    pub dropped_term: DroppedTerm,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            lambda: 100.0,
            psi_threshold: 0.8,
            eta_threshold: 50.0,
            exclusion_radius: 20.0,
            void_constraint: VoidConstraint::AsWritten,
            dropped_term: DroppedTerm::AsWritten,
        }
    }
}

impl ObjectiveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidArgument("epsilon must lie in (0, 0.5)".into()));
        }
        if !(self.lambda >= 1.0) {
            return Err(Error::InvalidArgument("lambda must be at least 1".into()));
        }
        if !(self.exclusion_radius > 0.0) {
            return Err(Error::InvalidArgument("exclusion radius must be positive".into()));
        }
        Ok(())
    }

    /// Joint feasibility of both constraints.
    pub fn feasible(&self, psi: f64, eta: f64) -> bool {
        self.void_constraint.feasible(psi, self.psi_threshold) && eta > self.eta_threshold
    }
}

fn clamp(r: f64) -> f64 {
    r.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)
}

/// KLD between two Bernoulli existence distributions.
pub fn bernoulli_kld(r1: f64, r2: f64) -> f64 {
    let (a, b) = (clamp(r1), clamp(r2));
    a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln()
}

/// Contribution of a label present only in the first density.
pub fn new_label_term(r1: f64, epsilon: f64) -> f64 {
    bernoulli_kld(r1, epsilon)
}

/// Contribution of a label present only in the second density.
pub fn dropped_label_term(r2: f64) -> f64 {
    -clamp(r2).ln()
}

/// Penalty for one dropped label.
pub fn dropped_label_penalty(r2: f64, lambda: f64) -> f64 {
    -lambda * clamp(r2).ln()
}

pub fn kld_existence(pi1: &LmbDensity, pi2: &LmbDensity, epsilon: f64) -> f64 {
    let mut total = 0.0;
    for c in &pi1.components {
        total += match pi2.get(c.label) {
            Some(other) => bernoulli_kld(c.existence, other.existence),
            None => new_label_term(c.existence, epsilon),
        };
    }
    for c in &pi2.components {
        if !pi1.contains(c.label) {
            total += dropped_label_term(c.existence);
        }
    }
    total
}

pub fn drop_penalty(pi1: &LmbDensity, pi2: &LmbDensity, lambda: f64) -> f64 {
    pi2.components
        .iter()
        .filter(|c| !pi1.contains(c.label))
        .map(|c| dropped_label_penalty(c.existence, lambda))
        .sum()
}

/// Divergence of `pi1` (hypothesized posterior) from `pi2` (prediction) minus
/// the dropped-target penalty.
pub fn objective(pi1: &LmbDensity, pi2: &LmbDensity, params: &ObjectiveParams) -> f64 {
    match params.dropped_term {
        DroppedTerm::AsWritten => kld_existence(pi1, pi2, params.epsilon) - drop_penalty(pi1, pi2, params.lambda),
        term => {
            let mut total = 0.0;
            for c in &pi1.components {
                total += match pi2.get(c.label) {
                    Some(other) => bernoulli_kld(c.existence, other.existence),
                    None => new_label_term(c.existence, params.epsilon),
                };
            }
            for c in pi2.components.iter().filter(|c| !pi1.contains(c.label)) {
                total += term.net(c.existence, params.lambda);
            }
            total
        }
    }
}

/// Probability that the disk of radius `rho_eps` around the sensor holds no
/// target.
pub fn void_probability(density: &LmbDensity, sensor_after_action: &SensorState, rho_eps: f64) -> f64 {
    let center = sensor_after_action.position;
    density
        .components
        .iter()
        .map(|c| {
            let inside: f64 = c
                .particles
                .iter()
                .filter(|p| p.state.position().distance(center) <= rho_eps)
                .map(|p| p.weight)
                .sum();
            1.0 - c.existence * inside
        })
        .product()
}

/// Largest void probability over the sensors' exclusion disks.
pub fn sensor_target_constraint(density: &LmbDensity, sensors_after: &[SensorState], rho_eps: f64) -> f64 {
    if sensors_after.is_empty() {
        return 1.0;
    }
    sensors_after
        .iter()
        .map(|s| void_probability(density, s, rho_eps))
        .fold(0.0, f64::max)
}

/// Smallest pairwise sensor distance; infinite for fewer than two sensors.
pub fn sensor_sensor_constraint(sensors_after: &[SensorState]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in sensors_after.iter().enumerate() {
        for b in &sensors_after[i + 1..] {
            best = best.min(a.position.distance(b.position));
        }
    }
    best
}
