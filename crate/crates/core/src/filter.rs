//! Per-sensor sequential Monte Carlo LMB filter.
//!
//! The update marginalizes joint measurement-to-track association inside
//! clusters of tracks that share gated measurements. Small clusters are
//! enumerated exactly; large ones fall back to loopy belief propagation over
//! the same association weights. The resulting marginals give each track's
//! posterior existence and particle reweighting. Particles are reweighted in
//! place and never resampled here; callers resample when they want a fresh
//! cloud.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, State};
use crate::lmb::{BernoulliComponent, DensityRole, Label, LabeledParticle, LmbDensity};
use crate::sensor::{
    detection_probability, propagate_target, relative_range_bearing, FovModel, MotionModel,
    SensorState,
};

const EXACT_HYPOTHESIS_LIMIT: usize = 20_000;
const LBP_ITERATIONS: usize = 200;
const LBP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Existence assigned to a freshly born track.
    pub birth_existence: f64,
    /// Position spread of birth particles, m.
    pub birth_particle_std: f64,
    /// Velocity spread of birth particles, m/s.
    pub birth_velocity_std: f64,
    /// Minimum gating radius around a track's mean position, m.
    pub association_gate: f64,
    /// Clutter intensity, false alarms per m^2.
    pub clutter_intensity: f64,
    pub particle_count: usize,
    /// Per-axis measurement noise, m.
    pub measurement_std: f64,
    pub existence_floor: f64,
    pub max_components: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            birth_existence: 0.1,
            birth_particle_std: 10.0,
            birth_velocity_std: 8.0,
            association_gate: 30.0,
            clutter_intensity: 2.5e-5,
            particle_count: 500,
            measurement_std: 5.0,
            existence_floor: 0.01,
            max_components: 100,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.birth_existence,
            self.birth_particle_std,
            self.association_gate,
            self.clutter_intensity,
            self.measurement_std,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.particle_count == 0 {
            return Err(Error::InvalidArgument("filter parameters must be positive".into()));
        }
        if self.birth_existence >= 1.0 {
            return Err(Error::InvalidArgument("birth existence must be below 1".into()));
        }
        Ok(())
    }
}

/// Measurements that gated to no existing track during an update; these seed
/// births on the next scan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    pub unassociated: Vec<usize>,
}

/// Propagates every track one step, scales existence by the survival
/// probability and appends `births`, which must already describe the new time.
pub fn predict<R: Rng + ?Sized>(
    prior: &LmbDensity,
    motion: &MotionModel,
    births: &[BernoulliComponent],
    rng: &mut R,
) -> Result<LmbDensity> {
    for b in births {
        if prior.contains(b.label) {
            return Err(Error::LabelCollision(b.label));
        }
    }
    let mut components = Vec::with_capacity(prior.len() + births.len());
    for c in &prior.components {
        let particles = c
            .particles
            .iter()
            .map(|p| LabeledParticle::new(propagate_target(motion, &p.state, rng), p.weight))
            .collect();
        components.push(BernoulliComponent::new(
            c.label,
            c.existence * motion.survival_probability,
            particles,
        ));
    }
    components.extend(births.iter().cloned());
    Ok(LmbDensity::new(components, prior.timestamp + 1, DensityRole::Predicted))
}

/// Appends birth components to an already predicted density.
pub fn append_births(predicted: &mut LmbDensity, births: Vec<BernoulliComponent>) -> Result<()> {
    for b in &births {
        if predicted.contains(b.label) {
            return Err(Error::LabelCollision(b.label));
        }
    }
    predicted.components.extend(births);
    Ok(())
}

/// A new track seeded at a position observed one period ago. Particles are
/// drawn around that position with zero-mean velocity spread and then
/// propagated to the current time.
pub fn birth_component<R: Rng + ?Sized>(
    label: Label,
    observed_at: Point,
    existence: f64,
    cfg: &FilterConfig,
    motion: &MotionModel,
    rng: &mut R,
) -> BernoulliComponent {
    let n = cfg.particle_count;
    let w = 1.0 / n as f64;
    let particles = (0..n)
        .map(|_| {
            let g: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let s = State::new(
                observed_at.x + cfg.birth_particle_std * g[0],
                observed_at.y + cfg.birth_particle_std * g[1],
                cfg.birth_velocity_std * g[2],
                cfg.birth_velocity_std * g[3],
            );
            LabeledParticle::new(propagate_target(motion, &s, rng), w)
        })
        .collect();
    BernoulliComponent::new(label, existence, particles)
}

/// Predicted ideal measurement set: one noiseless displacement per estimated
/// object whose detection probability after the hypothesized action exceeds
/// the threshold.
pub fn generate_pims(
    predicted: &LmbDensity,
    sensor_after_action: &SensorState,
    fov: &FovModel,
) -> Vec<Point> {
    predicted
        .eap_states()
        .into_iter()
        .filter_map(|(_, state)| {
            let pos = state.position();
            (fov.detection_at(sensor_after_action, pos) > fov.p_d_threshold)
                .then(|| pos - sensor_after_action.position)
        })
        .collect()
}

pub fn update(
    predicted: &LmbDensity,
    measurements: &[Point],
    sensor: &SensorState,
    fov: &FovModel,
    cfg: &FilterConfig,
) -> LmbDensity {
    update_with_report(predicted, measurements, sensor, fov, cfg).0
}

pub fn update_with_report(
    predicted: &LmbDensity,
    measurements: &[Point],
    sensor: &SensorState,
    fov: &FovModel,
    cfg: &FilterConfig,
) -> (LmbDensity, UpdateReport) {
    bayes_update(predicted, measurements, sensor, fov, cfg, DensityRole::Posterior)
}

/// Same mechanics as [`update`] fed with the PIMS. Never adds tracks.
pub fn pseudo_update(
    predicted: &LmbDensity,
    pims: &[Point],
    sensor_after_action: &SensorState,
    fov: &FovModel,
    cfg: &FilterConfig,
) -> LmbDensity {
    bayes_update(
        predicted,
        pims,
        sensor_after_action,
        fov,
        cfg,
        DensityRole::PseudoPosterior,
    )
    .0
}

struct TrackTerms {
    /// Per-particle detection probability.
    p_d: Vec<f64>,
    mean_p_d: f64,
    /// Gated measurements: (measurement index, hypothesis weight ratio
    /// relative to the miss hypothesis, per-particle p_D * g values).
    gated: Vec<(usize, f64, Vec<f64>)>,
}

fn bayes_update(
    predicted: &LmbDensity,
    measurements: &[Point],
    sensor: &SensorState,
    fov: &FovModel,
    cfg: &FilterConfig,
    role: DensityRole,
) -> (LmbDensity, UpdateReport) {
    let mut gated_any = vec![false; measurements.len()];
    let terms: Vec<TrackTerms> = predicted
        .components
        .iter()
        .map(|c| track_terms(c, measurements, sensor, fov, cfg, &mut gated_any))
        .collect();

    let marginals = association_marginals(&terms, measurements.len());

    let components = predicted
        .components
        .iter()
        .zip(&terms)
        .zip(&marginals)
        .map(|((c, t), beta)| posterior_component(c, t, beta))
        .collect();

    let report = UpdateReport {
        unassociated: (0..measurements.len()).filter(|&m| !gated_any[m]).collect(),
    };
    (LmbDensity::new(components, predicted.timestamp, role), report)
}

fn track_terms(
    c: &BernoulliComponent,
    measurements: &[Point],
    sensor: &SensorState,
    fov: &FovModel,
    cfg: &FilterConfig,
    gated_any: &mut [bool],
) -> TrackTerms {
    let rel_mean = c.mean_state().position() - sensor.position;
    let gate = cfg.association_gate.max(3.0 * c.position_spread());
    let in_gate: Vec<usize> = (0..measurements.len())
        .filter(|&m| measurements[m].distance(rel_mean) < gate)
        .collect();
    for &m in &in_gate {
        gated_any[m] = true;
    }

    let p_d: Vec<f64> = c
        .particles
        .iter()
        .map(|p| {
            let (range, bearing) = relative_range_bearing(sensor, p.state.position());
            detection_probability(fov, range, bearing)
        })
        .collect();
    let mean_p_d: f64 = c.particles.iter().zip(&p_d).map(|(p, d)| p.weight * d).sum();
    if mean_p_d <= 0.0 || c.existence <= 0.0 {
        return TrackTerms {
            p_d,
            mean_p_d,
            gated: Vec::new(),
        };
    }

    let var = cfg.measurement_std * cfg.measurement_std;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var);
    let miss_weight = (1.0 - c.existence * mean_p_d).max(1e-300);
    let gated = in_gate
        .into_iter()
        .filter_map(|m| {
            let z = measurements[m];
            let lik: Vec<f64> = c
                .particles
                .iter()
                .zip(&p_d)
                .map(|(p, &d)| {
                    if d == 0.0 {
                        return 0.0;
                    }
                    let e = z - (p.state.position() - sensor.position);
                    d * norm * (-(e.x * e.x + e.y * e.y) / (2.0 * var)).exp()
                })
                .collect();
            let s: f64 = c.particles.iter().zip(&lik).map(|(p, l)| p.weight * l).sum();
            let ratio = c.existence * s / cfg.clutter_intensity / miss_weight;
            (ratio > 0.0).then_some((m, ratio, lik))
        })
        .collect();
    TrackTerms {
        p_d,
        mean_p_d,
        gated,
    }
}

/// Marginal association probabilities per track: slot 0 is the miss
/// hypothesis, slot `k + 1` the k-th gated measurement.
fn association_marginals(terms: &[TrackTerms], n_meas: usize) -> Vec<Vec<f64>> {
    let n = terms.len();
    let mut out: Vec<Vec<f64>> = terms
        .iter()
        .map(|t| {
            let mut v = vec![0.0; t.gated.len() + 1];
            v[0] = 1.0;
            v
        })
        .collect();

    // tracks that share a measurement end up in one cluster
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut owner: Vec<Option<usize>> = vec![None; n_meas];
    for (i, t) in terms.iter().enumerate() {
        for &(m, _, _) in &t.gated {
            match owner[m] {
                None => owner[m] = Some(i),
                Some(j) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a] = b;
                    }
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut cluster_of = vec![usize::MAX; n];
    for i in 0..n {
        if terms[i].gated.is_empty() {
            continue;
        }
        let root = find(&mut parent, i);
        if cluster_of[root] == usize::MAX {
            cluster_of[root] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[cluster_of[root]].push(i);
    }

    for members in clusters {
        let ratios: Vec<Vec<(usize, f64)>> = members
            .iter()
            .map(|&i| terms[i].gated.iter().map(|(m, r, _)| (*m, *r)).collect())
            .collect();
        let hypotheses = ratios
            .iter()
            .try_fold(1usize, |acc, r| acc.checked_mul(r.len() + 1))
            .unwrap_or(usize::MAX);
        let marg = if hypotheses <= EXACT_HYPOTHESIS_LIMIT {
            exact_marginals(&ratios, n_meas)
        } else {
            loopy_marginals(&ratios)
        };
        for (k, &i) in members.iter().enumerate() {
            out[i] = marg[k].clone();
        }
    }
    out
}

fn exact_marginals(ratios: &[Vec<(usize, f64)>], n_meas: usize) -> Vec<Vec<f64>> {
    struct Walk<'a> {
        ratios: &'a [Vec<(usize, f64)>],
        used: Vec<bool>,
        choice: Vec<usize>,
        marg: Vec<Vec<f64>>,
        total: f64,
    }
    impl Walk<'_> {
        fn go(&mut self, depth: usize, weight: f64) {
            if depth == self.ratios.len() {
                self.total += weight;
                for (k, &slot) in self.choice.iter().enumerate() {
                    self.marg[k][slot] += weight;
                }
                return;
            }
            self.choice[depth] = 0;
            self.go(depth + 1, weight);
            for slot in 0..self.ratios[depth].len() {
                let (m, r) = self.ratios[depth][slot];
                if self.used[m] {
                    continue;
                }
                self.used[m] = true;
                self.choice[depth] = slot + 1;
                self.go(depth + 1, weight * r);
                self.used[m] = false;
            }
            self.choice[depth] = 0;
        }
    }
    let mut walk = Walk {
        ratios,
        used: vec![false; n_meas],
        choice: vec![0; ratios.len()],
        marg: ratios.iter().map(|r| vec![0.0; r.len() + 1]).collect(),
        total: 0.0,
    };
    walk.go(0, 1.0);
    let total = walk.total;
    walk.marg
        .into_iter()
        .map(|v| v.into_iter().map(|x| x / total).collect())
        .collect()
}

fn loopy_marginals(ratios: &[Vec<(usize, f64)>]) -> Vec<Vec<f64>> {
    // messages from measurements back to tracks, one per gated pair
    let mut from_meas: Vec<Vec<f64>> = ratios.iter().map(|r| vec![1.0; r.len()]).collect();
    let mut to_meas: Vec<Vec<f64>> = from_meas.clone();
    let n_meas = ratios
        .iter()
        .flat_map(|r| r.iter().map(|(m, _)| m + 1))
        .max()
        .unwrap_or(0);
    for _ in 0..LBP_ITERATIONS {
        for (i, r) in ratios.iter().enumerate() {
            let total: f64 = r.iter().zip(&from_meas[i]).map(|((_, w), mu)| w * mu).sum();
            for (k, (_, w)) in r.iter().enumerate() {
                to_meas[i][k] = w / (1.0 + total - w * from_meas[i][k]);
            }
        }
        let mut column = vec![0.0; n_meas];
        for (i, r) in ratios.iter().enumerate() {
            for (k, (m, _)) in r.iter().enumerate() {
                column[*m] += to_meas[i][k];
            }
        }
        let mut delta: f64 = 0.0;
        for (i, r) in ratios.iter().enumerate() {
            for (k, (m, _)) in r.iter().enumerate() {
                let next = 1.0 / (1.0 + column[*m] - to_meas[i][k]);
                delta = delta.max((next - from_meas[i][k]).abs());
                from_meas[i][k] = next;
            }
        }
        if delta < LBP_TOLERANCE {
            break;
        }
    }
    ratios
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut v = Vec::with_capacity(r.len() + 1);
            v.push(1.0);
            v.extend(r.iter().zip(&from_meas[i]).map(|((_, w), mu)| w * mu));
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

fn posterior_component(c: &BernoulliComponent, t: &TrackTerms, beta: &[f64]) -> BernoulliComponent {
    if t.mean_p_d <= 0.0 || c.existence <= 0.0 {
        return c.clone();
    }
    let r = c.existence;
    let miss_norm = 1.0 - r * t.mean_p_d;
    let miss_exist = if 1.0 - t.mean_p_d > 1e-12 {
        beta[0] * r * (1.0 - t.mean_p_d) / miss_norm
    } else {
        0.0
    };
    let existence = (miss_exist + beta[1..].iter().sum::<f64>()).clamp(0.0, 1.0);
    if existence <= 0.0 {
        return BernoulliComponent::new(c.label, 0.0, c.particles.clone());
    }

    let mut weights = vec![0.0; c.particles.len()];
    if miss_exist > 0.0 {
        let scale = miss_exist / (1.0 - t.mean_p_d);
        for (w, (p, d)) in weights.iter_mut().zip(c.particles.iter().zip(&t.p_d)) {
            *w += scale * p.weight * (1.0 - d);
        }
    }
    for ((_, _, lik), &b) in t.gated.iter().zip(&beta[1..]) {
        if b <= 0.0 {
            continue;
        }
        let s: f64 = c.particles.iter().zip(lik).map(|(p, l)| p.weight * l).sum();
        if s <= 0.0 {
            continue;
        }
        for (w, (p, l)) in weights.iter_mut().zip(c.particles.iter().zip(lik)) {
            *w += b * p.weight * l / s;
        }
    }
    let total: f64 = weights.iter().sum();
    let particles = if total > 0.0 {
        c.particles
            .iter()
            .zip(weights)
            .map(|(p, w)| LabeledParticle::new(p.state, w / total))
            .collect()
    } else {
        c.particles.clone()
    };
    BernoulliComponent::new(c.label, existence, particles)
}
