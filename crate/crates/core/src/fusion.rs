//! Adaptive complementary fusion of LMB densities.
//!
//! Each label is fused only over the sensors that measured it or expected to
//! measure it (its active set). Existence fuses by summing odds; the spatial
//! density is the odds-weighted union of the contributing particle clouds.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::lmb::{resample_component, BernoulliComponent, DensityRole, Label, LabeledParticle, LmbDensity};
use crate::sensor::{FovModel, SensorState};

/// Existence values are clamped below this before converting to odds.
pub const EXISTENCE_CLAMP: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Hypothesized posteriors during control. Labels nobody observes are dropped.
    Pseudo,
    /// Real posteriors. Labels nobody observes fuse over every holder.
    Update,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub merge_distance: f64,
    /// Birth-time tolerance for label merging, in steps.
    pub merge_birth_window: u32,
    /// Fused multi-sensor clouds are resampled to this size.
    pub particle_count: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            merge_distance: 10.0,
            merge_birth_window: 2,
            particle_count: 500,
        }
    }
}

/// Per label, the ids of the sensors that contribute to its fusion.
pub type ActiveSet = BTreeMap<Label, BTreeSet<usize>>;

/// One sensor's contribution to a fusion pass.
#[derive(Debug, Clone, Copy)]
pub struct FusionInput<'a> {
    pub sensor_id: usize,
    /// Pose used for the active-set test (after the hypothesized action in
    /// pseudo mode).
    pub sensor: SensorState,
    pub fov: &'a FovModel,
    /// Updated or pseudo-updated density.
    pub density: &'a LmbDensity,
    pub predicted: Option<&'a LmbDensity>,
}

/// Sensors whose detection probability at either the updated or predicted
/// estimate of a label exceeds their threshold. Index `i` of every slice
/// describes sensor `i`; `None` means that sensor has no such estimate.
pub fn compute_active_set(
    sensors: &[(SensorState, FovModel)],
    updated_estimates: &[Option<Point>],
    predicted_estimates: &[Option<Point>],
) -> BTreeSet<usize> {
    sensors
        .iter()
        .enumerate()
        .filter(|(s, (state, fov))| {
            let sees = |p: Option<&Option<Point>>| {
                p.copied()
                    .flatten()
                    .is_some_and(|x| fov.detection_at(state, x) > fov.p_d_threshold)
            };
            sees(updated_estimates.get(*s)) || sees(predicted_estimates.get(*s))
        })
        .map(|(s, _)| s)
        .collect()
}

/// Active sets for every label held by any input.
pub fn active_sets(inputs: &[FusionInput<'_>]) -> ActiveSet {
    let mut out = ActiveSet::new();
    for input in inputs {
        for c in &input.density.components {
            let updated = c.mean_state().position();
            let predicted = input
                .predicted
                .and_then(|d| d.get(c.label))
                .map(|p| p.mean_state().position());
            let sees = |x: Point| input.fov.detection_at(&input.sensor, x) > input.fov.p_d_threshold;
            let entry = out.entry(c.label).or_default();
            if sees(updated) || predicted.is_some_and(sees) {
                entry.insert(input.sensor_id);
            }
        }
    }
    out
}

fn odds(r: f64) -> f64 {
    let r = r.clamp(0.0, EXISTENCE_CLAMP);
    r / (1.0 - r)
}

/// Odds-sum fusion. An input of exactly 1 saturates the result to 1; a
/// single input is returned unchanged.
pub fn fuse_existence(existences: &[f64]) -> f64 {
    if existences.iter().any(|&r| r >= 1.0) {
        return 1.0;
    }
    if let [r] = existences {
        return *r;
    }
    let s: f64 = existences.iter().map(|&r| odds(r)).sum();
    s / (1.0 + s)
}

/// Odds-weighted union of the clouds, normalized, optionally resampled.
pub fn fuse_spatial<R: Rng + ?Sized>(
    components: &[&BernoulliComponent],
    resample_to: Option<usize>,
    rng: &mut R,
) -> Result<Vec<LabeledParticle>> {
    let odds: Vec<f64> = components.iter().map(|c| odds(c.existence)).collect();
    let total: f64 = odds.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let mut particles = Vec::with_capacity(components.iter().map(|c| c.particles.len()).sum());
    for (c, o) in components.iter().zip(&odds) {
        let cloud = c.weight_sum();
        if cloud <= 0.0 {
            continue;
        }
        let scale = o / total / cloud;
        particles.extend(
            c.particles
                .iter()
                .map(|p| LabeledParticle::new(p.state, p.weight * scale)),
        );
    }
    match resample_to {
        Some(n) if components.len() > 1 => {
            let merged = BernoulliComponent::new(components[0].label, 0.0, particles);
            Ok(resample_component(&merged, n, rng)?.particles)
        }
        _ => Ok(particles),
    }
}

/// Fuses one density per input label by label.
///
/// With `resample_to = None` multi-sensor clouds keep the full union of
/// particles, which makes the result deterministic.
pub fn fuse_lmb<R: Rng + ?Sized>(
    inputs: &[FusionInput<'_>],
    active: &ActiveSet,
    mode: FusionMode,
    resample_to: Option<usize>,
    rng: &mut R,
) -> Result<LmbDensity> {
    let timestamp = inputs.first().map_or(0, |i| i.density.timestamp);
    for input in inputs {
        if input.density.timestamp != timestamp {
            return Err(Error::TimestampMismatch {
                expected: timestamp,
                found: input.density.timestamp,
            });
        }
    }

    let mut holders: BTreeMap<Label, Vec<(usize, &BernoulliComponent)>> = BTreeMap::new();
    for input in inputs {
        for c in &input.density.components {
            holders.entry(c.label).or_default().push((input.sensor_id, c));
        }
    }

    let mut components = Vec::with_capacity(holders.len());
    for (label, held) in holders {
        let set = active.get(&label);
        let chosen: Vec<&BernoulliComponent> = match set {
            Some(set) if !set.is_empty() => held
                .iter()
                .filter(|(s, _)| set.contains(s))
                .map(|(_, c)| *c)
                .collect(),
            _ => match mode {
                FusionMode::Pseudo => Vec::new(),
                FusionMode::Update => held.iter().map(|(_, c)| *c).collect(),
            },
        };
        match chosen.len() {
            0 => {}
            1 => components.push(chosen[0].clone()),
            _ => {
                let r = fuse_existence(&chosen.iter().map(|c| c.existence).collect::<Vec<_>>());
                let particles = if r > 0.0 {
                    fuse_spatial(&chosen, resample_to, rng)?
                } else {
                    // zero odds everywhere: any cloud is as good as another
                    chosen[0].particles.clone()
                };
                components.push(BernoulliComponent::new(label, r, particles));
            }
        }
    }
    let role = match mode {
        FusionMode::Pseudo => DensityRole::PseudoPosterior,
        FusionMode::Update => DensityRole::Fused,
    };
    Ok(LmbDensity::new(components, timestamp, role))
}

/// Gives tracks of one physical object born independently at several sensors
/// a shared label.
///
/// Two components held by different sensors, with labels of different origin,
/// are linked when their mean positions are within `merge_distance` and their
/// birth times differ by at most `birth_window`. Linked groups take their
/// lowest label. A density never ends up holding the same label twice: a
/// rename that would collide is skipped.
pub fn associate_labels(
    locals: &[LmbDensity],
    merge_distance: f64,
    birth_window: u32,
) -> Vec<LmbDensity> {
    let entries: Vec<(usize, Label, Point)> = locals
        .iter()
        .enumerate()
        .flat_map(|(s, d)| {
            d.components
                .iter()
                .map(move |c| (s, c.label, c.mean_state().position()))
        })
        .collect();

    let mut labels: Vec<Label> = entries.iter().map(|e| e.1).collect();
    labels.sort();
    labels.dedup();
    let index = |l: Label| labels.binary_search(&l).expect("label collected above");
    let mut parent: Vec<usize> = (0..labels.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    for (i, a) in entries.iter().enumerate() {
        for b in &entries[i + 1..] {
            if a.0 == b.0
                || a.1 == b.1
                || a.1.origin_sensor == b.1.origin_sensor
                || a.1.birth_time.abs_diff(b.1.birth_time) > birth_window
                || a.2.distance(b.2) > merge_distance
            {
                continue;
            }
            let (x, y) = (find(&mut parent, index(a.1)), find(&mut parent, index(b.1)));
            // the root always carries the lowest label of its group
            if x < y {
                parent[y] = x;
            } else if y < x {
                parent[x] = y;
            }
        }
    }

    locals
        .iter()
        .map(|d| {
            let mut taken: BTreeSet<Label> = d.labels().collect();
            let mut out = d.clone();
            for c in &mut out.components {
                let canonical = labels[find(&mut parent, index(c.label))];
                if canonical != c.label && !taken.contains(&canonical) {
                    taken.remove(&c.label);
                    taken.insert(canonical);
                    c.label = canonical;
                }
            }
            out
        })
        .collect()
}
