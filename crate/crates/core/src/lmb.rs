//! Labeled multi-Bernoulli densities in particle form.
//!
//! An [`LmbDensity`] is a list of labeled Bernoulli components. Each component
//! carries an existence probability and a weighted particle cloud for the
//! single-target state conditional on existence. Densities are plain values:
//! every operation here returns a new density rather than mutating shared state.
//!
//! The flat record format produced by [`LmbDensity::to_records`] is line based:
//!
//! ```text
//! lmb <timestamp> <role> <component-count>
//! c <birth_time> <index> <origin_sensor> <existence> <particle-count>
//! p <px> <py> <vx> <vy> <weight>
//! ```
//!
//! One `c` line per component, followed by its `p` lines. Floats are written in
//! shortest round-trip form so parsing recovers bit-identical values.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::State;

/// Track label. Ordering is lexicographic on `(birth_time, index, origin_sensor)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label {
    pub birth_time: u32,
    pub index: u32,
    pub origin_sensor: u32,
}

impl Label {
    pub const fn new(birth_time: u32, index: u32, origin_sensor: u32) -> Self {
        Self {
            birth_time,
            index,
            origin_sensor,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, s{})", self.birth_time, self.index, self.origin_sensor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledParticle {
    pub state: State,
    pub weight: f64,
}

impl LabeledParticle {
    pub const fn new(state: State, weight: f64) -> Self {
        Self { state, weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliComponent {
    pub label: Label,
    pub existence: f64,
    pub particles: Vec<LabeledParticle>,
}

impl BernoulliComponent {
    pub fn new(label: Label, existence: f64, particles: Vec<LabeledParticle>) -> Self {
        Self {
            label,
            existence,
            particles,
        }
    }

    /// Weighted mean of the particle states.
    pub fn mean_state(&self) -> State {
        let mut mean = State::default();
        let total: f64 = self.particles.iter().map(|p| p.weight).sum();
        if total <= 0.0 {
            return mean;
        }
        for p in &self.particles {
            mean.scaled_add(&p.state, p.weight / total);
        }
        mean
    }

    /// Root-mean-square radial distance of the particles from their mean position.
    pub fn position_spread(&self) -> f64 {
        let mean = self.mean_state().position();
        let total: f64 = self.particles.iter().map(|p| p.weight).sum();
        if total <= 0.0 {
            return 0.0;
        }
        let var: f64 = self
            .particles
            .iter()
            .map(|p| {
                let d = p.state.position() - mean;
                p.weight * (d.x * d.x + d.y * d.y)
            })
            .sum::<f64>()
            / total;
        var.sqrt()
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    #[cfg(test)]
    pub(crate) fn normalize_weights(&mut self) {
        let total = self.weight_sum();
        if total > 0.0 {
            for p in &mut self.particles {
                p.weight /= total;
            }
        }
    }
}

/// Which stage of the recursion a density belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityRole {
    Prior,
    Predicted,
    Posterior,
    PseudoPosterior,
    Fused,
}

impl DensityRole {
    fn as_str(self) -> &'static str {
        match self {
            DensityRole::Prior => "prior",
            DensityRole::Predicted => "predicted",
            DensityRole::Posterior => "posterior",
            DensityRole::PseudoPosterior => "pseudo-posterior",
            DensityRole::Fused => "fused",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "prior" => DensityRole::Prior,
            "predicted" => DensityRole::Predicted,
            "posterior" => DensityRole::Posterior,
            "pseudo-posterior" => DensityRole::PseudoPosterior,
            "fused" => DensityRole::Fused,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmbDensity {
    pub components: Vec<BernoulliComponent>,
    pub timestamp: u32,
    pub role: DensityRole,
}

impl LmbDensity {
    pub fn new(components: Vec<BernoulliComponent>, timestamp: u32, role: DensityRole) -> Self {
        Self {
            components,
            timestamp,
            role,
        }
    }

    pub fn empty(timestamp: u32, role: DensityRole) -> Self {
        Self::new(Vec::new(), timestamp, role)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.components.iter().map(|c| c.label)
    }

    pub fn get(&self, label: Label) -> Option<&BernoulliComponent> {
        self.components.iter().find(|c| c.label == label)
    }

    pub fn contains(&self, label: Label) -> bool {
        self.get(label).is_some()
    }

    /// Checks the density-level invariants: distinct labels, existence in
    /// [0, 1], nonempty normalized clouds for components that may exist.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.components.len());
        for c in &self.components {
            if !seen.insert(c.label) {
                return Err(Error::InvalidArgument(format!("duplicate label {}", c.label)));
            }
            if !(0.0..=1.0).contains(&c.existence) {
                return Err(Error::InvalidArgument(format!(
                    "existence {} of {} outside [0, 1]",
                    c.existence, c.label
                )));
            }
            if c.existence > 0.0 {
                if c.particles.is_empty() {
                    return Err(Error::InvalidArgument(format!("{} has no particles", c.label)));
                }
                if c.particles.iter().any(|p| p.weight < 0.0) {
                    return Err(Error::InvalidArgument(format!("{} has a negative weight", c.label)));
                }
                let total = c.weight_sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "{} weights sum to {total}",
                        c.label
                    )));
                }
            }
        }
        Ok(())
    }

    /// Expected number of targets: the sum of existence probabilities.
    pub fn eap_cardinality(&self) -> f64 {
        self.components.iter().map(|c| c.existence).sum()
    }

    /// Number of targets to report: the expected cardinality rounded half up.
    pub fn estimated_count(&self) -> usize {
        (self.eap_cardinality() + 0.5).floor().max(0.0) as usize
    }

    /// Labeled point estimates for the `estimated_count()` most probable
    /// components, highest existence first, ties going to the smaller label.
    pub fn eap_states(&self) -> Vec<(Label, State)> {
        let count = self.estimated_count().min(self.components.len());
        let mut order: Vec<&BernoulliComponent> = self.components.iter().collect();
        order.sort_by(|a, b| {
            b.existence
                .total_cmp(&a.existence)
                .then_with(|| a.label.cmp(&b.label))
        });
        order
            .into_iter()
            .take(count)
            .filter(|c| c.existence > 0.0)
            .map(|c| (c.label, c.mean_state()))
            .collect()
    }

    /// Probability that exactly the labels in `subset` exist.
    pub fn joint_existence_weight(&self, subset: &[Label]) -> Result<f64> {
        for &l in subset {
            if !self.contains(l) {
                return Err(Error::UnknownLabel(l));
            }
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                if subset.contains(&c.label) {
                    c.existence
                } else {
                    1.0 - c.existence
                }
            })
            .product())
    }

    /// Drops components below `existence_floor`, then keeps the
    /// `max_components` most probable. Surviving components keep their order.
    pub fn prune(&self, existence_floor: f64, max_components: usize) -> LmbDensity {
        let mut kept: Vec<usize> = (0..self.components.len())
            .filter(|&i| self.components[i].existence >= existence_floor)
            .collect();
        if kept.len() > max_components {
            let mut ranked = kept.clone();
            ranked.sort_by(|&a, &b| {
                let (ca, cb) = (&self.components[a], &self.components[b]);
                cb.existence
                    .total_cmp(&ca.existence)
                    .then_with(|| ca.label.cmp(&cb.label))
            });
            ranked.truncate(max_components);
            let keep: HashSet<usize> = ranked.into_iter().collect();
            kept.retain(|i| keep.contains(i));
        }
        LmbDensity {
            components: kept.into_iter().map(|i| self.components[i].clone()).collect(),
            timestamp: self.timestamp,
            role: self.role,
        }
    }

    pub fn to_records(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "lmb {} {} {}",
            self.timestamp,
            self.role.as_str(),
            self.components.len()
        );
        for c in &self.components {
            let _ = writeln!(
                out,
                "c {} {} {} {} {}",
                c.label.birth_time,
                c.label.index,
                c.label.origin_sensor,
                c.existence,
                c.particles.len()
            );
            for p in &c.particles {
                let s = &p.state;
                let _ = writeln!(out, "p {} {} {} {} {}", s.px, s.py, s.vx, s.vy, p.weight);
            }
        }
        out
    }

    pub fn from_records(text: &str) -> Result<LmbDensity> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());

        let bad = |line: usize, reason: &str| Error::Parse {
            line,
            reason: reason.to_string(),
        };
        let (hline, header) = lines.next().ok_or_else(|| bad(0, "empty input"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "lmb" {
            return Err(bad(hline, "expected `lmb <timestamp> <role> <count>`"));
        }
        let timestamp = fields[1].parse().map_err(|_| bad(hline, "bad timestamp"))?;
        let role = DensityRole::parse(fields[2]).ok_or_else(|| bad(hline, "unknown role"))?;
        let count: usize = fields[3].parse().map_err(|_| bad(hline, "bad component count"))?;

        let mut components = Vec::with_capacity(count);
        for _ in 0..count {
            let (cline, row) = lines.next().ok_or_else(|| bad(hline, "missing component"))?;
            let f: Vec<&str> = row.split_whitespace().collect();
            if f.len() != 6 || f[0] != "c" {
                return Err(bad(cline, "expected component row"));
            }
            let num = |s: &str| s.parse::<u32>().map_err(|_| bad(cline, "bad integer"));
            let label = Label::new(num(f[1])?, num(f[2])?, num(f[3])?);
            let existence: f64 = f[4].parse().map_err(|_| bad(cline, "bad existence"))?;
            let n: usize = f[5].parse().map_err(|_| bad(cline, "bad particle count"))?;
            let mut particles = Vec::with_capacity(n);
            for _ in 0..n {
                let (pline, prow) = lines.next().ok_or_else(|| bad(cline, "missing particle"))?;
                let v: Vec<&str> = prow.split_whitespace().collect();
                if v.len() != 6 || v[0] != "p" {
                    return Err(bad(pline, "expected particle row"));
                }
                let mut x = [0.0; 5];
                for (slot, s) in x.iter_mut().zip(&v[1..]) {
                    *slot = s.parse().map_err(|_| bad(pline, "bad float"))?;
                }
                particles.push(LabeledParticle::new(State::new(x[0], x[1], x[2], x[3]), x[4]));
            }
            components.push(BernoulliComponent::new(label, existence, particles));
        }
        if let Some((line, _)) = lines.next() {
            return Err(bad(line, "trailing content"));
        }
        Ok(LmbDensity::new(components, timestamp, role))
    }
}

/// Systematic resampling to `target_count` equally weighted particles.
pub fn resample_component<R: Rng + ?Sized>(
    component: &BernoulliComponent,
    target_count: usize,
    rng: &mut R,
) -> Result<BernoulliComponent> {
    if target_count == 0 {
        return Err(Error::InvalidArgument("target_count must be at least 1".into()));
    }
    let total = component.weight_sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let step = 1.0 / target_count as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(target_count);
    let mut cumulative = 0.0;
    let mut iter = component.particles.iter().peekable();
    let mut current = iter.next().expect("total > 0 implies at least one particle");
    cumulative += current.weight / total;
    for _ in 0..target_count {
        while u > cumulative {
            match iter.next() {
                Some(p) => {
                    current = p;
                    cumulative += p.weight / total;
                }
                // floating-point shortfall at the tail
                None => break,
            }
        }
        out.push(LabeledParticle::new(current.state, step));
        u += step;
    }
    Ok(BernoulliComponent::new(component.label, component.existence, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_cloud(xs: &[(f64, f64)]) -> Vec<LabeledParticle> {
        xs.iter()
            .map(|&(x, w)| LabeledParticle::new(State::new(x, 0.0, 0.0, 0.0), w))
            .collect()
    }

    fn density(existences: &[f64]) -> LmbDensity {
        let components = existences
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                BernoulliComponent::new(
                    Label::new(0, i as u32, 0),
                    r,
                    point_cloud(&[(i as f64, 1.0)]),
                )
            })
            .collect();
        LmbDensity::new(components, 0, DensityRole::Posterior)
    }

    #[test]
    fn cardinality_is_existence_sum() {
        assert!((density(&[0.9, 0.8, 0.3]).eap_cardinality() - 2.0).abs() < 1e-12);
        assert_eq!(density(&[]).eap_cardinality(), 0.0);
        assert_eq!(density(&[1.0]).eap_cardinality(), 1.0);
    }

    #[test]
    fn eap_state_averages_particles() {
        let c = BernoulliComponent::new(
            Label::new(1, 0, 0),
            1.0,
            point_cloud(&[(0.0, 0.5), (10.0, 0.5)]),
        );
        let d = LmbDensity::new(vec![c], 1, DensityRole::Posterior);
        let est = d.eap_states();
        assert_eq!(est.len(), 1);
        assert!((est[0].1.px - 5.0).abs() < 1e-12);
    }

    #[test]
    fn eap_states_keep_the_most_probable() {
        let est = density(&[0.2, 0.9]).eap_states();
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].0, Label::new(0, 1, 0));
        assert!(density(&[0.0, 0.0]).eap_states().is_empty());
    }

    #[test]
    fn eap_ties_prefer_smaller_label() {
        let est = density(&[0.5, 0.5, 0.1]).eap_states();
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].0, Label::new(0, 0, 0));
    }

    #[test]
    fn joint_existence_examples() {
        let d = density(&[0.5, 0.5]);
        let all: Vec<Label> = d.labels().collect();
        assert!((d.joint_existence_weight(&all).unwrap() - 0.25).abs() < 1e-15);
        assert!((d.joint_existence_weight(&[]).unwrap() - 0.25).abs() < 1e-15);
        let d = density(&[0.9, 0.8]);
        let w = d.joint_existence_weight(&[Label::new(0, 0, 0)]).unwrap();
        assert!((w - 0.18).abs() < 1e-12);
        assert!(matches!(
            d.joint_existence_weight(&[Label::new(9, 9, 9)]),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn joint_existence_sums_to_one_over_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 0..=10usize {
            let rs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let d = density(&rs);
            let labels: Vec<Label> = d.labels().collect();
            let mut total = 0.0;
            for mask in 0u32..(1 << n) {
                let subset: Vec<Label> = (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| labels[i])
                    .collect();
                total += d.joint_existence_weight(&subset).unwrap();
            }
            assert!((total - 1.0).abs() < 1e-9, "n = {n}: {total}");
        }
    }

    #[test]
    fn resample_single_particle() {
        let c = BernoulliComponent::new(Label::new(0, 0, 0), 1.0, point_cloud(&[(3.0, 1.0)]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = resample_component(&c, 100, &mut rng).unwrap();
        assert_eq!(r.particles.len(), 100);
        assert!(r.particles.iter().all(|p| (p.weight - 0.01).abs() < 1e-15 && p.state.px == 3.0));
    }

    #[test]
    fn resample_keeps_dominant_particle() {
        let c = BernoulliComponent::new(
            Label::new(0, 0, 0),
            1.0,
            point_cloud(&[(0.0, 0.999), (1.0, 0.001)]),
        );
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = resample_component(&c, 1000, &mut rng).unwrap();
            let copies = r.particles.iter().filter(|p| p.state.px == 0.0).count();
            assert!(copies >= 990, "seed {seed}: {copies}");
        }
    }

    #[test]
    fn resample_is_deterministic_and_rejects_zero_weights() {
        let c = BernoulliComponent::new(
            Label::new(0, 0, 0),
            0.7,
            point_cloud(&[(0.0, 0.2), (1.0, 0.3), (2.0, 0.5)]),
        );
        let a = resample_component(&c, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = resample_component(&c, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let zero = BernoulliComponent::new(Label::new(0, 0, 0), 0.7, point_cloud(&[(0.0, 0.0)]));
        assert!(matches!(
            resample_component(&zero, 5, &mut ChaCha8Rng::seed_from_u64(3)),
            Err(Error::DegenerateWeights)
        ));
    }

    #[test]
    fn prune_examples() {
        assert_eq!(density(&[0.5, 0.005]).prune(0.01, 10).len(), 1);
        let kept = density(&[0.9, 0.8, 0.7]).prune(0.0, 2);
        let rs: Vec<f64> = kept.components.iter().map(|c| c.existence).collect();
        assert_eq!(rs, vec![0.9, 0.8]);
        assert!(density(&[]).prune(0.01, 3).is_empty());
        let kept = density(&[0.3, 0.9, 0.6]).prune(0.0, 2);
        let rs: Vec<f64> = kept.components.iter().map(|c| c.existence).collect();
        assert_eq!(rs, vec![0.9, 0.6]);
    }

    #[test]
    fn records_reject_garbage() {
        assert!(LmbDensity::from_records("").is_err());
        assert!(LmbDensity::from_records("lmb 1 fused 1\n").is_err());
        assert!(LmbDensity::from_records("lmb 1 nonsense 0\n").is_err());
        assert!(LmbDensity::from_records("lmb 1 fused 0\nc 1 2 3 0.5 0\n").is_err());
    }

    proptest! {
        #[test]
        fn records_round_trip(
            rs in proptest::collection::vec(0.0f64..=1.0, 0..5),
            xs in proptest::collection::vec(-1e4f64..1e4, 1..6),
        ) {
            let components = rs.iter().enumerate().map(|(i, &r)| {
                let n = xs.len() as f64;
                let particles = xs.iter().map(|&x| LabeledParticle::new(
                    State::new(x, -x / 3.0, x * 1e-3, 0.1), 1.0 / n)).collect();
                BernoulliComponent::new(Label::new(i as u32, 2 * i as u32, 7), r, particles)
            }).collect();
            let d = LmbDensity::new(components, 42, DensityRole::PseudoPosterior);
            let back = LmbDensity::from_records(&d.to_records()).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn resampling_preserves_mean(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let particles: Vec<LabeledParticle> = (0..200).map(|_| {
                LabeledParticle::new(
                    State::new(rng.random::<f64>() * 100.0, rng.random::<f64>() * 50.0, 0.0, 0.0),
                    rng.random::<f64>())
            }).collect();
            let mut c = BernoulliComponent::new(Label::new(0, 0, 0), 0.5, particles);
            c.normalize_weights();
            let r = resample_component(&c, 2000, &mut rng).unwrap();
            prop_assert!((r.weight_sum() - 1.0).abs() < 1e-9);
            let (m0, m1) = (c.mean_state(), r.mean_state());
            prop_assert!((m0.px - m1.px).abs() / m0.px.abs() <= 0.05);
            prop_assert!((m0.py - m1.py).abs() / m0.py.abs() <= 0.05);
        }

        #[test]
        fn cardinality_ignores_order(mut rs in proptest::collection::vec(0.0f64..=1.0, 0..12)) {
            let a = density(&rs).eap_cardinality();
            rs.reverse();
            let b = density(&rs).eap_cardinality();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
