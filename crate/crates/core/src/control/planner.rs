//! Controllers over filter densities: I-SC, DCD-SC and FDCD-SC.
//!
//! All of them score joint commands through a [`CandidateTable`], which
//! pseudo-updates every sensor's prediction once per action. A joint score
//! then only needs to fuse existences and check the constraints, which is
//! what makes running the descent engine many times per step affordable.

use crate::control::descent::{
    best_response, coordinate_descent, multi_start_descent, DescentOutcome, JointObjective,
    MultiSensorCommand,
};
use crate::control::objective::{
    bernoulli_kld, new_label_term, objective,
    sensor_sensor_constraint, sensor_target_constraint, ObjectiveParams,
};
use crate::error::Result;
use crate::exec::{map_indices, Execution};
use crate::filter::{generate_pims, pseudo_update, FilterConfig};
use crate::fusion::{active_sets, fuse_lmb, FusionInput, FusionMode, EXISTENCE_CLAMP};
use crate::geometry::Point;
use crate::lmb::{Label, LmbDensity};
use crate::sensor::{apply_action, FovModel, SensorAction, SensorState};

/// What one sensor would believe after one of its actions.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub sensor_after: SensorState,
    pub pseudo: LmbDensity,
    entries: Vec<Entry>,
}

impl Candidate {
    /// Labels this candidate contributes to a pseudo fusion.
    pub fn active_labels(&self) -> usize {
        self.entries.iter().filter(|e| e.active).count()
    }
}

#[derive(Debug, Clone)]
struct Entry {
    label: usize,
    existence: f64,
    active: bool,
    component: usize,
    /// Particle bounding box: min x, min y, max x, max y.
    bbox: [f64; 4],
    cloud_weight: f64,
}

/// Pseudo-posteriors for every (sensor, action) pair of one time step.
#[derive(Debug, Clone)]
pub struct CandidateTable {
    labels: Vec<Label>,
    sensors: Vec<SensorState>,
    /// Per sensor: (label index, predicted existence).
    predicted: Vec<Vec<(usize, f64)>>,
    candidates: Vec<Vec<Candidate>>,
    params: ObjectiveParams,
}

fn odds(r: f64) -> f64 {
    let r = r.clamp(0.0, EXISTENCE_CLAMP);
    r / (1.0 - r)
}

impl CandidateTable {
    pub fn build(
        predicted: &[LmbDensity],
        sensors: &[SensorState],
        fov: &FovModel,
        actions: &[SensorAction],
        filter: &FilterConfig,
        params: &ObjectiveParams,
        execution: Execution,
    ) -> Self {
        let mut labels: Vec<Label> = predicted.iter().flat_map(|d| d.labels()).collect();
        labels.sort();
        labels.dedup();
        let index = |l: Label| labels.binary_search(&l).expect("label collected above");

        let n_actions = actions.len();
        let flat = map_indices(execution, sensors.len() * n_actions, |task| {
            let (s, a) = (task / n_actions, task % n_actions);
            let after = apply_action(&sensors[s], &actions[a]);
            let pims = generate_pims(&predicted[s], &after, fov);
            let pseudo = pseudo_update(&predicted[s], &pims, &after, fov, filter);
            let entries = pseudo
                .components
                .iter()
                .zip(&predicted[s].components)
                .enumerate()
                .map(|(i, (c, p))| {
                    let sees = |x: Point| fov.detection_at(&after, x) > fov.p_d_threshold;
                    let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
                    for q in &c.particles {
                        bbox[0] = bbox[0].min(q.state.px);
                        bbox[1] = bbox[1].min(q.state.py);
                        bbox[2] = bbox[2].max(q.state.px);
                        bbox[3] = bbox[3].max(q.state.py);
                    }
                    Entry {
                        label: index(c.label),
                        existence: c.existence,
                        active: sees(c.mean_state().position()) || sees(p.mean_state().position()),
                        component: i,
                        bbox,
                        cloud_weight: c.weight_sum(),
                    }
                })
                .collect();
            Candidate {
                sensor_after: after,
                pseudo,
                entries,
            }
        });
        let mut candidates: Vec<Vec<Candidate>> = Vec::with_capacity(sensors.len());
        let mut flat = flat.into_iter();
        for _ in 0..sensors.len() {
            candidates.push(flat.by_ref().take(n_actions).collect());
        }

        let predicted_existence = predicted
            .iter()
            .map(|d| d.components.iter().map(|c| (index(c.label), c.existence)).collect())
            .collect();
        Self {
            labels,
            sensors: sensors.to_vec(),
            predicted: predicted_existence,
            candidates,
            params: *params,
        }
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn action_count(&self, sensor: usize) -> usize {
        self.candidates[sensor].len()
    }

    pub fn candidate(&self, sensor: usize, action: usize) -> &Candidate {
        &self.candidates[sensor][action]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Objective of the pseudo fusion of `participants` taking `actions`,
    /// seen from `viewer`'s prediction. Sensors in `bystanders` stay where
    /// they are and only enter the sensor-separation constraint. `None` when
    /// a constraint is violated.
    pub fn score(
        &self,
        viewer: usize,
        participants: &[usize],
        actions: &[usize],
        bystanders: &[usize],
    ) -> Option<f64> {
        let params = &self.params;
        let chosen: Vec<&Candidate> = participants
            .iter()
            .zip(actions)
            .map(|(&s, &a)| &self.candidates[s][a])
            .collect();

        let mut positions: Vec<SensorState> = chosen.iter().map(|c| c.sensor_after).collect();
        positions.extend(bystanders.iter().map(|&s| self.sensors[s]));
        let eta = sensor_sensor_constraint(&positions);
        if !(eta > params.eta_threshold) {
            return None;
        }

        let n = self.labels.len();
        let mut odds_sum = vec![0.0; n];
        let mut present = vec![false; n];
        let mut saturated = vec![false; n];
        for c in &chosen {
            for e in c.entries.iter().filter(|e| e.active) {
                present[e.label] = true;
                saturated[e.label] |= e.existence >= 1.0;
                odds_sum[e.label] += odds(e.existence);
            }
        }
        let fused: Vec<f64> = (0..n)
            .map(|l| {
                if saturated[l] {
                    1.0
                } else {
                    odds_sum[l] / (1.0 + odds_sum[l])
                }
            })
            .collect();

        let mut psi: f64 = 0.0;
        let rho = params.exclusion_radius;
        let mut mass = vec![0.0; n];
        for disk in &chosen {
            let center = disk.sensor_after.position;
            mass.iter_mut().for_each(|m| *m = 0.0);
            for c in &chosen {
                for e in c.entries.iter().filter(|e| e.active) {
                    if center.x < e.bbox[0] - rho
                        || center.x > e.bbox[2] + rho
                        || center.y < e.bbox[1] - rho
                        || center.y > e.bbox[3] + rho
                        || e.cloud_weight <= 0.0
                    {
                        continue;
                    }
                    let inside: f64 = c.pseudo.components[e.component]
                        .particles
                        .iter()
                        .filter(|p| p.state.position().distance(center) <= rho)
                        .map(|p| p.weight)
                        .sum();
                    mass[e.label] += odds(e.existence) * inside / e.cloud_weight;
                }
            }
            let void: f64 = (0..n)
                .filter(|&l| present[l] && odds_sum[l] > 0.0 && mass[l] > 0.0)
                .map(|l| 1.0 - fused[l] * mass[l] / odds_sum[l])
                .product();
            psi = psi.max(void);
        }
        if chosen.is_empty() {
            psi = 1.0;
        }
        if !params.feasible(psi, eta) {
            return None;
        }

        let mut nu = 0.0;
        let mut in_prediction = vec![false; n];
        for &(l, r2) in &self.predicted[viewer] {
            in_prediction[l] = true;
            nu += if present[l] {
                bernoulli_kld(fused[l], r2)
            } else {
                params.dropped_term.net(r2, params.lambda)
            };
        }
        for l in 0..n {
            if present[l] && !in_prediction[l] {
                nu += new_label_term(fused[l], params.epsilon);
            }
        }
        Some(nu)
    }
}

/// The same score computed from densities: pseudo fusion, objective and
/// both constraints. Slow; kept as an oracle for [`CandidateTable::score`].
pub fn reference_score(
    viewer_prediction: &LmbDensity,
    members: &[(SensorState, &LmbDensity, &LmbDensity)],
    bystanders: &[SensorState],
    fov: &FovModel,
    params: &ObjectiveParams,
) -> Result<Option<f64>> {
    let inputs: Vec<FusionInput<'_>> = members
        .iter()
        .enumerate()
        .map(|(i, (sensor, pseudo, predicted))| FusionInput {
            sensor_id: i,
            sensor: *sensor,
            fov,
            density: pseudo,
            predicted: Some(predicted),
        })
        .collect();
    // no resampling happens, so the generator is never drawn from
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let fused = fuse_lmb(&inputs, &active_sets(&inputs), FusionMode::Pseudo, None, &mut rng)?;
    let after: Vec<SensorState> = members.iter().map(|m| m.0).collect();
    let mut all = after.clone();
    all.extend_from_slice(bystanders);
    let psi = if after.is_empty() {
        1.0
    } else {
        sensor_target_constraint(&fused, &after, params.exclusion_radius)
    };
    let eta = sensor_sensor_constraint(&all);
    Ok(params
        .feasible(psi, eta)
        .then(|| objective(&fused, viewer_prediction, params)))
}

/// Joint objective over a subset of sensors of a [`CandidateTable`]. Each
/// agent scores commands against its own prediction.
pub struct RestrictedObjective<'a> {
    pub table: &'a CandidateTable,
    pub participants: Vec<usize>,
    pub bystanders: Vec<usize>,
}

impl<'a> RestrictedObjective<'a> {
    pub fn new(table: &'a CandidateTable, participants: Vec<usize>) -> Self {
        let bystanders = (0..table.sensor_count())
            .filter(|s| !participants.contains(s))
            .collect();
        Self {
            table,
            participants,
            bystanders,
        }
    }
}

impl JointObjective for RestrictedObjective<'_> {
    fn agents(&self) -> usize {
        self.participants.len()
    }

    fn action_count(&self, agent: usize) -> usize {
        self.table.action_count(self.participants[agent])
    }

    fn evaluate(&self, agent: usize, command: &[usize]) -> Option<f64> {
        self.table
            .score(self.participants[agent], &self.participants, command, &self.bystanders)
    }
}

/// Independent control: exhaustive search on the sensor's own pseudo
/// posterior. Returns the action and its score.
pub fn isc_select(table: &CandidateTable, node: usize) -> (usize, f64) {
    let objective = RestrictedObjective::new(table, vec![node]);
    best_response(&objective, 0, &[0])
}

/// Network-wide descent over `participants` (one connected component),
/// started from each participant's independent choice in `initial`, indexed
/// like `participants`.
pub fn fdcd_plan(
    table: &CandidateTable,
    participants: &[usize],
    initial: &[usize],
) -> Result<DescentOutcome> {
    let objective = RestrictedObjective::new(table, participants.to_vec());
    coordinate_descent(&objective, MultiSensorCommand(initial.to_vec()))
}

/// Neighborhood descent for `node` restricted to `neighborhood` (sorted,
/// containing `node`), one descent per initial command. Returns the node's
/// action from the best restart and that restart's score.
pub fn dcd_select(
    table: &CandidateTable,
    node: usize,
    neighborhood: &[usize],
    initials: &[MultiSensorCommand],
) -> Result<(usize, f64)> {
    let owner = neighborhood
        .iter()
        .position(|&s| s == node)
        .expect("neighborhood contains the node");
    let objective = RestrictedObjective::new(table, neighborhood.to_vec());
    multi_start_descent(&objective, owner, initials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::objective::{DroppedTerm, VoidConstraint};
    use crate::geometry::State;
    use crate::lmb::{BernoulliComponent, DensityRole, LabeledParticle};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn fov() -> FovModel {
        FovModel {
            rho_max: 500.0,
            theta_max: PI / 4.0,
            p_d_max: 0.99,
            k_rho: 0.5,
            k_theta: 20.0,
            p_d_threshold: 0.5,
            omnidirectional: false,
        }
    }

    fn cloud(label: Label, r: f64, x: f64, y: f64, seed: u64) -> BernoulliComponent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 200;
        let particles = (0..n)
            .map(|_| {
                let gx: f64 = StandardNormal.sample(&mut rng);
                let gy: f64 = StandardNormal.sample(&mut rng);
                LabeledParticle::new(State::new(x + 5.0 * gx, y + 5.0 * gy, 0.0, 0.0), 1.0 / n as f64)
            })
            .collect();
        BernoulliComponent::new(label, r, particles)
    }

    fn rotations() -> Vec<SensorAction> {
        vec![
            SensorAction::STAY,
            SensorAction::rotate(PI / 2.0),
            SensorAction::rotate(-PI / 2.0),
        ]
    }

    fn params() -> ObjectiveParams {
        ObjectiveParams {
            void_constraint: VoidConstraint::Flipped,
            ..Default::default()
        }
    }

    /// Two sensors back to back with a target on either side of each.
    fn two_sensor_fixture() -> (Vec<LmbDensity>, Vec<SensorState>) {
        let a = Label::new(1, 0, 0);
        let b = Label::new(1, 1, 0);
        let sensors = vec![
            SensorState::new(Point::new(0.0, 0.0), 0.0),
            SensorState::new(Point::new(100.0, 0.0), 0.0),
        ];
        let both = |seed| {
            LmbDensity::new(
                vec![cloud(a, 0.9, 300.0, 0.0, seed), cloud(b, 0.9, -300.0, 0.0, seed + 1)],
                2,
                DensityRole::Predicted,
            )
        };
        (vec![both(1), both(3)], sensors)
    }

    #[test]
    fn table_matches_reference_score() {
        let (predicted, sensors) = two_sensor_fixture();
        for dropped_term in [DroppedTerm::AsWritten, DroppedTerm::Exact] {
            let params = ObjectiveParams {
                dropped_term,
                ..params()
            };
            let table = CandidateTable::build(
                &predicted,
                &sensors,
                &fov(),
                &rotations(),
                &FilterConfig::default(),
                &params,
                Execution::Sequential,
            );
            for a0 in 0..3 {
                for a1 in 0..3 {
                    for viewer in 0..2 {
                        let fast = table.score(viewer, &[0, 1], &[a0, a1], &[]);
                        let members = [
                            (table.candidate(0, a0).sensor_after, &table.candidate(0, a0).pseudo, &predicted[0]),
                            (table.candidate(1, a1).sensor_after, &table.candidate(1, a1).pseudo, &predicted[1]),
                        ];
                        let slow = reference_score(&predicted[viewer], &members, &[], &fov(), &params).unwrap();
                        match (fast, slow) {
                            (Some(f), Some(s)) => assert!((f - s).abs() < 1e-9, "{dropped_term:?}: {f} vs {s}"),
                            (f, s) => assert_eq!(f.is_some(), s.is_some()),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn descent_splits_the_targets() {
        let (predicted, sensors) = two_sensor_fixture();
        let table = CandidateTable::build(
            &predicted,
            &sensors,
            &fov(),
            &rotations(),
            &FilterConfig::default(),
            &params(),
            Execution::Parallel,
        );
        // alone, each sensor can only keep one target
        let (i0, _) = isc_select(&table, 0);
        let (i1, _) = isc_select(&table, 1);
        assert_eq!((i0, i1), (1, 1));
        let out = fdcd_plan(&table, &[0, 1], &[i0, i1]).unwrap();
        let c = out.command.as_slice();
        assert!(c[0] != 0 && c[1] != 0 && c[0] != c[1], "{c:?}");
        assert!(out.score.is_finite());
        // the stored score matches a fresh evaluation
        assert_eq!(Some(out.score), table.score(out.stopping_agent, &[0, 1], c, &[]));
    }

    #[test]
    fn isolated_dcd_equals_isc() {
        let (predicted, sensors) = two_sensor_fixture();
        let table = CandidateTable::build(
            &predicted,
            &sensors,
            &fov(),
            &rotations(),
            &FilterConfig::default(),
            &params(),
            Execution::Sequential,
        );
        let starts: Vec<MultiSensorCommand> = (0..3).map(|a| MultiSensorCommand(vec![a])).collect();
        assert_eq!(dcd_select(&table, 1, &[1], &starts).unwrap(), isc_select(&table, 1));
    }

    #[test]
    fn toward_beats_away_for_a_single_target() {
        let l = Label::new(1, 0, 0);
        let predicted = vec![LmbDensity::new(
            vec![cloud(l, 0.8, 0.0, 300.0, 5)],
            2,
            DensityRole::Predicted,
        )];
        let sensors = vec![SensorState::new(Point::new(0.0, 0.0), PI / 2.0)];
        let table = CandidateTable::build(
            &predicted,
            &sensors,
            &fov(),
            &rotations(),
            &FilterConfig::default(),
            &params(),
            Execution::Sequential,
        );
        assert_eq!(isc_select(&table, 0).0, 2);
    }

    #[test]
    fn identical_candidates_pick_action_zero() {
        let predicted = vec![LmbDensity::empty(2, DensityRole::Predicted)];
        let sensors = vec![SensorState::new(Point::new(0.0, 0.0), 0.0)];
        let table = CandidateTable::build(
            &predicted,
            &sensors,
            &fov(),
            &rotations(),
            &FilterConfig::default(),
            &params(),
            Execution::Sequential,
        );
        assert_eq!(isc_select(&table, 0), (0, 0.0));
    }
}
