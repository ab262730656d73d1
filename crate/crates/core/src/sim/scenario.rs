//! Scenario configuration, the two built-in scenarios and ground truth.
//!
//! Configs are TOML. Angles in the file are degrees; everything else is SI.
//! Time steps run from 1 to `duration`. A target exists at step `k` when
//! `birth <= k < death`.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::objective::{DroppedTerm, ObjectiveParams, VoidConstraint};
use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::fusion::FusionConfig;
use crate::geometry::{Point, State};
use crate::sensor::{propagate_target, FovModel, MotionModel, SensorAction, SensorState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthConfig {
    /// Seed of the trajectory generator.
    pub seed: u64,
    /// Acceleration noise of the true trajectories, m/s^2.
    pub process_noise_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub birth: u32,
    pub death: u32,
    pub initial: State,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub position: Point,
    pub bearing_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovSpec {
    pub rho_max: f64,
    pub theta_max_deg: f64,
    pub p_d_max: f64,
    pub k_rho: f64,
    pub k_theta: f64,
    pub p_d_threshold: f64,
    #[serde(default)]
    pub omnidirectional: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    #[serde(default)]
    pub dx: f64,
    #[serde(default)]
    pub dy: f64,
    #[serde(default)]
    pub rotation_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub ospa_cutoff: f64,
    pub ospa_order: f64,
    pub ospa2_window: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub runs: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration: u32,
    pub period: f64,
    pub arena: Arena,
    pub comm_range: f64,
    /// Mean number of false alarms per scan.
    pub clutter_rate: f64,
    pub dcd_runs: usize,
    pub truth: TruthConfig,
    pub fov: FovSpec,
    /// Filter motion model.
    pub motion: MotionModel,
    pub filter: FilterConfig,
    pub fusion: FusionConfig,
    pub objective: ObjectiveParams,
    pub metrics: MetricConfig,
    pub monte_carlo: MonteCarloConfig,
    pub sensors: Vec<SensorSpec>,
    /// Action 0 must be the zero action.
    pub actions: Vec<ActionSpec>,
    pub targets: Vec<TargetSpec>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// `"1"`, `"2"` or a path to a TOML file.
    pub fn resolve(name: &str) -> Result<Self> {
        match name {
            "1" => Ok(build_scenario_1()),
            "2" => Ok(build_scenario_2()),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Scenario(m.to_string()));
        if self.duration == 0 || !(self.period > 0.0) {
            return bad("duration and period must be positive");
        }
        if self.sensors.is_empty() {
            return bad("at least one sensor is required");
        }
        if self.actions.is_empty() || !self.action_set()[0].is_zero() {
            return bad("action 0 must be the zero action");
        }
        if !self.fov_model().is_valid() {
            return bad("invalid field of view");
        }
        if !(self.comm_range > 0.0) || self.clutter_rate < 0.0 || self.dcd_runs == 0 {
            return bad("comm range, clutter rate and dcd runs must be positive");
        }
        if self.targets.iter().any(|t| t.death <= t.birth) {
            return bad("every target must die after it is born");
        }
        let m = &self.metrics;
        if !(m.ospa_cutoff > 0.0 && m.ospa_order >= 1.0 && m.ospa2_window >= 1) {
            return bad("invalid metric settings");
        }
        if !(self.motion.survival_probability > 0.0 && self.motion.survival_probability <= 1.0) {
            return bad("survival probability must lie in (0, 1]");
        }
        self.filter.validate()?;
        self.objective.validate()?;
        Ok(())
    }

    pub fn fov_model(&self) -> FovModel {
        let f = &self.fov;
        FovModel {
            rho_max: f.rho_max,
            theta_max: f.theta_max_deg.to_radians(),
            p_d_max: f.p_d_max,
            k_rho: f.k_rho,
            k_theta: f.k_theta,
            p_d_threshold: f.p_d_threshold,
            omnidirectional: f.omnidirectional,
        }
    }

    pub fn action_set(&self) -> Vec<SensorAction> {
        self.actions
            .iter()
            .map(|a| SensorAction {
                translation: Point::new(a.dx, a.dy),
                rotation: a.rotation_deg.to_radians(),
            })
            .collect()
    }

    pub fn initial_sensors(&self) -> Vec<SensorState> {
        self.sensors
            .iter()
            .map(|s| SensorState::new(s.position, s.bearing_deg.to_radians()))
            .collect()
    }

    /// Same scenario cut to `steps` steps; targets dying later than the new
    /// end are clamped.
    pub fn truncated(&self, steps: u32) -> Self {
        let mut out = self.clone();
        out.duration = steps;
        out.targets.retain(|t| t.birth <= steps);
        for t in &mut out.targets {
            t.death = t.death.min(steps + 1);
        }
        out
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let motion = MotionModel {
            period: self.period,
            process_noise_std: self.truth.process_noise_std,
            survival_probability: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.truth.seed);
        let tracks = self
            .targets
            .iter()
            .enumerate()
            .map(|(id, t)| {
                let mut states = vec![t.initial];
                for _ in t.birth + 1..t.death.min(self.duration + 1) {
                    let next = propagate_target(&motion, states.last().expect("non-empty"), &mut rng);
                    states.push(next);
                }
                TruthTrack {
                    id,
                    birth: t.birth,
                    states,
                }
            })
            .collect();
        GroundTruth { tracks }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrack {
    pub id: usize,
    pub birth: u32,
    /// State at steps `birth, birth + 1, ...`.
    pub states: Vec<State>,
}

impl TruthTrack {
    pub fn at(&self, step: u32) -> Option<&State> {
        step.checked_sub(self.birth).and_then(|i| self.states.get(i as usize))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub tracks: Vec<TruthTrack>,
}

impl GroundTruth {
    /// Live targets at `step` as (id, state).
    pub fn at(&self, step: u32) -> Vec<(usize, State)> {
        self.tracks
            .iter()
            .filter_map(|t| t.at(step).map(|s| (t.id, *s)))
            .collect()
    }
}

fn rotations() -> Vec<ActionSpec> {
    [0.0, 22.5, -22.5]
        .into_iter()
        .map(|r| ActionSpec {
            dx: 0.0,
            dy: 0.0,
            rotation_deg: r,
        })
        .collect()
}

fn compass_moves(step: f64) -> Vec<ActionSpec> {
    let mut out = vec![ActionSpec {
        dx: 0.0,
        dy: 0.0,
        rotation_deg: 0.0,
    }];
    // east, north-east, north, ... south-east
    for i in 0..8 {
        let a = i as f64 * PI / 4.0;
        let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
        out.push(ActionSpec {
            dx: snap(step * a.cos()),
            dy: snap(step * a.sin()),
            rotation_deg: 0.0,
        });
    }
    out
}

fn common_objective() -> ObjectiveParams {
    ObjectiveParams {
        epsilon: 1e-6,
        lambda: 100.0,
        psi_threshold: 0.8,
        eta_threshold: 50.0,
        exclusion_radius: 20.0,
        void_constraint: VoidConstraint::Flipped,
        dropped_term: DroppedTerm::Exact,
    }
}

fn metrics() -> MetricConfig {
    MetricConfig {
        ospa_cutoff: 100.0,
        ospa_order: 1.0,
        ospa2_window: 10,
    }
}

/// Six rotating sensors in a 1000 m x 2000 m area. The two lower sensors
/// share a pair of targets that drift apart vertically, so only one of them
/// fits in each field of view; the other four each follow a close pair.
/// Two targets die early.
pub fn build_scenario_1() -> ScenarioConfig {
    let fov = FovSpec {
        rho_max: 500.0,
        theta_max_deg: 45.0,
        p_d_max: 0.99,
        k_rho: 0.5,
        k_theta: 20.0,
        p_d_threshold: 0.5,
        omnidirectional: false,
    };
    let clutter_rate = 2.0;
    let duration = 50;
    let facing_in = |x: f64, y: f64| SensorSpec {
        position: Point::new(x, y),
        bearing_deg: if x < 0.0 { 90.0 } else { -90.0 },
    };
    let alive = |initial| TargetSpec {
        birth: 1,
        death: duration + 1,
        initial,
    };

    let mut sensors = vec![facing_in(-250.0, 500.0), facing_in(250.0, 500.0)];
    let mut targets = vec![
        alive(State::new(0.0, 300.0, 0.0, -6.0)),
        alive(State::new(0.0, 700.0, 0.0, 6.0)),
    ];
    // middle row pairs head south, upper row pairs north
    for (y, vy) in [(1000.0, -9.0), (1500.0, 9.0)] {
        for x in [-380.0, 380.0] {
            sensors.push(facing_in(x, y));
            let px = x - 120.0 * x.signum();
            for dy in [-30.0, 30.0] {
                targets.push(alive(State::new(px, y + dy, 0.0, vy)));
            }
        }
    }
    targets.push(alive(State::new(0.0, 1250.0, 4.0, 0.0)));
    targets[4].death = 30;
    targets[8].death = 40;

    ScenarioConfig {
        name: "scenario-1".into(),
        duration,
        period: 1.0,
        arena: Arena {
            x_min: -500.0,
            x_max: 500.0,
            y_min: 0.0,
            y_max: 2000.0,
        },
        comm_range: 800.0,
        clutter_rate,
        dcd_runs: 1,
        truth: TruthConfig {
            seed: 101,
            process_noise_std: 0.2,
        },
        fov,
        motion: MotionModel {
            period: 1.0,
            process_noise_std: 1.0,
            survival_probability: 0.95,
        },
        filter: FilterConfig {
            clutter_intensity: clutter_rate / (fov.theta_max_deg.to_radians() * fov.rho_max * fov.rho_max),
            birth_existence: 0.01,
            ..FilterConfig::default()
        },
        fusion: FusionConfig::default(),
        objective: common_objective(),
        metrics: metrics(),
        monte_carlo: MonteCarloConfig {
            runs: 30,
            base_seed: 1,
        },
        sensors,
        actions: rotations(),
        targets,
    }
}

/// Eight mobile omnidirectional sensors and two circular groups of ten
/// targets whose paths cross in the middle of an 800 m x 800 m area.
pub fn build_scenario_2() -> ScenarioConfig {
    let fov = FovSpec {
        rho_max: 100.0,
        theta_max_deg: 180.0,
        p_d_max: 0.99,
        k_rho: 0.5,
        k_theta: 1.0,
        p_d_threshold: 0.5,
        omnidirectional: true,
    };
    let clutter_rate = 2.0;
    let duration = 100;
    let radius = 140.0;
    let groups = [
        (Point::new(180.0, 180.0), Point::new(620.0, 620.0)),
        (Point::new(180.0, 620.0), Point::new(620.0, 180.0)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut targets = Vec::new();
    let mut sensors = Vec::new();
    for (g, (start, end)) in groups.iter().enumerate() {
        let v = Point::new(
            (end.x - start.x) / duration as f64,
            (end.y - start.y) / duration as f64,
        );
        for i in 0..10 {
            let a = 2.0 * PI * i as f64 / 10.0 + g as f64 * 0.3 + rng.random_range(-0.1..0.1);
            targets.push(TargetSpec {
                birth: 1,
                death: duration + 1,
                initial: State::new(start.x + radius * a.cos(), start.y + radius * a.sin(), v.x, v.y),
            });
        }
        for i in 0..4 {
            let a = PI / 4.0 + PI / 2.0 * i as f64;
            sensors.push(SensorSpec {
                position: Point::new(start.x + 100.0 * a.cos(), start.y + 100.0 * a.sin()),
                bearing_deg: 0.0,
            });
        }
    }

    ScenarioConfig {
        name: "scenario-2".into(),
        duration,
        period: 1.0,
        arena: Arena {
            x_min: 0.0,
            x_max: 800.0,
            y_min: 0.0,
            y_max: 800.0,
        },
        comm_range: 300.0,
        clutter_rate,
        dcd_runs: 1,
        truth: TruthConfig {
            seed: 202,
            process_noise_std: 0.1,
        },
        fov,
        motion: MotionModel {
            period: 1.0,
            process_noise_std: 1.0,
            survival_probability: 0.95,
        },
        filter: FilterConfig {
            clutter_intensity: clutter_rate / (PI * fov.rho_max * fov.rho_max),
            birth_existence: 0.01,
            ..FilterConfig::default()
        },
        fusion: FusionConfig::default(),
        objective: common_objective(),
        metrics: metrics(),
        monte_carlo: MonteCarloConfig {
            runs: 30,
            base_seed: 1,
        },
        sensors,
        actions: compass_moves(15.0),
        targets,
    }
}
