//! Sensor geometry, the sigmoid field-of-view detection model, the
//! displacement measurement likelihood and the constant-velocity target
//! motion model.
//!
//! Bearings follow the atan2(dx, dy) convention: zero points along +y and
//! positive angles turn clockwise towards +x. All angles are radians.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Point, State};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorState {
    pub position: Point,
    /// Heading in (-pi, pi].
    pub bearing: f64,
}

impl SensorState {
    pub fn new(position: Point, bearing: f64) -> Self {
        Self {
            position,
            bearing: normalize_angle(bearing),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovModel {
    pub rho_max: f64,
    pub theta_max: f64,
    pub p_d_max: f64,
    pub k_rho: f64,
    pub k_theta: f64,
    pub p_d_threshold: f64,
    /// No bearing limit: the angular factor is held at `p_d_max`.
    #[serde(default)]
    pub omnidirectional: bool,
}

impl FovModel {
    pub fn omnidirectional(rho_max: f64, p_d_max: f64, k_rho: f64, p_d_threshold: f64) -> Self {
        Self {
            rho_max,
            theta_max: PI,
            p_d_max,
            k_rho,
            k_theta: 1.0,
            p_d_threshold,
            omnidirectional: true,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.rho_max > 0.0
            && self.theta_max > 0.0
            && self.theta_max <= PI
            && self.p_d_max > 0.0
            && self.p_d_max <= 1.0
            && self.k_rho > 0.0
            && self.k_theta > 0.0
    }

    /// Area of the detection support (a circular sector), used to turn a
    /// clutter rate into a clutter intensity.
    pub fn support_area(&self) -> f64 {
        self.theta_max * self.rho_max * self.rho_max
    }

    /// Detection probability of a target at `target` seen from `sensor`.
    pub fn detection_at(&self, sensor: &SensorState, target: Point) -> f64 {
        let (range, bearing) = relative_range_bearing(sensor, target);
        detection_probability(self, range, bearing)
    }

    /// Draws a clutter point uniformly over the detection support, returned
    /// as a displacement from the sensor.
    pub fn sample_clutter<R: Rng + ?Sized>(&self, sensor: &SensorState, rng: &mut R) -> Point {
        let range = self.rho_max * rng.random::<f64>().sqrt();
        let offset = (2.0 * rng.random::<f64>() - 1.0) * self.theta_max;
        let heading = sensor.bearing + offset;
        Point::new(range * heading.sin(), range * heading.cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorAction {
    pub translation: Point,
    pub rotation: f64,
}

impl SensorAction {
    pub const STAY: SensorAction = SensorAction {
        translation: Point::new(0.0, 0.0),
        rotation: 0.0,
    };

    pub fn rotate(rotation: f64) -> Self {
        Self {
            translation: Point::default(),
            rotation,
        }
    }

    pub fn translate(dx: f64, dy: f64) -> Self {
        Self {
            translation: Point::new(dx, dy),
            rotation: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.translation == Point::default() && self.rotation == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    /// Seconds per step.
    pub period: f64,
    /// Standard deviation of the white-noise acceleration, m/s^2.
    pub process_noise_std: f64,
    pub survival_probability: f64,
}

/// Range and relative bearing of `target` from `sensor`. A target on top of
/// the sensor is reported at (0, 0).
pub fn relative_range_bearing(sensor: &SensorState, target: Point) -> (f64, f64) {
    let d = target - sensor.position;
    let range = d.norm();
    if range == 0.0 {
        return (0.0, 0.0);
    }
    (range, normalize_angle(d.x.atan2(d.y) - sensor.bearing))
}

fn logistic_cap(p_max: f64, k: f64, excess: f64) -> f64 {
    p_max / (1.0 + (k * excess).exp())
}

pub fn detection_probability(fov: &FovModel, range: f64, bearing: f64) -> f64 {
    if range > fov.rho_max {
        return 0.0;
    }
    let radial = logistic_cap(fov.p_d_max, fov.k_rho, range - fov.rho_max);
    let angular = if fov.omnidirectional {
        fov.p_d_max
    } else {
        if bearing.abs() > fov.theta_max {
            return 0.0;
        }
        logistic_cap(fov.p_d_max, fov.k_theta, bearing.abs() - fov.theta_max)
    };
    radial * angular
}

/// Isotropic Gaussian density of a displacement measurement around the true
/// target-minus-sensor displacement.
pub fn measurement_likelihood(
    sensor: &SensorState,
    target: &State,
    measurement: Point,
    noise_std: f64,
) -> f64 {
    let d = measurement - (target.position() - sensor.position);
    let var = noise_std * noise_std;
    (-(d.x * d.x + d.y * d.y) / (2.0 * var)).exp() / (2.0 * PI * var)
}

pub fn apply_action(sensor: &SensorState, action: &SensorAction) -> SensorState {
    SensorState::new(sensor.position + action.translation, sensor.bearing + action.rotation)
}

/// One constant-velocity step with discrete white-noise acceleration.
pub fn propagate_target<R: Rng + ?Sized>(motion: &MotionModel, state: &State, rng: &mut R) -> State {
    let t = motion.period;
    let (ax, ay) = if motion.process_noise_std > 0.0 {
        let ax: f64 = StandardNormal.sample(rng);
        let ay: f64 = StandardNormal.sample(rng);
        (ax * motion.process_noise_std, ay * motion.process_noise_std)
    } else {
        (0.0, 0.0)
    };
    let half_t2 = 0.5 * t * t;
    State::new(
        state.px + t * state.vx + half_t2 * ax,
        state.py + t * state.vy + half_t2 * ay,
        state.vx + t * ax,
        state.vy + t * ay,
    )
}
