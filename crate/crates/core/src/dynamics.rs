//! Robot motion model: the discrete action table, the per-step pose update
//! and the observation and motion noise generators.
//!
//! One simulation step is 1/25 s. Each action moves the robot by a fixed
//! distance and rotates it by a fixed angle per step, measured on the real
//! robot for 15 CPG parameter sets.

use std::f64::consts::TAU;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom2d::{wrap_angle, Vec2};

/// Simulation steps per second.
pub const STEPS_PER_SECOND: f64 = 25.0;
pub const NUM_ACTIONS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TurnClass {
    LeftSharp,
    LeftGradual,
    Straight,
    RightGradual,
    RightSharp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeedClass {
    Low,
    Middle,
    High,
}

impl fmt::Display for TurnClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for SpeedClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionEntry {
    pub id: usize,
    pub turn_class: TurnClass,
    pub speed_class: SpeedClass,
    /// Distance travelled per step (cm).
    pub dp: f64,
    /// Heading change per step (rad).
    pub dalpha: f64,
}

const fn entry(id: usize, turn_class: TurnClass, speed_class: SpeedClass, dp: f64, dalpha: f64) -> ActionEntry {
    ActionEntry {
        id,
        turn_class,
        speed_class,
        dp,
        dalpha,
    }
}

use SpeedClass::*;
use TurnClass::*;

// Rows are speed classes, columns turn classes. In the table's frame a left
// turn has negative heading change.
static CATALOG: [ActionEntry; NUM_ACTIONS] = [
    entry(0, LeftSharp, Low, 0.383, -0.0171),
    entry(1, LeftGradual, Low, 0.430, -0.0082),
    entry(2, Straight, Low, 0.423, 0.0),
    entry(3, RightGradual, Low, 0.421, 0.0110),
    entry(4, RightSharp, Low, 0.382, 0.0181),
    entry(5, LeftSharp, Middle, 0.748, -0.0323),
    entry(6, LeftGradual, Middle, 0.851, -0.0172),
    entry(7, Straight, Middle, 0.856, 0.0),
    entry(8, RightGradual, Middle, 0.817, 0.02105),
    entry(9, RightSharp, Middle, 0.738, 0.0295),
    entry(10, LeftSharp, High, 1.230, -0.0484),
    entry(11, LeftGradual, High, 1.330, -0.0308),
    entry(12, Straight, High, 1.670, 0.0),
    entry(13, RightGradual, High, 1.323, 0.0336),
    entry(14, RightSharp, High, 1.194, 0.0480),
];

pub fn action_catalog() -> &'static [ActionEntry; NUM_ACTIONS] {
    &CATALOG
}

pub fn action(id: usize) -> Option<&'static ActionEntry> {
    CATALOG.get(id)
}

/// Catalog as CSV: `id,turn_class,speed_class,dp,dalpha`.
pub fn catalog_csv() -> String {
    let mut s = String::from("id,turn_class,speed_class,dp,dalpha\n");
    for a in &CATALOG {
        s.push_str(&format!("{},{},{},{},{}\n", a.id, a.turn_class, a.speed_class, a.dp, a.dalpha));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentPose {
    pub p: Vec2,
    pub alpha: f64,
}

impl AgentPose {
    pub fn new(p: Vec2, alpha: f64) -> Self {
        Self {
            p,
            alpha: wrap_angle(alpha),
        }
    }
}

/// Whether the heading change is applied before or after the translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOrder {
    #[default]
    TurnThenTranslate,
    TranslateThenTurn,
}

/// Noise magnitudes are Gaussian (clamped at zero) with uniformly random
/// direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub obs_mean: f64,
    pub obs_std: f64,
    pub motion_mean: f64,
    pub motion_std: f64,
    /// Std of an optional zero-mean heading perturbation per step (rad).
    pub heading_std: f64,
    pub heading_noise: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            obs_mean: 4.0,
            obs_std: 0.5,
            motion_mean: 0.5,
            motion_std: 0.1,
            heading_std: 0.005,
            heading_noise: false,
        }
    }
}

impl NoiseModel {
    pub fn disabled() -> Self {
        Self {
            obs_mean: 0.0,
            obs_std: 0.0,
            motion_mean: 0.0,
            motion_std: 0.0,
            heading_std: 0.0,
            heading_noise: false,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.obs_mean, self.obs_std, self.motion_mean, self.motion_std, self.heading_std]
            .iter()
            .all(|v| v.is_finite())
            && self.obs_std >= 0.0
            && self.motion_std >= 0.0
            && self.heading_std >= 0.0
    }
}

fn sample_offset<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> Vec2 {
    // Both draws happen unconditionally so the stream layout does not depend
    // on the configured magnitudes.
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    let u: f64 = rng.random::<f64>() * TAU;
    let m = (mean + std * z).max(0.0);
    Vec2::from_angle(u) * m
}

pub fn sample_motion_noise<R: Rng + ?Sized>(model: &NoiseModel, rng: &mut R) -> Vec2 {
    sample_offset(model.motion_mean, model.motion_std, rng)
}

pub fn perturb_position<R: Rng + ?Sized>(p: Vec2, model: &NoiseModel, rng: &mut R) -> Vec2 {
    p + sample_offset(model.obs_mean, model.obs_std, rng)
}

pub fn sample_heading_noise<R: Rng + ?Sized>(model: &NoiseModel, rng: &mut R) -> f64 {
    if !model.heading_noise || model.heading_std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, model.heading_std)
        .map(|n| n.sample(rng))
        .unwrap_or(0.0)
}

/// Advance one pose by one step of action `a`.
pub fn step_pose(pose: AgentPose, a: &ActionEntry, noise: Vec2) -> AgentPose {
    step_pose_with(pose, a, noise, 0.0, StepOrder::TurnThenTranslate)
}

pub fn step_pose_with(
    pose: AgentPose,
    a: &ActionEntry,
    noise: Vec2,
    heading_noise: f64,
    order: StepOrder,
) -> AgentPose {
    let turned = wrap_angle(pose.alpha + a.dalpha + heading_noise);
    let travel_heading = match order {
        StepOrder::TurnThenTranslate => turned,
        StepOrder::TranslateThenTurn => pose.alpha,
    };
    AgentPose {
        p: pose.p + Vec2::from_angle(travel_heading) * a.dp + noise,
        alpha: turned,
    }
}
