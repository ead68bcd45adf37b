//! Coupled-oscillator central pattern generator driving the body joints.
//!
//! Each joint `i` carries an amplitude `R_i`, an offset `X_i` and a phase
//! `Φ_i`. Amplitude and offset relax to their targets at first-order rates;
//! phases are coupled through second-order dynamics that pull the pairwise
//! phase differences toward the configured biases while every phase velocity
//! settles at `2πf`. The joint deflection is `θ_i = X_i + R_i sin Φ_i`.
//!
//! The simulator does not consume these signals: the kinematic action table
//! in [`crate::dynamics`] is the distilled effect of them. This module exists
//! to generate and inspect the actuation waveforms.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ActionEntry, SpeedClass, TurnClass};

/// Amplitude convergence rate used on the real robot (1/s).
pub const ZETA_R: f64 = 11.68;
/// Phase convergence rate used on the real robot (1/s).
pub const ZETA_PHI: f64 = 5.84;
/// Phase bias between joints 1 and 2 (rad).
pub const PHI_12: f64 = -0.698;
/// Phase bias between joints 1 and 3 (rad).
pub const PHI_13: f64 = -2.513;

pub const DEFAULT_DT: f64 = 1e-3;
pub const MAX_DT: f64 = 0.01;
pub const DEFAULT_PHASE_RATE_CAP: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CpgError {
    #[error("invalid CPG configuration: {0}")]
    InvalidConfig(String),
    #[error("time step {0} s outside (0, {MAX_DT}]")]
    InvalidTimeStep(f64),
    #[error("integration diverged at t = {t} s")]
    IntegrationDiverged { t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpgConfig {
    pub amp_targets: Vec<f64>,
    pub offset_targets: Vec<f64>,
    /// `phase_bias[i][j]`, antisymmetric with zero diagonal.
    pub phase_bias: Vec<Vec<f64>>,
    pub freq: f64,
    pub zeta_r: f64,
    pub zeta_x: f64,
    pub zeta_phi: f64,
    pub phase_rate_cap: f64,
}

impl CpgConfig {
    /// Three-joint configuration with the robot's fixed convergence rates and
    /// phase biases.
    pub fn robot(amp_targets: [f64; 3], offset_targets: [f64; 3], freq: f64) -> Self {
        Self {
            amp_targets: amp_targets.to_vec(),
            offset_targets: offset_targets.to_vec(),
            phase_bias: chain_biases(&[PHI_12, PHI_13]),
            freq,
            zeta_r: ZETA_R,
            zeta_x: ZETA_R,
            zeta_phi: ZETA_PHI,
            phase_rate_cap: DEFAULT_PHASE_RATE_CAP,
        }
    }

    pub fn joints(&self) -> usize {
        self.amp_targets.len()
    }

    pub fn validate(&self) -> Result<(), CpgError> {
        let n = self.joints();
        let bad = |m: &str| Err(CpgError::InvalidConfig(m.to_string()));
        if n == 0 {
            return bad("no joints");
        }
        if self.offset_targets.len() != n || self.phase_bias.len() != n {
            return bad("per-joint vectors disagree in length");
        }
        if !(self.freq > 0.0) {
            return bad("frequency must be positive");
        }
        if !(self.zeta_r > 0.0 && self.zeta_x > 0.0 && self.zeta_phi > 0.0) {
            return bad("convergence rates must be positive");
        }
        for i in 0..n {
            if self.phase_bias[i].len() != n {
                return bad("phase bias matrix is not square");
            }
            if self.phase_bias[i][i] != 0.0 {
                return bad("phase bias diagonal must be zero");
            }
            for j in 0..n {
                if (self.phase_bias[i][j] + self.phase_bias[j][i]).abs() > 1e-12 {
                    return bad("phase bias matrix must be antisymmetric");
                }
            }
        }
        Ok(())
    }

    /// CPG targets for one entry of the action table. The table only records
    /// the kinematic effect of each parameter set; these values are a
    /// representative parameterization per speed and turn class.
    pub fn for_action(entry: &ActionEntry) -> Self {
        let (scale, freq) = match entry.speed_class {
            SpeedClass::Low => (0.5, 0.8),
            SpeedClass::Middle => (0.75, 1.2),
            SpeedClass::High => (1.0, 1.6),
        };
        let offset = match entry.turn_class {
            TurnClass::LeftSharp => -0.30,
            TurnClass::LeftGradual => -0.15,
            TurnClass::Straight => 0.0,
            TurnClass::RightGradual => 0.15,
            TurnClass::RightSharp => 0.30,
        };
        let amp = [0.17 * scale, 0.26 * scale, 0.35 * scale];
        let off = [0.5 * offset, 0.75 * offset, offset];
        Self::robot(amp, off, freq)
    }
}

/// Full antisymmetric bias matrix from the biases of joint 1 to joints 2..n,
/// `first_row[k] = φ_{1,k+2}`, completed consistently so that
/// `φ_{ij} = φ_{1j} − φ_{1i}`.
pub fn chain_biases(first_row: &[f64]) -> Vec<Vec<f64>> {
    let n = first_row.len() + 1;
    let row0 = |k: usize| if k == 0 { 0.0 } else { first_row[k - 1] };
    (0..n)
        .map(|i| (0..n).map(|j| row0(j) - row0(i)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpgState {
    pub amp: Vec<f64>,
    pub offset: Vec<f64>,
    pub phase: Vec<f64>,
    pub phase_rate: Vec<f64>,
    pub t: f64,
}

impl CpgState {
    pub fn zeros(n: usize) -> Self {
        Self {
            amp: vec![0.0; n],
            offset: vec![0.0; n],
            phase: vec![0.0; n],
            phase_rate: vec![0.0; n],
            t: 0.0,
        }
    }

    fn is_bounded(&self, cap: f64) -> bool {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        finite(&self.amp)
            && finite(&self.offset)
            && finite(&self.phase)
            && self.phase_rate.iter().all(|w| w.is_finite() && w.abs() <= cap)
    }
}

/// Time derivative of a [`CpgState`]. The derivative of `t` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CpgDerivative {
    pub amp: Vec<f64>,
    pub offset: Vec<f64>,
    pub phase: Vec<f64>,
    pub phase_rate: Vec<f64>,
}

pub fn cpg_derivative(state: &CpgState, cfg: &CpgConfig) -> CpgDerivative {
    let n = cfg.joints();
    let omega = TAU * cfg.freq;
    let zp = cfg.zeta_phi;
    let mut d = CpgDerivative {
        amp: vec![0.0; n],
        offset: vec![0.0; n],
        phase: state.phase_rate.clone(),
        phase_rate: vec![0.0; n],
    };
    for i in 0..n {
        d.amp[i] = cfg.zeta_r * (cfg.amp_targets[i] - state.amp[i]);
        d.offset[i] = cfg.zeta_x * (cfg.offset_targets[i] - state.offset[i]);
        let coupling: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| state.phase[i] - state.phase[j] - cfg.phase_bias[j][i])
            .sum();
        d.phase_rate[i] =
            -zp * zp * coupling - 2.0 * (n as f64 - 1.0) * zp * (state.phase_rate[i] - omega);
    }
    d
}

fn axpy(state: &CpgState, d: &CpgDerivative, h: f64) -> CpgState {
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + h * y).collect();
    CpgState {
        amp: add(&state.amp, &d.amp),
        offset: add(&state.offset, &d.offset),
        phase: add(&state.phase, &d.phase),
        phase_rate: add(&state.phase_rate, &d.phase_rate),
        t: state.t + h,
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn step_cpg(state: &CpgState, cfg: &CpgConfig, dt: f64) -> Result<CpgState, CpgError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(CpgError::InvalidTimeStep(dt));
    }
    let k1 = cpg_derivative(state, cfg);
    let k2 = cpg_derivative(&axpy(state, &k1, dt / 2.0), cfg);
    let k3 = cpg_derivative(&axpy(state, &k2, dt / 2.0), cfg);
    let k4 = cpg_derivative(&axpy(state, &k3, dt), cfg);
    let comb = |s: &[f64], a: &[f64], b: &[f64], c: &[f64], e: &[f64]| -> Vec<f64> {
        (0..s.len())
            .map(|i| s[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + e[i]))
            .collect()
    };
    let next = CpgState {
        amp: comb(&state.amp, &k1.amp, &k2.amp, &k3.amp, &k4.amp),
        offset: comb(&state.offset, &k1.offset, &k2.offset, &k3.offset, &k4.offset),
        phase: comb(&state.phase, &k1.phase, &k2.phase, &k3.phase, &k4.phase),
        phase_rate: comb(
            &state.phase_rate,
            &k1.phase_rate,
            &k2.phase_rate,
            &k3.phase_rate,
            &k4.phase_rate,
        ),
        t: state.t + dt,
    };
    if !next.is_bounded(cfg.phase_rate_cap) {
        return Err(CpgError::IntegrationDiverged { t: next.t });
    }
    Ok(next)
}

/// Joint deflection angles `θ_i = X_i + R_i sin Φ_i`.
pub fn joint_angle(state: &CpgState) -> Vec<f64> {
    state
        .amp
        .iter()
        .zip(&state.offset)
        .zip(&state.phase)
        .map(|((r, x), p)| x + r * p.sin())
        .collect()
}

/// Simulate `steps` RK4 steps from `init`, recording `(t, θ)` before each step.
pub fn trace(
    cfg: &CpgConfig,
    init: CpgState,
    dt: f64,
    steps: usize,
) -> Result<Vec<(f64, Vec<f64>)>, CpgError> {
    cfg.validate()?;
    let mut state = init;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push((state.t, joint_angle(&state)));
        state = step_cpg(&state, cfg, dt)?;
    }
    Ok(out)
}

/// Advance `init` for `seconds` with step `dt`, returning the final state.
pub fn simulate(cfg: &CpgConfig, init: CpgState, dt: f64, seconds: f64) -> Result<CpgState, CpgError> {
    cfg.validate()?;
    let steps = (seconds / dt).round() as usize;
    let mut state = init;
    for _ in 0..steps {
        state = step_cpg(&state, cfg, dt)?;
    }
    Ok(state)
}

/// Half the peak-to-peak excursion of a sampled signal.
pub fn half_peak_to_peak(signal: &[f64]) -> f64 {
    let (lo, hi) = signal
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    0.5 * (hi - lo)
}

/// Oscillation frequency from linearly interpolated upward crossings of
/// `level`. Returns `None` with fewer than two crossings.
pub fn crossing_frequency(times: &[f64], signal: &[f64], level: f64) -> Option<f64> {
    let mut crossings = Vec::new();
    for k in 1..signal.len() {
        let (a, b) = (signal[k - 1] - level, signal[k] - level);
        if a < 0.0 && b >= 0.0 {
            let frac = a / (a - b);
            crossings.push(times[k - 1] + frac * (times[k] - times[k - 1]));
        }
    }
    if crossings.len() < 2 {
        return None;
    }
    let span = crossings[crossings.len() - 1] - crossings[0];
    Some((crossings.len() - 1) as f64 / span)
}
