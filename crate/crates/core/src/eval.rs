//! Evaluation of trained controllers: tracking and formation errors,
//! scripted formation switches, scalability runs and trajectory plots.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{NoiseModel, STEPS_PER_SECOND};
use crate::env::{neighbors, EnvConfig, EnvError, FormationEnv, FormationSpec, Trajectory, WorldState};
use crate::geom2d::{CirclePath, Orientation, Vec2};
use crate::marl::{greedy_joint_action, normalize_all, MarlError};
use crate::nn::{self, NnError, QNetBank};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid evaluation settings: {0}")]
    InvalidSettings(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure { path: String, source: std::io::Error },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Marl(#[from] MarlError),
}

/// Default time between formation switches: 75 s.
pub const SWITCH_INTERVAL: usize = 75 * STEPS_PER_SECOND as usize;

/// Mean squared errors of one trajectory and their roots (cm², cm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub err_t_mse: f64,
    pub err_t_rmse: f64,
    pub err_f_mse: f64,
    pub err_f_rmse: f64,
}

impl ErrorSummary {
    fn from_mse(err_t_mse: f64, err_f_mse: f64) -> Self {
        Self {
            err_t_mse,
            err_t_rmse: err_t_mse.sqrt(),
            err_f_mse,
            err_f_rmse: err_f_mse.sqrt(),
        }
    }
}

/// Tracking and formation errors over `states`, each scored against the
/// formation it carries.
///
/// `err_t` averages `(|p_i − c| − R)²` over agents and steps. `err_f`
/// averages `(d_ij − d̂_ij)²` over both nearest neighbours of every agent,
/// with the neighbours re-resolved at every step.
pub fn compute_errors(states: &[WorldState]) -> Result<ErrorSummary, EvalError> {
    if states.is_empty() || states[0].n_agents() == 0 {
        return Err(EvalError::EmptyTrajectory);
    }
    let mut sum_t = 0.0;
    let mut sum_f = 0.0;
    let mut count = 0usize;
    for state in states {
        let path = &state.spec.path;
        let slots = state.ring_slots();
        for (i, pose) in state.poses.iter().enumerate() {
            sum_t += (pose.p.distance(path.center) - path.radius).powi(2);
            let (j1, j2) = neighbors(state, i);
            for j in [j1, j2] {
                let d = pose.p.distance(state.poses[j].p);
                sum_f += (d - state.desired_distance(&slots, i, j)).powi(2);
            }
            count += 1;
        }
    }
    let n = count as f64;
    Ok(ErrorSummary::from_mse(sum_t / n, sum_f / (2.0 * n)))
}

/// One formation change: from `step` on, agents target `arc_angles`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub step: usize,
    pub arc_angles: Vec<f64>,
}

/// Timeline of formations within an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub events: Vec<ScenarioEvent>,
}

impl ScenarioScript {
    pub fn new(events: Vec<ScenarioEvent>) -> Result<Self, EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidScenario(m.to_string()));
        match events.first() {
            None => return bad("no formations"),
            Some(e) if e.step != 0 => return bad("first formation must start at step 0"),
            _ => {}
        }
        if events.windows(2).any(|w| w[1].step <= w[0].step) {
            return bad("switch steps must be strictly increasing");
        }
        let n = events[0].arc_angles.len();
        if events.iter().any(|e| e.arc_angles.len() != n) {
            return bad("every formation must have the same number of slots");
        }
        Ok(Self { events })
    }

    /// A single fixed formation.
    pub fn fixed(arc_angles: Vec<f64>) -> Self {
        Self {
            events: vec![ScenarioEvent { step: 0, arc_angles }],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.events[0].arc_angles.len()
    }

    /// Arc angles in force at `step`.
    pub fn arcs_at(&self, step: usize) -> &[f64] {
        let k = self.events.partition_point(|e| e.step <= step);
        &self.events[k.saturating_sub(1)].arc_angles
    }
}

/// Equilateral, then isosceles right, then the 90°/60°/30° right triangle.
pub fn formation_switch_scenario(interval: usize) -> ScenarioScript {
    let arcs = |name| named_formation(name, 3).expect("built-in triangle");
    ScenarioScript::new(vec![
        ScenarioEvent {
            step: 0,
            arc_angles: arcs("equilateral"),
        },
        ScenarioEvent {
            step: interval,
            arc_angles: arcs("isosceles-right"),
        },
        ScenarioEvent {
            step: 2 * interval,
            arc_angles: arcs("right-30-60"),
        },
    ])
    .expect("increasing switch steps")
}

/// Arc angles of a named formation for `n` agents.
///
/// Triangles named by their interior angles are placed on the circle with
/// central angles twice the inscribed angles opposite each side.
pub fn named_formation(name: &str, n: usize) -> Result<Vec<f64>, EvalError> {
    let need = |k: usize| {
        if n == k {
            Ok(())
        } else {
            Err(EvalError::InvalidSettings(format!("formation '{name}' needs {k} agents, got {n}")))
        }
    };
    let regular = || vec![TAU / n as f64; n];
    match name {
        "regular" => {
            if n < 2 {
                return Err(EvalError::InvalidSettings("need at least 2 agents".into()));
            }
            Ok(regular())
        }
        "equilateral" => need(3).map(|_| regular()),
        "square" => need(4).map(|_| regular()),
        "decagon" => need(10).map(|_| regular()),
        "isosceles-right" => need(3).map(|_| vec![PI / 2.0, PI / 2.0, PI]),
        "right-30-60" => need(3).map(|_| vec![PI, 2.0 * PI / 3.0, PI / 3.0]),
        other => Err(EvalError::InvalidSettings(format!(
            "unknown formation '{other}' (expected regular, equilateral, square, decagon, isosceles-right, right-30-60)"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub radius: f64,
    pub episodes: usize,
    pub episode_length: usize,
    /// Leading steps excluded from the error metrics while agents converge.
    pub settle_steps: usize,
    pub noise: bool,
    pub noise_model: NoiseModel,
    pub seed: u64,
    pub offset_range: f64,
    pub heading_range: f64,
    pub lookahead: f64,
    /// Worker threads; zero uses the available parallelism.
    pub threads: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let env = EnvConfig::default();
        Self {
            radius: 70.0,
            episodes: 20,
            episode_length: 1500,
            settle_steps: 750,
            noise: true,
            noise_model: env.noise,
            seed: 0,
            offset_range: env.offset_range,
            heading_range: env.heading_range,
            lookahead: env.lookahead,
            threads: 0,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidSettings(m));
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        if self.settle_steps >= self.episode_length {
            return bad(format!(
                "settle_steps {} leaves nothing of a {}-step episode",
                self.settle_steps, self.episode_length
            ));
        }
        if !(self.radius > self.offset_range) {
            return bad(format!("radius {} must exceed offset_range {}", self.radius, self.offset_range));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub errors: ErrorSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: String,
    pub n_agents: usize,
    pub n_episodes: usize,
    pub radius: f64,
    pub noise: bool,
    pub seed: u64,
    pub episode_length: usize,
    pub settle_steps: usize,
    /// Mean of the per-episode mean squared errors (cm²).
    pub err_t_mse: f64,
    /// Root of `err_t_mse` (cm).
    pub err_t_rmse: f64,
    pub err_f_mse: f64,
    pub err_f_rmse: f64,
    /// Standard deviation of the per-episode root errors (cm).
    pub err_t_rmse_std: f64,
    pub err_f_rmse_std: f64,
    pub episodes: Vec<EpisodeReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Per-episode seeds drawn from one stream seeded by `seed`.
pub fn episode_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..episodes).map(|_| master.next_u64()).collect()
}

/// Greedy rollout of one episode.
pub fn rollout(
    bank: &QNetBank,
    scenario: &ScenarioScript,
    settings: &EvalSettings,
    episode_seed: u64,
) -> Result<Trajectory, EvalError> {
    let n = scenario.n_agents();
    let path = CirclePath::new(Vec2::ZERO, settings.radius, Orientation::CounterClockwise)
        .map_err(EnvError::from)?;
    let env_config = EnvConfig {
        n_agents: n,
        radius_min: settings.radius,
        radius_max: settings.radius,
        offset_range: settings.offset_range,
        heading_range: settings.heading_range,
        lookahead: settings.lookahead,
        episode_length: settings.episode_length,
        noise: if settings.noise {
            settings.noise_model
        } else {
            NoiseModel::disabled()
        },
        ..EnvConfig::default()
    };
    let mut env = FormationEnv::new(env_config, episode_seed)?;
    let spec_at = |step: usize| FormationSpec::new(path, scenario.arcs_at(step).to_vec());
    let mut obs = normalize_all(&env.reset_to_spec(spec_at(0)?)?);
    let mut traj = Trajectory::new(env.state().clone());
    for step in 0..settings.episode_length {
        if step > 0 && scenario.arcs_at(step) != scenario.arcs_at(step - 1) {
            env.set_formation(spec_at(step)?)?;
            obs = normalize_all(&env.observe()?);
        }
        let actions = greedy_joint_action(bank, &obs)?;
        let result = env.step(&actions)?;
        obs = normalize_all(&result.next_observations);
        traj.push(actions, &result);
    }
    Ok(traj)
}

/// Errors of a rollout after the settle window.
pub fn score_trajectory(traj: &Trajectory, settle_steps: usize) -> Result<ErrorSummary, EvalError> {
    let start = (settle_steps + 1).min(traj.states.len());
    compute_errors(&traj.states[start..])
}

/// Output of [`evaluate`]: the report plus, optionally, the rollouts.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub trajectories: Vec<Trajectory>,
}

/// Greedy evaluation of `bank` on `scenario` over several episodes.
pub fn evaluate(
    bank: &QNetBank,
    algorithm: &str,
    scenario: &ScenarioScript,
    settings: &EvalSettings,
    keep_trajectories: bool,
) -> Result<EvalRun, EvalError> {
    settings.validate()?;
    let n = scenario.n_agents();
    let seeds = episode_seeds(settings.seed, settings.episodes);
    let threads = match settings.threads {
        0 => std::thread::available_parallelism().map_or(1, |t| t.get()),
        t => t,
    }
    .min(seeds.len());

    // Episodes are split into contiguous chunks; results keep episode order.
    let chunk = seeds.len().div_ceil(threads);
    let results: Vec<Result<(ErrorSummary, Option<Trajectory>), EvalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&seed| {
                            let traj = rollout(bank, scenario, settings, seed)?;
                            let errors = score_trajectory(&traj, settings.settle_steps)?;
                            Ok((errors, keep_trajectories.then_some(traj)))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });

    let mut episodes = Vec::with_capacity(seeds.len());
    let mut trajectories = Vec::new();
    for (k, (res, &seed)) in results.into_iter().zip(&seeds).enumerate() {
        let (errors, traj) = res?;
        episodes.push(EpisodeReport {
            episode: k,
            seed,
            errors,
        });
        trajectories.extend(traj);
    }
    let count = episodes.len() as f64;
    let err_t_mse = episodes.iter().map(|e| e.errors.err_t_mse).sum::<f64>() / count;
    let err_f_mse = episodes.iter().map(|e| e.errors.err_f_mse).sum::<f64>() / count;
    let t_rmse: Vec<f64> = episodes.iter().map(|e| e.errors.err_t_rmse).collect();
    let f_rmse: Vec<f64> = episodes.iter().map(|e| e.errors.err_f_rmse).collect();
    let report = EvalReport {
        algorithm: algorithm.to_string(),
        n_agents: n,
        n_episodes: episodes.len(),
        radius: settings.radius,
        noise: settings.noise,
        seed: settings.seed,
        episode_length: settings.episode_length,
        settle_steps: settings.settle_steps,
        err_t_mse,
        err_t_rmse: err_t_mse.sqrt(),
        err_f_mse,
        err_f_rmse: err_f_mse.sqrt(),
        err_t_rmse_std: std_dev(&t_rmse),
        err_f_rmse_std: std_dev(&f_rmse),
        episodes,
    };
    Ok(EvalRun { report, trajectories })
}

/// Load a checkpoint, mapping every failure to [`EvalError::IncompatibleCheckpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(QNetBank, nn::CheckpointMeta), EvalError> {
    let bytes = std::fs::read(path).map_err(|e| EvalError::IoFailure {
        path: path.display().to_string(),
        source: e,
    })?;
    nn::deserialize(&bytes).map_err(|e: NnError| EvalError::IncompatibleCheckpoint(format!("{}: {e}", path.display())))
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// SVG plot of a trajectory: the path circle, one polyline per agent, a
/// hollow marker at each start and a filled marker at each end.
pub fn render_trajectory(traj: &Trajectory) -> Result<String, EvalError> {
    let first = traj.states.first().ok_or(EvalError::EmptyTrajectory)?;
    let path = first.spec.path;
    let (mut lo, mut hi) = (
        Vec2::new(path.center.x - path.radius, path.center.y - path.radius),
        Vec2::new(path.center.x + path.radius, path.center.y + path.radius),
    );
    for s in &traj.states {
        for pose in &s.poses {
            lo = Vec2::new(lo.x.min(pose.p.x), lo.y.min(pose.p.y));
            hi = Vec2::new(hi.x.max(pose.p.x), hi.y.max(pose.p.y));
        }
    }
    let margin = 10.0;
    let (w, h) = (hi.x - lo.x + 2.0 * margin, hi.y - lo.y + 2.0 * margin);
    // Flip y so the plot uses the usual mathematical orientation.
    let tx = |p: Vec2| (p.x - lo.x + margin, hi.y - p.y + margin);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.2} {h:.2}" width="{:.0}" height="{:.0}">"#,
        w * 4.0,
        h * 4.0
    );
    let (cx, cy) = tx(path.center);
    let _ = writeln!(
        s,
        r##"<circle cx="{cx:.3}" cy="{cy:.3}" r="{:.3}" fill="none" stroke="#999" stroke-width="0.5" stroke-dasharray="2,2"/>"##,
        path.radius
    );
    for i in 0..first.n_agents() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for st in &traj.states {
            let (x, y) = tx(st.poses[i].p);
            let _ = write!(points, "{x:.3},{y:.3} ");
        }
        if traj.states.len() > 1 {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="0.4"/>"#,
                points.trim_end()
            );
        }
        let (x0, y0) = tx(first.poses[i].p);
        let _ = writeln!(
            s,
            r#"<circle cx="{x0:.3}" cy="{y0:.3}" r="1.5" fill="none" stroke="{color}" stroke-width="0.5"/>"#
        );
        if traj.states.len() > 1 {
            let last = traj.states.last().expect("non-empty");
            let (x1, y1) = tx(last.poses[i].p);
            let _ = writeln!(s, r#"<circle cx="{x1:.3}" cy="{y1:.3}" r="1.5" fill="{color}"/>"#);
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_svg(traj: &Trajectory, path: &Path) -> Result<(), EvalError> {
    let svg = render_trajectory(traj)?;
    std::fs::write(path, svg).map_err(|e| EvalError::IoFailure {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::AgentPose;
    use crate::geom2d::chord;
    use crate::marl::{algorithm_variants, LearnerConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn ring_state(radius: f64, arcs: &[f64], offsets: &[f64]) -> WorldState {
        let path = CirclePath::new(Vec2::ZERO, radius, Orientation::CounterClockwise).unwrap();
        let spec = FormationSpec::new(path, arcs.to_vec()).unwrap();
        let mut theta = 0.3;
        let poses = arcs
            .iter()
            .zip(offsets)
            .map(|(a, d)| {
                let p = Vec2::from_angle(theta) * (radius + d);
                theta += a;
                AgentPose::new(p, theta + PI / 2.0)
            })
            .collect();
        WorldState {
            poses,
            step_index: 0,
            spec,
        }
    }

    /// Direct triple sum over steps, agents and neighbours, with neighbours
    /// found by sorting all distances.
    fn naive_errors(states: &[WorldState]) -> (f64, f64) {
        let (mut t, mut f) = (0.0, 0.0);
        let big_t = states.len() as f64;
        let n = states[0].n_agents() as f64;
        for s in states {
            let r = s.spec.path.radius;
            // Desired distances from scratch: slot order by polar angle from agent 0.
            let base = s.poses[0].p.angle();
            let mut order: Vec<(f64, usize)> = s
                .poses
                .iter()
                .enumerate()
                .map(|(i, p)| (if i == 0 { 0.0 } else { (p.p.angle() - base).rem_euclid(TAU) }, i))
                .collect();
            order.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut slot = vec![0; order.len()];
            for (k, (_, i)) in order.iter().enumerate() {
                slot[*i] = k;
            }
            for i in 0..s.n_agents() {
                let pi = s.poses[i].p;
                t += ((pi.x * pi.x + pi.y * pi.y).sqrt() - r).powi(2);
                let mut others: Vec<(f64, usize)> = (0..s.n_agents())
                    .filter(|&j| j != i)
                    .map(|j| (pi.distance(s.poses[j].p), j))
                    .collect();
                others.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for &(d, j) in others.iter().take(2) {
                    let (a, b) = (slot[i].min(slot[j]), slot[i].max(slot[j]));
                    let arc: f64 = s.spec.arc_angles[a..b].iter().sum();
                    let want = 2.0 * r * (arc / 2.0).sin().abs();
                    f += (d - want).powi(2);
                }
            }
        }
        (t / (n * big_t), f / (2.0 * n * big_t))
    }

    #[test]
    fn perfect_formation_has_zero_error() {
        let arcs = [TAU / 3.0; 3];
        let states: Vec<_> = (0..5).map(|_| ring_state(70.0, &arcs, &[0.0; 3])).collect();
        let e = compute_errors(&states).unwrap();
        assert!(e.err_t_mse < 1e-20 && e.err_f_mse < 1e-20);
    }

    #[test]
    fn constant_radial_error() {
        // One agent at constant distance 2 cm off the path; the other two
        // are far enough that only err_t is inspected.
        let states: Vec<_> = (0..10).map(|_| ring_state(70.0, &[PI, PI], &[2.0, 2.0])).collect();
        let e = compute_errors(&states).unwrap();
        assert!((e.err_t_mse - 4.0).abs() < 1e-12);
        assert!((e.err_t_rmse - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_trajectory_is_an_error() {
        assert!(matches!(compute_errors(&[]), Err(EvalError::EmptyTrajectory)));
    }

    #[test]
    fn matches_naive_triple_loop() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = r.random_range(3..8);
            let radius = r.random_range(40.0..100.0);
            let steps = r.random_range(1..20);
            let arcs = vec![TAU / n as f64; n];
            let states: Vec<_> = (0..steps)
                .map(|_| {
                    let mut s = ring_state(radius, &arcs, &vec![0.0; n]);
                    for p in &mut s.poses {
                        p.p = Vec2::new(r.random_range(-120.0..120.0), r.random_range(-120.0..120.0));
                    }
                    s
                })
                .collect();
            let e = compute_errors(&states).unwrap();
            let (t, f) = naive_errors(&states);
            assert!((e.err_t_mse - t).abs() < 1e-9 * t.max(1.0));
            assert!((e.err_f_mse - f).abs() < 1e-9 * f.max(1.0));
        }
    }

    proptest! {
        #[test]
        fn rigid_motion_invariance(
            offsets in prop::collection::vec(-10.0f64..10.0, 4),
            shift in (-50.0f64..50.0, -50.0f64..50.0),
            rot in -PI..PI,
        ) {
            let s = ring_state(70.0, &[1.0, 2.0, 1.5, TAU - 4.5], &offsets);
            let mut moved = s.clone();
            let d = Vec2::new(shift.0, shift.1);
            moved.spec.path.center = s.spec.path.center.rotated(rot) + d;
            for p in &mut moved.poses {
                p.p = p.p.rotated(rot) + d;
            }
            let a = compute_errors(&[s]).unwrap();
            let b = compute_errors(&[moved]).unwrap();
            prop_assert!((a.err_t_mse - b.err_t_mse).abs() < 1e-8);
            prop_assert!((a.err_f_mse - b.err_f_mse).abs() < 1e-8);
            prop_assert_eq!(a.err_t_rmse * a.err_t_rmse, a.err_t_mse.sqrt().powi(2));
        }
    }

    #[test]
    fn switch_scenario_chords() {
        let sc = formation_switch_scenario(SWITCH_INTERVAL);
        assert_eq!(sc.events.iter().map(|e| e.step).collect::<Vec<_>>(), vec![0, 1875, 3750]);
        let spec = |k: usize| {
            let path = CirclePath::new(Vec2::ZERO, 70.0, Orientation::CounterClockwise).unwrap();
            FormationSpec::new(path, sc.events[k].arc_angles.clone()).unwrap()
        };
        let eq = spec(0);
        assert!((eq.slot_distance(0, 1) - 121.24).abs() < 0.01);
        let iso = spec(1);
        let mut d = [iso.slot_distance(0, 1), iso.slot_distance(1, 2), iso.slot_distance(0, 2)];
        d.sort_by(f64::total_cmp);
        assert!((d[0] - 98.99).abs() < 0.01 && (d[1] - 98.99).abs() < 0.01 && (d[2] - 140.0).abs() < 1e-9);
        let right = spec(2);
        assert!((right.arc_angles.iter().sum::<f64>() - TAU).abs() < 1e-12);
        // The hypotenuse subtends a semicircle.
        assert!((right.slot_distance(0, 1) - chord(70.0, PI)).abs() < 1e-9);
        assert_eq!(sc.arcs_at(1874), eq.arc_angles.as_slice());
        assert_eq!(sc.arcs_at(1875), iso.arc_angles.as_slice());
    }

    #[test]
    fn scenario_validation() {
        let ev = |step| ScenarioEvent {
            step,
            arc_angles: vec![PI, PI],
        };
        assert!(ScenarioScript::new(vec![]).is_err());
        assert!(ScenarioScript::new(vec![ev(1)]).is_err());
        assert!(ScenarioScript::new(vec![ev(0), ev(5), ev(5)]).is_err());
        assert!(ScenarioScript::new(vec![ev(0), ev(5)]).is_ok());
    }

    #[test]
    fn named_formations_check_agent_count() {
        assert_eq!(named_formation("decagon", 10).unwrap().len(), 10);
        assert!(named_formation("decagon", 3).is_err());
        assert!(named_formation("hexagram", 3).is_err());
    }

    fn quick_settings() -> EvalSettings {
        EvalSettings {
            episodes: 3,
            episode_length: 60,
            settle_steps: 10,
            threads: 2,
            ..EvalSettings::default()
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_thread_independent() {
        let l = algorithm_variants(&LearnerConfig::default(), 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let sc = ScenarioScript::fixed(named_formation("equilateral", 3).unwrap());
        let a = evaluate(&l.online, "c2vdn", &sc, &quick_settings(), false).unwrap();
        let single = EvalSettings {
            threads: 1,
            ..quick_settings()
        };
        let b = evaluate(&l.online, "c2vdn", &sc, &single, false).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        assert_eq!(a.report.n_episodes, 3);
        assert!(a.report.err_t_rmse.is_finite() && a.report.err_f_rmse.is_finite());
        assert_eq!(a.report.err_t_rmse.powi(2), a.report.err_t_mse.sqrt().powi(2));
    }

    #[test]
    fn ten_agents_from_three_agent_network() {
        let l = algorithm_variants(&LearnerConfig::default(), 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let sc = ScenarioScript::fixed(named_formation("decagon", 10).unwrap());
        let settings = EvalSettings {
            radius: 80.0,
            episodes: 1,
            ..quick_settings()
        };
        let run = evaluate(&l.online, "c2vdn", &sc, &settings, true).unwrap();
        assert_eq!(run.trajectories[0].states[0].n_agents(), 10);
    }

    #[test]
    fn zero_episodes_rejected() {
        let l = algorithm_variants(&LearnerConfig::default(), 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let sc = ScenarioScript::fixed(named_formation("equilateral", 3).unwrap());
        let settings = EvalSettings {
            episodes: 0,
            ..quick_settings()
        };
        assert!(matches!(
            evaluate(&l.online, "c2vdn", &sc, &settings, false),
            Err(EvalError::InvalidSettings(_))
        ));
    }

    #[test]
    fn svg_has_circle_and_markers() {
        let traj = Trajectory::new(ring_state(70.0, &[TAU / 3.0; 3], &[0.0; 3]));
        let svg = render_trajectory(&traj).unwrap();
        assert_eq!(svg.matches("<circle").count(), 4);
        assert_eq!(svg, render_trajectory(&traj).unwrap());
        assert!(matches!(
            render_trajectory(&Trajectory::default()),
            Err(EvalError::EmptyTrajectory)
        ));
    }

    #[test]
    fn switching_rollout_updates_formation() {
        let l = algorithm_variants(&LearnerConfig::default(), 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let sc = formation_switch_scenario(20);
        let settings = EvalSettings {
            episode_length: 70,
            ..quick_settings()
        };
        let traj = rollout(&l.online, &sc, &settings, 9).unwrap();
        assert_eq!(traj.states[19].spec.arc_angles, sc.events[0].arc_angles);
        assert_eq!(traj.states[21].spec.arc_angles, sc.events[1].arc_angles);
        assert_eq!(traj.states[70].spec.arc_angles, sc.events[2].arc_angles);
    }
}
