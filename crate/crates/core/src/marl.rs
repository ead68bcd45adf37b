//! Value-decomposition learners: C2VDN, VDN and independent DQN.
//!
//! All three share the replay buffer, target networks, ε-greedy exploration
//! and the episode loop. They differ in network tying and in how the TD
//! loss is formed: the decomposed learners regress the summed team value
//! `Q_tot = Σ_i Q_i`, while independent DQN gives every agent its own TD
//! loss on the team reward.

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::NUM_ACTIONS;
use crate::env::{EnvConfig, EnvError, FormationEnv, Observation, OBS_DIM};
use crate::nn::{self, AdamState, CheckpointMeta, Grads, NnError, QNetBank, Sharing};

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
    #[error("agent count mismatch: expected {expected}, got {got}")]
    AgentCount { expected: usize, got: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    C2vdn,
    Vdn,
    IqlDqn,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::C2vdn => "c2vdn",
            Algorithm::Vdn => "vdn",
            Algorithm::IqlDqn => "iql_dqn",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [Algorithm::C2vdn, Algorithm::Vdn, Algorithm::IqlDqn]
            .into_iter()
            .find(|a| a.tag() == tag)
    }

    /// Whether the loss is formed on the summed team value.
    pub fn decomposed(self) -> bool {
        !matches!(self, Algorithm::IqlDqn)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Gradient steps between target-network syncs.
    pub target_update_period: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Environment steps over which ε decays linearly.
    pub epsilon_decay_steps: u64,
    pub episodes: usize,
    /// Transitions collected before the first gradient step.
    pub warmup: usize,
    /// C2VDN only: tie trunk and advantage head across agents too.
    pub share_advantage_heads: bool,
    /// VDN only: use dueling heads (still without any sharing).
    pub vdn_dueling: bool,
    /// Subtract the mean advantage when combining dueling heads.
    pub mean_advantage: bool,
    /// Rewards are multiplied by this before entering the TD loss.
    pub reward_scale: f64,
    /// Global gradient-norm clip; zero disables clipping.
    pub grad_clip: f64,
    /// Record wall-clock seconds in the training log. Off keeps logs
    /// byte-reproducible.
    pub log_wall_time: bool,
    /// Episodes between greedy selection rollouts for the best checkpoint.
    /// Zero selects by the moving average of training reward instead.
    pub select_every: usize,
    /// Fixed-seed greedy episodes per selection rollout.
    pub select_episodes: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::C2vdn,
            gamma: 0.95,
            lr: 3e-4,
            batch_size: 64,
            buffer_capacity: 100_000,
            target_update_period: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 50_000,
            episodes: 1500,
            warmup: 1000,
            share_advantage_heads: true,
            vdn_dueling: false,
            mean_advantage: false,
            reward_scale: 0.01,
            grad_clip: 10.0,
            log_wall_time: false,
            select_every: 50,
            select_episodes: 4,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), MarlError> {
        let bad = |m: &str| Err(MarlError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must hold at least one batch");
        }
        if self.target_update_period == 0 {
            return bad("target_update_period must be positive");
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon values must lie in [0, 1]");
            }
        }
        if self.episodes == 0 {
            return bad("episodes must be positive");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative");
        }
        if self.select_every > 0 && self.select_episodes == 0 {
            return bad("select_episodes must be positive when select_every is set");
        }
        Ok(())
    }

    /// ε after `step` environment steps.
    pub fn epsilon_at(&self, step: u64) -> f64 {
        if self.epsilon_decay_steps == 0 || step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// One joint step as stored in the replay buffer. Observations are kept in
/// network-input (normalized) form.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub joint_obs: Vec<[f64; OBS_DIM]>,
    pub joint_action: Vec<usize>,
    pub team_reward: f64,
    pub next_joint_obs: Vec<[f64; OBS_DIM]>,
    pub done: bool,
}

impl Transition {
    pub fn n_agents(&self) -> usize {
        self.joint_action.len()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
    n_agents: Option<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::new(),
            capacity,
            cursor: 0,
            n_agents: None,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) -> Result<(), MarlError> {
        let n = t.n_agents();
        if t.joint_obs.len() != n || t.next_joint_obs.len() != n {
            return Err(MarlError::AgentCount {
                expected: n,
                got: t.joint_obs.len().min(t.next_joint_obs.len()),
            });
        }
        match self.n_agents {
            Some(expected) if expected != n => return Err(MarlError::AgentCount { expected, got: n }),
            _ => self.n_agents = Some(n),
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// `batch` distinct transitions chosen uniformly (fewer if the buffer
    /// is smaller).
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        let k = batch.min(self.items.len());
        index::sample(rng, self.items.len(), k)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

/// Greedy action with ties broken toward the lowest id.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (u, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = u;
        }
    }
    best
}

/// ε-greedy choice. A uniform draw is always consumed so the random stream
/// does not depend on ε.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    let explore = rng.random::<f64>() < epsilon;
    if explore {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// Greedy joint action of `bank` for the given normalized observations.
pub fn greedy_joint_action(bank: &QNetBank, joint_obs: &[[f64; OBS_DIM]]) -> Result<Vec<usize>, MarlError> {
    joint_obs
        .iter()
        .enumerate()
        .map(|(i, o)| Ok(argmax(&bank.forward(bank.slot_for_agent(i), o)?.q)))
        .collect()
}

/// `Σ_i Q_i(o_i, u_i)`.
pub fn q_tot(bank: &QNetBank, joint_obs: &[[f64; OBS_DIM]], joint_action: &[usize]) -> Result<f64, MarlError> {
    if joint_obs.len() != joint_action.len() {
        return Err(MarlError::AgentCount {
            expected: joint_obs.len(),
            got: joint_action.len(),
        });
    }
    let mut total = 0.0;
    for (i, (o, &u)) in joint_obs.iter().zip(joint_action).enumerate() {
        total += bank.forward(bank.slot_for_agent(i), o)?.q[u];
    }
    Ok(total)
}

/// `r + γ(1 − done) Σ_i max_u Q_i^target(o'_i, u)`.
pub fn td_target(target: &QNetBank, t: &Transition, gamma: f64, reward_scale: f64) -> Result<f64, MarlError> {
    let r = t.team_reward * reward_scale;
    if t.done || gamma == 0.0 {
        return Ok(r);
    }
    let mut next = 0.0;
    for (i, o) in t.next_joint_obs.iter().enumerate() {
        let q = target.forward(target.slot_for_agent(i), o)?.q;
        next += q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(r + gamma * next)
}

/// Online and target networks with their optimizer.
#[derive(Debug, Clone)]
pub struct Learner {
    pub config: LearnerConfig,
    pub online: QNetBank,
    pub target: QNetBank,
    pub adam: AdamState,
    grads: Grads,
    pub n_agents: usize,
    pub grad_steps: u64,
}

/// Build the networks for `config.algorithm`.
pub fn algorithm_variants<R: Rng + ?Sized>(
    config: &LearnerConfig,
    n_agents: usize,
    rng: &mut R,
) -> Result<Learner, MarlError> {
    config.validate()?;
    if n_agents == 0 {
        return Err(MarlError::InvalidConfig("need at least one agent".into()));
    }
    let (sharing, dueling) = match config.algorithm {
        Algorithm::C2vdn if config.share_advantage_heads => (Sharing::Full, true),
        Algorithm::C2vdn => (Sharing::ValueHead, true),
        Algorithm::Vdn => (Sharing::None, config.vdn_dueling),
        Algorithm::IqlDqn => (Sharing::None, false),
    };
    let mut online = QNetBank::build(n_agents, sharing, dueling, rng);
    online.mean_advantage = config.mean_advantage;
    let target = online.clone();
    let adam = AdamState::new(&online, config.lr);
    let grads = Grads::zeros_like(&online);
    Ok(Learner {
        config: config.clone(),
        online,
        target,
        adam,
        grads,
        n_agents,
        grad_steps: 0,
    })
}

impl Learner {
    /// Q-values of every (transition, agent) pair, grouped per network slot.
    /// Returns per-slot caches and, per slot, the `(batch index, agent)` of
    /// every row.
    fn batched_forward(
        bank: &QNetBank,
        batch: &[&Transition],
        next: bool,
    ) -> Result<Vec<(nn::ForwardCache, Vec<(usize, usize)>)>, MarlError> {
        let n = batch[0].n_agents();
        let mut out = Vec::with_capacity(bank.slot_count());
        for slot in 0..bank.slot_count() {
            let mut rows = Vec::new();
            let mut input = Vec::new();
            for (b, t) in batch.iter().enumerate() {
                let obs = if next { &t.next_joint_obs } else { &t.joint_obs };
                for i in (0..n).filter(|&i| bank.slot_for_agent(i) == slot) {
                    rows.push((b, i));
                    input.extend_from_slice(&obs[i]);
                }
            }
            if rows.is_empty() {
                continue;
            }
            let cache = bank.forward_batch(slot, &input, rows.len())?;
            out.push((cache, rows));
        }
        Ok(out)
    }

    /// One gradient step on the TD loss of `batch`. Returns the loss.
    pub fn learn_step(&mut self, batch: &[&Transition]) -> Result<f64, MarlError> {
        let Some(first) = batch.first() else {
            return Err(MarlError::EmptyBatch);
        };
        let n = first.n_agents();
        if n != self.n_agents {
            return Err(MarlError::AgentCount {
                expected: self.n_agents,
                got: n,
            });
        }
        if let Some(t) = batch.iter().find(|t| t.n_agents() != n) {
            return Err(MarlError::AgentCount {
                expected: n,
                got: t.n_agents(),
            });
        }
        let bsz = batch.len();
        let cfg = &self.config;

        // Per (batch, agent): chosen-action value and greedy target value.
        let mut q_sel = vec![0.0; bsz * n];
        let mut q_next = vec![0.0; bsz * n];
        let online = Self::batched_forward(&self.online, batch, false)?;
        for (cache, rows) in &online {
            for (r, &(b, i)) in rows.iter().enumerate() {
                q_sel[b * n + i] = cache.q_row(r)[batch[b].joint_action[i]];
            }
        }
        if cfg.gamma > 0.0 {
            for (cache, rows) in Self::batched_forward(&self.target, batch, true)? {
                for (r, &(b, i)) in rows.iter().enumerate() {
                    q_next[b * n + i] = cache.q_row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                }
            }
        }

        // dL/dQ_i for the chosen action of each (batch, agent).
        let mut d_sel = vec![0.0; bsz * n];
        let mut loss = 0.0;
        for (b, t) in batch.iter().enumerate() {
            let r = t.team_reward * cfg.reward_scale;
            let cont = if t.done { 0.0 } else { cfg.gamma };
            let row = b * n..(b + 1) * n;
            if cfg.algorithm.decomposed() {
                let q: f64 = q_sel[row.clone()].iter().sum();
                let next: f64 = q_next[row.clone()].iter().sum();
                let delta = q - (r + cont * next);
                loss += delta * delta;
                d_sel[row].iter_mut().for_each(|d| *d = 2.0 * delta / bsz as f64);
            } else {
                for k in row {
                    let delta = q_sel[k] - (r + cont * q_next[k]);
                    loss += delta * delta;
                    d_sel[k] = 2.0 * delta / bsz as f64;
                }
            }
        }
        loss /= bsz as f64;

        self.grads.clear();
        for (cache, rows) in &online {
            let mut d_q = vec![0.0; rows.len() * NUM_ACTIONS];
            for (r, &(b, i)) in rows.iter().enumerate() {
                d_q[r * NUM_ACTIONS + batch[b].joint_action[i]] = d_sel[b * n + i];
            }
            self.online.backward(cache, &d_q, &mut self.grads)?;
        }
        if cfg.grad_clip > 0.0 {
            self.grads.clip_norm(cfg.grad_clip);
        }
        nn::adam_step(&mut self.online, &self.grads, &mut self.adam)?;
        self.grad_steps += 1;
        if self.grad_steps % cfg.target_update_period == 0 {
            self.sync_target();
        }
        Ok(loss)
    }

    /// Gradients of the TD loss without applying them (for inspection).
    pub fn loss_gradients(&mut self, batch: &[&Transition]) -> Result<(f64, Grads), MarlError> {
        let saved = (self.online.clone(), self.adam.clone(), self.grad_steps, self.target.clone());
        let loss = {
            let lr = self.adam.lr;
            // Run a full step with the optimizer disabled, then restore.
            self.adam.lr = 0.0;
            let out = self.learn_step(batch);
            self.adam.lr = lr;
            out?
        };
        let grads = self.grads.clone();
        (self.online, self.adam, self.grad_steps, self.target) = saved;
        Ok((loss, grads))
    }

    pub fn sync_target(&mut self) {
        self.target
            .copy_params_from(&self.online)
            .expect("target mirrors online structure");
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub mean_team_reward: f64,
    pub epsilon: f64,
    /// Mean TD loss over the episode's gradient steps, if any.
    pub loss_mean: Option<f64>,
    pub wall_seconds: Option<f64>,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("episode,mean_team_reward,epsilon,loss_mean,wall_seconds\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.episode,
            r.mean_team_reward,
            r.epsilon,
            opt(r.loss_mean),
            opt(r.wall_seconds)
        ));
    }
    s
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (k, v) in values.iter().enumerate() {
        sum += v;
        if k >= w {
            sum -= values[k - w];
        }
        out.push(sum / (k + 1).min(w) as f64);
    }
    out
}

/// Episodes in the moving-average window used to pick the best checkpoint.
pub const BEST_WINDOW: usize = 100;

/// Greedy score of `bank` on the training task: mean team reward over the
/// second half of `episodes` rollouts of twice the training length, so the
/// score reflects steady swimming rather than the approach transient. The
/// episodes are the same for every call with the same `seed`.
pub fn selection_score(
    bank: &QNetBank,
    env_config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<f64, MarlError> {
    let len = env_config.episode_length;
    let long = EnvConfig {
        episode_length: 2 * len,
        ..env_config.clone()
    };
    let mut env = FormationEnv::new(long, seed)?;
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = normalize_all(&env.reset()?);
        for step in 0..2 * len {
            let actions = greedy_joint_action(bank, &obs)?;
            let result = env.step(&actions)?;
            if step >= len {
                total += result.team_reward;
            }
            obs = normalize_all(&result.next_observations);
        }
    }
    Ok(total / (episodes * len) as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    pub final_net: QNetBank,
    /// Parameters with the best greedy selection score, or with the highest
    /// moving-average training reward when selection rollouts are off.
    pub best_net: QNetBank,
    pub best_episode: usize,
    pub algorithm: Algorithm,
}

impl TrainOutcome {
    pub fn rewards(&self) -> Vec<f64> {
        self.log.iter().map(|r| r.mean_team_reward).collect()
    }
}

/// Run the full training loop on a fresh environment.
///
/// `on_episode` sees every log row as it is produced.
pub fn train(
    config: &LearnerConfig,
    env_config: &EnvConfig,
    seed: u64,
    mut on_episode: impl FnMut(&LogRow),
) -> Result<TrainOutcome, MarlError> {
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut env = FormationEnv::new(env_config.clone(), master.next_u64())?;
    let n = env_config.n_agents;
    let mut learner = algorithm_variants(config, n, &mut master)?;
    let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let selection_seed = master.next_u64();
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let started = Instant::now();

    let mut log = Vec::with_capacity(config.episodes);
    let mut rewards = Vec::with_capacity(config.episodes);
    let mut best = (f64::NEG_INFINITY, learner.online.clone(), 0);
    let mut env_steps: u64 = 0;
    let mut window_sum = 0.0;
    for episode in 1..=config.episodes {
        let mut obs = normalize_all(&env.reset()?);
        let mut reward_sum = 0.0;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let epsilon = config.epsilon_at(env_steps);
        for _ in 0..env_config.episode_length {
            let eps = config.epsilon_at(env_steps);
            let mut actions = Vec::with_capacity(n);
            for (i, o) in obs.iter().enumerate() {
                let q = learner.online.forward(learner.online.slot_for_agent(i), o)?.q;
                actions.push(select_action(&q, eps, &mut rng));
            }
            let step = env.step(&actions)?;
            let next = normalize_all(&step.next_observations);
            reward_sum += step.team_reward;
            // The time limit is not a terminal state, so it is stored as a
            // continuing transition.
            buffer.push(Transition {
                joint_obs: obs,
                joint_action: actions,
                team_reward: step.team_reward,
                next_joint_obs: next.clone(),
                done: false,
            })?;
            obs = next;
            env_steps += 1;
            if buffer.len() >= config.warmup.max(1) {
                let batch = buffer.sample(config.batch_size, &mut rng);
                loss_sum += learner.learn_step(&batch)?;
                loss_count += 1;
            }
        }
        let mean = reward_sum / env_config.episode_length as f64;
        rewards.push(mean);
        window_sum += mean;
        if rewards.len() > BEST_WINDOW {
            window_sum -= rewards[rewards.len() - 1 - BEST_WINDOW];
        }
        if config.select_every > 0 {
            if episode % config.select_every == 0 || episode == config.episodes {
                let score = selection_score(&learner.online, env_config, config.select_episodes, selection_seed)?;
                if score > best.0 {
                    best = (score, learner.online.clone(), episode);
                }
            }
        } else {
            let avg = window_sum / rewards.len().min(BEST_WINDOW) as f64;
            if rewards.len() >= BEST_WINDOW.min(config.episodes) && avg > best.0 {
                best = (avg, learner.online.clone(), episode);
            }
        }
        let row = LogRow {
            episode,
            mean_team_reward: mean,
            epsilon,
            loss_mean: (loss_count > 0).then(|| loss_sum / loss_count as f64),
            wall_seconds: config.log_wall_time.then(|| started.elapsed().as_secs_f64()),
        };
        on_episode(&row);
        log.push(row);
    }
    Ok(TrainOutcome {
        log,
        final_net: learner.online,
        best_net: best.1,
        best_episode: best.2,
        algorithm: config.algorithm,
    })
}

pub fn normalize_all(obs: &[Observation]) -> Vec<[f64; OBS_DIM]> {
    obs.iter().map(Observation::normalized).collect()
}

/// Checkpoint metadata for a trained bank.
pub fn checkpoint_meta(algorithm: Algorithm, config_hash: &str) -> CheckpointMeta {
    CheckpointMeta {
        algorithm: algorithm.tag().to_string(),
        config_hash: config_hash.to_string(),
        extra: Default::default(),
    }
}
