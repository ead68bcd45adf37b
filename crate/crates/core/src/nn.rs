//! Dense Q-networks with optional dueling heads, backpropagation, Adam and
//! checkpoint serialization.
//!
//! Parameters live in a [`QNetBank`]: a flat list of layers plus one
//! [`NetLayout`] per network slot naming the layers that slot uses. Slots
//! that name the same layer share it, and gradients for shared layers
//! accumulate from every slot that uses them.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::NUM_ACTIONS;
use crate::env::{ANGLE_SCALE, DISTANCE_SCALE, OBS_DIM};

pub const HIDDEN: usize = 64;
pub const CHECKPOINT_FORMAT: &str = "fishform-qnet";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite network input")]
    NonFiniteInput,
    #[error("gradient cache is stale: parameters changed since the forward pass")]
    StaleCache,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// `C = alpha * A·B + beta * C` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access in bounds, and `c`
    // does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Weights and biases uniform in `±1/√in_dim`.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weights = (0..in_dim * out_dim).map(|_| draw()).collect();
        let biases = (0..out_dim).map(|_| draw()).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            biases,
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// Batched forward pass over `rows` inputs laid out row-major.
    pub fn forward(&self, input: &[f64], rows: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * self.out_dim);
        for _ in 0..rows {
            out.extend_from_slice(&self.biases);
        }
        gemm(
            rows,
            self.in_dim,
            self.out_dim,
            input,
            (self.in_dim, 1),
            &self.weights,
            (1, self.in_dim),
            1.0,
            &mut out,
        );
        if self.activation == Activation::Relu {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        out
    }

    /// Accumulate parameter gradients given the layer input, its activated
    /// output and the gradient with respect to that output. Returns the
    /// gradient with respect to the input when `want_input_grad` is set.
    fn backward(
        &self,
        input: &[f64],
        output: &[f64],
        mut d_out: Vec<f64>,
        rows: usize,
        grad: &mut LayerGrad,
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        if self.activation == Activation::Relu {
            for (g, y) in d_out.iter_mut().zip(output) {
                if *y <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        // dW += dZᵀ · X
        gemm(
            self.out_dim,
            rows,
            self.in_dim,
            &d_out,
            (1, self.out_dim),
            input,
            (self.in_dim, 1),
            1.0,
            &mut grad.weights,
        );
        for r in 0..rows {
            let row = &d_out[r * self.out_dim..(r + 1) * self.out_dim];
            for (b, g) in grad.biases.iter_mut().zip(row) {
                *b += g;
            }
        }
        want_input_grad.then(|| {
            let mut d_in = vec![0.0; rows * self.in_dim];
            gemm(
                rows,
                self.out_dim,
                self.in_dim,
                &d_out,
                (self.out_dim, 1),
                &self.weights,
                (self.in_dim, 1),
                0.0,
                &mut d_in,
            );
            d_in
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Gradients for every layer of a bank, index-aligned with its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<LayerGrad>,
}

impl Grads {
    pub fn zeros_like(bank: &QNetBank) -> Self {
        Self {
            layers: bank
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for g in &mut self.layers {
            g.weights.fill(0.0);
            g.biases.fill(0.0);
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(&g.biases))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.layers {
            g.weights.iter_mut().chain(g.biases.iter_mut()).for_each(|v| *v *= k);
        }
    }

    /// Rescale so the global norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }
}

/// Layers used by one network slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetLayout {
    pub trunk: Vec<usize>,
    /// State-value head; `None` for a plain Q-network.
    pub value: Option<usize>,
    /// Advantage head for dueling networks, Q head otherwise.
    pub head: usize,
}

/// Which parameters are tied across agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    /// One network for every agent.
    Full,
    /// Per-agent trunk and advantage head, one state-value head for all.
    ValueHead,
    /// Fully independent networks.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetBank {
    pub layers: Vec<DenseLayer>,
    pub names: Vec<String>,
    pub layouts: Vec<NetLayout>,
    /// Subtract the mean advantage when combining dueling heads.
    pub mean_advantage: bool,
    version: u64,
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub slot: usize,
    pub rows: usize,
    input: Vec<f64>,
    trunk_out: Vec<Vec<f64>>,
    pub value: Option<Vec<f64>>,
    pub advantage: Vec<f64>,
    /// Row-major `rows × NUM_ACTIONS`.
    pub q: Vec<f64>,
    version: u64,
}

impl ForwardCache {
    pub fn q_row(&self, r: usize) -> &[f64] {
        &self.q[r * NUM_ACTIONS..(r + 1) * NUM_ACTIONS]
    }
}

/// Output of a single-observation forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct QOutput {
    pub q: [f64; NUM_ACTIONS],
    /// State value; zero for plain Q-networks.
    pub v: f64,
    pub a: [f64; NUM_ACTIONS],
}

impl QNetBank {
    /// Networks for `slots` agents with the given tying and head type.
    pub fn build<R: Rng + ?Sized>(slots: usize, sharing: Sharing, dueling: bool, rng: &mut R) -> Self {
        assert!(slots > 0, "at least one network slot");
        assert!(dueling || sharing != Sharing::ValueHead, "value-head sharing needs dueling heads");
        let mut bank = Self {
            layers: Vec::new(),
            names: Vec::new(),
            layouts: Vec::new(),
            mean_advantage: false,
            version: 0,
        };
        let mut add = |bank: &mut Self, name: String, i: usize, o: usize, act: Activation| {
            bank.layers.push(DenseLayer::init(i, o, act, rng));
            bank.names.push(name);
            bank.layers.len() - 1
        };
        let shared_value = match sharing {
            Sharing::ValueHead => Some(add(&mut bank, "shared.value".into(), HIDDEN, 1, Activation::Identity)),
            _ => None,
        };
        let distinct = if sharing == Sharing::Full { 1 } else { slots };
        for s in 0..distinct {
            let prefix = if sharing == Sharing::Full {
                "shared".to_string()
            } else {
                format!("agent{s}")
            };
            let t0 = add(&mut bank, format!("{prefix}.trunk0"), OBS_DIM, HIDDEN, Activation::Relu);
            let t1 = add(&mut bank, format!("{prefix}.trunk1"), HIDDEN, HIDDEN, Activation::Relu);
            let value = match (dueling, shared_value) {
                (false, _) => None,
                (true, Some(v)) => Some(v),
                (true, None) => Some(add(&mut bank, format!("{prefix}.value"), HIDDEN, 1, Activation::Identity)),
            };
            let head_name = if dueling { "advantage" } else { "q" };
            let head = add(
                &mut bank,
                format!("{prefix}.{head_name}"),
                HIDDEN,
                NUM_ACTIONS,
                Activation::Identity,
            );
            bank.layouts.push(NetLayout {
                trunk: vec![t0, t1],
                value,
                head,
            });
        }
        bank
    }

    /// A single dueling network.
    pub fn dueling<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::build(1, Sharing::Full, true, rng)
    }

    pub fn from_parts(
        layers: Vec<DenseLayer>,
        names: Vec<String>,
        layouts: Vec<NetLayout>,
        mean_advantage: bool,
    ) -> Result<Self, NnError> {
        let bank = Self {
            layers,
            names,
            layouts,
            mean_advantage,
            version: 0,
        };
        bank.check_shapes()?;
        Ok(bank)
    }

    fn check_shapes(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::ShapeMismatch(m));
        if self.names.len() != self.layers.len() {
            return bad("layer names and layers differ in count".into());
        }
        if self.layouts.is_empty() {
            return bad("no network slots".into());
        }
        for l in &self.layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.biases.len() != l.out_dim {
                return bad(format!("layer {}x{} has inconsistent arrays", l.out_dim, l.in_dim));
            }
        }
        let get = |i: usize| self.layers.get(i).ok_or(NnError::ShapeMismatch(format!("layer index {i}")));
        for layout in &self.layouts {
            let mut width = OBS_DIM;
            if layout.trunk.is_empty() {
                return bad("empty trunk".into());
            }
            for &t in &layout.trunk {
                let l = get(t)?;
                if l.in_dim != width {
                    return bad(format!("trunk layer {t} expects {} inputs, got {width}", l.in_dim));
                }
                width = l.out_dim;
            }
            let h = get(layout.head)?;
            if h.in_dim != width || h.out_dim != NUM_ACTIONS {
                return bad(format!("head layer {} has shape {}x{}", layout.head, h.out_dim, h.in_dim));
            }
            if let Some(v) = layout.value {
                let v = get(v)?;
                if v.in_dim != width || v.out_dim != 1 {
                    return bad("value head must map the trunk output to one scalar".into());
                }
            }
        }
        Ok(())
    }

    pub fn slot_count(&self) -> usize {
        self.layouts.len()
    }

    /// Network slot used by agent `i`. Agents beyond the trained slot count
    /// wrap around.
    pub fn slot_for_agent(&self, i: usize) -> usize {
        i % self.layouts.len()
    }

    pub fn is_dueling(&self) -> bool {
        self.layouts.iter().all(|l| l.value.is_some())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Counter bumped whenever parameters change.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn mark_modified(&mut self) {
        self.version += 1;
    }

    /// Overwrite all parameters with those of `other` (same structure).
    pub fn copy_params_from(&mut self, other: &QNetBank) -> Result<(), NnError> {
        if self.layouts != other.layouts || self.layers.len() != other.layers.len() {
            return Err(NnError::ShapeMismatch("bank structures differ".into()));
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            if dst.weights.len() != src.weights.len() || dst.biases.len() != src.biases.len() {
                return Err(NnError::ShapeMismatch("layer shapes differ".into()));
            }
            dst.weights.copy_from_slice(&src.weights);
            dst.biases.copy_from_slice(&src.biases);
        }
        self.mean_advantage = other.mean_advantage;
        self.mark_modified();
        Ok(())
    }

    /// Batched forward pass of slot `slot` over `rows` observations
    /// (row-major, `OBS_DIM` wide).
    pub fn forward_batch(&self, slot: usize, obs: &[f64], rows: usize) -> Result<ForwardCache, NnError> {
        let layout = self
            .layouts
            .get(slot)
            .ok_or_else(|| NnError::ShapeMismatch(format!("no slot {slot}")))?;
        if obs.len() != rows * OBS_DIM {
            return Err(NnError::ShapeMismatch(format!(
                "{} inputs for {rows} rows",
                obs.len()
            )));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteInput);
        }
        let mut trunk_out: Vec<Vec<f64>> = Vec::with_capacity(layout.trunk.len());
        for (k, &t) in layout.trunk.iter().enumerate() {
            let x: &[f64] = if k == 0 { obs } else { &trunk_out[k - 1] };
            let y = self.layers[t].forward(x, rows);
            trunk_out.push(y);
        }
        let h = trunk_out.last().expect("non-empty trunk");
        let advantage = self.layers[layout.head].forward(h, rows);
        let value = layout.value.map(|v| self.layers[v].forward(h, rows));
        let mut q = advantage.clone();
        if let Some(v) = &value {
            for r in 0..rows {
                let row = &mut q[r * NUM_ACTIONS..(r + 1) * NUM_ACTIONS];
                let shift = if self.mean_advantage {
                    v[r] - row.iter().sum::<f64>() / NUM_ACTIONS as f64
                } else {
                    v[r]
                };
                row.iter_mut().for_each(|x| *x += shift);
            }
        }
        Ok(ForwardCache {
            slot,
            rows,
            input: obs.to_vec(),
            trunk_out,
            value,
            advantage,
            q,
            version: self.version,
        })
    }

    /// Q-values, state value and advantages for one observation.
    pub fn forward(&self, slot: usize, obs: &[f64; OBS_DIM]) -> Result<QOutput, NnError> {
        let cache = self.forward_batch(slot, obs, 1)?;
        let mut out = QOutput {
            q: [0.0; NUM_ACTIONS],
            v: cache.value.as_ref().map_or(0.0, |v| v[0]),
            a: [0.0; NUM_ACTIONS],
        };
        out.q.copy_from_slice(&cache.q);
        out.a.copy_from_slice(&cache.advantage);
        Ok(out)
    }

    /// Accumulate into `grads` the parameter gradients of a scalar loss
    /// whose gradient with respect to `cache.q` is `d_q`.
    pub fn backward(&self, cache: &ForwardCache, d_q: &[f64], grads: &mut Grads) -> Result<(), NnError> {
        if cache.version != self.version {
            return Err(NnError::StaleCache);
        }
        let rows = cache.rows;
        if d_q.len() != rows * NUM_ACTIONS {
            return Err(NnError::ShapeMismatch(format!("dL/dq has {} entries", d_q.len())));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(NnError::ShapeMismatch("gradient buffer does not match bank".into()));
        }
        let layout = &self.layouts[cache.slot];
        let h = cache.trunk_out.last().expect("non-empty trunk");

        let mut d_adv = d_q.to_vec();
        let mut d_h = None;
        if let (Some(v_idx), Some(v_out)) = (layout.value, &cache.value) {
            let mut d_v = vec![0.0; rows];
            for r in 0..rows {
                let row = &d_q[r * NUM_ACTIONS..(r + 1) * NUM_ACTIONS];
                let total: f64 = row.iter().sum();
                d_v[r] = total;
                if self.mean_advantage {
                    let mean = total / NUM_ACTIONS as f64;
                    d_adv[r * NUM_ACTIONS..(r + 1) * NUM_ACTIONS]
                        .iter_mut()
                        .for_each(|g| *g -= mean);
                }
            }
            d_h = self.layers[v_idx].backward(h, v_out, d_v, rows, &mut grads.layers[v_idx], true);
        }
        let d_h_adv = self.layers[layout.head]
            .backward(h, &cache.advantage, d_adv, rows, &mut grads.layers[layout.head], true)
            .expect("input gradient requested");
        let mut d = match d_h {
            Some(mut dv) => {
                dv.iter_mut().zip(&d_h_adv).for_each(|(a, b)| *a += b);
                dv
            }
            None => d_h_adv,
        };
        for k in (0..layout.trunk.len()).rev() {
            let t = layout.trunk[k];
            let x: &[f64] = if k == 0 { &cache.input } else { &cache.trunk_out[k - 1] };
            match self.layers[t].backward(x, &cache.trunk_out[k], d, rows, &mut grads.layers[t], k > 0) {
                Some(next) => d = next,
                None => break,
            }
        }
        Ok(())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.biases])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(bank: &QNetBank, lr: f64) -> Self {
        let shapes: Vec<Vec<f64>> = bank
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }
}

/// One bias-corrected Adam update of every parameter in `bank`.
pub fn adam_step(bank: &mut QNetBank, grads: &Grads, state: &mut AdamState) -> Result<(), NnError> {
    if grads.layers.len() != bank.layers.len() || state.m.len() != 2 * bank.layers.len() {
        return Err(NnError::ShapeMismatch("optimizer state does not match parameters".into()));
    }
    for (l, g) in bank.layers.iter().zip(&grads.layers) {
        if l.weights.len() != g.weights.len() || l.biases.len() != g.biases.len() {
            return Err(NnError::ShapeMismatch("gradient shape differs from layer".into()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.lr, state.eps);
    let grad_arrays = grads.layers.iter().flat_map(|g| [&g.weights, &g.biases]);
    for (((p, g), m), v) in bank
        .params_mut()
        .zip(grad_arrays)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        if m.len() != p.len() {
            return Err(NnError::ShapeMismatch("moment buffer shape differs".into()));
        }
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    bank.mark_modified();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub distance_scale: f64,
    pub angle_scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            distance_scale: DISTANCE_SCALE,
            angle_scale: ANGLE_SCALE,
        }
    }
}

/// Descriptive fields stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub algorithm: String,
    pub config_hash: String,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    obs_dim: usize,
    n_actions: usize,
    normalization: Normalization,
    shared_value_head: bool,
    mean_advantage: bool,
    meta: CheckpointMeta,
    layers: Vec<LayerRecord>,
    layouts: Vec<NetLayout>,
}

impl QNetBank {
    /// Whether every slot uses one and the same value head.
    pub fn shares_value_head(&self) -> bool {
        let first = self.layouts[0].value;
        first.is_some() && self.layouts.iter().all(|l| l.value == first)
    }
}

/// Serialize a bank to a self-describing JSON checkpoint.
pub fn serialize(bank: &QNetBank, meta: &CheckpointMeta) -> Vec<u8> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        obs_dim: OBS_DIM,
        n_actions: NUM_ACTIONS,
        normalization: Normalization::default(),
        shared_value_head: bank.shares_value_head(),
        mean_advantage: bank.mean_advantage,
        meta: meta.clone(),
        layers: bank
            .layers
            .iter()
            .zip(&bank.names)
            .map(|(l, name)| LayerRecord {
                name: name.clone(),
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                activation: l.activation,
                weights: l.weights.clone(),
                biases: l.biases.clone(),
            })
            .collect(),
        layouts: bank.layouts.clone(),
    };
    serde_json::to_vec(&file).expect("checkpoint serializes")
}

pub fn deserialize(bytes: &[u8]) -> Result<(QNetBank, CheckpointMeta), NnError> {
    let corrupt = |m: String| NnError::CorruptCheckpoint(m);
    let raw: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(corrupt("not a fishform checkpoint".into()));
    }
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("missing version".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(NnError::VersionMismatch {
            found: version as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let file: CheckpointFile = serde_json::from_value(raw).map_err(|e| corrupt(e.to_string()))?;
    if file.obs_dim != OBS_DIM || file.n_actions != NUM_ACTIONS {
        return Err(NnError::ShapeMismatch(format!(
            "checkpoint maps {} inputs to {} actions",
            file.obs_dim, file.n_actions
        )));
    }
    if file.normalization != Normalization::default() {
        return Err(corrupt("unexpected observation normalization".into()));
    }
    let mut names = Vec::with_capacity(file.layers.len());
    let mut layers = Vec::with_capacity(file.layers.len());
    for rec in file.layers {
        if rec.weights.iter().chain(&rec.biases).any(|v| !v.is_finite()) {
            return Err(corrupt(format!("layer {} has non-finite parameters", rec.name)));
        }
        names.push(rec.name);
        layers.push(DenseLayer {
            in_dim: rec.in_dim,
            out_dim: rec.out_dim,
            weights: rec.weights,
            biases: rec.biases,
            activation: rec.activation,
        });
    }
    let bank = QNetBank::from_parts(layers, names, file.layouts, file.mean_advantage)
        .map_err(|e| corrupt(e.to_string()))?;
    Ok((bank, file.meta))
}
