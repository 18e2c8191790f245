//! Differentiable policy-value function approximator.
//!
//! The network maps `(observation volume, auxiliary input)` to logits over
//! the flat `n_max x 5` action space plus a scalar state value. Two trunk
//! variants exist behind a config switch: a fully connected layer over the
//! flattened volume (default) and a two-layer 3x3 convolutional stack. Both
//! feed a combine layer that concatenates the auxiliary input (finished
//! flags and previous action), then a policy head and a value head.
//!
//! Parameters live in one flat `Vec<f64>` so that optimizers and
//! finite-difference checks can index every coordinate uniformly. The
//! backward pass is written by hand; [`PolicyParams::backward`] turns the
//! partials of any scalar loss with respect to the head outputs into exact
//! parameter gradients.
//!
//! Activations are tanh throughout: smooth everywhere, which keeps central
//! finite differences meaningful at every parameter.

use alloc::vec;
use alloc::vec::Vec;

use crate::gridworld::{self, Scenario, WorldState};
use crate::math;
use crate::rng::{derive_stream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TrunkKind {
    /// Single fully connected layer over the flattened observation.
    Mlp,
    /// Two 3x3 same-padding convolution layers, then flatten.
    Conv,
}

/// Layer sizing; fixes the parameter count together with the grid size and
/// object capacity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetConfig {
    pub grid: usize,
    pub n_max: usize,
    pub trunk: TrunkKind,
    pub hidden: usize,
    pub conv_channels: usize,
}

impl NetConfig {
    pub fn mlp(grid: usize, n_max: usize, hidden: usize) -> Self {
        NetConfig {
            grid,
            n_max,
            trunk: TrunkKind::Mlp,
            hidden,
            conv_channels: 0,
        }
    }

    pub fn conv(grid: usize, n_max: usize, hidden: usize, channels: usize) -> Self {
        NetConfig {
            grid,
            n_max,
            trunk: TrunkKind::Conv,
            hidden,
            conv_channels: channels,
        }
    }

    pub fn obs_dim(&self) -> usize {
        gridworld::obs_len(self.grid, self.n_max)
    }

    pub fn obs_channels(&self) -> usize {
        gridworld::obs_channels(self.n_max)
    }

    pub fn aux_dim(&self) -> usize {
        aux_dim(self.n_max)
    }

    pub fn action_dim(&self) -> usize {
        self.n_max * 5
    }

    /// Trunk output width feeding the combine layer.
    fn trunk_dim(&self) -> usize {
        match self.trunk {
            TrunkKind::Mlp => self.hidden,
            TrunkKind::Conv => self.grid * self.grid * self.conv_channels,
        }
    }

    fn layout(&self) -> Layout {
        let mut off = 0;
        let mut seg = |len: usize| {
            let s = Seg { off, len };
            off += len;
            s
        };
        let (w1, b1, k2, b2) = match self.trunk {
            TrunkKind::Mlp => {
                // Column-major: one contiguous row of `hidden` weights per
                // input coordinate, so sparse inputs touch contiguous memory.
                let w1 = seg(self.obs_dim() * self.hidden);
                let b1 = seg(self.hidden);
                (w1, b1, Seg::EMPTY, Seg::EMPTY)
            }
            TrunkKind::Conv => {
                let c = self.conv_channels;
                let k1 = seg(c * self.obs_channels() * 9);
                let b1 = seg(c);
                let k2 = seg(c * c * 9);
                let b2 = seg(c);
                (k1, b1, k2, b2)
            }
        };
        let combine_in = self.trunk_dim() + self.aux_dim();
        let wc = seg(self.hidden * combine_in);
        let bc = seg(self.hidden);
        let wp = seg(self.action_dim() * self.hidden);
        let bp = seg(self.action_dim());
        let wv = seg(self.hidden);
        let bv = seg(1);
        Layout {
            w1,
            b1,
            k2,
            b2,
            wc,
            bc,
            wp,
            bp,
            wv,
            bv,
            total: off,
        }
    }

    /// Total parameter count `P`.
    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Clone, Copy)]
struct Seg {
    off: usize,
    len: usize,
}

impl Seg {
    const EMPTY: Seg = Seg { off: 0, len: 0 };

    fn of<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.off..self.off + self.len]
    }

    fn of_mut<'a>(&self, theta: &'a mut [f64]) -> &'a mut [f64] {
        &mut theta[self.off..self.off + self.len]
    }
}

#[derive(Clone, Copy)]
struct Layout {
    w1: Seg,
    b1: Seg,
    k2: Seg,
    b2: Seg,
    wc: Seg,
    bc: Seg,
    wp: Seg,
    bp: Seg,
    wv: Seg,
    bv: Seg,
    total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("{what}: expected length {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("no legal action to distribute mass over")]
    NoLegalAction,
}

/// Auxiliary network input: per-object finished flags plus a one-hot of the
/// previous action (all zero at t = 0).
pub fn aux_dim(n_max: usize) -> usize {
    n_max + n_max * 5
}

pub fn encode_aux(state: &WorldState, n_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; aux_dim(n_max)];
    encode_aux_into(state, n_max, &mut out);
    out
}

pub fn encode_aux_into(state: &WorldState, n_max: usize, out: &mut [f64]) {
    assert!(state.at_target.len() <= n_max);
    assert_eq!(out.len(), aux_dim(n_max));
    out.fill(0.0);
    for (i, &f) in state.at_target.iter().enumerate() {
        if f {
            out[i] = 1.0;
        }
    }
    if let Some(a) = state.prev_action {
        out[n_max + a.flat_index()] = 1.0;
    }
}

/// Convenience pair of encoded network inputs for a state.
pub fn encode_inputs(scenario: &Scenario, state: &WorldState, n_max: usize) -> (Vec<f64>, Vec<f64>) {
    (
        gridworld::encode_observation(scenario, state, n_max),
        encode_aux(state, n_max),
    )
}

/// All weights of the network, flat-indexable as one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub config: NetConfig,
    pub theta: Vec<f64>,
}

/// Deterministic scaled-uniform initialization: weights uniform in
/// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_params(seed: u64, config: NetConfig) -> PolicyParams {
    let layout = config.layout();
    let mut theta = vec![0.0; layout.total];
    let mut rng = Rng::new(derive_stream(seed, 0x9017));
    let mut fill = |seg: Seg, fan_in: usize, fan_out: usize, theta: &mut Vec<f64>| {
        let bound = math::sqrt(6.0 / (fan_in + fan_out) as f64);
        for w in seg.of_mut(theta) {
            *w = rng.next_range(-bound, bound);
        }
    };
    match config.trunk {
        TrunkKind::Mlp => fill(layout.w1, config.obs_dim(), config.hidden, &mut theta),
        TrunkKind::Conv => {
            let c = config.conv_channels;
            fill(layout.w1, config.obs_channels() * 9, c * 9, &mut theta);
            fill(layout.k2, c * 9, c * 9, &mut theta);
        }
    }
    let combine_in = config.trunk_dim() + config.aux_dim();
    fill(layout.wc, combine_in, config.hidden, &mut theta);
    fill(layout.wp, config.hidden, config.action_dim(), &mut theta);
    fill(layout.wv, config.hidden, 1, &mut theta);
    PolicyParams { config, theta }
}

/// Reusable activation buffers from one forward pass, consumed by
/// [`PolicyParams::backward`].
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    /// First conv activation (conv trunk only).
    act1: Vec<f64>,
    /// Trunk output activation.
    t: Vec<f64>,
    /// Combine-layer activation.
    z: Vec<f64>,
    pub logits: Vec<f64>,
    pub value: f64,
}

impl PolicyParams {
    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// Forward pass: `(logits over n_max x 5 actions, state value)`.
    pub fn forward(&self, obs: &[f64], aux: &[f64]) -> Result<(Vec<f64>, f64), PolicyError> {
        if obs.len() != self.config.obs_dim() {
            return Err(PolicyError::ShapeMismatch {
                what: "observation",
                expected: self.config.obs_dim(),
                got: obs.len(),
            });
        }
        if aux.len() != self.config.aux_dim() {
            return Err(PolicyError::ShapeMismatch {
                what: "auxiliary input",
                expected: self.config.aux_dim(),
                got: aux.len(),
            });
        }
        let mut trace = ForwardTrace::default();
        self.forward_traced(obs, aux, &mut trace);
        Ok((trace.logits, trace.value))
    }

    /// Forward pass writing into a reusable trace; the hot path for search
    /// rollouts and training loops.
    pub fn forward_traced(&self, obs: &[f64], aux: &[f64], trace: &mut ForwardTrace) {
        debug_assert_eq!(obs.len(), self.config.obs_dim());
        debug_assert_eq!(aux.len(), self.config.aux_dim());
        let cfg = &self.config;
        let layout = cfg.layout();
        let theta = &self.theta[..];

        // Trunk.
        match cfg.trunk {
            TrunkKind::Mlp => {
                resize(&mut trace.t, cfg.hidden);
                trace.t.copy_from_slice(layout.b1.of(theta));
                let w1 = layout.w1.of(theta);
                for (j, &x) in obs.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let col = &w1[j * cfg.hidden..(j + 1) * cfg.hidden];
                    for (ti, &w) in trace.t.iter_mut().zip(col) {
                        *ti += w * x;
                    }
                }
                for v in &mut trace.t {
                    *v = math::tanh(*v);
                }
            }
            TrunkKind::Conv => {
                let c = cfg.conv_channels;
                let plane = cfg.grid * cfg.grid;
                resize(&mut trace.act1, c * plane);
                conv_forward(
                    obs,
                    cfg.obs_channels(),
                    layout.w1.of(theta),
                    layout.b1.of(theta),
                    c,
                    cfg.grid,
                    &mut trace.act1,
                );
                for v in &mut trace.act1 {
                    *v = math::tanh(*v);
                }
                resize(&mut trace.t, c * plane);
                let act1 = core::mem::take(&mut trace.act1);
                conv_forward(
                    &act1,
                    c,
                    layout.k2.of(theta),
                    layout.b2.of(theta),
                    c,
                    cfg.grid,
                    &mut trace.t,
                );
                trace.act1 = act1;
                for v in &mut trace.t {
                    *v = math::tanh(*v);
                }
            }
        }

        // Combine layer over [trunk, aux].
        let d_t = cfg.trunk_dim();
        let combine_in = d_t + cfg.aux_dim();
        resize(&mut trace.z, cfg.hidden);
        let wc = layout.wc.of(theta);
        let bc = layout.bc.of(theta);
        for i in 0..cfg.hidden {
            let row = &wc[i * combine_in..(i + 1) * combine_in];
            let mut acc = bc[i];
            for (w, x) in row[..d_t].iter().zip(&trace.t) {
                acc += w * x;
            }
            for (w, &x) in row[d_t..].iter().zip(aux) {
                if x != 0.0 {
                    acc += w * x;
                }
            }
            trace.z[i] = math::tanh(acc);
        }

        // Heads.
        resize(&mut trace.logits, cfg.action_dim());
        let wp = layout.wp.of(theta);
        let bp = layout.bp.of(theta);
        for i in 0..cfg.action_dim() {
            let row = &wp[i * cfg.hidden..(i + 1) * cfg.hidden];
            let mut acc = bp[i];
            for (w, x) in row.iter().zip(&trace.z) {
                acc += w * x;
            }
            trace.logits[i] = acc;
        }
        let wv = layout.wv.of(theta);
        let mut value = layout.bv.of(theta)[0];
        for (w, x) in wv.iter().zip(&trace.z) {
            value += w * x;
        }
        trace.value = value;
    }

    /// Accumulates `d loss / d theta` into `grad`, given the loss partials
    /// with respect to the logits and the value output. `trace` must come
    /// from a forward pass of `(obs, aux)` under these parameters. Zero
    /// partials yield zero gradients, so the gradient of a constant loss is
    /// identically zero.
    pub fn backward(
        &self,
        obs: &[f64],
        aux: &[f64],
        trace: &ForwardTrace,
        d_logits: &[f64],
        d_value: f64,
        grad: &mut [f64],
    ) {
        let cfg = &self.config;
        debug_assert_eq!(d_logits.len(), cfg.action_dim());
        debug_assert_eq!(grad.len(), self.theta.len());
        let layout = cfg.layout();
        let theta = &self.theta[..];

        let mut dz = vec![0.0; cfg.hidden];

        // Value head.
        if d_value != 0.0 {
            let wv = layout.wv.of(theta);
            let gwv = &mut grad[layout.wv.off..layout.wv.off + layout.wv.len];
            for i in 0..cfg.hidden {
                gwv[i] += d_value * trace.z[i];
                dz[i] += d_value * wv[i];
            }
            grad[layout.bv.off] += d_value;
        }

        // Policy head.
        let wp = layout.wp.of(theta);
        for (i, &dl) in d_logits.iter().enumerate() {
            if dl == 0.0 {
                continue;
            }
            let row = &wp[i * cfg.hidden..(i + 1) * cfg.hidden];
            let grow =
                &mut grad[layout.wp.off + i * cfg.hidden..layout.wp.off + (i + 1) * cfg.hidden];
            for j in 0..cfg.hidden {
                grow[j] += dl * trace.z[j];
                dz[j] += dl * row[j];
            }
            grad[layout.bp.off + i] += dl;
        }

        // Combine layer (tanh' computed from the activation).
        let d_t = cfg.trunk_dim();
        let combine_in = d_t + cfg.aux_dim();
        let mut dt = vec![0.0; d_t];
        let wc = layout.wc.of(theta);
        for i in 0..cfg.hidden {
            let dpre = dz[i] * (1.0 - trace.z[i] * trace.z[i]);
            if dpre == 0.0 {
                continue;
            }
            let row = &wc[i * combine_in..(i + 1) * combine_in];
            let grow = &mut grad
                [layout.wc.off + i * combine_in..layout.wc.off + (i + 1) * combine_in];
            for j in 0..d_t {
                grow[j] += dpre * trace.t[j];
                dt[j] += dpre * row[j];
            }
            for (j, &x) in aux.iter().enumerate() {
                if x != 0.0 {
                    grow[d_t + j] += dpre * x;
                }
            }
            grad[layout.bc.off + i] += dpre;
        }

        // Trunk.
        match cfg.trunk {
            TrunkKind::Mlp => {
                for (d, t) in dt.iter_mut().zip(&trace.t) {
                    *d *= 1.0 - t * t;
                }
                let gb1 = &mut grad[layout.b1.off..layout.b1.off + layout.b1.len];
                for (g, d) in gb1.iter_mut().zip(&dt) {
                    *g += d;
                }
                for (j, &x) in obs.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let gcol = &mut grad
                        [layout.w1.off + j * cfg.hidden..layout.w1.off + (j + 1) * cfg.hidden];
                    for (g, d) in gcol.iter_mut().zip(&dt) {
                        *g += d * x;
                    }
                }
            }
            TrunkKind::Conv => {
                let c = cfg.conv_channels;
                // Through tanh of conv2 output.
                for (d, t) in dt.iter_mut().zip(&trace.t) {
                    *d *= 1.0 - t * t;
                }
                let mut dact1 = vec![0.0; trace.act1.len()];
                conv_backward(
                    &trace.act1,
                    c,
                    layout.k2.of(theta),
                    c,
                    cfg.grid,
                    &dt,
                    layout.k2,
                    layout.b2.off,
                    grad,
                    Some(&mut dact1),
                );
                for (d, a) in dact1.iter_mut().zip(&trace.act1) {
                    *d *= 1.0 - a * a;
                }
                conv_backward(
                    obs,
                    cfg.obs_channels(),
                    layout.w1.of(theta),
                    c,
                    cfg.grid,
                    &dact1,
                    layout.w1,
                    layout.b1.off,
                    grad,
                    None,
                );
            }
        }
    }
}

fn resize(v: &mut Vec<f64>, len: usize) {
    v.clear();
    v.resize(len, 0.0);
}

/// 3x3 same-padding cross-correlation, scatter form: zero cells of the input
/// contribute nothing, which makes the first layer cheap on one-hot volumes.
fn conv_forward(
    input: &[f64],
    c_in: usize,
    kernel: &[f64],
    bias: &[f64],
    c_out: usize,
    m: usize,
    out: &mut [f64],
) {
    let plane = m * m;
    debug_assert_eq!(input.len(), c_in * plane);
    debug_assert_eq!(out.len(), c_out * plane);
    for o in 0..c_out {
        out[o * plane..(o + 1) * plane].fill(bias[o]);
    }
    for i in 0..c_in {
        for yi in 0..m {
            for xi in 0..m {
                let v = input[i * plane + yi * m + xi];
                if v == 0.0 {
                    continue;
                }
                for ky in 0..3usize {
                    let y = yi as i32 + 1 - ky as i32;
                    if y < 0 || y as usize >= m {
                        continue;
                    }
                    for kx in 0..3usize {
                        let x = xi as i32 + 1 - kx as i32;
                        if x < 0 || x as usize >= m {
                            continue;
                        }
                        for o in 0..c_out {
                            out[o * plane + y as usize * m + x as usize] +=
                                v * kernel[((o * c_in + i) * 3 + ky) * 3 + kx];
                        }
                    }
                }
            }
        }
    }
}

/// Backward of [`conv_forward`]: accumulates kernel/bias gradients and,
/// optionally, the gradient with respect to the input.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    c_in: usize,
    kernel: &[f64],
    c_out: usize,
    m: usize,
    d_out: &[f64],
    kernel_seg: Seg,
    bias_off: usize,
    grad: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let plane = m * m;
    for o in 0..c_out {
        let mut acc = 0.0;
        for v in &d_out[o * plane..(o + 1) * plane] {
            acc += v;
        }
        grad[bias_off + o] += acc;
    }
    for i in 0..c_in {
        for yi in 0..m {
            for xi in 0..m {
                let v = input[i * plane + yi * m + xi];
                let need_dinput = d_input.is_some();
                if v == 0.0 && !need_dinput {
                    continue;
                }
                let mut dx_acc = 0.0;
                for ky in 0..3usize {
                    let y = yi as i32 + 1 - ky as i32;
                    if y < 0 || y as usize >= m {
                        continue;
                    }
                    for kx in 0..3usize {
                        let x = xi as i32 + 1 - kx as i32;
                        if x < 0 || x as usize >= m {
                            continue;
                        }
                        for o in 0..c_out {
                            let d = d_out[o * plane + y as usize * m + x as usize];
                            if d == 0.0 {
                                continue;
                            }
                            let kidx = ((o * c_in + i) * 3 + ky) * 3 + kx;
                            if v != 0.0 {
                                grad[kernel_seg.off + kidx] += d * v;
                            }
                            dx_acc += d * kernel[kidx];
                        }
                    }
                }
                if let Some(di) = d_input.as_deref_mut() {
                    di[i * plane + yi * m + xi] += dx_acc;
                }
            }
        }
    }
}

/// Adam optimizer over the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(param_count: usize) -> Self {
        Adam {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(theta.len(), grad.len());
        self.t += 1;
        let b1t = 1.0 - math::pow(self.beta1, self.t as f64);
        let b2t = 1.0 - math::pow(self.beta2, self.t as f64);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            theta[i] -= lr * mhat / (math::sqrt(vhat) + self.eps);
        }
    }
}

/// Categorical distribution over the flat action space with illegal entries
/// carrying exactly zero mass.
#[derive(Clone, Debug)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    pub legal: u128,
}

/// Masked softmax of `logits / temperature` over the legal entries.
pub fn masked_distribution(
    logits: &[f64],
    legal: u128,
    temperature: f64,
) -> Result<ActionDistribution, PolicyError> {
    debug_assert!(temperature > 0.0);
    let n = logits.len();
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        if legal & (1u128 << i) != 0 && logits[i] > max {
            max = logits[i];
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(PolicyError::NoLegalAction);
    }
    let mut probs = vec![0.0; n];
    let mut sum = 0.0;
    for i in 0..n {
        if legal & (1u128 << i) != 0 {
            let e = math::exp((logits[i] - max) / temperature);
            probs[i] = e;
            sum += e;
        }
    }
    for p in &mut probs {
        *p /= sum;
    }
    Ok(ActionDistribution { probs, legal })
}

/// Uniform distribution over the legal entries (random guidance).
pub fn uniform_distribution(n: usize, legal: u128) -> Result<ActionDistribution, PolicyError> {
    let k = (legal & mask_below(n)).count_ones() as f64;
    if k == 0.0 {
        return Err(PolicyError::NoLegalAction);
    }
    let mut probs = vec![0.0; n];
    for (i, p) in probs.iter_mut().enumerate() {
        if legal & (1u128 << i) != 0 {
            *p = 1.0 / k;
        }
    }
    Ok(ActionDistribution { probs, legal })
}

fn mask_below(n: usize) -> u128 {
    if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    }
}

impl ActionDistribution {
    pub fn log_prob(&self, action: usize) -> f64 {
        math::ln(self.probs[action])
    }

    pub fn entropy(&self) -> f64 {
        let mut s = 0.0;
        for &p in &self.probs {
            if p > 0.0 {
                s -= p * math::ln(p);
            }
        }
        s
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.next_f64();
        let mut acc = 0.0;
        let mut last_legal = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_legal = i;
                if u < acc {
                    return i;
                }
            }
        }
        last_legal
    }

    /// Highest-probability legal action, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        let mut best_p = f64::NEG_INFINITY;
        for (i, &p) in self.probs.iter().enumerate() {
            if self.legal & (1u128 << i) != 0 && p > best_p {
                best_p = p;
                best = i;
            }
        }
        best
    }
}
