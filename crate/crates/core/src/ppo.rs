//! Clipped-surrogate policy-gradient training.
//!
//! Rollouts are collected on-policy from sampled scenarios, advantages come
//! from generalized advantage estimation, and each update maximizes
//! `L_clip - c1 * value_loss + c2 * entropy` over several shuffled minibatch
//! epochs, with the probability ratio clipped to `[1-eps, 1+eps]`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::gridworld::{self, legal_mask, step, EpisodeMetrics, Scenario, TraceStep, WorldState};
use crate::imitation::ScenarioSampler;
use crate::math;
use crate::pathfind::PrimitiveAction;
use crate::policy::{
    encode_aux_into, masked_distribution, Adam, ForwardTrace, PolicyParams,
};
use crate::rng::{derive_stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PpoError {
    #[error("loss or gradient became non-finite; update aborted and parameters restored")]
    NonFiniteLoss,
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
}

/// PPO hyperparameters. `gamma` is shared with the tree search discount.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub critic_coef: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub n_envs: usize,
    pub horizon: usize,
    pub minibatch_size: usize,
    pub update_epochs: usize,
    /// Evaluate the greedy policy every this many iterations (0 = never).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            critic_coef: 0.5,
            entropy_coef: 0.001,
            gamma: 0.95,
            lambda: 0.95,
            learning_rate: 2e-4,
            iterations: 1000,
            n_envs: 8,
            horizon: 64,
            minibatch_size: 64,
            update_epochs: 4,
            eval_every: 10,
            eval_episodes: 16,
            seed: 0,
        }
    }
}

impl PpoConfig {
    /// The full-size training recipe: 28 workers, 8000 iterations.
    pub fn full_scale() -> Self {
        PpoConfig {
            iterations: 8000,
            n_envs: 28,
            ..PpoConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), PpoError> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(PpoError::InvalidConfig("clip_epsilon must lie in (0, 1)"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(PpoError::InvalidConfig("gamma must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(PpoError::InvalidConfig("lambda must lie in [0, 1]"));
        }
        if self.horizon == 0 || self.n_envs == 0 {
            return Err(PpoError::InvalidConfig("horizon and n_envs must be >= 1"));
        }
        Ok(())
    }
}

/// One recorded environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub obs: Box<[u8]>,
    pub aux: Box<[u8]>,
    pub legal: u128,
    pub action: u16,
    /// Log-probability under the behavior policy at collection time.
    pub log_prob: f64,
    pub reward: f64,
    /// Value estimate of the state the action was taken in.
    pub value: f64,
    pub done: bool,
}

/// Steps collected by one environment worker, plus the value bootstrap for a
/// horizon cut mid-episode and the scenarios visited (for replay checks).
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSegment {
    pub steps: Vec<StepRecord>,
    pub bootstrap_value: f64,
    pub scenarios: Vec<Scenario>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub segments: Vec<EnvSegment>,
    pub n_max: usize,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.steps.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total rewards of episodes that ran to completion inside the batch.
    pub fn completed_episode_rewards(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for seg in &self.segments {
            let mut acc = 0.0;
            for rec in &seg.steps {
                acc += rec.reward;
                if rec.done {
                    out.push(acc);
                    acc = 0.0;
                }
            }
        }
        out
    }
}

/// Samples `horizon` on-policy steps in each of `n_envs` sequentialized
/// environment streams. Episodes reset on termination (and on the rare
/// dead-end state, which retroactively closes the episode). Deterministic
/// for fixed `(params, sampler, seed)`.
pub fn collect_rollouts(
    params: &PolicyParams,
    sampler: &ScenarioSampler,
    horizon: usize,
    n_envs: usize,
    seed: u64,
) -> RolloutBatch {
    let n_max = params.config.n_max;
    let mut segments = Vec::with_capacity(n_envs);
    let mut obs = vec![0.0; params.config.obs_dim()];
    let mut aux = vec![0.0; params.config.aux_dim()];
    let mut trace = ForwardTrace::default();

    for env in 0..n_envs {
        let mut rng = Rng::new(derive_stream(seed, 0xE0 + env as u64));
        let env_scenario_seed = derive_stream(seed, 0x5C00 + env as u64);
        let mut episode = 0u64;
        let mut scenarios = Vec::new();
        let mut steps: Vec<StepRecord> = Vec::with_capacity(horizon);

        let mut scenario = sampler.sample(env_scenario_seed, episode);
        let mut state = WorldState::initial_with_t_max(&scenario, sampler.t_max);
        scenarios.push(scenario.clone());

        let mut bootstrap_value = 0.0;
        while steps.len() < horizon {
            if state.is_done() {
                episode += 1;
                scenario = sampler.sample(env_scenario_seed, episode);
                state = WorldState::initial_with_t_max(&scenario, sampler.t_max);
                scenarios.push(scenario.clone());
                continue;
            }
            let legal = legal_mask(&scenario, &state);
            if legal == 0 {
                // Dead end: close the running episode and resample.
                if let Some(last) = steps.last_mut() {
                    last.done = true;
                }
                episode += 1;
                scenario = sampler.sample(env_scenario_seed, episode);
                state = WorldState::initial_with_t_max(&scenario, sampler.t_max);
                scenarios.push(scenario.clone());
                continue;
            }
            gridworld::encode_observation_into(&scenario, &state, n_max, &mut obs);
            encode_aux_into(&state, n_max, &mut aux);
            params.forward_traced(&obs, &aux, &mut trace);
            let dist = masked_distribution(&trace.logits, legal, 1.0).expect("legal != 0");
            let action = dist.sample(&mut rng);
            let (next, out) = step(&scenario, &state, PrimitiveAction::from_flat_index(action))
                .expect("sampled action is legal");
            steps.push(StepRecord {
                obs: obs.iter().map(|&v| v as u8).collect(),
                aux: aux.iter().map(|&v| v as u8).collect(),
                legal,
                action: action as u16,
                log_prob: dist.log_prob(action),
                reward: out.reward,
                value: trace.value,
                done: out.done,
            });
            state = next;
        }
        if !steps.last().map(|r| r.done).unwrap_or(true) {
            gridworld::encode_observation_into(&scenario, &state, n_max, &mut obs);
            encode_aux_into(&state, n_max, &mut aux);
            params.forward_traced(&obs, &aux, &mut trace);
            bootstrap_value = trace.value;
        }
        segments.push(EnvSegment {
            steps,
            bootstrap_value,
            scenarios,
        });
    }
    RolloutBatch { segments, n_max }
}

/// Generalized advantage estimates plus value-regression targets, aligned
/// with the batch's flattened (segment-major) record order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageEstimates {
    /// GAE advantages before normalization.
    pub raw: Vec<f64>,
    /// Batch-normalized advantages (zero mean, unit variance; identity for a
    /// single-record batch).
    pub normalized: Vec<f64>,
    pub value_targets: Vec<f64>,
}

pub fn compute_advantages(batch: &RolloutBatch, gamma: f64, lambda: f64) -> AdvantageEstimates {
    let total = batch.len();
    let mut raw = Vec::with_capacity(total);
    let mut value_targets = Vec::with_capacity(total);
    for seg in &batch.segments {
        let n = seg.steps.len();
        let mut seg_adv = vec![0.0; n];
        let mut acc = 0.0;
        for t in (0..n).rev() {
            let rec = &seg.steps[t];
            let not_done = if rec.done { 0.0 } else { 1.0 };
            let next_value = if t + 1 < n {
                seg.steps[t + 1].value
            } else {
                seg.bootstrap_value
            };
            let delta = rec.reward + gamma * next_value * not_done - rec.value;
            acc = delta + gamma * lambda * not_done * acc;
            seg_adv[t] = acc;
        }
        for (t, a) in seg_adv.into_iter().enumerate() {
            raw.push(a);
            value_targets.push(a + seg.steps[t].value);
        }
    }
    let normalized = if raw.len() >= 2 {
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let var = raw.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / raw.len() as f64;
        let std = math::sqrt(var);
        raw.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
    } else {
        raw.clone()
    };
    AdvantageEstimates {
        raw,
        normalized,
        value_targets,
    }
}

/// Per-sample clipped objective `min(r * A, clip(r, 1-eps, 1+eps) * A)`;
/// the flag reports whether the clipped branch was the active minimum.
fn clipped_objective(ratio: f64, adv: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if unclipped <= clipped {
        (unclipped, false)
    } else {
        (clipped, true)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean clipped surrogate objective over all processed samples.
    pub surrogate: f64,
    pub samples: usize,
}

struct GradScratch {
    obs: Vec<f64>,
    aux: Vec<f64>,
    trace: ForwardTrace,
    d_logits: Vec<f64>,
}

impl GradScratch {
    fn new(params: &PolicyParams) -> Self {
        GradScratch {
            obs: vec![0.0; params.config.obs_dim()],
            aux: vec![0.0; params.config.aux_dim()],
            trace: ForwardTrace::default(),
            d_logits: vec![0.0; params.config.action_dim()],
        }
    }
}

/// Accumulates the minibatch gradient of the negated PPO objective into
/// `grad` and folds the sample statistics into `stats`. Returns false if any
/// term went non-finite.
#[allow(clippy::too_many_arguments)]
fn accumulate_minibatch(
    params: &PolicyParams,
    records: &[(&StepRecord, f64, f64)],
    cfg: &PpoConfig,
    grad: &mut [f64],
    stats: &mut UpdateStats,
    scratch: &mut GradScratch,
) -> bool {
    let scale = 1.0 / records.len() as f64;
    for &(rec, adv, v_target) in records {
        rec.unpack_into(&mut scratch.obs, &mut scratch.aux);
        params.forward_traced(&scratch.obs, &scratch.aux, &mut scratch.trace);
        let dist = masked_distribution(&scratch.trace.logits, rec.legal, 1.0)
            .expect("recorded state has legal actions");
        let a = rec.action as usize;
        let log_prob = dist.log_prob(a);
        let ratio = math::exp(log_prob - rec.log_prob);
        let (objective, clip_active) = clipped_objective(ratio, adv, cfg.clip_epsilon);
        debug_assert!(
            (adv >= 0.0 && objective <= ratio * adv + 1e-12)
                || (adv < 0.0
                    && objective
                        <= ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv
                            + 1e-12),
            "clipped surrogate must lower-bound both branches"
        );
        let entropy = dist.entropy();
        let value_err = scratch.trace.value - v_target;
        if !(ratio.is_finite() && objective.is_finite() && value_err.is_finite()) {
            return false;
        }

        // d(-objective)/d(logit) through log pi and the entropy bonus.
        let pg_coeff = if clip_active { 0.0 } else { ratio * adv };
        for d in &mut scratch.d_logits {
            *d = 0.0;
        }
        for j in 0..scratch.d_logits.len() {
            if rec.legal & (1 << j) == 0 {
                continue;
            }
            let p = dist.probs[j];
            let onehot = if j == a { 1.0 } else { 0.0 };
            let mut d = -pg_coeff * (onehot - p);
            if cfg.entropy_coef != 0.0 && p > 0.0 {
                d += cfg.entropy_coef * p * (math::ln(p) + entropy);
            }
            scratch.d_logits[j] = d * scale;
        }
        let d_value = cfg.critic_coef * 2.0 * value_err * scale;
        params.backward(
            &scratch.obs,
            &scratch.aux,
            &scratch.trace,
            &scratch.d_logits,
            d_value,
            grad,
        );

        stats.mean_ratio += ratio;
        stats.clip_fraction += if clip_active { 1.0 } else { 0.0 };
        stats.value_loss += value_err * value_err;
        stats.entropy += entropy;
        stats.surrogate += objective;
        stats.samples += 1;
    }
    true
}

/// Runs `update_epochs` shuffled minibatch passes maximizing the combined
/// objective. On any non-finite loss or parameter the update is rolled back
/// and `NonFiniteLoss` is returned.
pub fn ppo_update(
    params: &mut PolicyParams,
    adam: &mut Adam,
    batch: &RolloutBatch,
    estimates: &AdvantageEstimates,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<UpdateStats, PpoError> {
    assert!(!batch.is_empty(), "cannot update on an empty batch");
    let flat: Vec<&StepRecord> = batch.segments.iter().flat_map(|s| &s.steps).collect();
    assert_eq!(flat.len(), estimates.normalized.len());

    let params_backup = params.theta.clone();
    let adam_backup = adam.clone();

    let mut stats = UpdateStats::default();
    let mut grad = vec![0.0; params.param_count()];
    let mut scratch = GradScratch::new(params);
    let mut order: Vec<usize> = (0..flat.len()).collect();

    for _ in 0..cfg.update_epochs.max(1) {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.minibatch_size.max(1)) {
            grad.fill(0.0);
            let records: Vec<(&StepRecord, f64, f64)> = chunk
                .iter()
                .map(|&i| (flat[i], estimates.normalized[i], estimates.value_targets[i]))
                .collect();
            let ok = accumulate_minibatch(params, &records, cfg, &mut grad, &mut stats, &mut scratch);
            if !ok || grad.iter().any(|g| !g.is_finite()) {
                params.theta.copy_from_slice(&params_backup);
                *adam = adam_backup;
                return Err(PpoError::NonFiniteLoss);
            }
            adam.step(&mut params.theta, &grad, cfg.learning_rate);
        }
    }
    if params.theta.iter().any(|t| !t.is_finite()) {
        params.theta.copy_from_slice(&params_backup);
        *adam = adam_backup;
        return Err(PpoError::NonFiniteLoss);
    }
    let n = stats.samples.max(1) as f64;
    stats.mean_ratio /= n;
    stats.clip_fraction /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.surrogate /= n;
    Ok(stats)
}

impl StepRecord {
    pub fn unpack_into(&self, obs: &mut [f64], aux: &mut [f64]) {
        for (o, &b) in obs.iter_mut().zip(self.obs.iter()) {
            *o = b as f64;
        }
        for (a, &b) in aux.iter_mut().zip(self.aux.iter()) {
            *a = b as f64;
        }
    }
}

/// How the policy picks actions when run directly as a planner.
pub enum PolicyMode<'a> {
    /// Highest-probability legal action.
    Greedy,
    /// Sample from the masked distribution.
    Sample(&'a mut Rng),
}

/// A finished policy-driven episode: metrics plus the executed trace.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRun {
    pub metrics: EpisodeMetrics,
    pub trace: Vec<TraceStep>,
}

/// Runs the bare policy network on a scenario until done or dead end.
pub fn policy_episode(
    scenario: &Scenario,
    params: &PolicyParams,
    t_max: u32,
    mut mode: PolicyMode<'_>,
) -> EpisodeRun {
    let n_max = params.config.n_max;
    let mut state = WorldState::initial_with_t_max(scenario, t_max);
    let mut run = EpisodeRun {
        metrics: EpisodeMetrics::start(&state),
        trace: Vec::new(),
    };
    let mut obs = vec![0.0; params.config.obs_dim()];
    let mut aux = vec![0.0; params.config.aux_dim()];
    let mut trace = ForwardTrace::default();
    while !state.is_done() {
        let legal = legal_mask(scenario, &state);
        if legal == 0 {
            break;
        }
        gridworld::encode_observation_into(scenario, &state, n_max, &mut obs);
        encode_aux_into(&state, n_max, &mut aux);
        params.forward_traced(&obs, &aux, &mut trace);
        let dist = masked_distribution(&trace.logits, legal, 1.0).expect("legal != 0");
        let action = match &mut mode {
            PolicyMode::Greedy => dist.argmax(),
            PolicyMode::Sample(rng) => dist.sample(rng),
        };
        let t = state.t;
        let (next, out) = step(scenario, &state, PrimitiveAction::from_flat_index(action))
            .expect("chosen action is legal");
        run.metrics.absorb(&out);
        run.trace.push(TraceStep {
            t,
            action: PrimitiveAction::from_flat_index(action),
            path: out.moved_path.clone(),
            reward: out.reward,
            done: out.done,
        });
        state = next;
        if out.done {
            break;
        }
    }
    run
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    /// Mean total reward of episodes completed in this iteration's batch.
    pub mean_reward: f64,
    /// Greedy-policy success rate on the eval suite (carried forward between
    /// scheduled evaluations).
    pub success_rate: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub params: PolicyParams,
    /// Parameters at the best observed eval success rate.
    pub best_params: PolicyParams,
    pub best_success_rate: f64,
    pub curve: Vec<IterationStats>,
}

/// Full training loop: collect, estimate advantages, update, and
/// periodically evaluate the greedy policy on a frozen scenario suite.
pub fn train(
    params: PolicyParams,
    sampler: &ScenarioSampler,
    cfg: &PpoConfig,
) -> Result<TrainResult, PpoError> {
    cfg.validate()?;
    let mut params = params;
    let mut adam = Adam::new(params.param_count());
    let mut update_rng = Rng::new(derive_stream(cfg.seed, 0xAAAA));
    let eval_suite: Vec<Scenario> = (0..cfg.eval_episodes)
        .map(|i| sampler.sample(derive_stream(cfg.seed, 0xE7A1), i as u64))
        .collect();

    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut best_params = params.clone();
    let mut best_sr = f64::NEG_INFINITY;
    let mut last_sr = 0.0;

    for iteration in 0..cfg.iterations {
        let batch = collect_rollouts(
            &params,
            sampler,
            cfg.horizon,
            cfg.n_envs,
            derive_stream(cfg.seed, 0xC0 + iteration as u64),
        );
        let estimates = compute_advantages(&batch, cfg.gamma, cfg.lambda);
        let stats = ppo_update(&mut params, &mut adam, &batch, &estimates, cfg, &mut update_rng)?;

        if cfg.eval_every > 0
            && (iteration % cfg.eval_every == 0 || iteration + 1 == cfg.iterations)
        {
            last_sr = eval_success_rate(&params, &eval_suite, sampler.t_max);
            if last_sr > best_sr {
                best_sr = last_sr;
                best_params = params.clone();
            }
        }
        let rewards = batch.completed_episode_rewards();
        let mean_reward = if rewards.is_empty() {
            0.0
        } else {
            rewards.iter().sum::<f64>() / rewards.len() as f64
        };
        curve.push(IterationStats {
            iteration,
            mean_reward,
            success_rate: last_sr,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
        });
    }
    if best_sr == f64::NEG_INFINITY {
        best_params = params.clone();
        best_sr = 0.0;
    }
    Ok(TrainResult {
        params,
        best_params,
        best_success_rate: best_sr,
        curve,
    })
}

/// Greedy-policy success rate over a scenario suite.
pub fn eval_success_rate(params: &PolicyParams, suite: &[Scenario], t_max: u32) -> f64 {
    if suite.is_empty() {
        return 0.0;
    }
    let ok = suite
        .iter()
        .filter(|s| policy_episode(s, params, t_max, PolicyMode::Greedy).metrics.success)
        .count();
    ok as f64 / suite.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{init_params, NetConfig};

    fn small_params(seed: u64) -> PolicyParams {
        init_params(seed, NetConfig::mlp(6, 3, 16))
    }

    fn small_sampler() -> ScenarioSampler {
        ScenarioSampler::new(6, vec![2])
    }

    #[test]
    fn horizon_one_single_env_yields_one_record() {
        let params = small_params(0);
        let batch = collect_rollouts(&params, &small_sampler(), 1, 1, 7);
        assert_eq!(batch.len(), 1);
        assert_eq!(batch.segments.len(), 1);
    }

    #[test]
    fn collection_is_deterministic() {
        let params = small_params(1);
        let a = collect_rollouts(&params, &small_sampler(), 32, 2, 11);
        let b = collect_rollouts(&params, &small_sampler(), 32, 2, 11);
        assert_eq!(a, b);
    }

    #[test]
    fn recorded_rewards_match_replay() {
        let params = small_params(2);
        let batch = collect_rollouts(&params, &small_sampler(), 48, 2, 13);
        for seg in &batch.segments {
            let mut scenario_idx = 0;
            let mut state =
                WorldState::initial_with_t_max(&seg.scenarios[0], gridworld::DEFAULT_T_MAX);
            for rec in &seg.steps {
                let action = PrimitiveAction::from_flat_index(rec.action as usize);
                let (next, out) = step(&seg.scenarios[scenario_idx], &state, action).unwrap();
                assert_eq!(out.reward, rec.reward, "replayed reward differs");
                if rec.done {
                    scenario_idx += 1;
                    if scenario_idx < seg.scenarios.len() {
                        state = WorldState::initial_with_t_max(
                            &seg.scenarios[scenario_idx],
                            gridworld::DEFAULT_T_MAX,
                        );
                    }
                } else {
                    state = next;
                }
            }
        }
    }

    #[test]
    fn lambda_zero_gives_one_step_td() {
        let params = small_params(3);
        let batch = collect_rollouts(&params, &small_sampler(), 16, 1, 17);
        let est = compute_advantages(&batch, 0.9, 0.0);
        let seg = &batch.segments[0];
        for (t, rec) in seg.steps.iter().enumerate() {
            let next_v = if rec.done {
                0.0
            } else if t + 1 < seg.steps.len() {
                seg.steps[t + 1].value
            } else {
                seg.bootstrap_value
            };
            let td = rec.reward + 0.9 * next_v - rec.value;
            assert!((est.raw[t] - td).abs() < 1e-12);
        }
    }

    fn synthetic_batch(rewards: &[f64], values: &[f64], terminal: bool) -> RolloutBatch {
        let steps = rewards
            .iter()
            .zip(values)
            .enumerate()
            .map(|(i, (&reward, &value))| StepRecord {
                obs: Box::new([]),
                aux: Box::new([]),
                legal: 0b11,
                action: 0,
                log_prob: -0.5,
                reward,
                value,
                done: terminal && i + 1 == rewards.len(),
            })
            .collect();
        RolloutBatch {
            segments: alloc::vec![EnvSegment {
                steps,
                bootstrap_value: 0.0,
                scenarios: Vec::new(),
            }],
            n_max: 1,
        }
    }

    #[test]
    fn gae_matches_hand_computed_discounted_sums() {
        // rewards [-1, -1, 50], zero values, gamma 0.9, lambda 1, terminal:
        // raw advantages are the discounted reward tails.
        let batch = synthetic_batch(&[-1.0, -1.0, 50.0], &[0.0; 3], true);
        let est = compute_advantages(&batch, 0.9, 1.0);
        let expect = [
            -1.0 - 0.9 + 0.81 * 50.0, // 38.6
            -1.0 + 0.9 * 50.0,        // 44.0
            50.0,
        ];
        for (got, want) in est.raw.iter().zip(expect) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert!((est.raw[0] - 38.6).abs() < 1e-9);
    }

    #[test]
    fn values_equal_to_returns_give_zero_advantages() {
        // With lambda = 1 and V(s_t) equal to the discounted return, every
        // raw advantage collapses to zero.
        let gamma = 0.9;
        let rewards = [2.0, -1.0, 3.0];
        let mut values = [0.0; 3];
        for t in (0..3).rev() {
            values[t] = rewards[t] + if t + 1 < 3 { gamma * values[t + 1] } else { 0.0 };
        }
        let batch = synthetic_batch(&rewards, &values, true);
        let est = compute_advantages(&batch, gamma, 1.0);
        for a in &est.raw {
            assert!(a.abs() < 1e-12);
        }
    }

    #[test]
    fn clip_substitution_example() {
        // ratio 1.5, eps 0.2, positive advantage: the clipped branch 1.2 * A
        // is active.
        let (obj, clipped) = clipped_objective(1.5, 2.0, 0.2);
        assert_eq!(obj, 1.2 * 2.0);
        assert!(clipped);
        let (obj, clipped) = clipped_objective(0.9, 2.0, 0.2);
        assert_eq!(obj, 0.9 * 2.0);
        assert!(!clipped);
        // Negative advantage: min picks the unclipped branch when the ratio
        // shrinks below the band.
        let (obj, clipped) = clipped_objective(0.5, -1.0, 0.2);
        assert_eq!(obj, 0.8 * -1.0);
        assert!(clipped);
    }

    #[test]
    fn ratio_one_batch_reports_mean_advantage_and_zero_clipping() {
        let params = small_params(4);
        let batch = collect_rollouts(&params, &small_sampler(), 24, 1, 23);
        let est = compute_advantages(&batch, 0.95, 0.95);
        let mut trained = params.clone();
        let mut adam = Adam::new(params.param_count());
        let cfg = PpoConfig {
            learning_rate: 0.0, // keep theta == theta_old throughout
            update_epochs: 1,
            minibatch_size: batch.len(),
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        let mut rng = Rng::new(0);
        let stats = ppo_update(&mut trained, &mut adam, &batch, &est, &cfg, &mut rng).unwrap();
        assert_eq!(trained.theta, params.theta);
        let mean_adv = est.normalized.iter().sum::<f64>() / est.normalized.len() as f64;
        assert!((stats.mean_ratio - 1.0).abs() < 1e-12);
        assert_eq!(stats.clip_fraction, 0.0);
        assert!((stats.surrogate - mean_adv).abs() < 1e-9);
    }

    /// Two-armed bandit: one legal rewarding action, one legal dud. PPO must
    /// concentrate the policy on the rewarding arm.
    #[test]
    fn ppo_solves_two_armed_bandit() {
        let cfg_net = NetConfig::mlp(4, 1, 8);
        let mut params = init_params(5, cfg_net);
        let mut adam = Adam::new(params.param_count());
        let mut rng = Rng::new(99);
        let cfg = PpoConfig {
            learning_rate: 3e-3,
            update_epochs: 2,
            minibatch_size: 32,
            entropy_coef: 0.001,
            ..PpoConfig::default()
        };
        let legal: u128 = 0b11;
        let obs_dim = cfg_net.obs_dim();
        let aux_dim = cfg_net.aux_dim();
        let obs_pattern: Vec<u8> = (0..obs_dim).map(|i| (i % 7 == 0) as u8).collect();
        let aux_pattern: Vec<u8> = vec![0; aux_dim];

        let mut obs_f = vec![0.0; obs_dim];
        let mut aux_f = vec![0.0; aux_dim];
        let mut trace = ForwardTrace::default();

        for _update in 0..200 {
            let mut steps = Vec::with_capacity(32);
            for _ in 0..32 {
                for (o, &b) in obs_f.iter_mut().zip(&obs_pattern) {
                    *o = b as f64;
                }
                for (a, &b) in aux_f.iter_mut().zip(&aux_pattern) {
                    *a = b as f64;
                }
                params.forward_traced(&obs_f, &aux_f, &mut trace);
                let dist = masked_distribution(&trace.logits, legal, 1.0).unwrap();
                let action = dist.sample(&mut rng);
                let reward = if action == 0 { 1.0 } else { 0.0 };
                steps.push(StepRecord {
                    obs: obs_pattern.clone().into_boxed_slice(),
                    aux: aux_pattern.clone().into_boxed_slice(),
                    legal,
                    action: action as u16,
                    log_prob: dist.log_prob(action),
                    reward,
                    value: trace.value,
                    done: true,
                });
            }
            let batch = RolloutBatch {
                segments: alloc::vec![EnvSegment {
                    steps,
                    bootstrap_value: 0.0,
                    scenarios: Vec::new(),
                }],
                n_max: 1,
            };
            let est = compute_advantages(&batch, 0.95, 0.95);
            ppo_update(&mut params, &mut adam, &batch, &est, &cfg, &mut rng).unwrap();
        }

        for (o, &b) in obs_f.iter_mut().zip(&obs_pattern) {
            *o = b as f64;
        }
        params.forward_traced(&obs_f, &aux_f, &mut trace);
        let dist = masked_distribution(&trace.logits, legal, 1.0).unwrap();
        assert!(
            dist.probs[0] > 0.95,
            "rewarding arm probability {}",
            dist.probs[0]
        );
    }

    #[test]
    fn ppo_gradient_equals_reinforce_at_old_params() {
        // With c1 = c2 = 0 and eps -> infinity, the first-pass gradient is
        // the vanilla policy gradient of mean(A * log pi). Cross-check
        // against central finite differences of that objective.
        let params = small_params(6);
        let batch = collect_rollouts(&params, &small_sampler(), 12, 1, 31);
        let est = compute_advantages(&batch, 0.95, 0.95);
        let cfg = PpoConfig {
            clip_epsilon: f64::INFINITY,
            critic_coef: 0.0,
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        let flat: Vec<&StepRecord> = batch.segments.iter().flat_map(|s| &s.steps).collect();
        let records: Vec<(&StepRecord, f64, f64)> = flat
            .iter()
            .enumerate()
            .map(|(i, r)| (*r, est.normalized[i], est.value_targets[i]))
            .collect();
        let mut grad = vec![0.0; params.param_count()];
        let mut stats = UpdateStats::default();
        let mut scratch = GradScratch::new(&params);
        assert!(accumulate_minibatch(&params, &records, &cfg, &mut grad, &mut stats, &mut scratch));

        // Independent REINFORCE objective via the public forward pass only.
        let objective = |p: &PolicyParams| -> f64 {
            let mut obs = vec![0.0; p.config.obs_dim()];
            let mut aux = vec![0.0; p.config.aux_dim()];
            let mut total = 0.0;
            for (rec, adv, _) in &records {
                rec.unpack_into(&mut obs, &mut aux);
                let (logits, _) = p.forward(&obs, &aux).unwrap();
                let dist = masked_distribution(&logits, rec.legal, 1.0).unwrap();
                total += adv * dist.log_prob(rec.action as usize);
            }
            total / records.len() as f64
        };
        let h = 1e-5;
        let mut rng = Rng::new(77);
        for _ in 0..12 {
            let i = rng.next_below(params.param_count());
            let mut plus = params.clone();
            plus.theta[i] += h;
            let mut minus = params.clone();
            minus.theta[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            // grad holds the negated objective's gradient.
            let analytic = -grad[i];
            let denom = analytic.abs().max(fd.abs());
            if denom < 1e-7 {
                assert!((analytic - fd).abs() < 1e-9);
            } else {
                assert!(
                    ((analytic - fd) / denom).abs() < 1e-4,
                    "coord {i}: {analytic} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn non_finite_batch_restores_params() {
        let params = small_params(7);
        let batch = collect_rollouts(&params, &small_sampler(), 8, 1, 37);
        let mut est = compute_advantages(&batch, 0.95, 0.95);
        est.normalized[0] = f64::INFINITY;
        let mut trained = params.clone();
        let mut adam = Adam::new(params.param_count());
        let mut rng = Rng::new(0);
        let err = ppo_update(
            &mut trained,
            &mut adam,
            &batch,
            &est,
            &PpoConfig::default(),
            &mut rng,
        )
        .unwrap_err();
        assert_eq!(err, PpoError::NonFiniteLoss);
        assert_eq!(trained.theta, params.theta, "parameters restored");
    }

    #[test]
    fn zero_iterations_returns_initial_params() {
        let params = small_params(8);
        let cfg = PpoConfig {
            iterations: 0,
            ..PpoConfig::default()
        };
        let result = train(params.clone(), &small_sampler(), &cfg).unwrap();
        assert_eq!(result.params.theta, params.theta);
        assert!(result.curve.is_empty());
    }

    #[test]
    fn training_curve_is_deterministic() {
        let cfg = PpoConfig {
            iterations: 3,
            n_envs: 2,
            horizon: 24,
            eval_every: 2,
            eval_episodes: 4,
            seed: 5,
            ..PpoConfig::default()
        };
        let a = train(small_params(9), &small_sampler(), &cfg).unwrap();
        let b = train(small_params(9), &small_sampler(), &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.params.theta, b.params.theta);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = PpoConfig::default();
        cfg.clip_epsilon = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = PpoConfig::default();
        cfg.gamma = 0.0;
        assert!(cfg.validate().is_err());
        assert!(PpoConfig::full_scale().validate().is_ok());
        assert_eq!(PpoConfig::full_scale().n_envs, 28);
        assert_eq!(PpoConfig::full_scale().iterations, 8000);
    }
}
