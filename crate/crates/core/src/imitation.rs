//! Scripted expert, expert-dataset collection, and behavior-cloning
//! pretraining of the policy network.
//!
//! The expert is a deterministic greedy rule rather than a learned model:
//! send the unfinished object with the shortest A* route home; when every
//! unfinished object is walled in, sweep whichever movable object frees the
//! most cells for one of them. It is not optimal, but it is competent,
//! fully reproducible, and easy to imitate.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::gridworld::{self, legal_actions, legal_mask, step, Scenario, WorldState};
use crate::pathfind::{self, PrimitiveAction, PrimitiveKind};
use crate::policy::{
    encode_aux_into, masked_distribution, Adam, ForwardTrace, PolicyParams,
};
use crate::rng::{derive_stream, Rng};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExpertError {
    #[error("no legal action available")]
    NoLegalAction,
    #[error("expert succeeded on {successes} of the first {attempts} attempts; dataset config is too hard")]
    ExpertTooWeak { successes: usize, attempts: usize },
}

/// Greedy expert rule. The state must not be done.
///
/// 1. Among unfinished objects with a reachable target, actuate the one with
///    the shortest A* route (lowest id on ties) via the astar primitive.
/// 2. Otherwise, for the lowest-id unfinished blocked object, try every
///    directional sweep of every other movable object. Sweeps that open an
///    A* route to the blocked object's target come first (shortest opened
///    route wins), then sweeps that newly free the most placements for it;
///    ties break by sweep order up/down/left/right, then lowest mover id.
/// 3. Otherwise fall back to the first legal action in `(id, kind)` order.
pub fn scripted_expert_action(
    scenario: &Scenario,
    state: &WorldState,
) -> Result<PrimitiveAction, ExpertError> {
    debug_assert!(!state.is_done());
    let n = scenario.n_objects();

    let mut best: Option<(usize, usize)> = None; // (path len, id)
    for i in 0..n {
        if state.at_target[i] || !scenario.objects[i].movable {
            continue;
        }
        if let Some(path) = pathfind::astar_path(scenario, state, i) {
            let key = (path.len(), i);
            if best.map_or(true, |b| key < b) {
                best = Some(key);
            }
        }
    }
    if let Some((_, id)) = best {
        return Ok(PrimitiveAction {
            object: id,
            kind: PrimitiveKind::Astar,
        });
    }

    for u in 0..n {
        if state.at_target[u] || !scenario.objects[u].movable {
            continue;
        }
        let before = reachable_placements(scenario, state, u);
        // Lexicographic key, minimized: (tier, metric, kind index, mover id)
        // where tier 0 = opens an astar route (metric = its length) and
        // tier 1 = frees placements (metric = MAX - newly freed).
        let mut best_move: Option<(u8, usize, usize, usize)> = None;
        for mover in 0..n {
            if mover == u || !scenario.objects[mover].movable {
                continue;
            }
            for kind in [
                PrimitiveKind::Up,
                PrimitiveKind::Down,
                PrimitiveKind::Left,
                PrimitiveKind::Right,
            ] {
                let path = pathfind::directional_sweep(scenario, state, mover, kind);
                if path.is_empty() {
                    continue;
                }
                let mut hypothetical = state.clone();
                hypothetical.poses[mover] = path.end();
                let key = if let Some(route) = pathfind::astar_path(scenario, &hypothetical, u) {
                    (0u8, route.len(), kind.index(), mover)
                } else {
                    let after = reachable_placements(scenario, &hypothetical, u);
                    if after <= before {
                        continue;
                    }
                    (1u8, usize::MAX - (after - before), kind.index(), mover)
                };
                if best_move.map_or(true, |b| key < b) {
                    best_move = Some(key);
                }
            }
        }
        if let Some((_, _, kind_idx, mover)) = best_move {
            return Ok(PrimitiveAction {
                object: mover,
                kind: PrimitiveKind::from_index(kind_idx).unwrap(),
            });
        }
    }

    legal_actions(scenario, state)
        .into_iter()
        .next()
        .ok_or(ExpertError::NoLegalAction)
}

/// Number of reference-cell placements object `u` can reach from its current
/// pose by single-cell moves.
fn reachable_placements(scenario: &Scenario, state: &WorldState, u: usize) -> usize {
    let m = scenario.m;
    let mut seen = vec![false; m * m];
    let start = state.poses[u];
    let mut stack = vec![start];
    seen[start.y as usize * m + start.x as usize] = true;
    let mut count = 1;
    while let Some(p) = stack.pop() {
        for kind in [
            PrimitiveKind::Up,
            PrimitiveKind::Down,
            PrimitiveKind::Left,
            PrimitiveKind::Right,
        ] {
            let (dx, dy) = kind.delta().unwrap();
            let next = gridworld::Pose {
                x: p.x + dx,
                y: p.y + dy,
                phi: p.phi,
            };
            if next.x < 0 || next.y < 0 || next.x as usize >= m || next.y as usize >= m {
                continue;
            }
            let idx = next.y as usize * m + next.x as usize;
            if seen[idx] {
                continue;
            }
            if placement_free_for(scenario, state, u, next) {
                seen[idx] = true;
                count += 1;
                stack.push(next);
            }
        }
    }
    count
}

fn placement_free_for(
    scenario: &Scenario,
    state: &WorldState,
    u: usize,
    pose: gridworld::Pose,
) -> bool {
    let (w, h) = scenario.objects[u].extent(pose.phi);
    if pose.x < 0
        || pose.y < 0
        || pose.x as usize + w > scenario.m
        || pose.y as usize + h > scenario.m
    {
        return false;
    }
    for r in &scenario.immovable {
        if pose.x < r.x + r.w as i32
            && r.x < pose.x + w as i32
            && pose.y < r.y + r.h as i32
            && r.y < pose.y + h as i32
        {
            return false;
        }
    }
    for other in 0..scenario.n_objects() {
        if other == u {
            continue;
        }
        let op = state.poses[other];
        let (ow, oh) = scenario.objects[other].extent(op.phi);
        if pose.x < op.x + ow as i32
            && op.x < pose.x + w as i32
            && pose.y < op.y + oh as i32
            && op.y < pose.y + h as i32
        {
            return false;
        }
    }
    true
}

/// Outcome of running the expert on one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertRun {
    pub actions: Vec<PrimitiveAction>,
    pub reward_sum: f64,
    pub steps: u32,
    pub success: bool,
    pub path_len: usize,
}

/// Runs the scripted expert until the episode ends or it dead-ends.
pub fn expert_rollout(scenario: &Scenario, t_max: u32) -> ExpertRun {
    let mut state = WorldState::initial_with_t_max(scenario, t_max);
    let mut run = ExpertRun {
        actions: Vec::new(),
        reward_sum: 0.0,
        steps: 0,
        success: gridworld::is_success(&state),
        path_len: 0,
    };
    while !state.is_done() {
        let action = match scripted_expert_action(scenario, &state) {
            Ok(a) => a,
            Err(_) => break,
        };
        let (next, out) = match step(scenario, &state, action) {
            Ok(r) => r,
            Err(_) => break,
        };
        run.actions.push(action);
        run.reward_sum += out.reward;
        run.steps += 1;
        run.path_len += out.moved_path.len();
        run.success = out.success;
        state = next;
        if out.done {
            break;
        }
    }
    run
}

/// One successful expert episode with enough context to replay it.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertEpisode {
    pub scenario: Scenario,
    pub actions: Vec<PrimitiveAction>,
    pub reward_sum: f64,
}

/// One supervised record: encoded inputs, the legality mask, and the expert
/// action, all captured in the state the action was taken in.
#[derive(Clone, Debug, PartialEq)]
pub struct BcRecord {
    pub obs: Box<[u8]>,
    pub aux: Box<[u8]>,
    pub legal: u128,
    pub action: u16,
    pub episode: u32,
}

impl BcRecord {
    pub fn unpack_into(&self, obs: &mut [f64], aux: &mut [f64]) {
        for (o, &b) in obs.iter_mut().zip(self.obs.iter()) {
            *o = b as f64;
        }
        for (a, &b) in aux.iter_mut().zip(self.aux.iter()) {
            *a = b as f64;
        }
    }
}

/// Expert demonstrations: successful episodes plus their flattened
/// state-action records.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertDataset {
    pub episodes: Vec<ExpertEpisode>,
    pub records: Vec<BcRecord>,
    pub n_max: usize,
    pub attempts: usize,
}

impl ExpertDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Scenario sampling configuration for dataset collection and training envs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioSampler {
    pub m: usize,
    /// Object counts cycled per episode.
    pub object_counts: Vec<usize>,
    pub t_max: u32,
}

impl ScenarioSampler {
    pub fn new(m: usize, object_counts: Vec<usize>) -> Self {
        ScenarioSampler {
            m,
            object_counts,
            t_max: gridworld::DEFAULT_T_MAX,
        }
    }

    /// Deterministic scenario for episode `index` under `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> Scenario {
        let n = self.object_counts[(index as usize) % self.object_counts.len()];
        let mut attempt = 0u64;
        loop {
            let s = derive_stream(seed, index.wrapping_mul(1013) ^ attempt);
            match gridworld::random_scenario(n, self.m, s) {
                Ok(sc) => return sc,
                Err(_) => attempt += 1,
            }
        }
    }
}

/// Attempts `n_episodes` expert episodes on sampled scenarios and keeps the
/// successful ones; behavior cloning on failures would teach failures.
///
/// Returns `ExpertTooWeak` if fewer than 10% of the first 100 attempts
/// succeed. Deterministic for a fixed `(sampler, seed)`.
pub fn collect_expert_dataset(
    n_episodes: usize,
    sampler: &ScenarioSampler,
    n_max: usize,
    seed: u64,
) -> Result<ExpertDataset, ExpertError> {
    let mut dataset = ExpertDataset {
        episodes: Vec::new(),
        records: Vec::new(),
        n_max,
        attempts: n_episodes,
    };
    let mut successes = 0usize;
    for ep in 0..n_episodes {
        let scenario = sampler.sample(seed, ep as u64);
        let run = expert_rollout(&scenario, sampler.t_max);
        if run.success {
            successes += 1;
            append_episode(&mut dataset, scenario, run);
        }
        if ep + 1 == 100 && successes < 10 {
            return Err(ExpertError::ExpertTooWeak {
                successes,
                attempts: 100,
            });
        }
    }
    Ok(dataset)
}

fn append_episode(dataset: &mut ExpertDataset, scenario: Scenario, run: ExpertRun) {
    let episode_idx = dataset.episodes.len() as u32;
    let n_max = dataset.n_max;
    let mut state = WorldState::initial_with_t_max(&scenario, u32::MAX);
    let mut obs = vec![0.0; gridworld::obs_len(scenario.m, n_max)];
    let mut aux = vec![0.0; crate::policy::aux_dim(n_max)];
    for &action in &run.actions {
        gridworld::encode_observation_into(&scenario, &state, n_max, &mut obs);
        encode_aux_into(&state, n_max, &mut aux);
        let legal = legal_mask(&scenario, &state);
        debug_assert!(legal & (1 << action.flat_index()) != 0);
        dataset.records.push(BcRecord {
            obs: obs.iter().map(|&v| v as u8).collect(),
            aux: aux.iter().map(|&v| v as u8).collect(),
            legal,
            action: action.flat_index() as u16,
            episode: episode_idx,
        });
        let (next, _) = step(&scenario, &state, action).expect("recorded action replays");
        state = next;
    }
    dataset.episodes.push(ExpertEpisode {
        scenario,
        actions: run.actions,
        reward_sum: run.reward_sum,
    });
}

/// Behavior-cloning hyperparameters. Defaults follow the training recipe the
/// benchmarks were tuned with: 3000 epochs, batch 64, learning rate 1e-4.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            epochs: 3000,
            batch_size: 64,
            learning_rate: 1e-4,
            holdout_frac: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_accuracy: f64,
}

/// Minimizes masked cross-entropy of the expert actions with Adam.
///
/// The dataset is split 90/10 by episode (not by record) into train and
/// held-out parts; the returned curve carries the mean train loss and the
/// held-out top-1 accuracy per epoch. With too few episodes to split, the
/// accuracy is measured on the train records instead.
pub fn bc_train(
    params: &mut PolicyParams,
    dataset: &ExpertDataset,
    cfg: &BcConfig,
) -> Vec<BcEpochStats> {
    assert!(!dataset.is_empty(), "cannot train on an empty dataset");
    assert_eq!(params.config.n_max, dataset.n_max, "dataset/network capacity mismatch");

    let n_episodes = dataset.episodes.len();
    let mut episode_order: Vec<usize> = (0..n_episodes).collect();
    let mut rng = Rng::new(derive_stream(cfg.seed, 0xBC));
    rng.shuffle(&mut episode_order);
    let n_holdout = if n_episodes >= 2 {
        ((n_episodes as f64 * cfg.holdout_frac) as usize).max(1)
    } else {
        0
    };
    let holdout_episodes = &episode_order[n_episodes - n_holdout..];
    let is_holdout = |ep: u32| holdout_episodes.contains(&(ep as usize));

    let train_idx: Vec<usize> = (0..dataset.records.len())
        .filter(|&i| !is_holdout(dataset.records[i].episode))
        .collect();
    let eval_idx: Vec<usize> = if n_holdout > 0 {
        (0..dataset.records.len())
            .filter(|&i| is_holdout(dataset.records[i].episode))
            .collect()
    } else {
        train_idx.clone()
    };

    let mut adam = Adam::new(params.param_count());
    let mut grad = vec![0.0; params.param_count()];
    let mut trace = ForwardTrace::default();
    let mut obs = vec![0.0; params.config.obs_dim()];
    let mut aux = vec![0.0; params.config.aux_dim()];
    let mut order = train_idx.clone();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let rec = &dataset.records[i];
                rec.unpack_into(&mut obs, &mut aux);
                params.forward_traced(&obs, &aux, &mut trace);
                let dist = masked_distribution(&trace.logits, rec.legal, 1.0)
                    .expect("recorded state has legal actions");
                loss_sum -= dist.log_prob(rec.action as usize);
                let mut d_logits = vec![0.0; trace.logits.len()];
                for j in 0..d_logits.len() {
                    if rec.legal & (1 << j) != 0 {
                        let y = if j == rec.action as usize { 1.0 } else { 0.0 };
                        d_logits[j] = (dist.probs[j] - y) * scale;
                    }
                }
                params.backward(&obs, &aux, &trace, &d_logits, 0.0, &mut grad);
            }
            seen += batch.len();
            adam.step(&mut params.theta, &grad, cfg.learning_rate);
        }
        let train_loss = loss_sum / seen.max(1) as f64;
        let holdout_accuracy = accuracy(params, dataset, &eval_idx, &mut obs, &mut aux, &mut trace);
        curve.push(BcEpochStats {
            epoch,
            train_loss,
            holdout_accuracy,
        });
    }
    curve
}

/// Greedy top-1 accuracy of the masked policy on the given records.
pub fn eval_accuracy(params: &PolicyParams, dataset: &ExpertDataset, idx: &[usize]) -> f64 {
    let mut obs = vec![0.0; params.config.obs_dim()];
    let mut aux = vec![0.0; params.config.aux_dim()];
    let mut trace = ForwardTrace::default();
    accuracy(params, dataset, idx, &mut obs, &mut aux, &mut trace)
}

fn accuracy(
    params: &PolicyParams,
    dataset: &ExpertDataset,
    idx: &[usize],
    obs: &mut [f64],
    aux: &mut [f64],
    trace: &mut ForwardTrace,
) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for &i in idx {
        let rec = &dataset.records[i];
        rec.unpack_into(obs, aux);
        params.forward_traced(obs, aux, trace);
        let dist = masked_distribution(&trace.logits, rec.legal, 1.0).unwrap();
        if dist.argmax() == rec.action as usize {
            hits += 1;
        }
    }
    hits as f64 / idx.len() as f64
}
