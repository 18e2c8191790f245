//! High-level policy: per-step Monte Carlo tree search over primitive
//! actions, guided by the policy network (or a uniform policy) for both
//! expansion and simulation.
//!
//! Each decision builds a fresh tree rooted at the current state and runs
//! select / expand / simulate / backpropagate iterations. Nodes hold a max
//! backup: a parent's value is `gamma * V(best child) + edge reward`, where
//! the edge reward is the simulator reward recorded when the child was
//! created. Children are always compared by that same backed-up quantity
//! `gamma * V_n(child) + r(edge)`; comparing bare node values would ignore
//! the immediate reward and rank a success-delivering terminal child (whose
//! onward value is zero) below a wasteful sibling. The final action is the
//! root child with the highest backed-up value.

use alloc::vec;
use alloc::vec::Vec;

use crate::gridworld::{
    self, legal_mask, step, EpisodeMetrics, Scenario, StepOutcome, TraceStep, WorldState,
};
use crate::math;
use crate::pathfind::PrimitiveAction;
use crate::policy::{
    encode_aux_into, masked_distribution, uniform_distribution, ActionDistribution,
    ForwardTrace, PolicyParams,
};
use crate::rng::Rng;

/// What the selection score is made of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SelectionMode {
    /// Min-max-normalized node value plus the exploration term. Default:
    /// stored node values should inform selection.
    ValueAugmented,
    /// Exploration term only:
    /// `C * sqrt(ln N(parent) / (1 + N(child)))`.
    ExplorationOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SearchConfig {
    pub iterations: usize,
    /// Exploration constant C.
    pub exploration: f64,
    pub gamma: f64,
    /// Rollout step cap; `None` rolls out to the episode step limit.
    pub t_sim: Option<u32>,
    pub mode: SelectionMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iterations: 64,
            exploration: math::sqrt(2.0),
            gamma: 0.95,
            t_sim: None,
            mode: SelectionMode::ValueAugmented,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.iterations == 0 {
            return Err(SearchError::InvalidConfig("iterations must be >= 1"));
        }
        if !(self.exploration.is_finite() && self.exploration > 0.0) {
            return Err(SearchError::InvalidConfig("exploration constant must be > 0"));
        }
        if self.t_sim == Some(0) {
            return Err(SearchError::InvalidConfig("t_sim must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SearchError {
    #[error("no legal action in the root state")]
    NoLegalAction,
    #[error("invalid search config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("node has no unexpanded legal action")]
pub struct FullyExpanded;

/// Action source guiding expansion and rollouts.
#[derive(Clone, Copy)]
pub enum Guidance<'a> {
    Policy(&'a PolicyParams),
    Uniform,
}

/// Scratch buffers for policy evaluations during search.
pub struct GuidanceScratch {
    obs: Vec<f64>,
    aux: Vec<f64>,
    trace: ForwardTrace,
}

impl GuidanceScratch {
    pub fn new(guidance: &Guidance<'_>) -> Self {
        match guidance {
            Guidance::Policy(params) => GuidanceScratch {
                obs: vec![0.0; params.config.obs_dim()],
                aux: vec![0.0; params.config.aux_dim()],
                trace: ForwardTrace::default(),
            },
            Guidance::Uniform => GuidanceScratch {
                obs: Vec::new(),
                aux: Vec::new(),
                trace: ForwardTrace::default(),
            },
        }
    }

    /// Masked action distribution for `state` under the guidance policy.
    fn distribution(
        &mut self,
        guidance: &Guidance<'_>,
        scenario: &Scenario,
        state: &WorldState,
        mask: u128,
        action_dim: usize,
    ) -> ActionDistribution {
        debug_assert!(mask != 0);
        match guidance {
            Guidance::Policy(params) => {
                gridworld::encode_observation_into(scenario, state, params.config.n_max, &mut self.obs);
                encode_aux_into(state, params.config.n_max, &mut self.aux);
                params.forward_traced(&self.obs, &self.aux, &mut self.trace);
                masked_distribution(&self.trace.logits, mask, 1.0).expect("mask is non-empty")
            }
            Guidance::Uniform => {
                uniform_distribution(action_dim, mask).expect("mask is non-empty")
            }
        }
    }
}

/// One search-tree node.
#[derive(Clone, Debug)]
pub struct SearchNode {
    pub state: WorldState,
    /// Visit count N.
    pub visits: u64,
    /// Node value estimate V_n.
    pub value: f64,
    pub parent: Option<usize>,
    /// Children sorted by action index.
    pub children: Vec<(PrimitiveAction, usize)>,
    /// Legal actions not yet expanded.
    pub unexpanded: u128,
    /// Simulator reward on the edge from the parent.
    pub edge_reward: f64,
    pub terminal: bool,
}

/// Per-decision search tree (arena-backed, never reused across steps).
pub struct SearchTree<'a> {
    pub scenario: &'a Scenario,
    pub config: SearchConfig,
    nodes: Vec<SearchNode>,
}

/// Root-child statistics, the debug-dump payload.
#[derive(Clone, Debug, PartialEq)]
pub struct RootChildStat {
    pub action: PrimitiveAction,
    pub visits: u64,
    /// Node value V_n (onward value; excludes the edge reward).
    pub value: f64,
    /// Simulator reward on the root -> child edge.
    pub edge_reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub action: PrimitiveAction,
    pub root_visits: u64,
    pub root_children: Vec<RootChildStat>,
}

impl<'a> SearchTree<'a> {
    pub fn new(scenario: &'a Scenario, root_state: WorldState, config: SearchConfig) -> Self {
        let terminal = root_state.is_done();
        let unexpanded = if terminal {
            0
        } else {
            legal_mask(scenario, &root_state)
        };
        SearchTree {
            scenario,
            config,
            nodes: vec![SearchNode {
                state: root_state,
                visits: 0,
                value: 0.0,
                parent: None,
                children: Vec::new(),
                unexpanded,
                edge_reward: 0.0,
                terminal,
            }],
        }
    }

    pub fn node(&self, id: usize) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Descends from the root, at each level taking the child with the
    /// highest selection score, until reaching a node that is terminal, has
    /// an unexpanded legal action, or has no children. Ties break toward the
    /// lowest action index.
    pub fn select(&self) -> usize {
        let (lo, hi) = self.root_value_range();
        let mut id = 0;
        loop {
            let node = &self.nodes[id];
            if node.terminal || node.unexpanded != 0 || node.children.is_empty() {
                return id;
            }
            let parent_visits = node.visits.max(1) as f64;
            let mut best = node.children[0].1;
            let mut best_score = f64::NEG_INFINITY;
            for &(_, child_id) in &node.children {
                let child = &self.nodes[child_id];
                let explore = self.config.exploration
                    * math::sqrt(math::ln(parent_visits) / (1.0 + child.visits as f64));
                let score = match self.config.mode {
                    SelectionMode::ExplorationOnly => explore,
                    SelectionMode::ValueAugmented => {
                        let q = self.backup_value(child_id);
                        let norm = if hi > lo { (q - lo) / (hi - lo) } else { 0.5 };
                        norm + explore
                    }
                };
                if score > best_score {
                    best_score = score;
                    best = child_id;
                }
            }
            id = best;
        }
    }

    /// Discounted one-step backup of a child: `gamma * V_n + r(edge)`.
    fn backup_value(&self, child_id: usize) -> f64 {
        let child = &self.nodes[child_id];
        self.config.gamma * child.value + child.edge_reward
    }

    /// Min-max range of the current root children's backed-up values, used
    /// to normalize the value term so the exploration constant is
    /// scale-free.
    fn root_value_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(_, child_id) in &self.nodes[0].children {
            let v = self.backup_value(child_id);
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    /// Creates one child of `id` by sampling the guidance policy restricted
    /// to the unexpanded legal actions, stepping the simulator, and storing
    /// the new node with zero visits and value.
    pub fn expand(
        &mut self,
        id: usize,
        guidance: &Guidance<'_>,
        scratch: &mut GuidanceScratch,
        rng: &mut Rng,
    ) -> Result<usize, FullyExpanded> {
        let mask = self.nodes[id].unexpanded;
        if mask == 0 {
            return Err(FullyExpanded);
        }
        let action_dim = gridworld::MAX_OBJECTS * 5;
        let state = self.nodes[id].state.clone();
        let dist = scratch.distribution(guidance, self.scenario, &state, mask, action_dim);
        let flat = dist.sample(rng);
        let action = PrimitiveAction::from_flat_index(flat);
        self.nodes[id].unexpanded &= !(1u128 << flat);
        let (child_state, outcome) =
            step(self.scenario, &state, action).expect("unexpanded action is legal");
        let terminal = outcome.done;
        let unexpanded = if terminal {
            0
        } else {
            legal_mask(self.scenario, &child_state)
        };
        let child_id = self.nodes.len();
        self.nodes.push(SearchNode {
            state: child_state,
            visits: 0,
            value: 0.0,
            parent: Some(id),
            children: Vec::new(),
            unexpanded,
            edge_reward: outcome.reward,
            terminal,
        });
        let children = &mut self.nodes[id].children;
        let pos = children
            .binary_search_by_key(&action.flat_index(), |(a, _)| a.flat_index())
            .unwrap_err();
        children.insert(pos, (action, child_id));
        Ok(child_id)
    }

    /// Rolls the guidance policy out from the node's state for at most
    /// `t_sim` steps (or until done / dead end) and returns the discounted
    /// reward sum, with the discount starting at the node.
    pub fn simulate(
        &self,
        id: usize,
        guidance: &Guidance<'_>,
        scratch: &mut GuidanceScratch,
        t_sim: u32,
        rng: &mut Rng,
    ) -> f64 {
        let mut state = self.nodes[id].state.clone();
        let mut total = 0.0;
        let mut discount = 1.0;
        let action_dim = gridworld::MAX_OBJECTS * 5;
        for _ in 0..t_sim {
            if state.is_done() {
                break;
            }
            let mask = legal_mask(self.scenario, &state);
            if mask == 0 {
                break;
            }
            let dist = scratch.distribution(guidance, self.scenario, &state, mask, action_dim);
            let action = PrimitiveAction::from_flat_index(dist.sample(rng));
            let (next, outcome) =
                step(self.scenario, &state, action).expect("sampled action is legal");
            total += discount * outcome.reward;
            discount *= self.config.gamma;
            state = next;
            if outcome.done {
                break;
            }
        }
        total
    }

    /// Writes the simulated value into the leaf and updates every ancestor:
    /// the best child is re-picked by value, the parent takes
    /// `gamma * V(best) + r(edge)`, and visit counts increment along the
    /// path.
    pub fn backpropagate(&mut self, leaf: usize, value: f64) {
        self.nodes[leaf].value = value;
        self.nodes[leaf].visits += 1;
        let mut cursor = self.nodes[leaf].parent;
        while let Some(id) = cursor {
            let mut best = f64::NEG_INFINITY;
            for &(_, child_id) in &self.nodes[id].children {
                let q = self.backup_value(child_id);
                if q > best {
                    best = q;
                }
            }
            debug_assert!(best > f64::NEG_INFINITY, "ancestor has at least one child");
            self.nodes[id].value = best;
            self.nodes[id].visits += 1;
            cursor = self.nodes[id].parent;
        }
    }

    /// One full select / expand / simulate / backpropagate iteration.
    fn iterate(
        &mut self,
        guidance: &Guidance<'_>,
        scratch: &mut GuidanceScratch,
        t_sim: u32,
        rng: &mut Rng,
    ) {
        let selected = self.select();
        let leaf = if self.nodes[selected].terminal || self.nodes[selected].unexpanded == 0 {
            // Terminal or dead-end leaf: nothing to expand.
            selected
        } else {
            self.expand(selected, guidance, scratch, rng)
                .expect("selected node has an unexpanded action")
        };
        let value = self.simulate(leaf, guidance, scratch, t_sim, rng);
        self.backpropagate(leaf, value);
    }

    fn best_root_action(&self) -> Option<PrimitiveAction> {
        let mut best: Option<(f64, PrimitiveAction)> = None;
        for &(action, child_id) in &self.nodes[0].children {
            let q = self.backup_value(child_id);
            if best.map_or(true, |(bv, _)| q > bv) {
                best = Some((q, action));
            }
        }
        best.map(|(_, a)| a)
    }

    fn root_stats(&self) -> Vec<RootChildStat> {
        self.nodes[0]
            .children
            .iter()
            .map(|&(action, child_id)| RootChildStat {
                action,
                visits: self.nodes[child_id].visits,
                value: self.nodes[child_id].value,
                edge_reward: self.nodes[child_id].edge_reward,
            })
            .collect()
    }
}

/// Builds a fresh tree at `state`, runs the configured iterations, and
/// returns the root child with the highest value (lowest action index on
/// ties, because expansion inserts children in index order and the argmax
/// keeps the first maximum).
pub fn search(
    scenario: &Scenario,
    state: &WorldState,
    guidance: Guidance<'_>,
    config: &SearchConfig,
    rng: &mut Rng,
) -> Result<SearchResult, SearchError> {
    config.validate()?;
    if state.is_done() || legal_mask(scenario, state) == 0 {
        return Err(SearchError::NoLegalAction);
    }
    let t_sim = config
        .t_sim
        .unwrap_or_else(|| state.remaining_steps())
        .max(1);
    let mut tree = SearchTree::new(scenario, state.clone(), *config);
    let mut scratch = GuidanceScratch::new(&guidance);
    for _ in 0..config.iterations {
        tree.iterate(&guidance, &mut scratch, t_sim, rng);
    }
    debug_assert!(visit_counts_conserved(&tree));
    let action = tree.best_root_action().expect("root expanded at least once");
    Ok(SearchResult {
        action,
        root_visits: tree.nodes[0].visits,
        root_children: tree.root_stats(),
    })
}

/// N(parent) >= sum of N(children) and finite values, for every node.
fn visit_counts_conserved(tree: &SearchTree<'_>) -> bool {
    tree.nodes.iter().all(|node| {
        let child_sum: u64 = node
            .children
            .iter()
            .map(|&(_, c)| tree.nodes[c].visits)
            .sum();
        node.visits >= child_sum && node.value.is_finite()
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    pub actions: Vec<PrimitiveAction>,
    pub trace: Vec<TraceStep>,
    pub metrics: EpisodeMetrics,
    /// Root-child statistics per decision, for debugging dumps.
    pub decisions: Vec<Vec<RootChildStat>>,
}

/// Plans and executes one full episode: search for an action, step the
/// simulator, repeat until success, the step limit, or a dead end.
pub fn plan_episode(
    scenario: &Scenario,
    guidance: Guidance<'_>,
    config: &SearchConfig,
    t_max: u32,
    rng: &mut Rng,
) -> Result<PlanOutcome, SearchError> {
    config.validate()?;
    let mut state = WorldState::initial_with_t_max(scenario, t_max);
    let mut out = PlanOutcome {
        actions: Vec::new(),
        trace: Vec::new(),
        metrics: EpisodeMetrics::start(&state),
        decisions: Vec::new(),
    };
    while !state.is_done() {
        let result = match search(scenario, &state, guidance, config, rng) {
            Ok(r) => r,
            // A dead end mid-episode is a failed episode, not an error.
            Err(SearchError::NoLegalAction) => break,
            Err(e) => return Err(e),
        };
        let t = state.t;
        let (next, outcome): (WorldState, StepOutcome) =
            step(scenario, &state, result.action).expect("searched action is legal");
        out.actions.push(result.action);
        out.metrics.absorb(&outcome);
        out.trace.push(TraceStep {
            t,
            action: result.action,
            path: outcome.moved_path.clone(),
            reward: outcome.reward,
            done: outcome.done,
        });
        out.decisions.push(result.root_children);
        state = next;
        if outcome.done {
            break;
        }
    }
    Ok(out)
}
