//! Scenario suites, method comparison harness, and reference constants.
//!
//! A method is a planner kind plus an optional policy checkpoint and a
//! search configuration. Suites are paired: every method sees bit-identical
//! scenarios and identical per-scenario random streams, so differences in
//! the aggregates come from the methods alone. Failed episodes count their
//! steps at the episode limit, matching how the published comparison table
//! reports them.

use alloc::string::String;
use alloc::vec::Vec;

use crate::gridworld::{self, Scenario};
use crate::mcts::{self, Guidance, SearchConfig};
use crate::policy::PolicyParams;
use crate::ppo::{policy_episode, PolicyMode};
use crate::rng::{derive_stream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PlannerKind {
    /// Masked policy, highest-probability action, no search.
    PolicyGreedy,
    /// Masked policy, sampled actions, no search.
    PolicySample,
    /// Tree search with uniform-random guidance.
    MctsRandom,
    /// Tree search guided by the policy network.
    MctsPolicy,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 4] = [
        PlannerKind::PolicyGreedy,
        PlannerKind::PolicySample,
        PlannerKind::MctsRandom,
        PlannerKind::MctsPolicy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::PolicyGreedy => "policy-greedy",
            PlannerKind::PolicySample => "policy-sample",
            PlannerKind::MctsRandom => "mcts+random",
            PlannerKind::MctsPolicy => "mcts+policy",
        }
    }

    pub fn from_name(name: &str) -> Option<PlannerKind> {
        PlannerKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Whether this planner needs a policy checkpoint.
    pub fn needs_params(self) -> bool {
        !matches!(self, PlannerKind::MctsRandom)
    }
}

/// One benchmarked method.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub planner: PlannerKind,
    /// Display reference of the checkpoint backing this method, if any.
    pub checkpoint: Option<String>,
    pub search: SearchConfig,
}

impl MethodSpec {
    pub fn new(name: &str, planner: PlannerKind) -> Self {
        MethodSpec {
            name: String::from(name),
            planner,
            checkpoint: None,
            search: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BenchError {
    #[error("method '{0}' needs a policy checkpoint but none was given")]
    CheckpointMissing(String),
    #[error(transparent)]
    Search(#[from] crate::mcts::SearchError),
}

/// Per-scenario outcome. `steps_counted` applies the failed-at-limit
/// convention used by every aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioRecord {
    pub scenario_index: usize,
    pub n_objects: usize,
    pub reward_sum: f64,
    pub steps: u32,
    pub steps_counted: u32,
    pub success: bool,
    pub path_len: usize,
    /// Wall-clock milliseconds; informational only and deliberately absent
    /// from deterministic outputs.
    pub wall_ms: f64,
}

impl ScenarioRecord {
    /// Everything except the wall clock, for determinism comparisons.
    pub fn deterministic_view(&self) -> (usize, usize, f64, u32, u32, bool, usize) {
        (
            self.scenario_index,
            self.n_objects,
            self.reward_sum,
            self.steps,
            self.steps_counted,
            self.success,
            self.path_len,
        )
    }
}

/// Suite aggregates; every field is recomputable from the records.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregates {
    pub scenarios: usize,
    pub mean_reward: f64,
    pub mean_steps: f64,
    pub success_rate_percent: f64,
    pub mean_path_len: f64,
    /// Sample standard deviation of counted steps.
    pub steps_std: f64,
    /// Standard error of the mean counted steps.
    pub steps_stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub method: String,
    pub records: Vec<ScenarioRecord>,
    pub aggregates: Aggregates,
}

/// Runs one method on one scenario with an isolated random stream.
pub fn run_scenario(
    method: &MethodSpec,
    params: Option<&PolicyParams>,
    scenario: &Scenario,
    scenario_index: usize,
    stream_seed: u64,
    t_max: u32,
) -> Result<ScenarioRecord, BenchError> {
    if method.planner.needs_params() && params.is_none() {
        return Err(BenchError::CheckpointMissing(method.name.clone()));
    }
    #[cfg(feature = "std")]
    let start = std::time::Instant::now();

    let mut rng = Rng::new(stream_seed);
    let metrics = match method.planner {
        PlannerKind::PolicyGreedy => {
            policy_episode(scenario, params.unwrap(), t_max, PolicyMode::Greedy).metrics
        }
        PlannerKind::PolicySample => {
            policy_episode(scenario, params.unwrap(), t_max, PolicyMode::Sample(&mut rng)).metrics
        }
        PlannerKind::MctsRandom => {
            mcts::plan_episode(scenario, Guidance::Uniform, &method.search, t_max, &mut rng)?
                .metrics
        }
        PlannerKind::MctsPolicy => {
            mcts::plan_episode(
                scenario,
                Guidance::Policy(params.unwrap()),
                &method.search,
                t_max,
                &mut rng,
            )?
            .metrics
        }
    };

    #[cfg(feature = "std")]
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    #[cfg(not(feature = "std"))]
    let wall_ms = 0.0;

    Ok(ScenarioRecord {
        scenario_index,
        n_objects: scenario.n_objects(),
        reward_sum: metrics.reward_sum,
        steps: metrics.steps,
        steps_counted: if metrics.success { metrics.steps } else { t_max },
        success: metrics.success,
        path_len: metrics.path_len,
        wall_ms,
    })
}

/// Deterministic per-scenario stream seed shared by every method in a
/// paired comparison.
pub fn scenario_stream_seed(run_seed: u64, scenario_index: usize) -> u64 {
    derive_stream(run_seed, 0x3E07 + scenario_index as u64)
}

/// Bit-exact aggregation over records, independent of evaluation order.
pub fn aggregate(records: &[ScenarioRecord]) -> Aggregates {
    let n = records.len();
    if n == 0 {
        return Aggregates {
            scenarios: 0,
            mean_reward: 0.0,
            mean_steps: 0.0,
            success_rate_percent: 0.0,
            mean_path_len: 0.0,
            steps_std: 0.0,
            steps_stderr: 0.0,
        };
    }
    let nf = n as f64;
    let mean_reward = records.iter().map(|r| r.reward_sum).sum::<f64>() / nf;
    let mean_steps = records.iter().map(|r| r.steps_counted as f64).sum::<f64>() / nf;
    let successes = records.iter().filter(|r| r.success).count();
    let mean_path_len = records.iter().map(|r| r.path_len as f64).sum::<f64>() / nf;
    let var = if n >= 2 {
        records
            .iter()
            .map(|r| {
                let d = r.steps_counted as f64 - mean_steps;
                d * d
            })
            .sum::<f64>()
            / (nf - 1.0)
    } else {
        0.0
    };
    let steps_std = crate::math::sqrt(var);
    Aggregates {
        scenarios: n,
        mean_reward,
        mean_steps,
        success_rate_percent: 100.0 * successes as f64 / nf,
        mean_path_len,
        steps_std,
        steps_stderr: steps_std / crate::math::sqrt(nf),
    }
}

/// Runs a method over a whole suite sequentially. Scenario `i` uses the
/// stream `scenario_stream_seed(seed, i)`, so a parallel driver mapping the
/// same function over the suite produces identical records.
pub fn run_suite(
    method: &MethodSpec,
    params: Option<&PolicyParams>,
    suite: &[Scenario],
    seed: u64,
    t_max: u32,
) -> Result<SuiteResult, BenchError> {
    let mut records = Vec::with_capacity(suite.len());
    for (i, scenario) in suite.iter().enumerate() {
        records.push(run_scenario(
            method,
            params,
            scenario,
            i,
            scenario_stream_seed(seed, i),
            t_max,
        )?);
    }
    Ok(SuiteResult {
        method: method.name.clone(),
        aggregates: aggregate(&records),
        records,
    })
}

/// Suite shape: object counts, scenarios per count, grid size.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SuiteConfig {
    pub m: usize,
    pub sizes: Vec<usize>,
    pub per_size: usize,
    pub suite_seed: u64,
    pub t_max: u32,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            m: gridworld::DEFAULT_GRID,
            sizes: alloc::vec![3, 5, 8, 10],
            per_size: 100,
            suite_seed: 0,
            t_max: gridworld::DEFAULT_T_MAX,
        }
    }
}

impl SuiteConfig {
    /// The long-run shape with the two large object counts included.
    pub fn long_run(mut self) -> Self {
        self.sizes.extend_from_slice(&[15, 20]);
        self
    }

    /// Builds the per-size scenario lists. Scenario `i` of size index `s`
    /// depends only on `(suite_seed, s, i)`.
    pub fn build(&self) -> Vec<Vec<Scenario>> {
        self.sizes
            .iter()
            .enumerate()
            .map(|(s, &n)| {
                (0..self.per_size)
                    .map(|i| {
                        let mut attempt = 0u64;
                        loop {
                            let seed = derive_stream(
                                self.suite_seed,
                                (s as u64) << 40 | (i as u64) << 8 | attempt,
                            );
                            match gridworld::random_scenario(n, self.m, seed) {
                                Ok(sc) => return sc,
                                Err(_) => attempt += 1,
                            }
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Full paired comparison: every method runs every per-size suite with
/// identical scenarios and identical per-scenario streams.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub sizes: Vec<usize>,
    pub methods: Vec<String>,
    /// `cells[method][size]`.
    pub cells: Vec<Vec<SuiteResult>>,
    /// Per-method average over the per-size aggregates (the "average row").
    pub averages: Vec<Aggregates>,
}

pub fn compare_methods(
    methods: &[(MethodSpec, Option<&PolicyParams>)],
    suite_cfg: &SuiteConfig,
    run_seed: u64,
) -> Result<Comparison, BenchError> {
    let suites = suite_cfg.build();
    let mut cells = Vec::with_capacity(methods.len());
    for (method, params) in methods {
        let mut row = Vec::with_capacity(suites.len());
        for suite in &suites {
            row.push(run_suite(method, *params, suite, run_seed, suite_cfg.t_max)?);
        }
        cells.push(row);
    }
    let averages = cells.iter().map(|row| average_of(row)).collect();
    Ok(Comparison {
        sizes: suite_cfg.sizes.clone(),
        methods: methods.iter().map(|(m, _)| m.name.clone()).collect(),
        cells,
        averages,
    })
}

/// Average of per-size aggregate values (the comparison table convention),
/// not a pooled re-aggregation.
pub fn average_of(row: &[SuiteResult]) -> Aggregates {
    let k = row.len().max(1) as f64;
    Aggregates {
        scenarios: row.iter().map(|r| r.aggregates.scenarios).sum(),
        mean_reward: row.iter().map(|r| r.aggregates.mean_reward).sum::<f64>() / k,
        mean_steps: row.iter().map(|r| r.aggregates.mean_steps).sum::<f64>() / k,
        success_rate_percent: row
            .iter()
            .map(|r| r.aggregates.success_rate_percent)
            .sum::<f64>()
            / k,
        mean_path_len: row.iter().map(|r| r.aggregates.mean_path_len).sum::<f64>() / k,
        steps_std: row.iter().map(|r| r.aggregates.steps_std).sum::<f64>() / k,
        steps_stderr: row.iter().map(|r| r.aggregates.steps_stderr).sum::<f64>() / k,
    }
}

/// One row of the published comparison table, kept for side-by-side display
/// only; nothing asserts our runs against these numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PublishedRow {
    pub method: &'static str,
    /// Object count, or "avg" for the average row.
    pub objects: &'static str,
    pub rewards: f64,
    pub steps: f64,
    pub sr_percent: f64,
}

/// Published comparison results (rewards / steps / success rate) for 5, 10,
/// 15, and 20 objects plus the averages.
pub const PUBLISHED_TABLE: &[PublishedRow] = &[
    PublishedRow { method: "PPO", objects: "5", rewards: -18.6, steps: 34.0, sr_percent: 80.0 },
    PublishedRow { method: "PPO", objects: "10", rewards: -104.8, steps: 50.0, sr_percent: 0.0 },
    PublishedRow { method: "PPO", objects: "15", rewards: -107.2, steps: 50.0, sr_percent: 0.0 },
    PublishedRow { method: "PPO", objects: "20", rewards: -110.8, steps: 50.0, sr_percent: 0.0 },
    PublishedRow { method: "PPO", objects: "avg", rewards: -85.35, steps: 46.00, sr_percent: 20.0 },
    PublishedRow { method: "DQN", objects: "5", rewards: -11.2, steps: 14.0, sr_percent: 80.0 },
    PublishedRow { method: "DQN", objects: "10", rewards: -78.8, steps: 42.0, sr_percent: 20.0 },
    PublishedRow { method: "DQN", objects: "15", rewards: -123.2, steps: 50.0, sr_percent: 0.0 },
    PublishedRow { method: "DQN", objects: "20", rewards: -125.0, steps: 50.0, sr_percent: 0.0 },
    PublishedRow { method: "DQN", objects: "avg", rewards: -84.55, steps: 39.00, sr_percent: 25.0 },
    PublishedRow { method: "IL", objects: "5", rewards: 45.8, steps: 14.2, sr_percent: 100.0 },
    PublishedRow { method: "IL", objects: "10", rewards: 2.5, steps: 34.9, sr_percent: 50.0 },
    PublishedRow { method: "IL", objects: "15", rewards: -35.8, steps: 50.0, sr_percent: 0.0 },
    PublishedRow { method: "IL", objects: "20", rewards: 12.0, steps: 47.4, sr_percent: 20.0 },
    PublishedRow { method: "IL", objects: "avg", rewards: 6.13, steps: 36.63, sr_percent: 42.5 },
    PublishedRow { method: "PPO+IL", objects: "5", rewards: 59.2, steps: 6.4, sr_percent: 100.0 },
    PublishedRow { method: "PPO+IL", objects: "10", rewards: 23.3, steps: 26.3, sr_percent: 70.0 },
    PublishedRow { method: "PPO+IL", objects: "15", rewards: -6.5, steps: 44.9, sr_percent: 20.0 },
    PublishedRow { method: "PPO+IL", objects: "20", rewards: -20.8, steps: 50.0, sr_percent: 0.0 },
    PublishedRow { method: "PPO+IL", objects: "avg", rewards: 13.78, steps: 31.90, sr_percent: 47.5 },
    PublishedRow { method: "MCTS+Random", objects: "5", rewards: -37.5, steps: 47.9, sr_percent: 20.0 },
    PublishedRow { method: "MCTS+Random", objects: "10", rewards: -42.6, steps: 50.0, sr_percent: 0.0 },
    PublishedRow { method: "MCTS+Random", objects: "15", rewards: -31.6, steps: 50.0, sr_percent: 0.0 },
    PublishedRow { method: "MCTS+Random", objects: "20", rewards: -28.4, steps: 50.0, sr_percent: 0.0 },
    PublishedRow { method: "MCTS+Random", objects: "avg", rewards: -35.00, steps: 49.48, sr_percent: 5.0 },
    PublishedRow { method: "MCTS+DQN", objects: "5", rewards: 59.8, steps: 6.2, sr_percent: 100.0 },
    PublishedRow { method: "MCTS+DQN", objects: "10", rewards: -4.3, steps: 26.7, sr_percent: 60.0 },
    PublishedRow { method: "MCTS+DQN", objects: "15", rewards: -19.0, steps: 40.6, sr_percent: 30.0 },
    PublishedRow { method: "MCTS+DQN", objects: "20", rewards: -26.6, steps: 50.0, sr_percent: 0.0 },
    PublishedRow { method: "MCTS+DQN", objects: "avg", rewards: 2.48, steps: 30.88, sr_percent: 47.5 },
    PublishedRow { method: "MCTS+PPO", objects: "5", rewards: 57.4, steps: 8.4, sr_percent: 100.0 },
    PublishedRow { method: "MCTS+PPO", objects: "10", rewards: 37.9, steps: 31.3, sr_percent: 80.0 },
    PublishedRow { method: "MCTS+PPO", objects: "15", rewards: 23.3, steps: 40.7, sr_percent: 50.0 },
    PublishedRow { method: "MCTS+PPO", objects: "20", rewards: 21.8, steps: 46.6, sr_percent: 30.0 },
    PublishedRow { method: "MCTS+PPO", objects: "avg", rewards: 35.10, steps: 31.75, sr_percent: 65.0 },
    PublishedRow { method: "MCTS+PPO+IL", objects: "5", rewards: 61.0, steps: 5.0, sr_percent: 100.0 },
    PublishedRow { method: "MCTS+PPO+IL", objects: "10", rewards: 41.3, steps: 22.1, sr_percent: 70.0 },
    PublishedRow { method: "MCTS+PPO+IL", objects: "15", rewards: 64.1, steps: 29.9, sr_percent: 90.0 },
    PublishedRow { method: "MCTS+PPO+IL", objects: "20", rewards: 51.6, steps: 43.4, sr_percent: 60.0 },
    PublishedRow { method: "MCTS+PPO+IL", objects: "avg", rewards: 54.50, steps: 25.10, sr_percent: 80.0 },
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{ObjectSpec, Pose, WorldState};
    use crate::policy::{init_params, NetConfig};

    fn solved_scenario(m: usize, n: usize) -> Scenario {
        let poses: Vec<Pose> = (0..n).map(|i| Pose::new(i as i32, 0)).collect();
        let s = Scenario {
            m,
            objects: (0..n).map(ObjectSpec::unit).collect(),
            initial: poses.clone(),
            target: poses,
            immovable: Vec::new(),
            seed: 0,
        };
        s.validate().unwrap();
        s
    }

    #[test]
    fn solved_suite_scores_perfectly_with_zero_steps() {
        let suite: Vec<Scenario> = (1..=4).map(|n| solved_scenario(6, n)).collect();
        let method = MethodSpec::new("random", PlannerKind::MctsRandom);
        let result = run_suite(&method, None, &suite, 3, 50).unwrap();
        assert_eq!(result.aggregates.success_rate_percent, 100.0);
        assert_eq!(result.aggregates.mean_steps, 0.0);
        assert_eq!(result.aggregates.mean_reward, 0.0);
        let state = WorldState::initial(&suite[0]);
        assert!(gridworld::is_success(&state));
    }

    #[test]
    fn checkpoint_required_for_policy_methods() {
        let suite = alloc::vec![solved_scenario(5, 1)];
        for planner in [
            PlannerKind::PolicyGreedy,
            PlannerKind::PolicySample,
            PlannerKind::MctsPolicy,
        ] {
            let method = MethodSpec::new(planner.name(), planner);
            assert_eq!(
                run_suite(&method, None, &suite, 0, 50).unwrap_err(),
                BenchError::CheckpointMissing(String::from(planner.name()))
            );
        }
        assert!(!PlannerKind::MctsRandom.needs_params());
        assert_eq!(PlannerKind::from_name("mcts+policy"), Some(PlannerKind::MctsPolicy));
    }

    #[test]
    fn comparing_a_method_with_itself_gives_identical_rows() {
        let cfg = SuiteConfig {
            m: 6,
            sizes: alloc::vec![1, 2],
            per_size: 4,
            suite_seed: 9,
            t_max: 30,
        };
        let search = SearchConfig {
            iterations: 8,
            t_sim: Some(4),
            ..SearchConfig::default()
        };
        let mut a = MethodSpec::new("a", PlannerKind::MctsRandom);
        a.search = search;
        let mut b = MethodSpec::new("b", PlannerKind::MctsRandom);
        b.search = search;
        let comparison = compare_methods(&[(a, None), (b, None)], &cfg, 42).unwrap();
        for (ra, rb) in comparison.cells[0].iter().zip(&comparison.cells[1]) {
            for (x, y) in ra.records.iter().zip(&rb.records) {
                assert_eq!(
                    x.deterministic_view(),
                    y.deterministic_view(),
                    "paired runs are bit-identical up to wall time"
                );
            }
            assert_eq!(ra.aggregates, rb.aggregates);
        }
        assert_eq!(comparison.averages[0], comparison.averages[1]);
    }

    #[test]
    fn comparison_layout_has_one_row_per_size_plus_average() {
        let cfg = SuiteConfig {
            m: 6,
            sizes: alloc::vec![1, 2, 3],
            per_size: 2,
            suite_seed: 4,
            t_max: 20,
        };
        let mut method = MethodSpec::new("random", PlannerKind::MctsRandom);
        method.search.iterations = 4;
        method.search.t_sim = Some(3);
        let comparison = compare_methods(&[(method, None)], &cfg, 1).unwrap();
        assert_eq!(comparison.sizes.len(), 3);
        assert_eq!(comparison.cells[0].len(), 3, "one suite result per size");
        assert_eq!(comparison.averages.len(), 1, "plus one average row per method");
    }

    #[test]
    fn aggregates_recompute_exactly_from_records() {
        let cfg = SuiteConfig {
            m: 6,
            sizes: alloc::vec![2],
            per_size: 6,
            suite_seed: 2,
            t_max: 25,
        };
        let suite = &cfg.build()[0];
        let mut method = MethodSpec::new("random", PlannerKind::MctsRandom);
        method.search.iterations = 8;
        method.search.t_sim = Some(4);
        let result = run_suite(&method, None, suite, 5, cfg.t_max).unwrap();
        let successes = result.records.iter().filter(|r| r.success).count();
        assert_eq!(
            result.aggregates.success_rate_percent,
            100.0 * successes as f64 / result.records.len() as f64
        );
        for r in &result.records {
            assert_eq!(r.steps_counted, if r.success { r.steps } else { cfg.t_max });
        }
        assert_eq!(aggregate(&result.records), result.aggregates);
    }

    #[test]
    fn policy_methods_run_with_params() {
        let cfg_net = NetConfig::mlp(6, 2, 8);
        let params = init_params(0, cfg_net);
        let suite: Vec<Scenario> = (0..3)
            .map(|i| gridworld::random_scenario(2, 6, 100 + i).unwrap())
            .collect();
        for planner in [PlannerKind::PolicyGreedy, PlannerKind::PolicySample] {
            let method = MethodSpec::new(planner.name(), planner);
            let result = run_suite(&method, Some(&params), &suite, 8, 50).unwrap();
            assert_eq!(result.records.len(), 3);
        }
    }

    #[test]
    fn published_reference_rows_are_available() {
        let ours_at_5 = PUBLISHED_TABLE
            .iter()
            .find(|r| r.method == "MCTS+PPO+IL" && r.objects == "5")
            .unwrap();
        assert_eq!(
            (ours_at_5.rewards, ours_at_5.steps, ours_at_5.sr_percent),
            (61.0, 5.0, 100.0)
        );
        let avg = PUBLISHED_TABLE
            .iter()
            .find(|r| r.method == "MCTS+Random" && r.objects == "avg")
            .unwrap();
        assert_eq!(avg.sr_percent, 5.0);
        assert_eq!(PUBLISHED_TABLE.len(), 8 * 5);
    }
}
