//! `rearrange`: plan and benchmark grid-world multi-object rearrangement.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rearrange_cli::config::RunConfig;
use rearrange_cli::drive::{
    compare_methods_parallel, render_comparison_csv, render_comparison_text, render_metrics_csv,
    render_summary_csv, run_suite_parallel, write_text,
};
use rearrange_cli::formats;
use rearrange_core::bench::{MethodSpec, PlannerKind, SuiteConfig, SuiteResult};
use rearrange_core::gridworld::DEFAULT_T_MAX;
use rearrange_core::imitation::{bc_train, collect_expert_dataset, ScenarioSampler};
use rearrange_core::mcts::{plan_episode, Guidance};
use rearrange_core::policy::{init_params, PolicyParams};
use rearrange_core::ppo::{policy_episode, train, PolicyMode};
use rearrange_core::rng::Rng;

#[derive(Parser)]
#[command(name = "rearrange", version, about = "Grid-world multi-object rearrangement planner: scripted-expert imitation, PPO, and policy-guided tree search")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate random scenario suites to a JSON file.
    GenScenarios {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated object counts, e.g. 3,5,8,10.
        #[arg(long, value_delimiter = ',')]
        objects: Vec<usize>,
        /// Grid side length.
        #[arg(long)]
        grid: Option<usize>,
        /// Scenarios per object count.
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Collect a scripted-expert dataset and pretrain the policy by
    /// behavior cloning.
    TrainBc {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        objects: Vec<usize>,
        #[arg(long)]
        grid: Option<usize>,
        /// Expert episodes to attempt.
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        /// Training epochs (overrides config).
        #[arg(long)]
        epochs: Option<usize>,
        /// Reuse a previously written dataset (records file; the scenario
        /// bundle is looked up next to it).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Improve a policy with clipped-surrogate policy-gradient training.
    TrainPpo {
        #[command(flatten)]
        common: CommonArgs,
        /// Starting checkpoint (e.g. from train-bc); fresh init if omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        objects: Vec<usize>,
        #[arg(long)]
        grid: Option<usize>,
        /// Training iterations (overrides config).
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Plan one scenario and write its episode trace.
    Plan {
        #[command(flatten)]
        common: CommonArgs,
        /// Scenario file (from gen-scenarios).
        #[arg(long)]
        scenario: PathBuf,
        /// Index into the scenario file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Planner: policy-greedy | policy-sample | mcts+random | mcts+policy.
        #[arg(long, default_value = "mcts+policy")]
        method: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Search iterations per decision (overrides config).
        #[arg(long)]
        iters: Option<usize>,
        /// Also dump per-decision root statistics as JSON.
        #[arg(long, default_value_t = false)]
        dump: bool,
    },
    /// Run one method over a scenario suite and write metrics CSVs.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "mcts+policy")]
        method: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        objects: Vec<usize>,
        #[arg(long)]
        grid: Option<usize>,
        /// Scenarios per object count (overrides config).
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        /// Include the large object counts (15 and 20).
        #[arg(long, default_value_t = false)]
        long: bool,
    },
    /// Compare several methods on paired suites.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated methods, each `planner[:checkpoint.json]`, e.g.
        /// `mcts+random,mcts+policy:ckpt.json,policy-greedy:ckpt.json`.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        objects: Vec<usize>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, default_value_t = false)]
        long: bool,
        /// Append the published reference table to the text render.
        #[arg(long, default_value_t = false)]
        published_ref: bool,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenScenarios { common, objects, grid, count } => {
            gen_scenarios(common, objects, grid, count)
        }
        Cmd::TrainBc { common, objects, grid, episodes, epochs, dataset } => {
            train_bc_cmd(common, objects, grid, episodes, epochs, dataset)
        }
        Cmd::TrainPpo { common, checkpoint, objects, grid, iters } => {
            train_ppo_cmd(common, checkpoint, objects, grid, iters)
        }
        Cmd::Plan { common, scenario, index, method, checkpoint, iters, dump } => {
            plan_cmd(common, scenario, index, method, checkpoint, iters, dump)
        }
        Cmd::Bench { common, method, checkpoint, objects, grid, count, iters, long } => {
            bench_cmd(common, method, checkpoint, objects, grid, count, iters, long)
        }
        Cmd::Compare { common, methods, objects, grid, count, iters, long, published_ref } => {
            compare_cmd(common, methods, objects, grid, count, iters, long, published_ref)
        }
    }
}

fn prepare(common: &CommonArgs) -> Result<(RunConfig, PathBuf)> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating output dir {}", common.out.display()))?;
    Ok((cfg, common.out.clone()))
}

fn suite_config(
    cfg: &RunConfig,
    objects: &[usize],
    grid: Option<usize>,
    count: Option<usize>,
    seed: u64,
    long: bool,
) -> SuiteConfig {
    let mut suite = cfg.bench.clone();
    if !objects.is_empty() {
        suite.sizes = objects.to_vec();
    }
    if let Some(g) = grid {
        suite.m = g;
    }
    if let Some(c) = count {
        suite.per_size = c;
    }
    suite.suite_seed = seed;
    if long {
        suite = suite.long_run();
    }
    suite
}

fn gen_scenarios(
    common: CommonArgs,
    objects: Vec<usize>,
    grid: Option<usize>,
    count: usize,
) -> Result<()> {
    let (cfg, out) = prepare(&common)?;
    let suite = suite_config(&cfg, &objects, grid, Some(count), common.seed, false);
    let scenarios: Vec<_> = suite.build().into_iter().flatten().collect();
    let path = out.join("scenarios.json");
    formats::write_scenarios(&path, &scenarios)?;
    println!(
        "wrote {} scenarios ({} per size, sizes {:?}, grid {}) to {}",
        scenarios.len(),
        suite.per_size,
        suite.sizes,
        suite.m,
        path.display()
    );
    Ok(())
}

fn sampler_from(cfg: &RunConfig, objects: &[usize], grid: Option<usize>) -> ScenarioSampler {
    let sizes = if objects.is_empty() {
        cfg.bench.sizes.clone()
    } else {
        objects.to_vec()
    };
    ScenarioSampler::new(grid.unwrap_or(cfg.net.grid), sizes)
}

fn train_bc_cmd(
    common: CommonArgs,
    objects: Vec<usize>,
    grid: Option<usize>,
    episodes: usize,
    epochs: Option<usize>,
    dataset_path: Option<PathBuf>,
) -> Result<()> {
    let (mut cfg, out) = prepare(&common)?;
    if let Some(g) = grid {
        cfg.net.grid = g;
    }
    let net = cfg.net.to_net_config();
    let sampler = sampler_from(&cfg, &objects, grid);
    if sampler.m != net.grid {
        bail!("sampler grid {} does not match network grid {}", sampler.m, net.grid);
    }

    let dataset = match dataset_path {
        Some(records) => {
            let bundle = records.with_file_name("dataset_scenarios.json");
            formats::read_dataset(&records, &bundle, net.n_max)?
        }
        None => collect_expert_dataset(episodes, &sampler, net.n_max, common.seed)?,
    };
    eprintln!(
        "dataset: {} episodes, {} records (of {} attempts)",
        dataset.episodes.len(),
        dataset.len(),
        dataset.attempts
    );
    formats::write_dataset(
        &out.join("dataset.jsonl"),
        &out.join("dataset_scenarios.json"),
        &dataset,
    )?;

    let mut bc_cfg = cfg.bc.clone();
    bc_cfg.seed = common.seed;
    if let Some(e) = epochs {
        bc_cfg.epochs = e;
    }
    let mut params = init_params(common.seed, net);
    let curve = bc_train(&mut params, &dataset, &bc_cfg);
    formats::write_bc_curve(&out.join("bc_curve.csv"), &curve)?;
    formats::write_checkpoint(&out.join("checkpoint.json"), &params)?;
    if let Some(last) = curve.last() {
        println!(
            "behavior cloning done: {} epochs, train loss {:.4}, held-out accuracy {:.1}%",
            curve.len(),
            last.train_loss,
            100.0 * last.holdout_accuracy
        );
    }
    println!("checkpoint: {}", out.join("checkpoint.json").display());
    Ok(())
}

fn train_ppo_cmd(
    common: CommonArgs,
    checkpoint: Option<PathBuf>,
    objects: Vec<usize>,
    grid: Option<usize>,
    iters: Option<usize>,
) -> Result<()> {
    let (mut cfg, out) = prepare(&common)?;
    if let Some(g) = grid {
        cfg.net.grid = g;
    }
    let params = match &checkpoint {
        Some(p) => formats::read_checkpoint(p)?,
        None => init_params(common.seed, cfg.net.to_net_config()),
    };
    let sampler = sampler_from(&cfg, &objects, grid.or(Some(params.config.grid)));
    let mut ppo_cfg = cfg.ppo.clone();
    ppo_cfg.seed = common.seed;
    if let Some(i) = iters {
        ppo_cfg.iterations = i;
    }
    eprintln!(
        "ppo: {} iterations, {} envs x horizon {}, lr {}",
        ppo_cfg.iterations, ppo_cfg.n_envs, ppo_cfg.horizon, ppo_cfg.learning_rate
    );
    let result = train(params, &sampler, &ppo_cfg)?;
    formats::write_ppo_curve(&out.join("ppo_curve.csv"), &result.curve)?;
    formats::write_checkpoint(&out.join("checkpoint.json"), &result.params)?;
    formats::write_checkpoint(&out.join("checkpoint_best.json"), &result.best_params)?;
    println!(
        "ppo done: best eval success rate {:.1}%, checkpoints in {}",
        100.0 * result.best_success_rate,
        out.display()
    );
    Ok(())
}

fn parse_planner(name: &str) -> Result<PlannerKind> {
    PlannerKind::from_name(name)
        .ok_or_else(|| anyhow::anyhow!(
            "unknown method `{name}` (expected policy-greedy, policy-sample, mcts+random, or mcts+policy)"
        ))
}

#[allow(clippy::too_many_arguments)]
fn plan_cmd(
    common: CommonArgs,
    scenario_path: PathBuf,
    index: usize,
    method: String,
    checkpoint: Option<PathBuf>,
    iters: Option<usize>,
    dump: bool,
) -> Result<()> {
    let (mut cfg, out) = prepare(&common)?;
    let scenarios = formats::read_scenarios(&scenario_path)?;
    let scenario = scenarios
        .get(index)
        .with_context(|| format!("scenario index {index} out of range ({} available)", scenarios.len()))?;
    let planner = parse_planner(&method)?;
    if let Some(i) = iters {
        cfg.search.iterations = i;
    }
    let params = match (&checkpoint, planner.needs_params()) {
        (Some(p), _) => Some(formats::read_checkpoint(p)?),
        (None, true) => bail!("method `{method}` needs --checkpoint"),
        (None, false) => None,
    };

    let mut rng = Rng::new(common.seed);
    let (metrics, trace, decisions) = match planner {
        PlannerKind::MctsRandom | PlannerKind::MctsPolicy => {
            let guidance = match &params {
                Some(p) => Guidance::Policy(p),
                None => Guidance::Uniform,
            };
            let plan = plan_episode(scenario, guidance, &cfg.search, DEFAULT_T_MAX, &mut rng)
                .map_err(|e| anyhow::anyhow!("search failed: {e}"))?;
            (plan.metrics, plan.trace, Some(plan.decisions))
        }
        PlannerKind::PolicyGreedy => {
            let run = policy_episode(scenario, params.as_ref().unwrap(), DEFAULT_T_MAX, PolicyMode::Greedy);
            (run.metrics, run.trace, None)
        }
        PlannerKind::PolicySample => {
            let run = policy_episode(
                scenario,
                params.as_ref().unwrap(),
                DEFAULT_T_MAX,
                PolicyMode::Sample(&mut rng),
            );
            (run.metrics, run.trace, None)
        }
    };

    formats::write_trace(&out.join("trace.jsonl"), &trace)?;
    let record = rearrange_core::bench::ScenarioRecord {
        scenario_index: index,
        n_objects: scenario.n_objects(),
        reward_sum: metrics.reward_sum,
        steps: metrics.steps,
        steps_counted: if metrics.success { metrics.steps } else { DEFAULT_T_MAX },
        success: metrics.success,
        path_len: metrics.path_len,
        wall_ms: 0.0,
    };
    let result = SuiteResult {
        method: method.clone(),
        aggregates: rearrange_core::bench::aggregate(std::slice::from_ref(&record)),
        records: vec![record],
    };
    write_text(&out.join("metrics.csv"), &render_metrics_csv(&result))?;
    if dump {
        if let Some(decisions) = &decisions {
            let dump_json: Vec<Vec<serde_json::Value>> = decisions
                .iter()
                .map(|d| {
                    d.iter()
                        .map(|c| {
                            serde_json::json!({
                                "object": c.action.object,
                                "primitive": c.action.kind.name(),
                                "visits": c.visits,
                                "value": c.value,
                                "edge_reward": c.edge_reward,
                            })
                        })
                        .collect()
                })
                .collect();
            fs::write(
                out.join("decisions.json"),
                serde_json::to_string_pretty(&dump_json)? + "\n",
            )?;
        }
    }
    println!(
        "{}: success={} steps={} reward={} path_len={}",
        method, metrics.success, metrics.steps, metrics.reward_sum, metrics.path_len
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench_cmd(
    common: CommonArgs,
    method_name: String,
    checkpoint: Option<PathBuf>,
    objects: Vec<usize>,
    grid: Option<usize>,
    count: Option<usize>,
    iters: Option<usize>,
    long: bool,
) -> Result<()> {
    let (mut cfg, out) = prepare(&common)?;
    let planner = parse_planner(&method_name)?;
    if let Some(i) = iters {
        cfg.search.iterations = i;
    }
    let params = match (&checkpoint, planner.needs_params()) {
        (Some(p), _) => Some(formats::read_checkpoint(p)?),
        (None, true) => bail!("method `{method_name}` needs --checkpoint"),
        (None, false) => None,
    };
    let mut method = MethodSpec::new(&method_name, planner);
    method.checkpoint = checkpoint.map(|p| p.display().to_string());
    method.search = cfg.search;

    let suite_cfg = suite_config(&cfg, &objects, grid, count, common.seed, long);
    let suites = suite_cfg.build();
    let mut summaries = Vec::new();
    for (suite, &size) in suites.iter().zip(&suite_cfg.sizes) {
        let result = run_suite_parallel(&method, params.as_ref(), suite, common.seed, suite_cfg.t_max)?;
        write_text(
            &out.join(format!("metrics_{size}.csv")),
            &render_metrics_csv(&result),
        )?;
        eprintln!(
            "{size} objects: SR {:.1}%, mean steps {:.2}, mean reward {:.2}",
            result.aggregates.success_rate_percent,
            result.aggregates.mean_steps,
            result.aggregates.mean_reward
        );
        summaries.push((size, result));
    }
    let rows: Vec<(usize, &rearrange_core::bench::Aggregates)> = summaries
        .iter()
        .map(|(size, r)| (*size, &r.aggregates))
        .collect();
    write_text(&out.join("summary.csv"), &render_summary_csv(&rows))?;
    println!("bench done: outputs in {}", out.display());
    Ok(())
}

/// Parses `planner[:checkpoint.json]` into a method and optional params.
fn parse_method_spec(
    spec: &str,
    search: rearrange_core::mcts::SearchConfig,
) -> Result<(MethodSpec, Option<PolicyParams>)> {
    let (planner_name, ckpt) = match spec.split_once(':') {
        Some((p, c)) => (p, Some(PathBuf::from(c))),
        None => (spec, None),
    };
    let planner = parse_planner(planner_name)?;
    let params = match (&ckpt, planner.needs_params()) {
        (Some(p), _) => Some(formats::read_checkpoint(p)?),
        (None, true) => bail!("method `{planner_name}` needs a checkpoint: `{planner_name}:FILE`"),
        (None, false) => None,
    };
    let name = match &ckpt {
        Some(p) => format!(
            "{planner_name}({})",
            p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        ),
        None => planner_name.to_string(),
    };
    let mut method = MethodSpec::new(&name, planner);
    method.checkpoint = ckpt.map(|p| p.display().to_string());
    method.search = search;
    Ok((method, params))
}

#[allow(clippy::too_many_arguments)]
fn compare_cmd(
    common: CommonArgs,
    methods: Vec<String>,
    objects: Vec<usize>,
    grid: Option<usize>,
    count: Option<usize>,
    iters: Option<usize>,
    long: bool,
    published_ref: bool,
) -> Result<()> {
    let (mut cfg, out) = prepare(&common)?;
    if methods.len() < 2 {
        bail!("compare needs at least two --methods");
    }
    if let Some(i) = iters {
        cfg.search.iterations = i;
    }
    let parsed: Vec<(MethodSpec, Option<PolicyParams>)> = methods
        .iter()
        .map(|m| parse_method_spec(m, cfg.search))
        .collect::<Result<_>>()?;
    let with_refs: Vec<(MethodSpec, Option<&PolicyParams>)> = parsed
        .iter()
        .map(|(m, p)| (m.clone(), p.as_ref()))
        .collect();
    let suite_cfg = suite_config(&cfg, &objects, grid, count, common.seed, long);
    let comparison = compare_methods_parallel(&with_refs, &suite_cfg, common.seed)?;
    write_text(&out.join("comparison.csv"), &render_comparison_csv(&comparison))?;
    let text = render_comparison_text(&comparison, published_ref);
    write_text(&out.join("comparison.txt"), &text)?;
    print!("{text}");
    println!("compare done: outputs in {}", out.display());
    Ok(())
}
