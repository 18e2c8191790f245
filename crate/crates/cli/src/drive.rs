//! Parallel suite execution and deterministic result rendering.
//!
//! The rayon drivers fan scenarios out across threads but keep the exact
//! per-scenario random streams and the sequential aggregation of the core
//! harness, so their results match the single-threaded path bit for bit.
//! Rendered CSVs never contain wall-clock times; fixed seeds therefore
//! produce byte-identical files run after run.

use std::path::Path;

use anyhow::Result;
use rayon::prelude::*;
use rearrange_core::bench::{
    aggregate, average_of, compare_methods, run_scenario, scenario_stream_seed, Aggregates,
    BenchError, Comparison, MethodSpec, SuiteConfig, SuiteResult, PUBLISHED_TABLE,
};
use rearrange_core::gridworld::Scenario;
use rearrange_core::policy::PolicyParams;

/// Parallel twin of `bench::run_suite`.
pub fn run_suite_parallel(
    method: &MethodSpec,
    params: Option<&PolicyParams>,
    suite: &[Scenario],
    seed: u64,
    t_max: u32,
) -> Result<SuiteResult, BenchError> {
    let records = suite
        .par_iter()
        .enumerate()
        .map(|(i, scenario)| {
            run_scenario(
                method,
                params,
                scenario,
                i,
                scenario_stream_seed(seed, i),
                t_max,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SuiteResult {
        method: method.name.clone(),
        aggregates: aggregate(&records),
        records,
    })
}

/// Parallel twin of `bench::compare_methods`: same paired scenarios and
/// streams, scenarios fanned out within each suite.
pub fn compare_methods_parallel(
    methods: &[(MethodSpec, Option<&PolicyParams>)],
    suite_cfg: &SuiteConfig,
    run_seed: u64,
) -> Result<Comparison, BenchError> {
    let suites = suite_cfg.build();
    let mut cells = Vec::with_capacity(methods.len());
    for (method, params) in methods {
        let mut row = Vec::with_capacity(suites.len());
        for suite in &suites {
            row.push(run_suite_parallel(
                method,
                *params,
                suite,
                run_seed,
                suite_cfg.t_max,
            )?);
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

/// Either driver, kept together so tests can assert their equivalence.
pub fn compare_methods_sequential(
    methods: &[(MethodSpec, Option<&PolicyParams>)],
    suite_cfg: &SuiteConfig,
    run_seed: u64,
) -> Result<Comparison, BenchError> {
    compare_methods(methods, suite_cfg, run_seed)
}

// ---------------------------------------------------------------------------
// Deterministic renderers
// ---------------------------------------------------------------------------

/// Per-scenario metrics CSV for one suite run.
pub fn render_metrics_csv(result: &SuiteResult) -> String {
    let mut out = String::from("scenario,objects,reward,steps,steps_counted,success,path_len\n");
    for r in &result.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.scenario_index,
            r.n_objects,
            r.reward_sum,
            r.steps,
            r.steps_counted,
            r.success as u8,
            r.path_len
        ));
    }
    out
}

/// One-line-per-size summary CSV (mean reward is the undiscounted episode
/// reward sum; failed runs count steps at the episode limit).
pub fn render_summary_csv(results: &[(usize, &Aggregates)]) -> String {
    let mut out = String::from(
        "objects,scenarios,mean_reward,mean_steps,sr_percent,mean_path_len,steps_std,steps_stderr\n",
    );
    for (objects, a) in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            objects,
            a.scenarios,
            a.mean_reward,
            a.mean_steps,
            a.success_rate_percent,
            a.mean_path_len,
            a.steps_std,
            a.steps_stderr
        ));
    }
    out
}

/// Comparison CSV: one row per (method, size) plus an `avg` row per method.
/// The sequence-length columns describe counted steps (mean, sample std,
/// standard error), the per-size distribution view.
pub fn render_comparison_csv(cmp: &Comparison) -> String {
    let mut out = String::from(
        "method,objects,mean_reward,mean_steps,sr_percent,seq_mean,seq_std,seq_stderr\n",
    );
    for (mi, method) in cmp.methods.iter().enumerate() {
        for (si, &size) in cmp.sizes.iter().enumerate() {
            let a = &cmp.cells[mi][si].aggregates;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                method,
                size,
                a.mean_reward,
                a.mean_steps,
                a.success_rate_percent,
                a.mean_steps,
                a.steps_std,
                a.steps_stderr
            ));
        }
        let a = &cmp.averages[mi];
        out.push_str(&format!(
            "{},avg,{},{},{},{},{},{}\n",
            method,
            a.mean_reward,
            a.mean_steps,
            a.success_rate_percent,
            a.mean_steps,
            a.steps_std,
            a.steps_stderr
        ));
    }
    out
}

/// Fixed-width text table in the layout of the published comparison:
/// metric triples (rewards / steps / SR%) per object count, methods as
/// columns, then the average rows.
pub fn render_comparison_text(cmp: &Comparison, with_published_reference: bool) -> String {
    let mut out = String::new();
    let name_w = 18usize;
    let col_w = cmp.methods.iter().map(|m| m.len() + 2).map(|w| w.max(14)).max().unwrap_or(14);

    out.push_str(&format!("{:<name_w$}", "objects/metric"));
    for m in &cmp.methods {
        out.push_str(&format!("{m:>col_w$}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(name_w + col_w * cmp.methods.len()));
    out.push('\n');

    let metric = |a: &Aggregates, which: usize| match which {
        0 => format!("{:.2}", a.mean_reward),
        1 => format!("{:.2}", a.mean_steps),
        _ => format!("{:.1}", a.success_rate_percent),
    };
    let labels = ["rewards", "steps", "SR(%)"];
    for (si, &size) in cmp.sizes.iter().enumerate() {
        for (which, label) in labels.iter().enumerate() {
            out.push_str(&format!("{:<name_w$}", format!("{size}-obj {label}")));
            for mi in 0..cmp.methods.len() {
                out.push_str(&format!(
                    "{:>col_w$}",
                    metric(&cmp.cells[mi][si].aggregates, which)
                ));
            }
            out.push('\n');
        }
    }
    for (which, label) in labels.iter().enumerate() {
        out.push_str(&format!("{:<name_w$}", format!("average {label}")));
        for mi in 0..cmp.methods.len() {
            out.push_str(&format!("{:>col_w$}", metric(&cmp.averages[mi], which)));
        }
        out.push('\n');
    }

    if with_published_reference {
        out.push('\n');
        out.push_str("published reference (rewards / steps / SR%):\n");
        let methods: Vec<&str> = {
            let mut seen = Vec::new();
            for row in PUBLISHED_TABLE {
                if !seen.contains(&row.method) {
                    seen.push(row.method);
                }
            }
            seen
        };
        for m in methods {
            out.push_str(&format!("{m:<14}"));
            for row in PUBLISHED_TABLE.iter().filter(|r| r.method == m) {
                out.push_str(&format!(
                    "  {}:{}/{}/{}",
                    row.objects, row.rewards, row.steps, row.sr_percent
                ));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}
