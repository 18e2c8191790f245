//! On-disk formats. Everything is JSON or JSON-lines with schema versions,
//! written deterministically: fixed key order (struct order), shortest
//! round-trip float encoding, and no timestamps.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rearrange_core::gridworld::{ObjectSpec, Pose, Rect, Scenario, TraceStep, WorldState};
use rearrange_core::imitation::{BcEpochStats, ExpertDataset, ExpertEpisode};
use rearrange_core::pathfind::{Path as MovePath, PrimitiveAction, PrimitiveKind};
use rearrange_core::policy::{NetConfig, PolicyParams};
use rearrange_core::ppo::IterationStats;
use serde::{Deserialize, Serialize};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: parse error: {detail}")]
    Parse { path: String, detail: String },
    #[error("{path}: line {line}: parse error: {detail}")]
    ParseLine {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("{path}: field `{field}`: {detail}")]
    Field {
        path: String,
        field: &'static str,
        detail: String,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    version: u32,
    scenarios: Vec<ScenarioEntry>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioEntry {
    #[serde(rename = "M")]
    m: usize,
    n_objects: usize,
    objects: Vec<ObjectSpec>,
    initial: Vec<Pose>,
    target: Vec<Pose>,
    immovable: Vec<Rect>,
    seed: u64,
}

impl From<&Scenario> for ScenarioEntry {
    fn from(s: &Scenario) -> Self {
        ScenarioEntry {
            m: s.m,
            n_objects: s.n_objects(),
            objects: s.objects.clone(),
            initial: s.initial.clone(),
            target: s.target.clone(),
            immovable: s.immovable.clone(),
            seed: s.seed,
        }
    }
}

pub fn write_scenarios(path: &Path, scenarios: &[Scenario]) -> Result<(), FormatError> {
    let file = ScenarioFile {
        version: SCENARIO_SCHEMA_VERSION,
        scenarios: scenarios.iter().map(ScenarioEntry::from).collect(),
    };
    let json = serde_json::to_string_pretty(&file).expect("scenario serialization is total");
    fs::write(path, json + "\n").map_err(|e| io_err(path, e))
}

pub fn read_scenarios(path: &Path) -> Result<Vec<Scenario>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| FormatError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if file.version != SCENARIO_SCHEMA_VERSION {
        return Err(FormatError::Field {
            path: path.display().to_string(),
            field: "version",
            detail: format!(
                "unsupported version {} (expected {})",
                file.version, SCENARIO_SCHEMA_VERSION
            ),
        });
    }
    let mut out = Vec::with_capacity(file.scenarios.len());
    for (i, entry) in file.scenarios.into_iter().enumerate() {
        if entry.n_objects != entry.objects.len() {
            return Err(FormatError::Field {
                path: path.display().to_string(),
                field: "n_objects",
                detail: format!(
                    "scenario {}: n_objects is {} but objects has {} entries",
                    i,
                    entry.n_objects,
                    entry.objects.len()
                ),
            });
        }
        let scenario = Scenario {
            m: entry.m,
            objects: entry.objects,
            initial: entry.initial,
            target: entry.target,
            immovable: entry.immovable,
            seed: entry.seed,
        };
        scenario.validate().map_err(|e| FormatError::Field {
            path: path.display().to_string(),
            field: "scenarios",
            detail: format!("scenario {i}: {e}"),
        })?;
        out.push(scenario);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Policy checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: NetConfig,
    params: Vec<f64>,
}

/// Writes a checkpoint whose reload is bit-exact: floats round-trip through
/// shortest-repr JSON encoding without precision loss.
pub fn write_checkpoint(path: &Path, params: &PolicyParams) -> Result<(), FormatError> {
    let file = CheckpointFile {
        version: CHECKPOINT_SCHEMA_VERSION,
        config: params.config,
        params: params.theta.clone(),
    };
    let json = serde_json::to_string(&file).expect("checkpoint serialization is total");
    fs::write(path, json + "\n").map_err(|e| io_err(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<PolicyParams, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| FormatError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if file.version != CHECKPOINT_SCHEMA_VERSION {
        return Err(FormatError::Field {
            path: path.display().to_string(),
            field: "version",
            detail: format!("unsupported version {}", file.version),
        });
    }
    if file.params.len() != file.config.param_count() {
        return Err(FormatError::Field {
            path: path.display().to_string(),
            field: "params",
            detail: format!(
                "expected {} parameters for this config, found {}",
                file.config.param_count(),
                file.params.len()
            ),
        });
    }
    Ok(PolicyParams {
        config: file.config,
        theta: file.params,
    })
}

// ---------------------------------------------------------------------------
// Episode traces (JSON-lines)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TraceLine {
    t: u32,
    object: usize,
    primitive: String,
    path: Vec<[i32; 3]>,
    reward: f64,
    done: bool,
}

pub fn write_trace(path: &Path, trace: &[TraceStep]) -> Result<(), FormatError> {
    let mut out = fs::File::create(path).map_err(|e| io_err(path, e))?;
    for step in trace {
        let line = TraceLine {
            t: step.t,
            object: step.action.object,
            primitive: step.action.kind.name().to_string(),
            path: step
                .path
                .waypoints
                .iter()
                .map(|p| [p.x, p.y, p.phi as i32])
                .collect(),
            reward: step.reward,
            done: step.done,
        };
        let json = serde_json::to_string(&line).expect("trace serialization is total");
        writeln!(out, "{json}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceStep>, FormatError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine =
            serde_json::from_str(&line).map_err(|e| FormatError::ParseLine {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: e.to_string(),
            })?;
        let kind = PrimitiveKind::ALL
            .into_iter()
            .find(|k| k.name() == parsed.primitive)
            .ok_or_else(|| FormatError::ParseLine {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: format!("unknown primitive `{}`", parsed.primitive),
            })?;
        out.push(TraceStep {
            t: parsed.t,
            action: PrimitiveAction {
                object: parsed.object,
                kind,
            },
            path: MovePath {
                waypoints: parsed
                    .path
                    .iter()
                    .map(|&[x, y, phi]| Pose { x, y, phi: phi as u16 })
                    .collect(),
            },
            reward: parsed.reward,
            done: parsed.done,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Expert datasets: a JSON-lines record file plus a scenario bundle.
// Observations are re-derived by replay, which keeps files small and exact.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DatasetLine {
    scenario_ref: usize,
    t: u32,
    action_index: usize,
}

pub fn write_dataset(
    records_path: &Path,
    bundle_path: &Path,
    dataset: &ExpertDataset,
) -> Result<(), FormatError> {
    let scenarios: Vec<Scenario> = dataset
        .episodes
        .iter()
        .map(|e| e.scenario.clone())
        .collect();
    write_scenarios(bundle_path, &scenarios)?;
    let mut out = fs::File::create(records_path).map_err(|e| io_err(records_path, e))?;
    for episode_idx in 0..dataset.episodes.len() {
        for (t, action) in dataset.episodes[episode_idx].actions.iter().enumerate() {
            let line = DatasetLine {
                scenario_ref: episode_idx,
                t: t as u32,
                action_index: action.flat_index(),
            };
            writeln!(out, "{}", serde_json::to_string(&line).unwrap())
                .map_err(|e| io_err(records_path, e))?;
        }
    }
    Ok(())
}

/// Reads a dataset back by replaying the recorded actions against the
/// scenario bundle. Replay failures (illegal recorded actions) surface as
/// field errors.
pub fn read_dataset(
    records_path: &Path,
    bundle_path: &Path,
    n_max: usize,
) -> Result<ExpertDataset, FormatError> {
    use rearrange_core::gridworld::{is_success, step};

    let scenarios = read_scenarios(bundle_path)?;
    let file = fs::File::open(records_path).map_err(|e| io_err(records_path, e))?;
    let mut actions_per_episode: Vec<Vec<PrimitiveAction>> = vec![Vec::new(); scenarios.len()];
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(records_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine =
            serde_json::from_str(&line).map_err(|e| FormatError::ParseLine {
                path: records_path.display().to_string(),
                line: lineno + 1,
                detail: e.to_string(),
            })?;
        if parsed.scenario_ref >= scenarios.len() {
            return Err(FormatError::ParseLine {
                path: records_path.display().to_string(),
                line: lineno + 1,
                detail: format!("scenario_ref {} out of range", parsed.scenario_ref),
            });
        }
        let expected_t = actions_per_episode[parsed.scenario_ref].len() as u32;
        if parsed.t != expected_t {
            return Err(FormatError::ParseLine {
                path: records_path.display().to_string(),
                line: lineno + 1,
                detail: format!("t {} out of order (expected {})", parsed.t, expected_t),
            });
        }
        actions_per_episode[parsed.scenario_ref]
            .push(PrimitiveAction::from_flat_index(parsed.action_index));
    }

    let mut dataset = ExpertDataset {
        episodes: Vec::new(),
        records: Vec::new(),
        n_max,
        attempts: scenarios.len(),
    };
    for (scenario, actions) in scenarios.into_iter().zip(actions_per_episode) {
        let mut state = WorldState::initial(&scenario);
        let mut reward_sum = 0.0;
        let mut run_actions = Vec::with_capacity(actions.len());
        for action in actions {
            let (next, out) =
                step(&scenario, &state, action).map_err(|e| FormatError::Field {
                    path: records_path.display().to_string(),
                    field: "action_index",
                    detail: format!("recorded action fails to replay: {e}"),
                })?;
            reward_sum += out.reward;
            run_actions.push(action);
            state = next;
        }
        if !is_success(&state) {
            return Err(FormatError::Field {
                path: records_path.display().to_string(),
                field: "scenario_ref",
                detail: "episode does not replay to success".to_string(),
            });
        }
        append_replayed_episode(&mut dataset, scenario, run_actions, reward_sum);
    }
    Ok(dataset)
}

/// Rebuilds the flattened records for one replayed episode, mirroring how
/// collection materializes them.
fn append_replayed_episode(
    dataset: &mut ExpertDataset,
    scenario: Scenario,
    actions: Vec<PrimitiveAction>,
    reward_sum: f64,
) {
    use rearrange_core::gridworld::{encode_observation, legal_mask, step};
    use rearrange_core::imitation::BcRecord;
    use rearrange_core::policy::encode_aux;

    let episode_idx = dataset.episodes.len() as u32;
    let mut state = WorldState::initial(&scenario);
    for &action in &actions {
        let obs = encode_observation(&scenario, &state, dataset.n_max);
        let aux = encode_aux(&state, dataset.n_max);
        dataset.records.push(BcRecord {
            obs: obs.iter().map(|&v| v as u8).collect(),
            aux: aux.iter().map(|&v| v as u8).collect(),
            legal: legal_mask(&scenario, &state),
            action: action.flat_index() as u16,
            episode: episode_idx,
        });
        state = step(&scenario, &state, action).expect("replay validated").0;
    }
    dataset.episodes.push(ExpertEpisode {
        scenario,
        actions,
        reward_sum,
    });
}

// ---------------------------------------------------------------------------
// Learning-curve CSVs
// ---------------------------------------------------------------------------

pub fn write_bc_curve(path: &Path, curve: &[BcEpochStats]) -> Result<(), FormatError> {
    let mut text = String::from("epoch,train_loss,holdout_accuracy\n");
    for s in curve {
        text.push_str(&format!("{},{},{}\n", s.epoch, s.train_loss, s.holdout_accuracy));
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_ppo_curve(path: &Path, curve: &[IterationStats]) -> Result<(), FormatError> {
    let mut text = String::from("iteration,mean_reward,success_rate,entropy,clip_fraction\n");
    for s in curve {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            s.iteration, s.mean_reward, s.success_rate, s.entropy, s.clip_fraction
        ));
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rearrange_core::gridworld::random_scenario;
    use rearrange_core::policy::{init_params, NetConfig};

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join("rearrange-fmt-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.json");
        let params = init_params(7, NetConfig::mlp(6, 2, 12));
        write_checkpoint(&path, &params).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, params.config);
        assert_eq!(loaded.theta.len(), params.theta.len());
        for (a, b) in loaded.theta.iter().zip(&params.theta) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn scenario_roundtrip() {
        let dir = std::env::temp_dir().join("rearrange-fmt-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("scenarios.json");
        let scenarios: Vec<_> = (0..4)
            .map(|i| random_scenario(2 + i % 3, 8, i as u64).unwrap())
            .collect();
        write_scenarios(&path, &scenarios).unwrap();
        let loaded = read_scenarios(&path).unwrap();
        assert_eq!(loaded, scenarios);
    }
}
