//! Run configuration: one optional JSON file whose sections map onto the
//! core config structs, plus a shared discount key. Command-line flags
//! override file values, which override defaults.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rearrange_core::bench::SuiteConfig;
use rearrange_core::imitation::BcConfig;
use rearrange_core::mcts::SearchConfig;
use rearrange_core::policy::{NetConfig, TrunkKind};
use rearrange_core::ppo::PpoConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Discount shared by advantage estimation and the tree search. When
    /// set, it overrides both `ppo.gamma` and `search.gamma`.
    pub gamma: Option<f64>,
    pub net: NetSection,
    pub bc: BcConfig,
    pub ppo: PpoConfig,
    pub search: SearchConfig,
    pub bench: SuiteConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSection {
    pub grid: usize,
    pub n_max: usize,
    pub trunk: TrunkKind,
    pub hidden: usize,
    pub conv_channels: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            grid: 10,
            n_max: 10,
            trunk: TrunkKind::Mlp,
            hidden: 64,
            conv_channels: 8,
        }
    }
}

impl NetSection {
    pub fn to_net_config(&self) -> NetConfig {
        NetConfig {
            grid: self.grid,
            n_max: self.n_max,
            trunk: self.trunk,
            hidden: self.hidden,
            conv_channels: match self.trunk {
                TrunkKind::Mlp => 0,
                TrunkKind::Conv => self.conv_channels,
            },
        }
    }
}

// Spelled out rather than derived so the section list reads in one place.
#[allow(clippy::derivable_impls)]
impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gamma: None,
            net: NetSection::default(),
            bc: BcConfig::default(),
            ppo: PpoConfig::default(),
            search: SearchConfig::default(),
            bench: SuiteConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(gamma) = cfg.gamma {
            cfg.ppo.gamma = gamma;
            cfg.search.gamma = gamma;
        }
        Ok(cfg)
    }
}
