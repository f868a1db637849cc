//! The single config document shared by all subcommands, plus dotted-key
//! overrides applied on the raw TOML tree before typed decoding.

use std::path::{Path, PathBuf};

use opfenv::env::DesignConfig;
use opfenv::opf::OracleSettings;
use opfenv::rl::DdpgConfig;
use opfenv::scenarios::{ScenarioKind, DEFAULT_TEST_FRACTION};
use opfenv::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub scenario: ScenarioSection,
    pub gen_data: GenDataSection,
    pub env: DesignConfig,
    pub ddpg: DdpgConfig,
    pub oracle: OracleSettings,
    pub eval: EvalSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
    pub sweep: SweepSection,
    pub scatter: ScatterSection,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            deterministic: false,
            scenario: ScenarioSection::default(),
            gen_data: GenDataSection::default(),
            env: DesignConfig::default(),
            ddpg: DdpgConfig::desk(),
            oracle: OracleSettings::default(),
            eval: EvalSection::default(),
            train: TrainSection::default(),
            evaluate: EvaluateSection::default(),
            sweep: SweepSection::default(),
            scatter: ScatterSection::default(),
        }
    }
}

/// Which problem to load. Without `grid`/`dataset` the bundled desk grid
/// and its default synthetic data are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::VoltageControl,
            grid: None,
            dataset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    pub test_fraction: f64,
}

impl Default for GenDataSection {
    fn default() -> Self {
        Self {
            horizon: None,
            noise: None,
            test_fraction: DEFAULT_TEST_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Test states, spread evenly over the test split.
    pub samples: usize,
    /// Defaults to `<out>/oracle`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_dir: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            samples: 100,
            oracle_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    /// Discount for n-step designs; one-step designs always use 0.
    pub gamma: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 50_000,
            gamma: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Policy,
    Random,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub controller: ControllerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PathBuf>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            controller: ControllerKind::Policy,
            policy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Variant ids from the built-in design grid; empty means all of them.
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    pub steps: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            variants: Vec::new(),
            seeds: vec![1, 2, 3],
            steps: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScatterSection {
    pub samples: usize,
}

impl Default for ScatterSection {
    fn default() -> Self {
        Self { samples: 1000 }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses `raw` as a TOML value; bare words fall back to strings so that
/// `env.data_source=uniform` needs no quoting.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), Error> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_error(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_error(format!("bad override key {key:?}")));
    }
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut table = root;
    for part in path {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_error(format!("{key}: {part} is not a section")))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads the optional config file, applies overrides and decodes. Unknown
/// keys and mistyped values are config errors.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<CliConfig, Error> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| config_error(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let config: CliConfig = toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| config_error(e.to_string()))?;
    config.env.validate()?;
    config.ddpg.validate()?;
    Ok(config)
}
