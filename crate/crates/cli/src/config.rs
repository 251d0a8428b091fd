//! Run configuration: a TOML file plus command-line overrides.
//!
//! Training settings sit at the top level and in the `[loss]`, `[dbscan]`,
//! `[encoder]`, `[momentum]` and `[adam]` tables. `[data]`, `[output]` and
//! `[ablate]` hold the CLI's own settings.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tcrl::losses::LossConfig;
use tcrl::pipeline::TrainConfig;
use toml::{Table, Value};

use crate::ConfigError;

/// Overrides the directory relative output paths resolve against.
pub const OUTPUT_ROOT_ENV: &str = "TCRL_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset root holding `train/`, `query/` and `gallery/`.
    pub dir: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { dir: "data".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "runs/default".into() }
    }
}

/// One row of an ablation grid. `loss` is applied on top of the base loss
/// settings with every term switched off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateRow {
    pub name: String,
    #[serde(default)]
    pub loss: Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub seeds: Vec<u64>,
    /// Empty means the standard loss-combination rows.
    pub rows: Vec<AblateRow>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], rows: Vec::new() }
    }
}

const TOGGLES: [&str; 6] =
    ["enable_pcl", "enable_hcl", "enable_wrccl", "baseline_ccl", "baseline_id", "baseline_triplet"];

fn toggles(on: &[&str]) -> Table {
    on.iter().map(|k| (k.to_string(), Value::Boolean(true))).collect()
}

/// The loss combinations of the standard ablation table.
pub fn standard_rows() -> Vec<AblateRow> {
    [
        ("CCL", &["baseline_ccl"][..]),
        ("ID+Triplet", &["baseline_id", "baseline_triplet"]),
        ("PCL", &["enable_pcl"]),
        ("HCL", &["enable_hcl"]),
        ("WRCCL", &["enable_wrccl"]),
        ("PCL+HCL", &["enable_pcl", "enable_hcl"]),
        ("PCL+WRCCL", &["enable_pcl", "enable_wrccl"]),
        ("HCL+WRCCL", &["enable_hcl", "enable_wrccl"]),
        ("TCRL", &["enable_pcl", "enable_hcl", "enable_wrccl"]),
    ]
    .into_iter()
    .map(|(name, on)| AblateRow { name: name.into(), loss: toggles(on) })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSection,
    pub output: OutputSection,
    pub ablate: AblateSection,
}

fn section<T: for<'de> Deserialize<'de> + Default>(table: &mut Table, key: &str) -> Result<T> {
    match table.remove(key) {
        None => Ok(T::default()),
        Some(v) => v.try_into().map_err(|e| ConfigError(format!("[{key}]: {e}")).into()),
    }
}

impl RunConfig {
    pub fn from_table(mut table: Table) -> Result<Self> {
        let data = section(&mut table, "data")?;
        let output = section(&mut table, "output")?;
        let ablate = section(&mut table, "ablate")?;
        let train = Value::Table(table).try_into().map_err(|e| ConfigError(format!("training settings: {e}")))?;
        Ok(Self { train, data, output, ablate })
    }

    pub fn to_table(&self) -> Result<Table> {
        let mut table = Table::try_from(&self.train).context("serializing training settings")?;
        table.insert("data".into(), Value::try_from(&self.data)?);
        table.insert("output".into(), Value::try_from(&self.output)?);
        table.insert("ablate".into(), Value::try_from(&self.ablate)?);
        Ok(table)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(&self.to_table()?)?)
    }

    /// Reads `path` (or starts from defaults) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match path {
            None => Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<Table>().map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
        };
        for (key, raw) in overrides {
            set_path(&mut table, key, parse_value(raw))?;
        }
        Self::from_table(table)
    }

    /// Output directory after applying the output-root override.
    pub fn output_dir(&self) -> PathBuf {
        resolve_output(&self.output.dir)
    }

    /// Loss settings for an ablation row.
    pub fn row_loss(&self, row: &AblateRow) -> Result<LossConfig> {
        let mut base = Table::try_from(&self.train.loss)?;
        for k in TOGGLES {
            base.insert(k.into(), Value::Boolean(false));
        }
        for (k, v) in &row.loss {
            base.insert(k.clone(), v.clone());
        }
        Value::Table(base).try_into().map_err(|e| ConfigError(format!("ablation row {:?}: {e}", row.name)).into())
    }
}

pub fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError(format!("malformed override key {key:?}")).into());
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Splits `--a.b=value` style arguments out of `args`.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let dotted = arg.strip_prefix("--").and_then(|a| a.split_once('=')).filter(|(k, _)| k.contains('.'));
        match dotted {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}
