//! End-to-end experiment pipelines shared by the command line and the
//! acceptance suite.
//!
//! Every track derives its randomness from one top-level seed via
//! [`derive_seed`](crate::numerics::derive_seed) with the track name as label,
//! so tracks are reproducible independently of each other.

pub mod attack;
pub mod bench;
pub mod pf;
pub mod toy;

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::nn::{LrSchedule, TrainConfig};

/// Plain feed-forward network and its optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsConfig {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            train: TrainConfig {
                epochs: 150,
                batch_size: 64,
                learning_rate: 2e-3,
                lr_schedule: LrSchedule::Cosine { final_fraction: 0.02 },
                ..TrainConfig::default()
            },
        }
    }
}

impl Default for EpsConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            time_embed_dim: 16,
            schedule: ScheduleConfig::default(),
            train: TrainConfig {
                epochs: 100,
                batch_size: 64,
                learning_rate: 2e-3,
                lr_schedule: LrSchedule::Cosine { final_fraction: 0.02 },
                ..TrainConfig::default()
            },
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Record written next to every output. Holds no timing data, so reruns
/// with the same inputs produce the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Input label to sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to sha256.
    pub outputs: BTreeMap<String, String>,
    pub complete: bool,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<Self> {
        Ok(Self {
            tool: "cardiff".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            complete: false,
        })
    }

    pub fn input_file(&mut self, label: &str, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut names: Vec<_> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST_FILE))
                .collect();
            names.sort();
            for p in names {
                let name = p.file_name().expect("listed file").to_string_lossy().to_string();
                self.inputs.insert(format!("{label}/{name}"), sha256_file(&p)?);
            }
        } else {
            self.inputs.insert(label.into(), sha256_file(path)?);
        }
        Ok(())
    }

    /// Hashes every file in `dir` (except the manifest and timing files) and
    /// writes the manifest marked complete.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        let mut names: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            let name = p.file_name().expect("listed file").to_string_lossy().to_string();
            if name == MANIFEST_FILE || name.starts_with("timing") {
                continue;
            }
            self.outputs.insert(name, sha256_file(&p)?);
        }
        self.complete = true;
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self)?)?;
        Ok(())
    }
}

/// Marks an output directory incomplete after a failure.
pub fn mark_incomplete(dir: &Path, command: &str, message: &str) {
    if dir.is_dir() {
        let doc = serde_json::json!({ "tool": "cardiff", "command": command, "complete": false, "error": message });
        let _ = std::fs::write(dir.join(MANIFEST_FILE), doc.to_string());
    }
}

/// Reads a TOML config, or the defaults when `path` is `None`.
///
/// The file is merged key by key over the defaults, so a partial table
/// such as `[base.train] epochs = 10` keeps the other defaults of that
/// section. Tagged tables whose `kind` changes are replaced whole. Keys the
/// config does not know are rejected.
pub fn load_config<T: DeserializeOwned + Serialize + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text).map_err(|e| match e {
                Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", p.display())),
                other => other,
            })
        }
    }
}

pub fn parse_config<T: DeserializeOwned + Serialize + Default>(text: &str) -> Result<T> {
    let user: toml::Table = toml::from_str(text)?;
    let mut merged = toml::Table::try_from(T::default()).map_err(|e| Error::Serialization(e.to_string()))?;
    merge(&mut merged, &user);
    let cfg: T = toml::Value::Table(merged).try_into()?;
    let known = toml::Table::try_from(&cfg).map_err(|e| Error::Serialization(e.to_string()))?;
    if let Some(key) = unknown_key(&known, &user, "") {
        return Err(Error::InvalidConfig(format!("unknown key `{key}`")));
    }
    Ok(cfg)
}

fn merge(base: &mut toml::Table, user: &toml::Table) {
    for (k, v) in user {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if b.get("kind") == u.get("kind") || u.get("kind").is_none() => {
                merge(b, u)
            }
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn unknown_key(known: &toml::Table, user: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (known.get(k), v) {
            (None, _) => return Some(path),
            (Some(toml::Value::Table(kn)), toml::Value::Table(u)) => {
                if let Some(p) = unknown_key(kn, u, &path) {
                    return Some(p);
                }
            }
            _ => {}
        }
    }
    None
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LrSchedule;

    #[test]
    fn partial_tables_keep_section_defaults() {
        let cfg: pf::PfTrackConfig = parse_config("[base.train]\nepochs = 7\n").unwrap();
        let def = pf::PfTrackConfig::default();
        assert_eq!(cfg.base.train.epochs, 7);
        assert_eq!(cfg.base.train.learning_rate, def.base.train.learning_rate);
        assert_eq!(cfg.base.train.lr_schedule, def.base.train.lr_schedule);
        assert_eq!(cfg.pinn, def.pinn);
    }

    #[test]
    fn changing_a_tag_replaces_the_table() {
        let cfg: pf::PfTrackConfig = parse_config("[base.train.lr_schedule]\nkind = \"constant\"\n").unwrap();
        assert_eq!(cfg.base.train.lr_schedule, LrSchedule::Constant);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = parse_config::<pf::PfTrackConfig>("[base.train]\nepoch = 7\n").unwrap_err();
        assert!(e.to_string().contains("base.train.epoch"), "{e}");
        assert!(parse_config::<toy::ToyConfig>("sed = 1\n").is_err());
    }

    #[test]
    fn printed_defaults_parse_back() {
        let text = to_toml(&attack::AttackTrackConfig::default()).unwrap();
        assert_eq!(parse_config::<attack::AttackTrackConfig>(&text).unwrap(), attack::AttackTrackConfig::default());
        let text = to_toml(&bench::BenchConfig::default()).unwrap();
        assert_eq!(parse_config::<bench::BenchConfig>(&text).unwrap(), bench::BenchConfig::default());
    }
}
