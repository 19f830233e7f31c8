//! Layered run configuration: defaults, then an optional TOML file, then
//! `--set key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use taco_core::baselines::{MpcConfig, Se3Gains};
use taco_core::eval::EvalConfig;
use taco_core::trainer::TrainConfig;
use taco_service::ServiceConfig;
use toml::{Table, Value};

use crate::error::CliError;

/// Keys that are absent from the defaults but may still be set.
const OPTIONAL_KEYS: &[&str] = &["train.policy.k_lip"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub se3: Se3Gains,
    pub mpc: MpcConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub baselines: BaselineConfig,
    pub service: ServiceConfig,
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let mut table = defaults_table()?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let layer: Table = toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
            merge(&mut table, layer, "")?;
        }
        for s in sets {
            let (key, value) = parse_set(s)?;
            let mut layer = Table::new();
            insert_path(&mut layer, &key, value);
            merge(&mut table, layer, "")?;
        }
        Self::from_table(table)
    }

    fn from_table(mut table: Table) -> Result<Self, CliError> {
        for key in OPTIONAL_KEYS {
            clear_none(&mut table, key);
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.baselines.mpc.validate().map_err(CliError::Config)?;
        self.service.validate().map_err(CliError::Config)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))
    }
}

fn defaults_table() -> Result<Table, CliError> {
    toml::Table::try_from(RunConfig::default())
        .map_err(|e| CliError::Other(format!("default config: {e}")))
}

fn parse_set(s: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{s}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Usage(format!(
            "--set expects key=value, got `{s}`"
        )));
    }
    let raw = raw.trim();
    // bare words such as `quat` are taken as strings
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn insert_path(table: &mut Table, key: &str, value: Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut t = table;
    for p in parts {
        t = t
            .entry(p)
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("fresh table");
    }
    t.insert(last.to_string(), value);
}

/// Merges `layer` into `base`, rejecting keys the defaults do not know.
fn merge(base: &mut Table, layer: Table, prefix: &str) -> Result<(), CliError> {
    for (k, v) in layer {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(l)) => merge(b, l, &path)?,
            (Some(Value::Table(_)), _) => {
                return Err(CliError::Config(format!(
                    "`{path}` is a section, not a value"
                )));
            }
            (Some(slot), v) => *slot = v,
            (None, v) if OPTIONAL_KEYS.contains(&path.as_str()) => {
                base.insert(k, v);
            }
            (None, _) => return Err(CliError::Config(format!("unknown config key `{path}`"))),
        }
    }
    Ok(())
}

fn clear_none(table: &mut Table, key: &str) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut t = table;
    for p in parts {
        match t.get_mut(p).and_then(Value::as_table_mut) {
            Some(next) => t = next,
            None => return,
        }
    }
    if matches!(t.get(last), Some(Value::String(s)) if s.eq_ignore_ascii_case("none")) {
        t.remove(last);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use taco_core::env::ObservationMode;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply_in_order() {
        let sets = [
            "train.num_envs=8".to_string(),
            "train.mode=quat".to_string(),
            "train.policy.k_lip=1.5".to_string(),
            "train.num_envs=16".to_string(),
            "eval.speeds=[2.0]".to_string(),
        ];
        let cfg = RunConfig::resolve(None, &sets).unwrap();
        assert_eq!(cfg.train.num_envs, 16);
        assert_eq!(cfg.train.mode, ObservationMode::Quaternion);
        assert_eq!(cfg.train.policy.k_lip, Some(1.5));
        assert_eq!(cfg.eval.speeds, vec![2.0]);
        let cleared = RunConfig::resolve(None, &["train.policy.k_lip=none".into()]).unwrap();
        assert_eq!(cleared.train.policy.k_lip, None);
    }

    #[test]
    fn file_layer_sits_between_defaults_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[train]\nseed = 9\nnum_envs = 4\n[train.env.params]\nmass = 0.5\n",
        )
        .unwrap();
        let cfg = RunConfig::resolve(Some(&path), &["train.num_envs=2".into()]).unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.num_envs, 2);
        assert_eq!(cfg.train.env.params.mass, 0.5);
    }

    #[test]
    fn unknown_and_invalid_keys_are_config_errors() {
        for set in [
            "train.nope=1",
            "train.ppo=3",
            "train.num_envs=0",
            "train.num_envs=\"x\"",
        ] {
            let err = RunConfig::resolve(None, &[set.to_string()]).unwrap_err();
            assert_eq!(err.exit_code(), 3, "{set}: {err}");
        }
        assert_eq!(
            RunConfig::resolve(None, &["novalue".into()])
                .unwrap_err()
                .exit_code(),
            2
        );
    }
}
