//! The effective run configuration: preset defaults, then the config file,
//! then `--set` overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use cxa_core::metrics::HorizonMode;
use cxa_core::{ModelConfig, Preset, TrainConfig};
use cxa_datagen::world::WorldConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub horizon_mode: HorizonMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Master seed for generation and model initialisation; also the
    /// shuffling seed unless `train.seed` is given.
    pub seed: u64,
    pub data: DataConfig,
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn defaults(preset: Preset) -> Self {
        Self {
            preset,
            seed: 0,
            data: DataConfig {
                train_count: 2000,
                test_count: 500,
            },
            world: WorldConfig::default(),
            model: ModelConfig::preset(preset),
            train: TrainConfig::preset(preset),
            eval: EvalConfig {
                horizon_mode: HorizonMode::Cumulative,
            },
        }
    }

    /// Builds the configuration from an optional TOML file and `key=value`
    /// overrides. Unknown keys anywhere are rejected.
    pub fn load(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut user = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                text.parse::<Table>().with_context(|| format!("parsing {}", path.display()))?
            }
            None => Table::new(),
        };
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("override `{item}` is not of the form key=value"))?;
            set_path(&mut user, key.trim(), parse_scalar(raw.trim()))?;
        }
        if let Some(seed) = seed {
            set_path(&mut user, "seed", Value::Integer(to_toml_int(seed)?))?;
        }

        let preset: Preset = match user.get("preset") {
            Some(v) => v.clone().try_into().map_err(|e| anyhow!("preset: {e}"))?,
            None => Preset::Desk,
        };
        let mut merged = Table::try_from(Self::defaults(preset)).context("serializing defaults")?;
        merge(&mut merged, &user, "")?;
        let explicit_train_seed = user
            .get("train")
            .and_then(Value::as_table)
            .is_some_and(|t| t.contains_key("seed"));
        if !explicit_train_seed {
            let seed = merged["seed"].clone();
            if let Some(Value::Table(train)) = merged.get_mut("train") {
                train.insert("seed".into(), seed);
            }
        }
        let config: RunConfig = Value::Table(merged).try_into().map_err(|e| anyhow!("invalid configuration: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        if (self.world.t_obs, self.world.t_pred) != (self.model.t_obs, self.model.t_pred) {
            bail!(
                "world windows ({} + {}) disagree with the model's ({} + {})",
                self.world.t_obs,
                self.world.t_pred,
                self.model.t_obs,
                self.model.t_pred
            );
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing the effective configuration")
    }
}

fn to_toml_int(v: u64) -> Result<i64> {
    i64::try_from(v).map_err(|_| anyhow!("seed {v} does not fit a signed 64-bit integer"))
}

/// Integers, floats and booleans parse as such; anything else is a string.
fn parse_scalar(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key `{key}`");
    }
    let mut t = table;
    for part in &parts[..parts.len() - 1] {
        let entry = t.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("`{key}`: `{part}` is not a section"))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn merge(base: &mut Table, user: &Table, prefix: &str) -> Result<()> {
    for (key, value) in user {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(key), value) {
            (Some(Value::Table(b)), Value::Table(u)) => merge(b, u, &path)?,
            (Some(Value::Table(_)), _) => bail!("`{path}` is a section, not a value"),
            (Some(Value::Float(_)), Value::Integer(i)) => {
                base.insert(key.clone(), Value::Float(*i as f64));
            }
            (_, v) => {
                base.insert(key.clone(), v.clone());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sets(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn defaults_load() {
        let c = RunConfig::load(None, &[], None).unwrap();
        assert_eq!(c, RunConfig::defaults(Preset::Desk));
    }

    #[test]
    fn overrides_beat_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 4\n[train]\nepochs = 3\nlearning_rate = 1\n[model]\nd_model = 32\n").unwrap();
        let c = RunConfig::load(Some(&path), &sets(&["train.epochs=7", "model.modalities=y+c"]), None).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.learning_rate, 1.0);
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.model.modalities.label(), "Y+C");
        assert_eq!((c.seed, c.train.seed), (4, 4));
        let c = RunConfig::load(Some(&path), &sets(&["train.seed=9"]), Some(5)).unwrap();
        assert_eq!((c.seed, c.train.seed), (5, 9));
    }

    #[test]
    fn preset_key_switches_defaults() {
        let c = RunConfig::load(None, &sets(&["preset=paper"]), None).unwrap();
        assert_eq!(c.model.d_model, 512);
        assert_eq!(c.train.batch_size, 1024);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["model.width=3", "bogus=1", "world.social.nope=2", "data.train_count.x=1"] {
            assert!(RunConfig::load(None, &sets(&[bad]), None).is_err(), "{bad}");
        }
        assert!(RunConfig::load(None, &sets(&["noequals"]), None).is_err());
    }

    #[test]
    fn bad_modalities_list_valid_tokens() {
        let err = RunConfig::load(None, &sets(&["model.modalities=y+q"]), None).unwrap_err();
        assert!(format!("{err:#}").contains("y, c, b, p, s, d"), "{err:#}");
    }

    #[test]
    fn effective_config_round_trips() {
        let c = RunConfig::load(None, &sets(&["train.clip_norm=1.5", "eval.horizon_mode=per-step"]), Some(3)).unwrap();
        let text = c.to_toml().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.toml");
        std::fs::write(&path, &text).unwrap();
        assert_eq!(RunConfig::load(Some(&path), &[], None).unwrap(), c);
    }

    #[test]
    fn mismatched_windows_are_rejected() {
        assert!(RunConfig::load(None, &sets(&["world.t_pred=6"]), None).is_err());
    }
}
