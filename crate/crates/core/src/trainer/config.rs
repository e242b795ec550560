//! Flat `key = value` configuration with environment overrides.
//!
//! Keys are the field names of [`TrainConfig`] and [`RegimeConfig`], plus
//! `profile`. `#` starts a comment. `MTLAFFECT_LEARNING_RATE=1e-3` overrides
//! `learning_rate`.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use super::{Profile, TrainConfig};
use crate::regime::{Family, RegimeConfig, Setting};
use crate::{Error, Result};

pub const ENV_PREFIX: &str = "MTLAFFECT_";

const REGIME_KEYS: [&str; 4] = ["family", "setting", "oracle", "domain_adapt"];

/// Raw key/value pairs, later sources overriding earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigSource {
    entries: BTreeMap<String, String>,
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), message: message.into() }
}

fn train_keys() -> Vec<String> {
    let probe = TrainConfig::defaults(
        &RegimeConfig::new(Family::Disc, Setting::Joint),
        Profile::Published,
    );
    match serde_json::to_value(probe) {
        Ok(Value::Object(map)) => map.keys().cloned().collect(),
        _ => unreachable!("TrainConfig serializes to an object"),
    }
}

fn is_known(key: &str) -> bool {
    key == "profile" || REGIME_KEYS.contains(&key) || train_keys().iter().any(|k| k == key)
}

/// Parses config text. Unknown keys and malformed lines are errors.
pub fn parse_config_text(text: &str) -> Result<ConfigSource> {
    let mut src = ConfigSource::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected key=value, got `{line}`") })?;
        src.set(key.trim(), value.trim())?;
    }
    Ok(src)
}

impl ConfigSource {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_known(key) {
            return Err(config_err(key, "unknown key"));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies `MTLAFFECT_*` variables from `vars` on top of this source.
    pub fn with_env<I, K, V>(mut self, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            if let Some(rest) = k.as_ref().strip_prefix(ENV_PREFIX) {
                self.set(&rest.to_ascii_lowercase(), v.as_ref())?;
            }
        }
        Ok(self)
    }

    pub fn profile(&self, default: Profile) -> Result<Profile> {
        self.get("profile").map_or(Ok(default), str::parse)
    }

    /// Overrides regime fields present in the source, then validates.
    pub fn regime(&self, base: RegimeConfig) -> Result<RegimeConfig> {
        let mut r = base;
        if let Some(v) = self.get("family") {
            r.family = match v {
                "disc" => Family::Disc,
                "gen" => Family::Gen,
                _ => return Err(config_err("family", format!("unknown family `{v}`"))),
            };
        }
        if let Some(v) = self.get("setting") {
            r.setting = Setting::ALL
                .into_iter()
                .find(|s| s.name() == v)
                .ok_or_else(|| config_err("setting", format!("unknown setting `{v}`")))?;
        }
        for (key, slot) in [("oracle", &mut r.oracle), ("domain_adapt", &mut r.domain_adapt)] {
            if let Some(v) = self.get(key) {
                *slot = v.parse().map_err(|_| config_err(key, format!("expected true/false, got `{v}`")))?;
            }
        }
        r.validate()?;
        Ok(r)
    }

    /// Overrides the training fields present in the source.
    pub fn apply(&self, config: &TrainConfig) -> Result<TrainConfig> {
        let mut current = config.clone();
        for (key, raw) in &self.entries {
            if key == "profile" || REGIME_KEYS.contains(&key.as_str()) {
                continue;
            }
            let mut obj = match serde_json::to_value(&current) {
                Ok(Value::Object(m)) => m,
                _ => unreachable!("TrainConfig serializes to an object"),
            };
            let value = match raw.as_str() {
                "none" | "null" => Value::Null,
                s => serde_json::from_str::<Value>(s).unwrap_or_else(|_| Value::String(s.to_string())),
            };
            obj.insert(key.clone(), value);
            current = serde_json::from_value(Value::Object(obj))
                .map_err(|e| config_err(key, format!("bad value `{raw}`: {e}")))?;
        }
        current.validate()?;
        Ok(current)
    }
}

/// Resolves regime and training config from defaults, an optional file and
/// environment variables, in that order of precedence (last wins).
pub fn load_train_config<I, K, V>(
    path: Option<&Path>,
    regime: RegimeConfig,
    default_profile: Profile,
    env: I,
) -> Result<(RegimeConfig, TrainConfig)>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let file = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config_text(&text)?
        }
        None => ConfigSource::default(),
    };
    let src = file.with_env(env)?;
    let regime = src.regime(regime)?;
    let base = TrainConfig::defaults(&regime, src.profile(default_profile)?);
    Ok((regime, src.apply(&base)?))
}
