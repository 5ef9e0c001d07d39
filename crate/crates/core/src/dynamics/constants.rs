//! System constants files.
//!
//! One file per system, `key = real` or `key = [real, ...]` per line, `#`
//! comments. The syntax is a subset of TOML and is parsed with the `toml`
//! crate; anything other than numbers and flat number lists is rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstantValue {
    Scalar(f64),
    List(Vec<f64>),
}

/// Named real constants of one system.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Constants(BTreeMap<String, ConstantValue>);

const BUILTIN: &[(&str, &str)] = &[
    ("pendulum", include_str!("../../systems/pendulum.toml")),
    ("car_kinematic", include_str!("../../systems/car_kinematic.toml")),
    ("car_sideslip", include_str!("../../systems/car_sideslip.toml")),
    ("segway", include_str!("../../systems/segway.toml")),
    ("neural_lander", include_str!("../../systems/neural_lander.toml")),
    ("quad2d", include_str!("../../systems/quad2d.toml")),
    ("quad3d", include_str!("../../systems/quad3d.toml")),
    ("nonaffine_pendulum", include_str!("../../systems/nonaffine_pendulum.toml")),
];

/// Names of every built-in system.
pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(name, _)| *name).collect()
}

/// The bundled constants file text for `name`.
pub fn builtin_source(name: &str) -> Result<&'static str> {
    BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| *src)
        .ok_or_else(|| {
            Error::config(
                "system",
                format!("unknown system `{name}`; known: {}", builtin_names().join(", ")),
            )
        })
}

pub(crate) fn builtin_constants(name: &str) -> Result<Constants> {
    Constants::parse(builtin_source(name)?)
}

impl Constants {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let mut map = BTreeMap::new();
        for (key, value) in table {
            let parsed = match &value {
                toml::Value::Float(f) => ConstantValue::Scalar(*f),
                toml::Value::Integer(i) => ConstantValue::Scalar(*i as f64),
                toml::Value::Array(items) => {
                    let mut list = Vec::with_capacity(items.len());
                    for item in items {
                        match item {
                            toml::Value::Float(f) => list.push(*f),
                            toml::Value::Integer(i) => list.push(*i as f64),
                            _ => {
                                return Err(Error::config(key, "list entries must be real numbers"));
                            }
                        }
                    }
                    ConstantValue::List(list)
                }
                _ => return Err(Error::config(key, "value must be a real or a list of reals")),
            };
            map.insert(key, parsed);
        }
        Ok(Constants(map))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Renders back to the file syntax, keys sorted.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.0 {
            match value {
                ConstantValue::Scalar(v) => {
                    let _ = writeln!(out, "{key} = {}", fmt_real(*v));
                }
                ConstantValue::List(vs) => {
                    let items: Vec<String> = vs.iter().map(|v| fmt_real(*v)).collect();
                    let _ = writeln!(out, "{key} = [{}]", items.join(", "));
                }
            }
        }
        out
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&ConstantValue> {
        self.0.get(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: ConstantValue) {
        self.0.insert(key.into(), value);
    }

    pub fn scalar(&self, key: &str) -> Result<f64> {
        match self.0.get(key) {
            Some(ConstantValue::Scalar(v)) => Ok(*v),
            Some(ConstantValue::List(_)) => Err(Error::config(key, "expected a real, found a list")),
            None => Err(Error::config(key, "missing constant")),
        }
    }

    pub fn scalar_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.contains(key) {
            self.scalar(key)
        } else {
            Ok(default)
        }
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        match self.0.get(key) {
            Some(ConstantValue::List(v)) => Ok(v.clone()),
            Some(ConstantValue::Scalar(v)) => Ok(vec![*v]),
            None => Err(Error::config(key, "missing constant")),
        }
    }

    pub fn list_or_empty(&self, key: &str) -> Result<Vec<f64>> {
        if self.contains(key) {
            self.list(key)
        } else {
            Ok(Vec::new())
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ConstantValue)> {
        self.0.iter()
    }
}

fn fmt_real(v: f64) -> String {
    // Keep a decimal point so integers stay floats when re-read.
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalars_and_lists() {
        let c = Constants::parse("# comment\nmass = 1\nbounds = [1.5, -2]\n").unwrap();
        assert_eq!(c.scalar("mass").unwrap(), 1.0);
        assert_eq!(c.list("bounds").unwrap(), vec![1.5, -2.0]);
        assert!(c.scalar("bounds").is_err());
        assert!(c.scalar("missing").is_err());
    }

    #[test]
    fn rejects_non_numeric_values() {
        assert!(Constants::parse("name = \"x\"").is_err());
        assert!(Constants::parse("xs = [1.0, \"a\"]").is_err());
        assert!(Constants::parse("this is not toml").is_err());
    }

    #[test]
    fn render_round_trips() {
        for name in builtin_names() {
            let c = builtin_constants(name).unwrap();
            let again = Constants::parse(&c.render()).unwrap();
            assert_eq!(c, again, "{name}");
        }
    }
}
