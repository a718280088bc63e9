//! Opaque method parameters and typed extraction.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
            ParamValue::Str(s) => write!(f, "{s}"),
        }
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}
impl From<usize> for ParamValue {
    fn from(v: usize) -> Self {
        ParamValue::Int(v as i64)
    }
}
impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Float(v)
    }
}
impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}
impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Str(v.to_string())
    }
}

pub type Params = BTreeMap<String, ParamValue>;

/// `key=value` pairs joined by `;`, keys in sorted order.
pub fn params_string(params: &Params) -> String {
    params
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Builds a `Params` from literal pairs.
pub fn params<const N: usize>(pairs: [(&str, ParamValue); N]) -> Params {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Typed reader that consumes keys and rejects leftovers.
pub struct ParamReader<'a> {
    method: &'a str,
    rest: Params,
}

impl<'a> ParamReader<'a> {
    pub fn new(method: &'a str, params: &Params) -> Self {
        Self {
            method,
            rest: params.clone(),
        }
    }

    fn bad(&self, key: &str, want: &str, got: &ParamValue) -> Error {
        Error::InvalidParameter(format!(
            "{}: parameter `{key}` must be {want}, got `{got}`",
            self.method
        ))
    }

    pub fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.rest.remove(key) {
            None => Ok(None),
            Some(ParamValue::Int(i)) if i >= 0 => Ok(Some(i as usize)),
            Some(v) => Err(self.bad(key, "a non-negative integer", &v)),
        }
    }

    pub fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.rest.remove(key) {
            None => Ok(None),
            Some(ParamValue::Float(x)) => Ok(Some(x)),
            Some(ParamValue::Int(i)) => Ok(Some(i as f64)),
            Some(v) => Err(self.bad(key, "a number", &v)),
        }
    }

    pub fn bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.rest.remove(key) {
            None => Ok(None),
            Some(ParamValue::Bool(b)) => Ok(Some(b)),
            Some(v) => Err(self.bad(key, "a boolean", &v)),
        }
    }

    pub fn finish(self) -> Result<()> {
        match self.rest.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::InvalidParameter(format!(
                "{}: unknown parameter `{k}`",
                self.method
            ))),
        }
    }
}
