//! Model files: a JSON object with `name`, `n`, row-major `q` and optional
//! `beta`, `mu`, `phi`. Unknown fields are rejected.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::Error;
use crate::qcore::{validate_q_matrix, PositiveVector, ProbabilityMeasure, QMatrix};

use super::report::to_canonical_json;

const FIELDS: [&str; 6] = ["name", "n", "q", "beta", "mu", "phi"];

/// Raw file contents, before any numerical validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    pub n: usize,
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
}

/// Why a model file was rejected.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{0}")]
    Syntax(String),
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("field `{field}`: {source}")]
    Invalid {
        field: &'static str,
        #[source]
        source: Error,
    },
}

impl ModelError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        Self::Field {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// A model whose matrix and vectors passed validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub q: QMatrix,
    pub beta: Option<PositiveVector>,
    pub mu: Option<ProbabilityMeasure>,
    pub phi: Option<PositiveVector>,
}

impl ModelFile {
    /// Parses JSON text, naming the offending field on type errors.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ModelError::Syntax(e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(ModelError::Syntax("model must be a JSON object".into()));
        };
        if let Some(k) = map.keys().find(|k| !FIELDS.contains(&k.as_str())) {
            return Err(ModelError::field(k, "unknown field"));
        }
        let name = match map.get("name") {
            None => return Err(ModelError::field("name", "missing field")),
            Some(Value::String(s)) => s.clone(),
            Some(other) => {
                return Err(ModelError::field(
                    "name",
                    format!("expected a string, found {other}"),
                ))
            }
        };
        let n = match map.get("n") {
            None => return Err(ModelError::field("n", "missing field")),
            Some(v) => v.as_u64().and_then(|x| usize::try_from(x).ok()).ok_or_else(|| {
                ModelError::field("n", format!("expected a non-negative integer, found {v}"))
            })?,
        };
        let q = numbers(&map, "q")?.ok_or_else(|| ModelError::field("q", "missing field"))?;
        Ok(Self {
            name,
            n,
            q,
            beta: numbers(&map, "beta")?,
            mu: numbers(&map, "mu")?,
            phi: numbers(&map, "phi")?,
        })
    }

    /// Canonical text: sorted keys and 17 significant digits, so that
    /// `parse(to_json())` reproduces `self` exactly.
    pub fn to_json(&self) -> String {
        to_canonical_json(&serde_json::to_value(self).expect("model serializes"))
    }

    pub fn validate(&self) -> Result<Model, ModelError> {
        let n = self.n;
        if n < 2 {
            return Err(ModelError::field(
                "n",
                format!("need at least 2 states, found {n}"),
            ));
        }
        if self.q.len() != n * n {
            return Err(ModelError::field(
                "q",
                format!("expected {} entries for n = {n}, found {}", n * n, self.q.len()),
            ));
        }
        let q = validate_q_matrix(n, &self.q).map_err(|source| ModelError::Invalid { field: "q", source })?;
        let positive =
            |field: &'static str, v: &Option<Vec<f64>>| -> Result<Option<PositiveVector>, ModelError> {
                v.as_ref()
                    .map(|v| {
                        check_len(field, v, n)?;
                        PositiveVector::new(v.clone()).map_err(|source| ModelError::Invalid { field, source })
                    })
                    .transpose()
            };
        let beta = positive("beta", &self.beta)?;
        let phi = positive("phi", &self.phi)?;
        let mu = self
            .mu
            .as_ref()
            .map(|v| {
                check_len("mu", v, n)?;
                ProbabilityMeasure::new(v.clone())
                    .map_err(|source| ModelError::Invalid { field: "mu", source })
            })
            .transpose()?;
        Ok(Model {
            name: self.name.clone(),
            q,
            beta,
            mu,
            phi,
        })
    }
}

impl Model {
    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            name: self.name.clone(),
            n: self.q.n(),
            q: self.q.to_row_major(),
            beta: self.beta.as_ref().map(|v| v.as_slice().to_vec()),
            mu: self.mu.as_ref().map(|v| v.as_slice().to_vec()),
            phi: self.phi.as_ref().map(|v| v.as_slice().to_vec()),
        }
    }
}

fn check_len(field: &'static str, v: &[f64], n: usize) -> Result<(), ModelError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(ModelError::Invalid {
            field,
            source: Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            },
        })
    }
}

fn numbers(map: &Map<String, Value>, field: &str) -> Result<Option<Vec<f64>>, ModelError> {
    let Some(v) = map.get(field) else {
        return Ok(None);
    };
    let Value::Array(items) = v else {
        return Err(ModelError::field(
            field,
            format!("expected an array of numbers, found {v}"),
        ));
    };
    items
        .iter()
        .enumerate()
        .map(|(k, x)| {
            x.as_f64()
                .ok_or_else(|| ModelError::field(field, format!("entry {k}: expected a number, found {x}")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}
