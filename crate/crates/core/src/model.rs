//! JSON model files.
//!
//! A model is either a dense tensor
//! `{"n": 3, "B": [[[...]]]}` indexed `B[k][i][j]`, or a gate shorthand
//! `{"gate": "rigid_body", "params": {"i1": 1, "i2": 2, "i3": 3}}`.
//! Diagnostics name the offending field.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::gates::{build, GateId, GateSpec};
use crate::quadode::{InnerProduct, SymBilinearMap};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub b: SymBilinearMap<f64>,
    /// Present when the model was given by gate name.
    pub gate: Option<GateSpec<f64>>,
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("field '{field}': {msg}"))
}

impl Model {
    pub fn from_gate(spec: GateSpec<f64>) -> Result<Self> {
        let b = build(&spec)?;
        Ok(Self { b, gate: Some(spec) })
    }

    pub fn custom(b: SymBilinearMap<f64>) -> Self {
        Self { b, gate: None }
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }

    /// Short display name: the gate name or `custom`.
    pub fn name(&self) -> &'static str {
        self.gate.as_ref().map_or("custom", |g| g.id().name())
    }

    /// The inner product the gate is known to conserve, if any.
    pub fn named_inner_product(&self) -> Option<InnerProduct<f64>> {
        self.gate.as_ref().and_then(|g| g.conserved_inner_product())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read model file {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("malformed model JSON: {e}")))?;
        Self::from_json(&value)
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidInput("model must be a JSON object".into()))?;
        if let Some(gate) = obj.get("gate") {
            let name = gate.as_str().ok_or_else(|| field_error("gate", "expected a string"))?;
            let id = GateId::parse(name).map_err(|e| field_error("gate", e))?;
            if id == GateId::Custom {
                return Err(field_error("gate", "use {\"n\", \"B\"} for custom models"));
            }
            let params = match obj.get("params") {
                None | Some(Value::Null) => vec![],
                Some(Value::Object(map)) => parse_params(map)?,
                Some(_) => return Err(field_error("params", "expected an object of numbers")),
            };
            let spec = GateSpec::from_params(id, &params).map_err(|e| field_error("params", e))?;
            return Self::from_gate(spec);
        }
        let n = match obj.get("n") {
            None => return Err(field_error("n", "missing (or give a \"gate\")")),
            Some(v) => v
                .as_u64()
                .filter(|&n| n > 0)
                .ok_or_else(|| field_error("n", "expected a positive integer"))? as usize,
        };
        let b = obj.get("B").ok_or_else(|| field_error("B", "missing"))?;
        let mut flat = Vec::with_capacity(n * n * n);
        let outer = b
            .as_array()
            .ok_or_else(|| field_error("B", "expected a nested array"))?;
        if outer.len() != n {
            return Err(field_error(
                "B",
                format!("has {} entries, expected n = {n}", outer.len()),
            ));
        }
        for (k, row) in outer.iter().enumerate() {
            let row = row
                .as_array()
                .ok_or_else(|| field_error(&format!("B[{k}]"), "expected an array"))?;
            if row.len() != n {
                return Err(field_error(
                    &format!("B[{k}]"),
                    format!("has {} entries, expected {n}", row.len()),
                ));
            }
            for (i, col) in row.iter().enumerate() {
                let col = col
                    .as_array()
                    .ok_or_else(|| field_error(&format!("B[{k}][{i}]"), "expected an array"))?;
                if col.len() != n {
                    return Err(field_error(
                        &format!("B[{k}][{i}]"),
                        format!("has {} entries, expected {n}", col.len()),
                    ));
                }
                for (j, x) in col.iter().enumerate() {
                    let x = x
                        .as_f64()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| field_error(&format!("B[{k}][{i}][{j}]"), "expected a finite number"))?;
                    flat.push(x);
                }
            }
        }
        Ok(Self::custom(SymBilinearMap::symmetrize(n, &flat)?))
    }

    /// Dense form `{"n", "B"}` of the (symmetrized) tensor.
    pub fn to_json(&self) -> Value {
        json!({ "n": self.dim(), "B": self.b.to_nested() })
    }
}

fn parse_params(map: &Map<String, Value>) -> Result<Vec<(String, f64)>> {
    map.iter()
        .map(|(k, v)| {
            v.as_f64()
                .filter(|x| x.is_finite())
                .map(|x| (k.clone(), x))
                .ok_or_else(|| field_error(&format!("params.{k}"), "expected a finite number"))
        })
        .collect()
}

/// Parses `K=V,K=V` parameter lists.
pub fn parse_param_list(s: &str) -> Result<Vec<(String, f64)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("parameter '{pair}' is not of the form K=V")))?;
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("parameter '{}' has non-numeric value '{v}'", k.trim())))?;
            Ok((k.trim().to_string(), x))
        })
        .collect()
}
