//! Built-in model catalog and the name-keyed registry used by the CLI.
//!
//! Each model implements [`ManifoldModel`](crate::geometry::ManifoldModel)
//! with analytic derivatives wherever a closed form exists, plus a reference
//! record of independently hand-coded quantities used for cross-checks.

mod circle;
mod custom;
mod torus;
mod wishart;

pub use circle::{circle_tail_by_direct_formula, CircleProcessModel, CircleReference};
pub use custom::CustomModel;
pub use torus::FlatTorusModel;
pub use wishart::{Wishart2Model, Wishart2Reference, WishartPQModel};

use serde_json::{Map, Value};

use crate::geometry::ManifoldModel;
use crate::{Error, Result};

/// Names accepted by [`build`].
pub const NAMES: [&str; 5] = ["circle", "torus", "wishart2", "wishartpq", "custom"];

/// Typed accessor over a JSON parameter map that records which keys were
/// consumed, so leftovers can be rejected.
struct Params<'a> {
    map: &'a Map<String, Value>,
    used: Vec<&'a str>,
}

impl<'a> Params<'a> {
    fn new(map: &'a Map<String, Value>) -> Self {
        Params { map, used: Vec::new() }
    }

    fn f64(&mut self, key: &'a str) -> Result<Option<f64>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => {
                self.used.push(key);
                v.as_f64()
                    .ok_or_else(|| Error::InvalidInput(format!("parameter `{key}` must be a number")))
                    .map(Some)
            }
        }
    }

    fn require_f64(&mut self, key: &'a str) -> Result<f64> {
        self.f64(key)?
            .ok_or_else(|| Error::InvalidInput(format!("missing required parameter `{key}`")))
    }

    fn usize(&mut self, key: &'a str) -> Result<Option<usize>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => {
                self.used.push(key);
                v.as_u64()
                    .map(|u| u as usize)
                    .ok_or_else(|| {
                        Error::InvalidInput(format!("parameter `{key}` must be a nonnegative integer"))
                    })
                    .map(Some)
            }
        }
    }

    fn f64_array(&mut self, key: &'a str) -> Result<Option<Vec<f64>>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => {
                self.used.push(key);
                let arr = v.as_array().ok_or_else(|| {
                    Error::InvalidInput(format!("parameter `{key}` must be an array of numbers"))
                })?;
                arr.iter()
                    .map(|x| {
                        x.as_f64().ok_or_else(|| {
                            Error::InvalidInput(format!("parameter `{key}` must contain only numbers"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
                    .map(Some)
            }
        }
    }

    fn finish(self) -> Result<()> {
        let unknown: Vec<&String> =
            self.map.keys().filter(|k| !self.used.contains(&k.as_str())).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "unknown parameter(s): {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

/// Construct a model by registry name from a JSON parameter map.
///
/// Unknown parameter keys are rejected. The `custom` model takes the whole
/// map as its declarative definition.
pub fn build(name: &str, params: &Map<String, Value>) -> Result<Box<dyn ManifoldModel + Send>> {
    match name {
        "circle" => {
            let mut p = Params::new(params);
            let m = p.require_f64("m")?;
            p.finish()?;
            Ok(Box::new(CircleProcessModel::new(m)?))
        }
        "torus" => {
            let mut p = Params::new(params);
            let r1 = p.f64("r1")?.unwrap_or(std::f64::consts::FRAC_1_SQRT_2);
            let r2 = p.f64("r2")?.unwrap_or(std::f64::consts::FRAC_1_SQRT_2);
            p.finish()?;
            Ok(Box::new(FlatTorusModel::new(r1, r2)?))
        }
        "wishart2" => {
            let mut p = Params::new(params);
            let l1 = p.require_f64("l1")?;
            let l2 = p.require_f64("l2")?;
            let nu = p.usize("nu")?.ok_or_else(|| {
                Error::InvalidInput("missing required parameter `nu`".into())
            })?;
            p.finish()?;
            Ok(Box::new(Wishart2Model::new(l1, l2, nu)?))
        }
        "wishartpq" => {
            let mut p = Params::new(params);
            let pp = p.usize("p")?.ok_or_else(|| {
                Error::InvalidInput("missing required parameter `p`".into())
            })?;
            let nu = p.usize("nu")?.ok_or_else(|| {
                Error::InvalidInput("missing required parameter `nu`".into())
            })?;
            let lambdas = p.f64_array("lambdas")?.ok_or_else(|| {
                Error::InvalidInput("missing required parameter `lambdas`".into())
            })?;
            // `q` is derived from the eigenvalue multiplicities; accept it
            // only as a cross-check.
            let q = p.usize("q")?;
            p.finish()?;
            let model = WishartPQModel::new(pp, nu, lambdas)?;
            if let Some(q) = q {
                if q != model.q() {
                    return Err(Error::InvalidInput(format!(
                        "declared q = {q} but the leading eigenvalue has multiplicity {}",
                        model.q()
                    )));
                }
            }
            Ok(Box::new(model))
        }
        "custom" => Ok(Box::new(CustomModel::from_json(params)?)),
        other => Err(Error::InvalidInput(format!(
            "unknown model `{other}` (expected one of: {})",
            NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn map(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn registry_builds_each_builtin() {
        assert_eq!(build("circle", &map(json!({"m": 1.5}))).unwrap().name(), "circle");
        assert_eq!(build("torus", &map(json!({}))).unwrap().name(), "torus");
        assert_eq!(
            build("wishart2", &map(json!({"l1": 1.0, "l2": 0.75, "nu": 4}))).unwrap().name(),
            "wishart2"
        );
        assert_eq!(
            build("wishartpq", &map(json!({"p": 2, "nu": 4, "lambdas": [1.0, 0.25]})))
                .unwrap()
                .name(),
            "wishartpq"
        );
    }

    #[test]
    fn registry_rejects_unknown_names_and_keys() {
        assert!(build("sphere", &map(json!({}))).is_err());
        let err = build("circle", &map(json!({"m": 1.0, "mm": 2.0}))).err().unwrap();
        assert!(err.to_string().contains("mm"));
        assert!(build("circle", &map(json!({}))).is_err());
        assert!(build("circle", &map(json!({"m": "one"}))).is_err());
    }

    #[test]
    fn wishartpq_multiplicity_cross_check() {
        let ok = build("wishartpq", &map(json!({"p": 2, "q": 1, "nu": 4, "lambdas": [1.0, 0.5]})));
        assert!(ok.is_ok());
        let bad = build("wishartpq", &map(json!({"p": 2, "q": 2, "nu": 4, "lambdas": [1.0, 0.5]})));
        assert!(bad.is_err());
    }
}
