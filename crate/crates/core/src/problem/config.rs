use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::control_set::ControlSetConfig;
use crate::error::{Error, Result};

/// A scalar, a flat row-major list, or a list of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    List(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

impl ParamValue {
    pub(crate) fn flat(&self) -> Vec<f64> {
        match self {
            ParamValue::Scalar(v) => vec![*v],
            ParamValue::List(v) => v.clone(),
            ParamValue::Rows(rows) => rows.iter().flatten().copied().collect(),
        }
    }

    /// Interpret as an `rows x cols` matrix stored row-major.
    pub(crate) fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        if let ParamValue::Rows(r) = self {
            if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                return Err(Error::InvalidInput(format!("param `{name}` must be {rows}x{cols}")));
            }
        }
        let flat = self.flat();
        if flat.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "param `{name}` must have {} entries ({rows}x{cols}, row-major), got {}",
                rows * cols,
                flat.len()
            )));
        }
        Ok(DMatrix::from_row_slice(rows, cols, &flat))
    }

    pub(crate) fn scalar(&self, name: &str) -> Result<f64> {
        match self.flat().as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::InvalidInput(format!("param `{name}` must be a scalar"))),
        }
    }
}

/// Problem configuration file contents.
///
/// ```toml
/// problem = "lq_double_integrator"
/// horizon = 1.0
/// x0 = [1.0, 0.0]
/// xT = [0.0, 0.0]
///
/// [params]
/// Q = [1.0, 0.0, 0.0, 1.0]
/// R = 1.0
///
/// [control_set]
/// kind = "box"
/// lower = [-20.0]
/// upper = [20.0]
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub problem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, rename = "xT", skip_serializing_if = "Option::is_none")]
    pub x_target: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, ParamValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_set: Option<ControlSetConfig>,
}

impl ProblemConfig {
    pub fn named(problem: impl Into<String>) -> Self {
        Self {
            problem: problem.into(),
            ..Default::default()
        }
    }

    pub fn from_toml_str(text: &str, source_name: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(source_name, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("problem config is always serializable")
    }

    pub fn with_param(mut self, name: &str, value: ParamValue) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_layout() {
        let text = r#"
problem = "lq_double_integrator"
horizon = 1
x0 = [1.0, 0.0]
xT = [0.0, 0.0]

[params]
Q = [[1.0, 0.0], [0.0, 2.0]]
R = 1

[control_set]
kind = "box"
lower = [-6.0]
upper = [6.0]
"#;
        let cfg = ProblemConfig::from_toml_str(text, "inline").unwrap();
        assert_eq!(cfg.horizon, Some(1.0));
        assert_eq!(cfg.params["R"], ParamValue::Scalar(1.0));
        let q = cfg.params["Q"].matrix("Q", 2, 2).unwrap();
        assert_eq!(q[(1, 1)], 2.0);
        let round = ProblemConfig::from_toml_str(&cfg.to_toml_string(), "round").unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "problem = \"lq_generic\"\nhorizon = [oops\n";
        let err = ProblemConfig::from_toml_str(text, "bad.toml").unwrap_err().to_string();
        assert!(err.contains("bad.toml"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ProblemConfig::from_toml_str("problem = \"x\"\nbogus = 1\n", "t").is_err());
    }
}
