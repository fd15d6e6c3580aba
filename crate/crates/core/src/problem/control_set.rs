//! Convex compact control sets with closed-form Euclidean projections.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Membership tolerance for "u in U" preconditions.
pub const TOL_SET: f64 = 1e-10;

/// One factor of a product set.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlFactor {
    Interval { lower: f64, upper: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

impl ControlFactor {
    fn dim(&self) -> usize {
        match self {
            ControlFactor::Interval { .. } => 1,
            ControlFactor::Ball { center, .. } => center.len(),
        }
    }
}

/// Nonempty, closed, convex, compact control set.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    Box { lower: DVector<f64>, upper: DVector<f64> },
    Ball { center: DVector<f64>, radius: f64 },
    Product(Vec<ControlFactor>),
}

fn project_ball(center: &[f64], radius: f64, v: &[f64], out: &mut [f64]) {
    let dist = v.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
    if dist <= radius {
        out.copy_from_slice(v);
    } else {
        let scale = radius / dist;
        for ((o, a), c) in out.iter_mut().zip(v).zip(center) {
            *o = c + (a - c) * scale;
        }
    }
}

impl ControlSet {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidInput("box bounds must be nonempty and of equal length".into()));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !l.is_finite() || !u.is_finite() || l > u {
                return Err(Error::InvalidInput(format!(
                    "box bounds must be finite with lower <= upper (got [{l}, {u}])"
                )));
            }
        }
        Ok(ControlSet::Box {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    /// Symmetric box `[-bound, bound]^m`.
    pub fn symmetric_box(m: usize, bound: f64) -> Result<Self> {
        Self::new_box(vec![-bound; m], vec![bound; m])
    }

    pub fn new_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("ball center must be finite and nonempty".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidInput(format!("ball radius must be finite and > 0 (got {radius})")));
        }
        Ok(ControlSet::Ball {
            center: DVector::from_vec(center),
            radius,
        })
    }

    pub fn new_product(factors: Vec<ControlFactor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidInput("product set needs at least one factor".into()));
        }
        for f in &factors {
            match f {
                ControlFactor::Interval { lower, upper } => {
                    Self::new_box(vec![*lower], vec![*upper])?;
                }
                ControlFactor::Ball { center, radius } => {
                    Self::new_ball(center.clone(), *radius)?;
                }
            }
        }
        Ok(ControlSet::Product(factors))
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Box { lower, .. } => lower.len(),
            ControlSet::Ball { center, .. } => center.len(),
            ControlSet::Product(fs) => fs.iter().map(ControlFactor::dim).sum(),
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(v.len(), self.dim());
        match self {
            ControlSet::Box { lower, upper } => DVector::from_fn(v.len(), |i, _| v[i].clamp(lower[i], upper[i])),
            ControlSet::Ball { center, radius } => {
                let mut out = DVector::zeros(v.len());
                project_ball(center.as_slice(), *radius, v.as_slice(), out.as_mut_slice());
                out
            }
            ControlSet::Product(fs) => {
                let mut out = DVector::zeros(v.len());
                let mut k = 0;
                for f in fs {
                    match f {
                        ControlFactor::Interval { lower, upper } => {
                            out[k] = v[k].clamp(*lower, *upper);
                            k += 1;
                        }
                        ControlFactor::Ball { center, radius } => {
                            let d = center.len();
                            project_ball(center, *radius, &v.as_slice()[k..k + d], &mut out.as_mut_slice()[k..k + d]);
                            k += d;
                        }
                    }
                }
                out
            }
        }
    }

    pub fn distance(&self, v: &DVector<f64>) -> f64 {
        (self.project(v) - v).norm()
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.distance(v) <= tol
    }

    /// `||project(u + g) - u||`, zero exactly when `g` lies in the normal
    /// cone of the set at `u`.
    pub fn normal_cone_residual(&self, u: &DVector<f64>, g: &DVector<f64>) -> Result<f64> {
        let dist = self.distance(u);
        if dist > TOL_SET {
            return Err(Error::Precondition(format!("control value lies outside U (distance {dist:e})")));
        }
        Ok((self.project(&(u + g)) - u).norm())
    }

    /// Tight axis-aligned bounding box.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        match self {
            ControlSet::Box { lower, upper } => (lower.clone(), upper.clone()),
            ControlSet::Ball { center, radius } => (center.map(|c| c - radius), center.map(|c| c + radius)),
            ControlSet::Product(fs) => {
                let mut lo = Vec::new();
                let mut hi = Vec::new();
                for f in fs {
                    match f {
                        ControlFactor::Interval { lower, upper } => {
                            lo.push(*lower);
                            hi.push(*upper);
                        }
                        ControlFactor::Ball { center, radius } => {
                            lo.extend(center.iter().map(|c| c - radius));
                            hi.extend(center.iter().map(|c| c + radius));
                        }
                    }
                }
                (DVector::from_vec(lo), DVector::from_vec(hi))
            }
        }
    }

    pub fn to_config(&self) -> ControlSetConfig {
        match self {
            ControlSet::Box { lower, upper } => ControlSetConfig {
                kind: "box".into(),
                lower: Some(lower.as_slice().to_vec()),
                upper: Some(upper.as_slice().to_vec()),
                ..Default::default()
            },
            ControlSet::Ball { center, radius } => ControlSetConfig {
                kind: "ball".into(),
                center: Some(center.as_slice().to_vec()),
                radius: Some(*radius),
                ..Default::default()
            },
            ControlSet::Product(fs) => ControlSetConfig {
                kind: "product".into(),
                components: fs
                    .iter()
                    .map(|f| match f {
                        ControlFactor::Interval { lower, upper } => ControlSetConfig {
                            kind: "interval".into(),
                            lower: Some(vec![*lower]),
                            upper: Some(vec![*upper]),
                            ..Default::default()
                        },
                        ControlFactor::Ball { center, radius } => ControlSetConfig {
                            kind: "ball".into(),
                            center: Some(center.clone()),
                            radius: Some(*radius),
                            ..Default::default()
                        },
                    })
                    .collect(),
                ..Default::default()
            },
        }
    }
}

/// Serialized form of a control set (`kind` = box | ball | product).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSetConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ControlSetConfig>,
}

impl ControlSetConfig {
    pub fn build(&self) -> Result<ControlSet> {
        let need = |v: &Option<Vec<f64>>, name: &str| {
            v.clone()
                .ok_or_else(|| Error::InvalidInput(format!("control_set.{name} is required for kind `{}`", self.kind)))
        };
        match self.kind.as_str() {
            "box" => ControlSet::new_box(need(&self.lower, "lower")?, need(&self.upper, "upper")?),
            "ball" => ControlSet::new_ball(
                need(&self.center, "center")?,
                self.radius
                    .ok_or_else(|| Error::InvalidInput("control_set.radius is required for kind `ball`".into()))?,
            ),
            "product" => {
                let mut factors = Vec::new();
                for c in &self.components {
                    match c.kind.as_str() {
                        "interval" => {
                            let lo = need(&c.lower, "lower")?;
                            let hi = need(&c.upper, "upper")?;
                            if lo.len() != 1 || hi.len() != 1 {
                                return Err(Error::InvalidInput("interval factor bounds must be scalars".into()));
                            }
                            factors.push(ControlFactor::Interval {
                                lower: lo[0],
                                upper: hi[0],
                            });
                        }
                        "ball" => factors.push(ControlFactor::Ball {
                            center: need(&c.center, "center")?,
                            radius: c.radius.ok_or_else(|| Error::InvalidInput("ball factor requires radius".into()))?,
                        }),
                        other => return Err(Error::InvalidInput(format!("unknown product factor kind `{other}`"))),
                    }
                }
                ControlSet::new_product(factors)
            }
            other => Err(Error::InvalidInput(format!("unknown control_set kind `{other}`"))),
        }
    }
}
