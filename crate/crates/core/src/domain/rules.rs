use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{dist2, Point, Region};
use crate::error::{Error, Result};

/// Distance indicator `d_r`: 1 when the points are at most `r` apart.
#[inline]
pub fn distance_indicator(a: Point, b: Point, r: f64) -> u8 {
    u8::from(dist2(a, b) <= r * r)
}

/// Position-dependent first-order adoption rate `gamma_ij(x)`.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialRate {
    Constant {
        value: f64,
    },
    /// `max(0, offset + coef . x)`.
    Affine {
        coef: Point,
        #[serde(default)]
        offset: f64,
    },
    /// `inside` on `region`, `outside` elsewhere.
    Indicator {
        region: Region,
        inside: f64,
        #[serde(default)]
        outside: f64,
    },
    #[serde(skip)]
    Custom(Arc<dyn Fn(Point) -> f64 + Send + Sync>),
}

impl fmt::Debug for SpatialRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant { value } => write!(f, "Constant({value})"),
            Self::Affine { coef, offset } => write!(f, "Affine({coef:?}, {offset})"),
            Self::Indicator { region, inside, outside } => write!(f, "Indicator({region:?}, {inside}, {outside})"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl SpatialRate {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }

    pub fn custom(f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: Point) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Affine { coef, offset } => (offset + coef[0] * x[0] + coef[1] * x[1]).max(0.0),
            Self::Indicator { region, inside, outside } => {
                if region.contains(x) {
                    *inside
                } else {
                    *outside
                }
            }
            Self::Custom(f) => f(x),
        }
    }

    /// Whether the rate is the same everywhere, and its value if so.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Self::Constant { value } => Some(*value),
            _ => None,
        }
    }

    fn check(&self) -> Result<()> {
        let bad = match self {
            Self::Constant { value } => *value < 0.0 || !value.is_finite(),
            Self::Indicator { inside, outside, .. } => *inside < 0.0 || *outside < 0.0,
            Self::Affine { .. } | Self::Custom(_) => false,
        };
        if bad {
            return Err(Error::Config(format!("negative or non-finite rate {self:?}")));
        }
        Ok(())
    }
}

/// Spontaneous adoption `from -> to` at rate `rate(x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstOrderRule {
    pub from: usize,
    pub to: usize,
    pub rate: SpatialRate,
}

/// Contact-induced adoption `from -> to`, triggered by each neighbour of
/// status `via` within `radius` at rate constant `rate`.
///
/// The classical Doi rule has `via == to`: the adopter copies the status of
/// its contact. Allowing `via != to` also covers catalytic channels such as
/// `S + I -> E + I`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondOrderRule {
    pub from: usize,
    pub to: usize,
    pub via: usize,
    pub rate: f64,
    pub radius: f64,
}

impl SecondOrderRule {
    /// Doi-type rule where the adopter takes over its contact's status.
    pub fn doi(from: usize, to: usize, rate: f64, radius: f64) -> Self {
        Self {
            from,
            to,
            via: to,
            rate,
            radius,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdoptionRuleSet {
    #[serde(default)]
    pub first_order: Vec<FirstOrderRule>,
    #[serde(default)]
    pub second_order: Vec<SecondOrderRule>,
}

impl AdoptionRuleSet {
    pub fn new(first_order: Vec<FirstOrderRule>, second_order: Vec<SecondOrderRule>) -> Self {
        Self { first_order, second_order }
    }

    pub fn is_empty(&self) -> bool {
        self.first_order.is_empty() && self.second_order.is_empty()
    }

    /// Largest interaction radius among second-order rules.
    pub fn max_radius(&self) -> Option<f64> {
        self.second_order.iter().map(|r| r.radius).reduce(f64::max)
    }

    pub fn validate(&self, n_status: usize) -> Result<()> {
        let idx = |name: &str, s: usize| {
            if s >= n_status {
                Err(Error::Config(format!(
                    "{name} status index {s} out of range for {n_status} statuses"
                )))
            } else {
                Ok(())
            }
        };
        for r in &self.first_order {
            idx("from", r.from)?;
            idx("to", r.to)?;
            if r.from == r.to {
                return Err(Error::Config(format!("first-order rule {} -> {} is a self-loop", r.from, r.to)));
            }
            r.rate.check()?;
        }
        for r in &self.second_order {
            idx("from", r.from)?;
            idx("to", r.to)?;
            idx("via", r.via)?;
            if r.from == r.to {
                return Err(Error::Config(format!("second-order rule {} -> {} is a self-loop", r.from, r.to)));
            }
            if !(r.rate >= 0.0 && r.rate.is_finite()) {
                return Err(Error::Config(format!("second-order rate {} must be >= 0", r.rate)));
            }
            if !(r.radius > 0.0 && r.radius.is_finite()) {
                return Err(Error::Config(format!("interaction radius {} must be > 0", r.radius)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_indicator_cases() {
        assert_eq!(distance_indicator([0.0, 0.0], [0.1, 0.0], 0.15), 1);
        assert_eq!(distance_indicator([0.3, -0.2], [0.3, -0.2], 1e-9), 1);
        assert_eq!(distance_indicator([0.0, 0.0], [0.2, 0.0], 0.15), 0);
        // boundary is inclusive
        assert_eq!(distance_indicator([0.0, 0.0], [0.0, 0.5], 0.5), 1);
    }

    #[test]
    fn validation() {
        let ok = AdoptionRuleSet::new(vec![], vec![SecondOrderRule::doi(0, 1, 0.1, 0.15)]);
        ok.validate(2).unwrap();
        assert!(ok.validate(1).is_err());
        let self_loop = AdoptionRuleSet::new(vec![], vec![SecondOrderRule::doi(1, 1, 0.1, 0.15)]);
        assert!(self_loop.validate(2).is_err());
        let bad_radius = AdoptionRuleSet::new(vec![], vec![SecondOrderRule::doi(0, 1, 0.1, 0.0)]);
        assert!(bad_radius.validate(2).is_err());
        let negative = AdoptionRuleSet::new(
            vec![FirstOrderRule {
                from: 0,
                to: 1,
                rate: SpatialRate::constant(-1.0),
            }],
            vec![],
        );
        assert!(negative.validate(2).is_err());
    }

    #[test]
    fn rate_forms() {
        let affine = SpatialRate::Affine {
            coef: [1.0, 0.0],
            offset: 0.0,
        };
        assert_eq!(affine.eval([0.25, 9.0]), 0.25);
        assert_eq!(affine.eval([-0.25, 9.0]), 0.0);
        let ind = SpatialRate::Indicator {
            region: Region::half_plane_x(0.5, true),
            inside: 1.0,
            outside: 0.0,
        };
        assert_eq!(ind.eval([0.2, 0.2]), 1.0);
        assert_eq!(ind.eval([0.7, 0.2]), 0.0);
    }
}
