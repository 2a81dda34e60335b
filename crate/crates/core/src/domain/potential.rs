use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Aabb, Point};

/// Potential energy landscapes driving agent motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    /// `U(x1, x2) = (x1^2 - 1)^2 + transverse * x2^2`.
    DoubleWell {
        #[serde(default = "default_transverse")]
        transverse: f64,
    },
    /// `U = 0`; agents perform free Brownian motion.
    Flat,
}

fn default_transverse() -> f64 {
    7.0
}

impl Default for Potential {
    fn default() -> Self {
        Self::double_well()
    }
}

impl Potential {
    /// The two-well landscape `(x1^2 - 1)^2 + 7 x2^2`.
    pub fn double_well() -> Self {
        Self::DoubleWell { transverse: 7.0 }
    }

    #[inline]
    pub fn value(&self, x: Point) -> f64 {
        match *self {
            Self::DoubleWell { transverse } => {
                let a = x[0] * x[0] - 1.0;
                a * a + transverse * x[1] * x[1]
            }
            Self::Flat => 0.0,
        }
    }

    #[inline]
    pub fn gradient(&self, x: Point) -> Point {
        match *self {
            Self::DoubleWell { transverse } => [4.0 * x[0] * (x[0] * x[0] - 1.0), 2.0 * transverse * x[1]],
            Self::Flat => [0.0, 0.0],
        }
    }

    /// Smallest value of the potential over the plane.
    pub fn minimum(&self) -> f64 {
        0.0
    }

    /// Draws a point from the density proportional to `exp(-beta * U)`
    /// restricted to `bounds`, by uniform rejection sampling. An optional
    /// `accept` predicate conditions the draw further.
    pub fn sample_gibbs<R: Rng + ?Sized>(&self, beta: f64, bounds: &Aabb, accept: impl Fn(Point) -> bool, rng: &mut R) -> Point {
        let u_min = self.minimum();
        loop {
            let x = bounds.sample_uniform(rng);
            if !accept(x) {
                continue;
            }
            if rng.random::<f64>() < (-beta * (self.value(x) - u_min)).exp() {
                return x;
            }
        }
    }
}
