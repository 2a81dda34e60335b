use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Point;
use crate::error::{Error, Result};

/// Axis-aligned bounded box `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub lo: Point,
    pub hi: Point,
}

impl Aabb {
    pub fn new(lo: Point, hi: Point) -> Result<Self> {
        if !(lo[0] < hi[0] && lo[1] < hi[1]) || lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("degenerate box {lo:?}..{hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }

    pub fn contains(&self, x: Point) -> bool {
        (self.lo[0]..=self.hi[0]).contains(&x[0]) && (self.lo[1]..=self.hi[1]).contains(&x[1])
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        [
            self.lo[0] + (self.hi[0] - self.lo[0]) * rng.random::<f64>(),
            self.lo[1] + (self.hi[1] - self.lo[1]) * rng.random::<f64>(),
        ]
    }
}

/// Half-open interval `(lo, hi]`; a missing bound is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

impl Interval {
    pub const ALL: Self = Self { lo: None, hi: None };

    pub fn new(lo: Option<f64>, hi: Option<f64>) -> Self {
        Self { lo, hi }
    }

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        self.lo.is_none_or(|lo| v > lo) && self.hi.is_none_or(|hi| v <= hi)
    }

    /// Intersection with `[a, b]`, or `None` if it has zero length.
    fn clip(&self, a: f64, b: f64) -> Option<(f64, f64)> {
        let lo = self.lo.map_or(a, |lo| lo.max(a));
        let hi = self.hi.map_or(b, |hi| hi.min(b));
        (lo < hi).then_some((lo, hi))
    }
}

/// A set of the movement space. Rectangles are products of half-open
/// intervals, so a partition such as `(-inf, 0] x R` and `(0, inf) x R`
/// is exactly disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Rect { x: Interval, y: Interval },
}

impl Region {
    pub fn rect(x: Interval, y: Interval) -> Self {
        Self::Rect { x, y }
    }

    /// `{ x1 <= at }` (when `left`) or `{ x1 > at }`.
    pub fn half_plane_x(at: f64, left: bool) -> Self {
        let x = if left {
            Interval::new(None, Some(at))
        } else {
            Interval::new(Some(at), None)
        };
        Self::rect(x, Interval::ALL)
    }

    #[inline]
    pub fn contains(&self, p: Point) -> bool {
        match self {
            Self::Rect { x, y } => x.contains(p[0]) && y.contains(p[1]),
        }
    }

    /// Bounding box of the region clipped to `bounds`, `None` if empty.
    pub fn clip(&self, bounds: &Aabb) -> Option<Aabb> {
        match self {
            Self::Rect { x, y } => {
                let (x0, x1) = x.clip(bounds.lo[0], bounds.hi[0])?;
                let (y0, y1) = y.clip(bounds.lo[1], bounds.hi[1])?;
                Some(Aabb {
                    lo: [x0, y0],
                    hi: [x1, y1],
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Disjoint sets covering the sampling box.
    FullPartition,
    /// Disjoint core sets leaving a nonempty transition region.
    CoreSets,
}

/// Metastable decomposition of the movement space into `m` sets.
///
/// All volumes and Monte Carlo integrals are taken over `sampling_box`,
/// which stands in for unbounded domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionSpec", into = "PartitionSpec")]
pub struct SpatialPartition {
    kind: PartitionKind,
    sets: Vec<Region>,
    sampling_box: Aabb,
    clipped: Vec<Aabb>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub sets: Vec<Region>,
    pub sampling_box: Aabb,
}

impl TryFrom<PartitionSpec> for SpatialPartition {
    type Error = Error;

    fn try_from(spec: PartitionSpec) -> Result<Self> {
        Self::new(spec.kind, spec.sets, spec.sampling_box)
    }
}

impl From<SpatialPartition> for PartitionSpec {
    fn from(p: SpatialPartition) -> Self {
        Self {
            kind: p.kind,
            sets: p.sets,
            sampling_box: p.sampling_box,
        }
    }
}

impl SpatialPartition {
    pub fn new(kind: PartitionKind, sets: Vec<Region>, sampling_box: Aabb) -> Result<Self> {
        let sampling_box = Aabb::new(sampling_box.lo, sampling_box.hi)?;
        if sets.is_empty() {
            return Err(Error::Config("partition needs at least one set".into()));
        }
        let mut clipped = Vec::with_capacity(sets.len());
        for (k, s) in sets.iter().enumerate() {
            clipped.push(s.clip(&sampling_box).ok_or(Error::EmptySet { set: k })?);
        }
        for a in 0..clipped.len() {
            for b in 0..a {
                if overlap_area(&clipped[a], &clipped[b]) > 0.0 {
                    return Err(Error::Config(format!("sets {b} and {a} overlap")));
                }
            }
        }
        let covered: f64 = clipped.iter().map(Aabb::area).sum();
        let box_area = sampling_box.area();
        let covers = (covered - box_area).abs() <= 1e-9 * box_area;
        match kind {
            PartitionKind::FullPartition if !covers => {
                return Err(Error::Config(format!("full partition covers {covered} of box area {box_area}")))
            }
            PartitionKind::CoreSets if covers => {
                return Err(Error::Config("core sets leave no transition region in the sampling box".into()))
            }
            _ => {}
        }
        Ok(Self {
            kind,
            sets,
            sampling_box,
            clipped,
        })
    }

    pub fn kind(&self) -> PartitionKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn sets(&self) -> &[Region] {
        &self.sets
    }

    pub fn sampling_box(&self) -> &Aabb {
        &self.sampling_box
    }

    #[inline]
    pub fn member(&self, x: Point, k: usize) -> bool {
        self.sets[k].contains(x)
    }

    /// Index of the set containing `x`, if any.
    #[inline]
    pub fn locate(&self, x: Point) -> Option<usize> {
        self.sets.iter().position(|s| s.contains(x))
    }

    /// Lebesgue measure of set `k` inside the sampling box.
    pub fn volume(&self, k: usize) -> f64 {
        self.clipped[k].area()
    }

    /// Uniform point in set `k` restricted to the sampling box, drawn by
    /// rejection from the clipped bounding box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Point {
        loop {
            let x = self.clipped[k].sample_uniform(rng);
            if self.member(x, k) {
                return x;
            }
        }
    }
}

fn overlap_area(a: &Aabb, b: &Aabb) -> f64 {
    let w = a.hi[0].min(b.hi[0]) - a.lo[0].max(b.lo[0]);
    let h = a.hi[1].min(b.hi[1]) - a.lo[1].max(b.lo[1]);
    if w > 0.0 && h > 0.0 {
        w * h
    } else {
        0.0
    }
}
