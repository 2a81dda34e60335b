use crate::domain::{dist2, Point};

/// Uniform cell list over the bounding box of a point subset.
///
/// Agents are bucketed by counting sort into cells of side `cell_size`
/// (at least the query radius), so a radius query only inspects the 3x3
/// block of cells around the query point.
#[derive(Debug, Clone, Default)]
pub struct NeighborGrid {
    cell_size: f64,
    origin: Point,
    dims: [usize; 2],
    cell_start: Vec<u32>,
    entries: Vec<(u32, Point)>,
}

impl NeighborGrid {
    /// Cap on the number of cells relative to the number of points; far
    /// outliers coarsen the grid instead of allocating huge arrays.
    const MAX_CELLS_PER_POINT: usize = 4;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rebuilds the grid over `positions[idx]` for every `idx` in `members`.
    pub fn rebuild(&mut self, positions: &[Point], members: impl Iterator<Item = usize> + Clone, radius: f64) {
        assert!(radius > 0.0, "grid radius must be positive");
        self.entries.clear();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let mut count = 0usize;
        for idx in members.clone() {
            let p = positions[idx];
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
            count += 1;
        }
        if count == 0 {
            self.cell_size = radius;
            self.dims = [0, 0];
            self.cell_start.clear();
            return;
        }
        let max_cells = Self::MAX_CELLS_PER_POINT * count + 64;
        let mut cell = radius;
        let dims = loop {
            let nx = ((hi[0] - lo[0]) / cell).floor() as usize + 1;
            let ny = ((hi[1] - lo[1]) / cell).floor() as usize + 1;
            if nx.saturating_mul(ny) <= max_cells {
                break [nx, ny];
            }
            cell *= 2.0;
        };
        self.cell_size = cell;
        self.origin = lo;
        self.dims = dims;
        let n_cells = dims[0] * dims[1];
        self.cell_start.clear();
        self.cell_start.resize(n_cells + 1, 0);
        for idx in members.clone() {
            let c = self.cell_of(positions[idx]);
            self.cell_start[c + 1] += 1;
        }
        for c in 0..n_cells {
            self.cell_start[c + 1] += self.cell_start[c];
        }
        let mut fill: Vec<u32> = self.cell_start[..n_cells].to_vec();
        self.entries.resize(count, (0, [0.0, 0.0]));
        for idx in members {
            let p = positions[idx];
            let c = self.cell_of(p);
            self.entries[fill[c] as usize] = (idx as u32, p);
            fill[c] += 1;
        }
    }

    #[inline]
    fn coord(&self, p: Point) -> [usize; 2] {
        let cx = ((p[0] - self.origin[0]) / self.cell_size).floor() as usize;
        let cy = ((p[1] - self.origin[1]) / self.cell_size).floor() as usize;
        [cx.min(self.dims[0] - 1), cy.min(self.dims[1] - 1)]
    }

    #[inline]
    fn cell_of(&self, p: Point) -> usize {
        let [cx, cy] = self.coord(p);
        cy * self.dims[0] + cx
    }

    /// Calls `f(index)` for every stored point within distance `radius` of
    /// `x`, skipping `exclude`. `radius` must not exceed the build radius.
    #[inline]
    pub fn for_each_within(&self, x: Point, radius: f64, exclude: Option<usize>, mut f: impl FnMut(usize)) {
        if self.entries.is_empty() {
            return;
        }
        debug_assert!(radius <= self.cell_size * (1.0 + 1e-12));
        let r2 = radius * radius;
        // Cell range of the query disc, clamped to the grid.
        let fx = (x[0] - self.origin[0]) / self.cell_size;
        let fy = (x[1] - self.origin[1]) / self.cell_size;
        let span = radius / self.cell_size;
        let range = |f: f64, n: usize| -> Option<(usize, usize)> {
            let a = (f - span).floor();
            let b = (f + span).floor();
            if b < 0.0 || a > (n - 1) as f64 {
                return None;
            }
            Some((a.max(0.0) as usize, (b as usize).min(n - 1)))
        };
        let Some((x0, x1)) = range(fx, self.dims[0]) else { return };
        let Some((y0, y1)) = range(fy, self.dims[1]) else { return };
        let ex = exclude.map_or(u32::MAX, |e| e as u32);
        for cy in y0..=y1 {
            let row = cy * self.dims[0];
            let start = self.cell_start[row + x0] as usize;
            let end = self.cell_start[row + x1 + 1] as usize;
            for &(idx, p) in &self.entries[start..end] {
                if idx != ex && dist2(x, p) <= r2 {
                    f(idx as usize);
                }
            }
        }
    }

    pub fn count_within(&self, x: Point, radius: f64, exclude: Option<usize>) -> usize {
        let mut n = 0;
        self.for_each_within(x, radius, exclude, |_| n += 1);
        n
    }

    pub fn neighbors(&self, x: Point, radius: f64, exclude: Option<usize>) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(x, radius, exclude, |i| out.push(i));
        out.sort_unstable();
        out
    }
}
