use serde::{Deserialize, Serialize};

use super::Point;
use crate::error::{Error, Result};

/// Microscale state of the agent-based model: one position and one status
/// per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub positions: Vec<Point>,
    pub statuses: Vec<usize>,
    pub time: f64,
}

impl SystemState {
    pub fn new(positions: Vec<Point>, statuses: Vec<usize>, n_status: usize) -> Result<Self> {
        if positions.len() != statuses.len() {
            return Err(Error::InvalidState(format!(
                "{} positions but {} statuses",
                positions.len(),
                statuses.len()
            )));
        }
        if let Some(&s) = statuses.iter().find(|&&s| s >= n_status) {
            return Err(Error::InvalidState(format!(
                "status index {s} out of range for {n_status} statuses"
            )));
        }
        Ok(Self {
            positions,
            statuses,
            time: 0.0,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.positions.len()
    }

    pub fn status_counts(&self, n_status: usize) -> Vec<usize> {
        let mut counts = vec![0; n_status];
        for &s in &self.statuses {
            counts[s] += 1;
        }
        counts
    }
}

/// `n_status x n_subpop` matrix of population counts `N_i^(k)`.
///
/// Stored row-major by status. Integer instantiations are used by the
/// stochastic metapopulation model, `f64` by the piecewise-deterministic one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState<T = f64> {
    n_status: usize,
    n_subpop: usize,
    counts: Vec<T>,
    pub time: f64,
}

impl<T: Copy + Default> PopulationState<T> {
    pub fn zeros(n_status: usize, n_subpop: usize) -> Self {
        Self {
            n_status,
            n_subpop,
            counts: vec![T::default(); n_status * n_subpop],
            time: 0.0,
        }
    }

    /// Builds a state from `rows[status][subpop]`.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n_status = rows.len();
        let n_subpop = rows.first().map_or(0, Vec::len);
        if n_status == 0 || n_subpop == 0 || rows.iter().any(|r| r.len() != n_subpop) {
            return Err(Error::InvalidState("ragged or empty count matrix".into()));
        }
        Ok(Self {
            n_status,
            n_subpop,
            counts: rows.concat(),
            time: 0.0,
        })
    }

    #[inline]
    pub fn n_status(&self) -> usize {
        self.n_status
    }

    #[inline]
    pub fn n_subpop(&self) -> usize {
        self.n_subpop
    }

    #[inline]
    pub fn index(&self, status: usize, subpop: usize) -> usize {
        status * self.n_subpop + subpop
    }

    #[inline]
    pub fn get(&self, status: usize, subpop: usize) -> T {
        self.counts[status * self.n_subpop + subpop]
    }

    #[inline]
    pub fn set(&mut self, status: usize, subpop: usize, value: T) {
        let idx = self.index(status, subpop);
        self.counts[idx] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.counts
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.counts
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.counts.chunks(self.n_subpop).map(<[T]>::to_vec).collect()
    }
}

impl<T: Copy + Default + Into<f64>> PopulationState<T> {
    pub fn total(&self) -> f64 {
        self.counts.iter().map(|&c| c.into()).sum()
    }

    pub fn subpop_total(&self, subpop: usize) -> f64 {
        (0..self.n_status).map(|i| self.get(i, subpop).into()).sum()
    }

    pub fn to_real(&self) -> PopulationState<f64> {
        PopulationState {
            n_status: self.n_status,
            n_subpop: self.n_subpop,
            counts: self.counts.iter().map(|&c| c.into()).collect(),
            time: self.time,
        }
    }
}

impl PopulationState<f64> {
    /// Validates nonnegativity of a real-valued state.
    pub fn check_nonnegative(&self) -> Result<()> {
        for (idx, &c) in self.counts.iter().enumerate() {
            if !(c >= 0.0) {
                return Err(Error::InvalidState(format!(
                    "entry ({}, {}) = {c} is negative or NaN",
                    idx / self.n_subpop,
                    idx % self.n_subpop
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn system_state_validation() {
        assert!(SystemState::new(vec![[0.0, 0.0]], vec![0, 1], 2).is_err());
        assert!(SystemState::new(vec![[0.0, 0.0]], vec![2], 2).is_err());
        let s = SystemState::new(vec![[0.0, 0.0]; 3], vec![0, 1, 1], 2).unwrap();
        assert_eq!(s.status_counts(2), vec![1, 2]);
    }

    #[test]
    fn population_layout() {
        let n = PopulationState::<u32>::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(n.get(1, 0), 3);
        assert_eq!(n.total(), 10.0);
        assert_eq!(n.subpop_total(1), 6.0);
        assert_eq!(n.rows(), vec![vec![1, 2], vec![3, 4]]);
        assert!(PopulationState::<u32>::from_rows(&[vec![1, 2], vec![3]]).is_err());
    }
}
