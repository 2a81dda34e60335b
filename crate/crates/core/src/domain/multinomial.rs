use statrs::function::factorial::ln_factorial;

use super::{PopulationState, SpatialPartition};
use crate::error::{Error, Result};

/// Natural log of `<Phi_N, Phi_N>`, the probability that `n_a` agents with
/// independent uniform positions in the sampling box and uniform statuses
/// realise the population matrix `N`.
///
/// Each agent lands in cell `(i, k)` with probability
/// `vol(A_k) / (n_s * vol(box))`, so the weight is the multinomial
/// `n_a! / prod N! * prod p^N`.
pub fn ln_multinomial_weight(counts: &PopulationState<f64>, partition: &SpatialPartition, n_status: usize) -> Result<f64> {
    if counts.n_status() != n_status || counts.n_subpop() != partition.len() {
        return Err(Error::InvalidState(format!(
            "count matrix is {}x{}, expected {}x{}",
            counts.n_status(),
            counts.n_subpop(),
            n_status,
            partition.len()
        )));
    }
    let box_volume = partition.sampling_box().area();
    let mut total = 0u64;
    let mut ln_w = 0.0;
    for i in 0..n_status {
        for k in 0..partition.len() {
            let c = counts.get(i, k);
            if !(c >= 0.0) || c.fract() != 0.0 {
                return Err(Error::InvalidState(format!("entry ({i}, {k}) = {c} is not a nonnegative integer")));
            }
            let n = c as u64;
            total += n;
            let p = partition.volume(k) / (n_status as f64 * box_volume);
            if n > 0 {
                ln_w += n as f64 * p.ln() - ln_factorial(n);
            }
        }
    }
    Ok(ln_w + ln_factorial(total))
}

/// `<Phi_N, Phi_N>`; see [`ln_multinomial_weight`].
pub fn multinomial_weight(counts: &PopulationState<f64>, partition: &SpatialPartition, n_status: usize) -> Result<f64> {
    ln_multinomial_weight(counts, partition, n_status).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Aabb, PartitionKind, Region};

    fn halves() -> SpatialPartition {
        SpatialPartition::new(
            PartitionKind::FullPartition,
            vec![Region::half_plane_x(0.5, true), Region::half_plane_x(0.5, false)],
            Aabb::new([0.0, 0.0], [1.0, 1.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_cell_single_agent() {
        let p = SpatialPartition::new(
            PartitionKind::FullPartition,
            vec![Region::rect(Default::default(), Default::default())],
            Aabb::new([0.0, 0.0], [2.0, 3.0]).unwrap(),
        )
        .unwrap();
        let n = PopulationState::from_rows(&[vec![1.0]]).unwrap();
        assert!((multinomial_weight(&n, &p, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn four_agents_two_halves_by_enumeration() {
        // Enumerate all 2^4 assignments of 4 agents to two equal halves.
        let hits = (0u32..16).filter(|mask| mask.count_ones() == 2).count();
        let expected = hits as f64 / 16.0;
        let n = PopulationState::from_rows(&[vec![2.0, 2.0]]).unwrap();
        let w = multinomial_weight(&n, &halves(), 1).unwrap();
        assert!((w - expected).abs() < 1e-12);
        assert!((w - 0.375).abs() < 1e-12);
    }

    #[test]
    fn rejects_fractional_and_negative() {
        let frac = PopulationState::from_rows(&[vec![1.5, 2.0]]).unwrap();
        assert!(multinomial_weight(&frac, &halves(), 1).is_err());
        let neg = PopulationState::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        assert!(multinomial_weight(&neg, &halves(), 1).is_err());
    }

    #[test]
    fn large_population_stays_finite() {
        let n = PopulationState::from_rows(&[vec![50_000.0, 50_000.0]]).unwrap();
        let ln_w = ln_multinomial_weight(&n, &halves(), 1).unwrap();
        assert!(ln_w.is_finite() && ln_w < 0.0);
    }
}
