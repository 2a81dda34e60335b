use super::grid::NeighborGrid;
use crate::domain::{AdoptionRuleSet, SystemState};

/// One possible adoption `from -> to` of `agent` and its current rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdoptionChannel {
    pub agent: usize,
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// Total adoption propensity and its per-(agent, rule) decomposition.
///
/// Entries are ordered by agent, then by rule (first-order rules before
/// second-order ones, each in declaration order); event selection scans in
/// this order.
#[derive(Debug, Clone, Default)]
pub struct AdoptionPropensities {
    pub total: f64,
    pub channels: Vec<AdoptionChannel>,
}

impl AdoptionPropensities {
    /// Channel whose cumulative-rate interval contains `target` in `[0, total)`.
    pub fn select(&self, target: f64) -> Option<&AdoptionChannel> {
        let mut acc = 0.0;
        for c in &self.channels {
            acc += c.rate;
            if target < acc {
                return Some(c);
            }
        }
        // Rounding may leave target marginally above the running sum.
        self.channels.last()
    }
}

/// Reusable evaluator holding one neighbour grid per contact status.
#[derive(Debug, Clone, Default)]
pub struct PropensityEngine {
    grids: Vec<NeighborGrid>,
    radius: Vec<f64>,
}

impl PropensityEngine {
    pub fn new(rules: &AdoptionRuleSet, n_status: usize) -> Self {
        let mut radius = vec![0.0f64; n_status];
        for r in &rules.second_order {
            radius[r.via] = radius[r.via].max(r.radius);
        }
        Self {
            grids: vec![NeighborGrid::new(); n_status],
            radius,
        }
    }

    /// Rebuilds the contact grids for the current positions and statuses.
    /// Skipped entirely when the rule set has no second-order rules.
    fn rebuild(&mut self, state: &SystemState, rules: &AdoptionRuleSet) {
        if rules.second_order.is_empty() {
            return;
        }
        for (via, grid) in self.grids.iter_mut().enumerate() {
            let r = self.radius[via];
            if r > 0.0 {
                let statuses = &state.statuses;
                grid.rebuild(&state.positions, (0..statuses.len()).filter(|&a| statuses[a] == via), r);
            }
        }
    }

    /// Total propensity only; cheaper than [`Self::evaluate`] when no event
    /// needs to be drawn.
    pub fn total(&mut self, state: &SystemState, rules: &AdoptionRuleSet) -> f64 {
        self.rebuild(state, rules);
        let mut total = 0.0;
        self.for_each_rate(state, rules, |_, _, _, rate| total += rate);
        total
    }

    pub fn evaluate(&mut self, state: &SystemState, rules: &AdoptionRuleSet, out: &mut AdoptionPropensities) {
        self.rebuild(state, rules);
        out.channels.clear();
        let mut total = 0.0;
        self.for_each_rate(state, rules, |agent, from, to, rate| {
            total += rate;
            out.channels.push(AdoptionChannel { agent, from, to, rate });
        });
        out.total = total;
    }

    fn for_each_rate(&self, state: &SystemState, rules: &AdoptionRuleSet, mut f: impl FnMut(usize, usize, usize, f64)) {
        for (alpha, (&s, &x)) in state.statuses.iter().zip(&state.positions).enumerate() {
            for r in &rules.first_order {
                if r.from == s {
                    let rate = r.rate.eval(x);
                    if rate > 0.0 {
                        f(alpha, r.from, r.to, rate);
                    }
                }
            }
            for r in &rules.second_order {
                if r.from == s && r.rate > 0.0 {
                    let n = self.grids[r.via].count_within(x, r.radius, Some(alpha));
                    if n > 0 {
                        f(alpha, r.from, r.to, r.rate * n as f64);
                    }
                }
            }
        }
    }
}

/// Total adoption propensity `sum_alpha sum_ij f_ij^(alpha)(X, S)` with its
/// decomposition into positive-rate channels.
pub fn total_adoption_propensity(state: &SystemState, rules: &AdoptionRuleSet, n_status: usize) -> AdoptionPropensities {
    let mut engine = PropensityEngine::new(rules, n_status);
    let mut out = AdoptionPropensities::default();
    engine.evaluate(state, rules, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{distance_indicator, FirstOrderRule, RngStream, SecondOrderRule, SpatialRate};
    use rand::Rng;

    /// O(n^2) double sum over ordered pairs.
    fn brute_force(state: &SystemState, rules: &AdoptionRuleSet) -> f64 {
        let n = state.n_agents();
        let mut total = 0.0;
        for a in 0..n {
            for r in &rules.first_order {
                if state.statuses[a] == r.from {
                    total += r.rate.eval(state.positions[a]);
                }
            }
            for r in &rules.second_order {
                if state.statuses[a] != r.from {
                    continue;
                }
                for b in 0..n {
                    if b != a && state.statuses[b] == r.via {
                        total += r.rate * f64::from(distance_indicator(state.positions[a], state.positions[b], r.radius));
                    }
                }
            }
        }
        total
    }

    #[test]
    fn no_source_gives_zero() {
        let rules = AdoptionRuleSet::new(vec![], vec![SecondOrderRule::doi(0, 1, 0.1, 0.15)]);
        let state = SystemState::new(vec![[0.0, 0.0], [0.05, 0.0]], vec![0, 0], 2).unwrap();
        let p = total_adoption_propensity(&state, &rules, 2);
        assert_eq!(p.total, 0.0);
        assert!(p.channels.is_empty());
    }

    #[test]
    fn pair_within_radius() {
        let rules = AdoptionRuleSet::new(vec![], vec![SecondOrderRule::doi(0, 1, 0.1, 0.15)]);
        let state = SystemState::new(vec![[0.0, 0.0], [0.1, 0.0]], vec![0, 1], 2).unwrap();
        let p = total_adoption_propensity(&state, &rules, 2);
        assert!((p.total - 0.1).abs() < 1e-15);
        assert_eq!(
            p.channels,
            vec![AdoptionChannel {
                agent: 0,
                from: 0,
                to: 1,
                rate: 0.1
            }]
        );
    }

    #[test]
    fn ten_agents_on_a_line() {
        let rules = AdoptionRuleSet::new(
            vec![FirstOrderRule {
                from: 1,
                to: 0,
                rate: SpatialRate::Affine {
                    coef: [0.5, 0.0],
                    offset: 0.1,
                },
            }],
            vec![SecondOrderRule::doi(0, 1, 0.1, 0.15), SecondOrderRule::doi(1, 0, 0.03, 0.25)],
        );
        let positions: Vec<_> = (0..10).map(|a| [0.07 * a as f64, 0.0]).collect();
        let statuses = vec![0, 1, 1, 0, 0, 1, 0, 1, 0, 0];
        let state = SystemState::new(positions, statuses, 2).unwrap();
        let p = total_adoption_propensity(&state, &rules, 2);
        let expected = brute_force(&state, &rules);
        assert!((p.total - expected).abs() < 1e-12, "{} vs {}", p.total, expected);
        let sum: f64 = p.channels.iter().map(|c| c.rate).sum();
        assert!((sum - p.total).abs() < 1e-12);
        assert!(p.channels.windows(2).all(|w| w[0].agent <= w[1].agent));
    }

    #[test]
    fn grid_matches_brute_force_on_random_configs() {
        let mut rng = RngStream::new(3, 0).rng();
        let rules = AdoptionRuleSet::new(vec![], vec![SecondOrderRule::doi(0, 1, 0.1, 0.15)]);
        let mut engine = PropensityEngine::new(&rules, 2);
        for _ in 0..100 {
            let n = rng.random_range(2..=200);
            let positions: Vec<_> = (0..n).map(|_| [rng.random_range(-1.5..1.5), rng.random_range(-0.5..0.5)]).collect();
            let statuses: Vec<_> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let state = SystemState::new(positions, statuses, 2).unwrap();
            let total = engine.total(&state, &rules);
            // Rates are integer multiples of 0.1: compare neighbour counts exactly.
            assert_eq!((total / 0.1).round(), (brute_force(&state, &rules) / 0.1).round());
        }
    }

    #[test]
    fn selection_is_ordered() {
        let p = AdoptionPropensities {
            total: 3.0,
            channels: vec![
                AdoptionChannel {
                    agent: 0,
                    from: 0,
                    to: 1,
                    rate: 1.0,
                },
                AdoptionChannel {
                    agent: 2,
                    from: 0,
                    to: 1,
                    rate: 2.0,
                },
            ],
        };
        assert_eq!(p.select(0.5).unwrap().agent, 0);
        assert_eq!(p.select(1.0).unwrap().agent, 2);
        assert_eq!(p.select(3.0).unwrap().agent, 2);
    }
}
