mod common;

use common::*;
use popsim::abm::{simulate_abm, total_adoption_propensity, AbmConfig, InitialCondition};
use popsim::domain::{ln_multinomial_weight, SpatialRate};
use popsim::experiments::{ks_one_sample, ks_p_value, mean_stderr, run_replicas};
use popsim::pdmm::{simulate_pdmm, PdmmConfig};
use popsim::smm::{channels_from_model, simulate_ssa, ChannelKind, JumpChannel, RateLaw};
use popsim::{
    Aabb, AdoptionRuleSet, FirstOrderRule, PartitionKind, PopulationState, Potential, Region, RngStream, SpatialPartition, SystemState,
};

#[test]
fn tiny_generator_rows_vanish() {
    let g = Generator::build(&TinyModel::reference(), 4);
    assert_eq!(g.states.len(), 35);
    assert!(g.row_sums().iter().all(|&s| s == 0.0));
}

#[test]
fn ssa_marginals_match_master_equation() {
    let tiny = TinyModel::reference();
    let g = Generator::build(&tiny, 4);
    let channels = channels_from_model(&tiny.to_projected());
    let n0 = PopulationState::from_rows(&[vec![2, 1], vec![1, 0]]).unwrap();
    let times = [0.5, 1.0, 2.0];
    let samples = run_replicas(100_000, 11, |_, s| {
        let traj = simulate_ssa(&channels, &n0, 2.0, &mut s.rng())?;
        Ok(traj.sample_on(&times))
    })
    .unwrap();
    for (ti, &t) in times.iter().enumerate() {
        let mut freq = vec![0.0; g.states.len()];
        for run in &samples {
            freq[g.index[&flatten(&run[ti])]] += 1.0 / samples.len() as f64;
        }
        let exact = g.marginal(&flatten(&n0), t);
        let tv = total_variation(&freq, &exact);
        assert!(tv <= 0.02, "t = {t}: total variation {tv}");
    }
}

#[test]
fn multinomial_ratio_on_uneven_partition() {
    let partition = SpatialPartition::new(
        PartitionKind::FullPartition,
        vec![Region::half_plane_x(0.3, true), Region::half_plane_x(0.3, false)],
        Aabb::new([0.0, 0.0], [1.0, 1.0]).unwrap(),
    )
    .unwrap();
    let n = PopulationState::from_rows(&[vec![3.0, 5.0], vec![2.0, 0.0], vec![1.0, 4.0]]).unwrap();
    let mut moved = n.clone();
    moved.set(0, 1, 4.0);
    moved.set(2, 1, 5.0);
    let ratio = (ln_multinomial_weight(&moved, &partition, 3).unwrap() - ln_multinomial_weight(&n, &partition, 3).unwrap()).exp();
    assert!((ratio - swap_ratio(&n, 0, 2, 1)).abs() < 1e-12);
}

#[test]
fn grid_propensities_equal_pair_scan() {
    let mut rng = RngStream::new(5, 0).rng();
    for _ in 0..100 {
        let (state, rules, n_status) = random_abm_state(&mut rng, 200);
        let fast = total_adoption_propensity(&state, &rules, n_status);
        assert_eq!(fast.channels, brute_force_channels(&state, &rules));
    }
}

#[test]
fn smm_constant_channel_waiting_times_are_exponential() {
    let ch = vec![JumpChannel::new(
        ChannelKind::Adoption { from: 0, to: 1, subpop: 0 },
        RateLaw::Constant(2.0),
    )];
    let n0 = PopulationState::from_rows(&[vec![20_000u32], vec![0]]).unwrap();
    let traj = simulate_ssa(&ch, &n0, 8_000.0, &mut RngStream::new(1, 0).rng()).unwrap();
    let gaps: Vec<f64> = std::iter::once(traj.events[0].time)
        .chain(traj.events.windows(2).map(|w| w[1].time - w[0].time))
        .take(10_000)
        .collect();
    assert_eq!(gaps.len(), 10_000);
    let d = ks_one_sample(&gaps, exp_cdf(2.0)).unwrap();
    assert!(ks_p_value(d, gaps.len()) > 0.01, "D = {d}");
}

#[test]
fn smm_pure_death_conversion_mean() {
    let rate = 0.4;
    let mut model = TinyModel::reference();
    model.lambda = vec![vec![vec![0.0; 1]; 1]; 2];
    model.m = 1;
    model.gamma1 = vec![vec![vec![0.0], vec![rate]], vec![vec![0.0], vec![0.0]]];
    model.contact.clear();
    model.b = vec![vec![1.0]];
    let channels = channels_from_model(&model.to_projected());
    let n0 = PopulationState::from_rows(&[vec![100u32], vec![0]]).unwrap();
    let times = run_replicas(1_000, 2, |_, s| {
        Ok(simulate_ssa(&channels, &n0, 1e6, &mut s.rng())?
            .events
            .iter()
            .map(|e| e.time)
            .collect::<Vec<_>>())
    })
    .unwrap();
    // Mean of all 100 conversion times is 1/rate for every agent.
    let per_run: Vec<f64> = times.iter().map(|t| t.iter().sum::<f64>() / t.len() as f64).collect();
    let (mean, se) = mean_stderr(&per_run).unwrap();
    assert!((mean - 1.0 / rate).abs() <= 3.0 * se, "mean {mean} se {se}");
}

#[test]
fn abm_uniform_first_order_conversion() {
    let rate = 0.5;
    let rules = AdoptionRuleSet::new(
        vec![FirstOrderRule {
            from: 0,
            to: 1,
            rate: SpatialRate::constant(rate),
        }],
        vec![],
    );
    let config = AbmConfig {
        n_status: 2,
        sigma: 0.8,
        dt: 0.01,
        t_end: 200.0,
        potential: Potential::double_well(),
        rules,
        initial: InitialCondition::Explicit {
            state: SystemState::new(vec![[-1.0, 0.0]], vec![0], 2).unwrap(),
        },
        milestones: None,
        snapshot_every: None,
        stop_on: None,
    };
    let times: Vec<f64> = run_replicas(500, 3, |_, s| Ok(simulate_abm(&config, &mut s.rng())?.events[0].time)).unwrap();
    let (mean, se) = mean_stderr(&times).unwrap();
    assert!((mean - 1.0 / rate).abs() <= 3.0 * se, "mean {mean} se {se}");
    let d = ks_one_sample(&times, exp_cdf(rate)).unwrap();
    assert!(ks_p_value(d, times.len()) > 0.01);
}

#[test]
fn pdmm_constant_intensity_inter_jump_times() {
    // Two agents bouncing between two subpopulations at rate 0.025 each:
    // total intensity stays 0.05 whatever the configuration.
    let mut model = popsim::projection::ProjectedModel::empty(popsim::StatusSpace::numbered(1).unwrap(), 2);
    model.lambda = vec![vec![vec![0.0, 0.025], vec![0.025, 0.0]]];
    let n0 = PopulationState::from_rows(&[vec![1.0, 1.0]]).unwrap();
    let mut config = PdmmConfig::from_model(&model, n0, 300_000.0, 0.5);
    config.record_every = None;
    let traj = simulate_pdmm(&config, &mut [], &mut RngStream::new(9, 0).rng()).unwrap();
    assert!(traj.jumps.len() > 10_000);
    let gaps: Vec<f64> = std::iter::once(traj.jumps[0].time)
        .chain(traj.jumps.windows(2).map(|w| w[1].time - w[0].time))
        .collect();
    let (mean, se) = mean_stderr(&gaps).unwrap();
    assert!((mean - 20.0).abs() <= 3.0 * se, "mean {mean}");
    let d = ks_one_sample(&gaps, exp_cdf(0.05)).unwrap();
    assert!(ks_p_value(d, gaps.len()) > 0.01, "D = {d}");
}
