//! Step-size sensitivity of the double-well critical transition time.
//!
//! `cargo run --release -p popsim --example dt_sensitivity [replicas]`

use popsim::abm::{critical_transition_time_abm, simulate_abm};
use popsim::experiments::{mean_stderr, run_replicas};
use popsim::two_well::*;
use popsim::RngStream;

fn main() -> popsim::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(20_000, |s| s.parse().expect("replica count"));
    let sigma = SIGMAS[0];
    for dt in [ABM_DT, ABM_DT / 2.0] {
        let mut config = abm_config(sigma, N_AGENTS, 1, CONTACT_RATE, CRITICAL_HORIZON);
        config.dt = dt;
        let t = run_replicas(n, 42, |_, s| {
            Ok(critical_transition_time_abm(
                &simulate_abm(&config, &mut s.rng())?,
                &critical_watch(),
            ))
        })?;
        let t: Vec<f64> = t.into_iter().flatten().collect();
        let (mean, se) = mean_stderr(&t).expect("nonempty sample");
        println!("ABM  dt {dt:<7} mean {mean:.4} (se {se:.4}, n {})", t.len());
    }
    let lambda = calibrate(sigma, N_AGENTS, 2_000.0, RngStream::new(700, 0))?;
    let model = projected_model(&lambda, CONTACT_RATE, 1_000_000, RngStream::new(700, 1))?;
    let n0 = initial_population(N_AGENTS, 1);
    for dt in [ODE_DT, ODE_DT / 2.0] {
        let t = run_replicas(n, 43, |_, s| pdmm_critical_time(&model, &n0, CRITICAL_HORIZON, dt, s))?;
        let t: Vec<f64> = t.into_iter().flatten().collect();
        let (mean, se) = mean_stderr(&t).expect("nonempty sample");
        println!("PDMM dt {dt:<7} mean {mean:.4} (se {se:.4}, n {})", t.len());
    }
    Ok(())
}
