//! Stationary covariance from the frequency-domain oracle, checked against
//! a Monte Carlo ensemble.

use neutral_spde_lab::charfn::NeutralSystem;
use neutral_spde_lab::kernels::DelayKernel;
use neutral_spde_lab::simulate::{init_history, InitialData, Scheme, SimConfig};
use neutral_spde_lab::stationary::{monte_carlo, oracle_covariance, OracleOptions};

fn main() -> neutral_spde_lab::Result<()> {
    let sys = NeutralSystem::new(
        DelayKernel::exponential(1.0, 0.1, 0.0)?,
        DelayKernel::constant(1.0, 0.2)?,
        0.0,
        0.0,
        vec![1.0; 3],
    )?;
    let oracle = oracle_covariance(&sys, &OracleOptions::new(1e-8))?;
    println!("oracle covariance (error bound {:.1e}):", oracle.error_bound);
    for row in &oracle.covariance {
        println!("  {row:.6?}");
    }

    let cfg = SimConfig::new(2e-3, 100.0)
        .with_scheme(Scheme::Trapezoidal)
        .with_replicas(32)
        .with_burn_in(30.0)
        .with_seed(5);
    let start = init_history(&sys, &InitialData::zero(), cfg.h)?;
    let mc = monte_carlo(&sys, &cfg, &start, Some(&oracle.variances))?;
    for m in &mc.modes {
        let cmp = m.oracle.expect("oracle supplied");
        println!(
            "mode {}: Monte Carlo {:.5} +- {:.5}, oracle {:.5}, z = {:.2}",
            m.k, m.variance.value, m.variance.stderr, oracle.variances[m.k - 1], cmp.z
        );
    }
    Ok(())
}
