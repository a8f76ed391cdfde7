//! Two-window stationarity test on one long path.

use neutral_spde_lab::charfn::NeutralSystem;
use neutral_spde_lab::kernels::DelayKernel;
use neutral_spde_lab::simulate::{init_history, run, InitialData, Scheme, SimConfig};
use neutral_spde_lab::spectrum::{system_abscissa, AbscissaOptions};
use neutral_spde_lab::stationary::{default_burn_in, empirical_report, oracle_covariance, OracleOptions};

fn main() -> neutral_spde_lab::Result<()> {
    let sys = NeutralSystem::new(
        DelayKernel::exponential(1.0, 0.1, 0.0)?,
        DelayKernel::constant(1.0, 0.2)?,
        0.0,
        0.0,
        vec![1.0, 1.0],
    )?;
    let abscissa = system_abscissa(&sys, &AbscissaOptions::default())?.system_abscissa;
    let burn_in = default_burn_in(abscissa).expect("stable system");
    let oracle = oracle_covariance(&sys, &OracleOptions::new(1e-8))?.variances;

    let cfg = SimConfig::new(2e-3, 300.0)
        .with_scheme(Scheme::Trapezoidal)
        .with_seed(3)
        .with_record_every(5);
    let start = init_history(&sys, &InitialData::constant(vec![2.0]), cfg.h)?;
    let traj = run(&sys, &cfg, &start)?;
    let report = empirical_report(&traj, burn_in, sys.horizon(), Some(&oracle))?;
    println!("burn-in {burn_in:.1}, windows of length {:.1}", report.window_length);
    for m in &report.modes {
        println!(
            "mode {}: variance {:.4} vs {:.4} (z {:.2}), pooled {:.4}, oracle {:.4}, {:?}",
            m.k,
            m.windows[0].variance.value,
            m.windows[1].variance.value,
            m.variance.z,
            m.pooled_variance.value,
            oracle[m.k - 1],
            m.verdict
        );
    }
    println!("verdict {:?}, oracle verdict {:?}", report.verdict, report.oracle_verdict);
    Ok(())
}
