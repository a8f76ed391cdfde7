//! Stability certificates for exponential memory with constant damping,
//! inside and outside the closed-form region.

use neutral_spde_lab::certify::{certify, example_kappa_bound};
use neutral_spde_lab::charfn::NeutralSystem;
use neutral_spde_lab::kernels::DelayKernel;
use neutral_spde_lab::spectrum::AbscissaOptions;

fn main() -> neutral_spde_lab::Result<()> {
    let r = 1.0;
    for (kappa, alpha) in [(0.1, 0.2), (0.6, 0.3), (0.75, 0.3), (0.1, -2.0)] {
        let sys = NeutralSystem::new(
            DelayKernel::exponential(r, kappa, 0.0)?,
            DelayKernel::constant(r, alpha)?,
            0.0,
            0.0,
            vec![1.0; 4],
        )?;
        let cert = certify(&sys, true, &AbscissaOptions::default())?;
        println!(
            "kappa = {kappa:<5} alpha = {alpha:<5} bound {:?} -> {:?} (abscissa {:.4}, exit {})",
            example_kappa_bound(r, 0.0, alpha),
            cert.verdict,
            cert.numerical_abscissa.unwrap_or(f64::NAN),
            cert.verdict.exit_code()
        );
    }
    Ok(())
}
