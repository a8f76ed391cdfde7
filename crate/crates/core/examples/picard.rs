//! Independent checks of the time stepper: a windowed Picard solution,
//! restarts from the lifted state, and the resolvent of the generator.

use neutral_spde_lab::charfn::NeutralSystem;
use neutral_spde_lab::kernels::DelayKernel;
use neutral_spde_lab::picard::{fitted_order, resolvent_check, stepper_agreement, window_size};
use neutral_spde_lab::simulate::{init_history, restart_check, InitialData, Scheme, SimConfig};
use num_complex::Complex64;

fn main() -> neutral_spde_lab::Result<()> {
    let sys = NeutralSystem::new(
        DelayKernel::exponential(1.0, 0.1, 0.0)?,
        DelayKernel::constant(1.0, 0.2)?,
        0.0,
        0.0,
        vec![0.5, 0.5],
    )?;
    let init = InitialData::constant(vec![1.0]);
    for k in 1..=2 {
        println!("mode {k}: Picard window t0 = {:.4}", window_size(&sys, k));
    }
    for h in [2e-3, 1e-3, 5e-4] {
        let a = stepper_agreement(&sys, &init, 3.0, h, Scheme::SemiImplicit, 1e-13)?;
        let errs: Vec<String> = a.relative_error.iter().map(|e| format!("{e:.3e}")).collect();
        println!("h = {h:e}: relative errors {}", errs.join(", "));
    }

    let cfg = SimConfig::new(1e-2, 0.0).with_seed(1);
    let start = init_history(&sys, &init, cfg.h)?;
    println!("restart gap {:.1e}", restart_check(&sys, &cfg, &start, 1.37, 2.5)?);

    let grids = [128, 256, 512, 1024];
    let lambda = Complex64::new(0.5, 1.0);
    let residuals = grids
        .iter()
        .map(|&n| {
            let psi1: Vec<Complex64> = (0..=n)
                .map(|i| Complex64::new((-1.0 + i as f64 / n as f64).cos(), 0.0))
                .collect();
            resolvent_check(&sys, 1, lambda, Complex64::new(1.0, 0.0), &psi1).map(|r| r.residual)
        })
        .collect::<neutral_spde_lab::Result<Vec<_>>>()?;
    let shown: Vec<String> = residuals.iter().map(|r| format!("{r:.2e}")).collect();
    println!("resolvent residuals {}, order {:.3}", shown.join(", "), fitted_order(&grids, &residuals));
    Ok(())
}
