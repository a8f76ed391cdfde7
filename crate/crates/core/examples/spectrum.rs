//! Rightmost characteristic roots per mode and the spectral abscissa.

use neutral_spde_lab::charfn::NeutralSystem;
use neutral_spde_lab::kernels::DelayKernel;
use neutral_spde_lab::spectrum::{system_abscissa, AbscissaOptions};

fn main() -> neutral_spde_lab::Result<()> {
    let sys = NeutralSystem::new(
        DelayKernel::exponential(1.0, 0.1, 0.0)?,
        DelayKernel::constant(1.0, 0.2)?,
        0.0,
        0.0,
        vec![1.0; 3],
    )?;
    let report = system_abscissa(&sys, &AbscissaOptions::default())?;
    for mode in &report.modes {
        println!(
            "mode {}: {} roots in [{}, {}] x [-{}, {}], abscissa {:.6}",
            mode.k,
            mode.count,
            mode.search_box.re_min,
            mode.search_box.re_max,
            mode.search_box.im_max,
            mode.search_box.im_max,
            mode.abscissa
        );
        for root in mode.roots.iter().take(3) {
            println!("    {:+.6} {:+.6}i  residual {:.1e}", root.re, root.im, root.residual);
        }
    }
    println!("system abscissa {:.6}", report.system_abscissa);
    println!("{}", report.tail_note);
    Ok(())
}
