//! Builds each kind of delay kernel and prints its norms and Laplace transform.

use neutral_spde_lab::kernels::DelayKernel;
use num_complex::Complex64;

fn main() -> neutral_spde_lab::Result<()> {
    let r = 1.0;
    let kernels = [
        ("zero", DelayKernel::zero(r)?),
        ("constant 0.2", DelayKernel::constant(r, 0.2)?),
        ("exponential 0.1 e^{-θ}", DelayKernel::exponential(r, 0.1, -1.0)?),
        ("table", DelayKernel::table(r, vec![0.0, 0.1, 0.3, 0.1])?),
        (
            "sum",
            DelayKernel::sum(DelayKernel::constant(r, -0.1)?, DelayKernel::exponential(r, 0.3, 2.0)?)?,
        ),
    ];
    let lambda = Complex64::new(-0.5, 2.0);
    println!("{:<24} {:>10} {:>10} {:>24}", "kernel", "L1", "L2", "L(-0.5+2i)");
    for (name, k) in &kernels {
        let l = k.laplace(lambda);
        println!(
            "{name:<24} {:>10.6} {:>10.6} {:>11.6}{:+.6}i",
            k.l1_norm(),
            k.l2_norm(),
            l.re,
            l.im
        );
    }
    Ok(())
}
