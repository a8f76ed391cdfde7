//! Simulates the Galerkin modes and writes the trajectory and the
//! reconstructed field as CSV into the directory given as first argument.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use neutral_spde_lab::charfn::NeutralSystem;
use neutral_spde_lab::kernels::DelayKernel;
use neutral_spde_lab::simulate::{init_history, reconstruct_field, run, InitialData, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let sys = NeutralSystem::from_concrete(
        DelayKernel::exponential(1.0, 0.2, -1.0)?,
        DelayKernel::constant(1.0, 0.1)?,
        vec![1.0, 0.5, 0.25, 0.125],
    )?;
    let cfg = SimConfig::new(1e-3, 5.0).with_seed(42).with_record_every(10);
    let start = init_history(&sys, &InitialData::constant(vec![1.0, 0.0, -0.5, 0.0]), cfg.h)?;
    let traj = run(&sys, &cfg, &start)?;
    traj.write_csv(BufWriter::new(File::create(out.join("modes.csv"))?))?;

    let xi: Vec<f64> = (1..=31).map(|i| i as f64 * std::f64::consts::PI / 32.0).collect();
    let mut field = BufWriter::new(File::create(out.join("field.csv"))?);
    for n in 0..traj.len() {
        let y = reconstruct_field(traj.y_row(n), &xi);
        let row: Vec<String> = y.iter().map(|v| v.to_string()).collect();
        writeln!(field, "{},{}", traj.times()[n], row.join(","))?;
    }
    let last = traj.y_row(traj.len() - 1);
    println!("{} rows, y(T) = {last:?}", traj.len());
    Ok(())
}
