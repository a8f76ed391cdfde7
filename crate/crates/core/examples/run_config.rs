//! Drives the command layer from a JSON config, as the binary does, and
//! shows the noise projection for a sampled `b(ξ)`.

use neutral_spde_lab::cli::{execute, project_noise, Command, RunConfig};

const CONFIG: &str = r#"{
  "system": {
    "form": "concrete",
    "r": 1.0,
    "gamma": {"kind": "exponential", "kappa": 0.2, "mu": -1.0},
    "beta": {"kind": "sum", "terms": [{"kind": "constant", "a": 0.05}, {"kind": "table", "values": [0.0, 0.1, 0.0]}]},
    "modes": 4,
    "noise_samples": [0.2, 0.6, 1.0, 0.6, 0.2]
  },
  "sim": {"h": 0.01, "T": 2.0, "seed": 1}
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("b_k = {:?}", project_noise(&[0.2, 0.6, 1.0, 0.6, 0.2], 4)?);
    let cfg = RunConfig::from_json(CONFIG)?;
    let out = std::env::temp_dir().join("neutral-spde-lab-example");
    for command in [Command::Certify, Command::Simulate] {
        let outcome = execute(command, &cfg, &out, Some(16))?;
        println!("{}: exit {}, wrote {:?}", command.name(), outcome.exit_code, outcome.files);
    }
    Ok(())
}
