//! Lyapunov diagnostics along a trajectory started far from equilibrium:
//! expected remaining services `L`, service rate `S` and the drift
//! `Σ λ_j h_j - S` that equals `dL/dt`.

use mfqnet::nlmp::{Nlmp, SolverConfig};
use mfqnet::spec_file::load_network;
use mfqnet::word::QueueWord;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = load_network(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/e1.toml"))?;
    let solver = Nlmp::new(&net, 8)?;
    let start = solver.point_state(&QueueWord::from_labels(&[1, 1], 2)?)?;
    let traj = solver.integrate(&start, &SolverConfig::new(8, 0.01, 10.0).with_sampling(50, false))?;
    println!("{:>5} {:>10} {:>10} {:>10} {:>10}", "t", "L", "S", "alpha", "drift");
    for s in &traj.samples {
        let l = &s.lyapunov;
        println!("{:>5.1} {:>10.6} {:>10.6} {:>10.6} {:>10.6}", s.t, l.l, l.s, l.alpha, l.drift);
    }
    let threshold = solver.alpha_threshold();
    match traj.alpha_settling_time(threshold) {
        Some(t) => println!("alpha first below {threshold} at t = {t}"),
        None => println!("alpha stayed above {threshold}"),
    }
    Ok(())
}
