//! Integrate the mean-field limit from empty queues and watch the flows
//! settle at `λ + w*`.

use mfqnet::nlmp::{Nlmp, SolverConfig};
use mfqnet::spec_file::load_network;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = load_network(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/e1.toml"))?;
    let solver = Nlmp::new(&net, 8)?;
    let traj = solver.integrate(&solver.empty_state(), &SolverConfig::new(8, 0.01, 60.0).with_sampling(500, false))?;
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "t", "P(empty)", "v_1", "v_2", "leaked");
    for s in &traj.samples {
        println!(
            "{:>6.1} {:>12.8} {:>12.8} {:>12.8} {:>12.3e}",
            s.t,
            1.0 - s.lyapunov.alpha,
            s.flows.v[0],
            s.flows.v[1],
            s.leaked
        );
    }
    println!("largest |mass + leaked - 1| = {:.2e}", traj.max_ledger_defect());
    Ok(())
}
