//! Piecewise-constant inflow: the load is switched off at t = 50 and the
//! limit process drains back to empty queues.

use mfqnet::nlmp::{Nlmp, SolverConfig};
use mfqnet::spec_file::load_network;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = load_network(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/switching.toml"))?;
    let solver = Nlmp::new(&net, 8)?;
    let traj = solver.integrate(&solver.empty_state(), &SolverConfig::new(8, 0.01, 70.0).with_sampling(500, false))?;
    for s in &traj.samples {
        println!("t = {:>4.0}  busy = {:.3e}  L = {:.3e}  v = {:?}", s.t, s.lyapunov.alpha, s.lyapunov.l, s.flows.v);
    }
    Ok(())
}
