//! Stationary measure of the limit process. For unit-rate FIFO service the
//! queue length is that of an M/M/1 queue with load `Σ v*`, which this
//! example checks word length by word length.

use mfqnet::nlmp::{Nlmp, SolverConfig};
use mfqnet::spec_file::load_network;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = load_network(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/e1.toml"))?;
    let solver = Nlmp::new(&net, 8)?;
    let st = solver.stationary_state(&SolverConfig::new(8, 0.01, 1000.0))?;
    println!("converged at t = {}, residual {:.1e}", st.measure.time(), st.residual);
    println!("w* = {:?}, realized w = {:?}", st.flows.w, st.realized_w);

    let load: f64 = st.flows.v.iter().sum();
    let mu = st.measure.conditional();
    let space = solver.space();
    println!("{:>3} {:>14} {:>14}", "len", "solver", "geometric");
    for k in 0..=4 {
        let p: f64 = space.layer(k).map(|i| mu.weights()[i]).sum();
        println!("{k:>3} {p:>14.10} {:>14.10}", (1.0 - load) * load.powi(k as i32));
    }
    Ok(())
}
