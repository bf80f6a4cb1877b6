//! Distance between the empirical measure of M copies and the mean-field
//! limit at t = 100, for growing M.

use mfqnet::nlmp::{tv_distance, Nlmp, SolverConfig};
use mfqnet::sim::{simulate, EnsembleState, SimConfig};
use mfqnet::spec_file::load_network;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = load_network(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/e1.toml"))?;
    let solver = Nlmp::new(&net, 8)?;
    let limit = solver.integrate(&solver.empty_state(), &SolverConfig::new(8, 0.01, 100.0))?.final_state;
    for copies in [10, 100, 1000, 4000] {
        let mut dists = Vec::new();
        for seed in 0..5 {
            let s = simulate(&net, EnsembleState::empty(copies, seed), &SimConfig::new(100.0, 8))?;
            dists.push(tv_distance(&s.samples.last().expect("final sample").measure, &limit)?);
        }
        let mean = dists.iter().sum::<f64>() / dists.len() as f64;
        println!("M = {copies:>5}: mean TV over 5 seeds = {mean:.4}");
    }
    Ok(())
}
