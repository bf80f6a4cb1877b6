//! Exact-jump simulation of M interacting copies: occupancy over time and
//! the empirical queue distribution at the end.

use mfqnet::sim::{simulate, EnsembleState, SimConfig};
use mfqnet::spec_file::load_network;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = load_network(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/e1.toml"))?;
    let copies = 1000;
    let cfg = SimConfig::new(200.0, 3).with_samples(25.0);
    let summary = simulate(&net, EnsembleState::empty(copies, 7), &cfg)?;
    for s in &summary.samples {
        println!(
            "t = {:>5.1}  occupancy = {:.3}  arrivals = {:?}  services = {:?}",
            s.t, s.occupancy, s.flows.external, s.flows.served
        );
    }
    println!("{} events, time-averaged occupancy {:.4}", summary.events, summary.mean_occupancy);
    let last = &summary.samples.last().expect("final sample").measure;
    for (x, w) in last.support() {
        println!("  {:>4}: {w:.4}", x.encode(2));
    }
    println!("  >K  : {:.4}", last.leaked());
    Ok(())
}
