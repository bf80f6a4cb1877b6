//! Split an initial measure into two components that share one inflow.
//! The weighted sum of the components follows the limit process started
//! from the mixture.

use mfqnet::nlmp::{Nlmp, SolverConfig};
use mfqnet::spec_file::load_network;
use mfqnet::word::QueueWord;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = load_network(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/e1.toml"))?;
    let solver = Nlmp::new(&net, 8)?;
    let rho = 0.1;
    let first = solver.point_state(&QueueWord::from_labels(&[1], 2)?)?;
    let second = solver.empty_state();
    let cfg = SolverConfig::new(8, 0.01, 50.0).with_sampling(1000, true);

    let split = solver.split_integrate(&first, &second, rho, &cfg)?;
    let direct = solver.integrate(&first.mix(rho, &second)?, &cfg)?;
    for (s, m) in split.samples.iter().zip(&direct.measures) {
        let defect = s.mixture(rho).sup_distance(m)?;
        println!(
            "t = {:>5.1}  P1(empty) = {:.6}  P2(empty) = {:.6}  defect = {defect:.1e}",
            s.t,
            s.first.weights()[0],
            s.second.weights()[0]
        );
    }
    Ok(())
}
