//! White/red coupling of two limit processes started from different
//! measures. `r_t` bounds the total-variation distance of the marginals.

use mfqnet::coupling::{CoupledNlmp, CoupledState, InitialCoupling};
use mfqnet::nlmp::SolverConfig;
use mfqnet::spec_file::load_network;
use mfqnet::word::QueueWord;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = load_network(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/e1.toml"))?;
    let k = 5;
    let coupled = CoupledNlmp::new(&net, k)?;
    let space = coupled.space().clone();
    let busy = mfqnet::nlmp::MeasureState::point(space.clone(), &QueueWord::from_labels(&[1], 2)?)?;
    let idle = mfqnet::nlmp::MeasureState::empty_queue(space);
    let state = CoupledState::couple(&busy, &idle, InitialCoupling::Greedy)?;
    let traj = coupled.integrate(&state, &SolverConfig::new(k, 0.01, 40.0).with_sampling(200, false))?;
    println!("{:>5} {:>10} {:>11} {:>11} {:>11} {:>11}", "t", "white", "r_t", "red pairs", "TV", "red L");
    for s in &traj.samples {
        println!(
            "{:>5.1} {:>10.6} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e}",
            s.t, s.w_mass, s.r_mass, s.red_pair_mass, s.tv_actual, s.red_l
        );
    }
    println!("largest ledger defect {:.1e}", traj.max_ledger_defect());
    Ok(())
}
