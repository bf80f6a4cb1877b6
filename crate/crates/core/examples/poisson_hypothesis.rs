//! Arrivals at one copy look Poisson in the mean-field regime: test the
//! gaps between arrivals of each class against `Exp(v*_j)`.

use mfqnet::nlmp::stationary_internal_flow;
use mfqnet::sim::{interarrival_samples, ks_exponential, simulate, EnsembleState, EventFilter, SimConfig};
use mfqnet::spec_file::load_network;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = load_network(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/e1.toml"))?;
    let (warmup, t_end) = (100.0, 20_000.0);
    let cfg = SimConfig::new(t_end, 4).with_log(EventFilter::copy_window(0, warmup, t_end));
    let summary = simulate(&net, EnsembleState::empty(2000, 11), &cfg)?;
    let flow = stationary_internal_flow(&net)?;
    for (j, rate) in flow.v.iter().enumerate() {
        let gaps = interarrival_samples(&summary.log, 0, j, warmup, t_end)?;
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let ks = ks_exponential(&gaps, *rate)?;
        println!(
            "class {}: {} gaps, mean {mean:.2} (1/v* = {:.2}), D = {:.4}, p = {:.3}",
            j + 1,
            ks.n,
            1.0 / rate,
            ks.statistic,
            ks.p_value
        );
    }
    Ok(())
}
