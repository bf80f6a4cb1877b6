//! Load a network file and print the constants derived from it.
//!
//! `cargo run --example validate_network -- [path/to/spec.toml]`

use std::path::PathBuf;

use mfqnet::nlmp::{geometric_bounds, stationary_internal_flow};
use mfqnet::spec_file::load_network;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/e1.toml"));
    let net = load_network(&path)?;
    println!("{} classes, spec hash {}", net.classes(), net.hash());
    println!("rho(P) = {}", net.spectral().radius);
    println!("expected remaining services h = {:?}", net.h());

    let flow = stationary_internal_flow(&net)?;
    println!("stationary internal inflow w* = {:?}", flow.w);
    println!("stationary total inflow  v* = {:?}", flow.v);

    let stated = geometric_bounds(net.lambda_plus(), net.gamma_minus(), net.classes())?;
    let eps = flow.v.iter().cloned().fold(0.0, f64::max);
    let effective = geometric_bounds(eps, net.gamma_minus(), net.classes())?;
    println!("kappa from external rates: {} (P(empty) >= {})", stated.kappa, stated.p0_lower);
    println!("kappa from total inflow:   {} (P(empty) >= {})", effective.kappa, effective.p0_lower);
    Ok(())
}
