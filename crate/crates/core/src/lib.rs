//! Mean-field queueing networks at low load.
pub mod cli;
pub mod coupling;
pub mod generator;
pub mod network;
pub mod nlmp;
pub mod ode;
pub mod output;
pub mod sim;
pub mod spec_file;
pub mod word;
