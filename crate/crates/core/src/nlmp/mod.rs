//! Deterministic limit of the mean-field network: the non-linear Markov
//! process on queue words, integrated on the truncated space `X_K`.
//!
//! The state is a probability measure `μ_t` on words. Arrivals of class `j`
//! happen at the *measure-dependent* rate `v_j = λ_j + Σ_i p_{ij} u_i(μ_t)`,
//! which makes the master equation quadratic in `μ_t`. Arrivals that would
//! push a word beyond length `K` are absorbed into `leaked`, so the mass
//! ledger `Σ μ_t + leaked = 1` is exact and the truncation error is visible.

mod engine;
mod integrate;
mod lyapunov;
mod measure;
mod stationary;

use thiserror::Error;

use crate::network::{NetworkError, ValidatedNetwork};
use crate::word::WordError;

pub use engine::{FlowRates, MeasureDerivative, Nlmp};
pub use integrate::{SplitSample, SplitTrajectory, Trajectory, TrajectorySample};
pub use lyapunov::{geometric_bounds, GeometricBounds, LyapunovReport};
pub use measure::{tv_distance, MeasureState};
pub use stationary::{stationary_internal_flow, StationaryFlow, StationaryState};

/// Weights below this are a numerical failure, not round-off.
pub const NEGATIVE_WEIGHT_FATAL: f64 = -1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("weight of word {word} fell to {value} at t={time}; reduce the step size")]
    StepSizeUnstable { time: f64, word: String, value: f64 },
    #[error("step size {dt} violates the stability guard: dt * rate bound = {product} > 0.1")]
    StabilityGuard { dt: f64, product: f64 },
    #[error("inflow breakpoint t={0} is not a multiple of the step size")]
    ScheduleMisaligned(f64),
    #[error("no stationary state within horizon {horizon}; last residual {residual:e}")]
    NoConvergenceWithinHorizon { horizon: f64, residual: f64 },
    #[error("stationary computations need a constant external inflow")]
    NonConstantInflow,
    #[error("realized internal inflow {realized:?} differs from the fixed point {expected:?}")]
    FlowMismatch { realized: Vec<f64>, expected: Vec<f64> },
    #[error("kappa = {kappa} is not below 1")]
    KappaNotSubcritical { kappa: f64 },
    #[error("measures live on different truncations (K={left} vs K={right})")]
    TruncationMismatch { left: usize, right: usize },
    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Word(#[from] WordError),
}

/// Fixed-step RK4 settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Truncation depth `K`.
    pub max_len: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Record a sample every this many steps (the final step is always
    /// recorded).
    pub sample_every: usize,
    /// Keep a copy of the measure at every sample.
    pub keep_measures: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_len: 8,
            dt: 0.01,
            t_end: 200.0,
            sample_every: 10,
            keep_measures: false,
        }
    }
}

impl SolverConfig {
    pub fn new(max_len: usize, dt: f64, t_end: f64) -> Self {
        SolverConfig {
            max_len,
            dt,
            t_end,
            ..SolverConfig::default()
        }
    }

    pub fn with_sampling(mut self, every: usize, keep_measures: bool) -> Self {
        self.sample_every = every.max(1);
        self.keep_measures = keep_measures;
        self
    }

    /// Number of steps, checking that `t_end` is reachable and every inflow
    /// breakpoint falls on a step boundary.
    pub fn steps(&self, net: &ValidatedNetwork) -> Result<usize, SolverError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SolverError::InvalidConfig(format!("dt = {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(SolverError::InvalidConfig(format!("t_end = {}", self.t_end)));
        }
        let classes = net.classes() as f64;
        let rate_bound = net.lambda_plus() * classes + net.gamma_plus() + net.inflow_bound() * classes;
        let product = self.dt * rate_bound;
        if product > 0.1 {
            return Err(SolverError::StabilityGuard {
                dt: self.dt,
                product,
            });
        }
        for (tb, _) in net.inflow().breakpoints() {
            if *tb > 0.0 && *tb < self.t_end {
                let ratio = tb / self.dt;
                if (ratio - ratio.round()).abs() > 1e-6 {
                    return Err(SolverError::ScheduleMisaligned(*tb));
                }
            }
        }
        Ok((self.t_end / self.dt).round() as usize)
    }
}
