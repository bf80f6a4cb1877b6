//! Network specification: classes, routing, external inflow, and service
//! discipline, plus the validated (frozen) form shared by every engine.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::word::{QueueWord, WordError, WordSpace};

const POWER_ITERATION_CAP: usize = 10_000;
const POWER_ITERATION_TOL: f64 = 1e-12;
const PROBABILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network needs at least one class")]
    NoClasses,
    #[error("{what}: expected {expected} entries, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("routing entry p[{row}][{col}] = {value} is not a probability")]
    InvalidProbability { row: usize, col: usize, value: f64 },
    #[error("routing row {row} sums to {sum} > 1")]
    RowSumExceedsOne { row: usize, sum: f64 },
    #[error("spectral radius of the routing matrix is {radius}, not below 1")]
    SpectralRadiusNotSubcritical { radius: f64 },
    #[error("rate condition violated: {0}")]
    RateConditionViolated(String),
    #[error("linear system I - P is singular")]
    SingularSystem,
    #[error("service profile requested for the empty queue")]
    EmptyQueue,
    #[error("invalid inflow schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Word(#[from] WordError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisciplineKind {
    /// Oldest customer is served at its class rate.
    Fifo,
    /// Newest customer is served at its class rate.
    LifoPreemptive,
    /// Every customer gets an equal share: position `r` is served at
    /// `rate(x_r) / |x|`.
    ProcessorSharing,
}

/// Service discipline with a base rate per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discipline {
    pub kind: DisciplineKind,
    pub rates: Vec<f64>,
}

impl Discipline {
    pub fn new(kind: DisciplineKind, rates: Vec<f64>) -> Self {
        Discipline { kind, rates }
    }

    pub fn uniform(kind: DisciplineKind, rate: f64, classes: usize) -> Self {
        Discipline::new(kind, vec![rate; classes])
    }

    /// Rate `γ(x, x_r)` at every (zero-based) position of a nonempty queue.
    pub fn service_rate_profile(&self, x: &QueueWord) -> Result<Vec<f64>, NetworkError> {
        if x.is_empty() {
            return Err(NetworkError::EmptyQueue);
        }
        let mut profile = vec![0.0; x.len()];
        self.for_each_rate(x, |r, rate| profile[r] = rate);
        Ok(profile)
    }

    /// Calls `f(position, rate)` for each position with a nonzero rate.
    #[inline]
    pub fn for_each_rate(&self, x: &QueueWord, mut f: impl FnMut(usize, f64)) {
        let entries = x.entries();
        match (self.kind, entries.len()) {
            (_, 0) => {}
            (DisciplineKind::Fifo, _) => f(0, self.rates[entries[0].index()]),
            (DisciplineKind::LifoPreemptive, n) => f(n - 1, self.rates[entries[n - 1].index()]),
            (DisciplineKind::ProcessorSharing, n) => {
                let share = 1.0 / n as f64;
                for (r, c) in entries.iter().enumerate() {
                    f(r, self.rates[c.index()] * share);
                }
            }
        }
    }

    /// `γ(x) = Σ_r γ(x, x_r)`; zero for the empty queue.
    pub fn total_rate(&self, x: &QueueWord) -> f64 {
        let mut total = 0.0;
        self.for_each_rate(x, |_, rate| total += rate);
        total
    }
}

/// Dense substochastic routing matrix, `p[i][j]` = probability that a
/// class-`i` customer becomes class `j` after service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingMatrix {
    classes: usize,
    p: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralEstimate {
    pub radius: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RoutingMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, NetworkError> {
        let classes = rows.len();
        if classes == 0 {
            return Err(NetworkError::NoClasses);
        }
        let mut p = Vec::with_capacity(classes * classes);
        for row in rows {
            if row.len() != classes {
                return Err(NetworkError::DimensionMismatch {
                    what: "routing row",
                    expected: classes,
                    found: row.len(),
                });
            }
            p.extend(row);
        }
        Ok(RoutingMatrix { classes, p })
    }

    pub fn zeros(classes: usize) -> Self {
        RoutingMatrix {
            classes,
            p: vec![0.0; classes * classes],
        }
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.p[from * self.classes + to]
    }

    pub fn set(&mut self, from: usize, to: usize, value: f64) {
        self.p[from * self.classes + to] = value;
    }

    #[inline]
    pub fn row(&self, from: usize) -> &[f64] {
        &self.p[from * self.classes..(from + 1) * self.classes]
    }

    /// `p_{i0} = 1 - Σ_j p_{ij}`.
    pub fn leave_probability(&self, from: usize) -> f64 {
        (1.0 - self.row(from).iter().sum::<f64>()).max(0.0)
    }

    /// Internal inflow from outflow: `w_j = Σ_i p_{ij} u_i`.
    #[inline]
    pub fn route_outflow(&self, outflow: &[f64], inflow: &mut [f64]) {
        inflow.iter_mut().for_each(|w| *w = 0.0);
        for (i, &u) in outflow.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            for (w, &p) in inflow.iter_mut().zip(self.row(i)) {
                *w += p * u;
            }
        }
    }

    /// Entry and row-sum checks.
    pub fn check_substochastic(&self) -> Result<(), NetworkError> {
        for i in 0..self.classes {
            for j in 0..self.classes {
                let value = self.get(i, j);
                if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                    return Err(NetworkError::InvalidProbability {
                        row: i + 1,
                        col: j + 1,
                        value,
                    });
                }
            }
            let sum: f64 = self.row(i).iter().sum();
            if sum > 1.0 + PROBABILITY_SLACK {
                return Err(NetworkError::RowSumExceedsOne { row: i + 1, sum });
            }
        }
        Ok(())
    }

    /// Power iteration on the (nonnegative) matrix from the all-ones vector.
    ///
    /// The estimate is the geometric mean of two consecutive norm ratios,
    /// which is stationary for period-two oscillations as well. A matrix
    /// that maps the iterate to zero is nilpotent and has radius 0.
    pub fn spectral_radius(&self) -> SpectralEstimate {
        let n = self.classes;
        let mut x = vec![1.0; n];
        let mut y = vec![0.0; n];
        let mut prev_ratio: Option<f64> = None;
        let mut prev_estimate: Option<f64> = None;
        for iter in 1..=POWER_ITERATION_CAP {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row(i).iter().zip(&x).map(|(p, v)| p.abs() * v).sum();
            }
            let norm = y.iter().cloned().fold(0.0, f64::max);
            if norm == 0.0 {
                return SpectralEstimate {
                    radius: 0.0,
                    iterations: iter,
                    converged: true,
                };
            }
            for (xi, yi) in x.iter_mut().zip(&y) {
                *xi = yi / norm;
            }
            let estimate = match prev_ratio {
                Some(r) => (r * norm).sqrt(),
                None => norm,
            };
            if let Some(prev) = prev_estimate {
                if (estimate - prev).abs() <= POWER_ITERATION_TOL {
                    return SpectralEstimate {
                        radius: estimate,
                        iterations: iter,
                        converged: true,
                    };
                }
            }
            prev_ratio = Some(norm);
            prev_estimate = Some(estimate);
        }
        SpectralEstimate {
            radius: prev_estimate.unwrap_or(0.0),
            iterations: POWER_ITERATION_CAP,
            converged: false,
        }
    }

    fn identity_minus(&self, transpose: bool) -> DMatrix<f64> {
        let n = self.classes;
        DMatrix::from_fn(n, n, |r, c| {
            let p = if transpose { self.get(c, r) } else { self.get(r, c) };
            if r == c {
                1.0 - p
            } else {
                -p
            }
        })
    }

    /// Solves `(I - P) x = b`, or `(I - Pᵀ) x = b` when `transpose` is set.
    pub fn solve_identity_minus(&self, b: &[f64], transpose: bool) -> Result<Vec<f64>, NetworkError> {
        let a = self.identity_minus(transpose);
        let rhs = DVector::from_column_slice(b);
        let x = a.lu().solve(&rhs).ok_or(NetworkError::SingularSystem)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NetworkError::SingularSystem);
        }
        Ok(x.iter().copied().collect())
    }
}

/// `h(j)`: expected number of services a class-`j` customer still receives
/// before leaving, and its maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct RemainingServices {
    pub h: Vec<f64>,
    pub h_max: f64,
}

/// Solves `h = 1 + P h`.
pub fn expected_remaining_services(routing: &RoutingMatrix) -> Result<RemainingServices, NetworkError> {
    let ones = vec![1.0; routing.classes()];
    let h = routing.solve_identity_minus(&ones, false)?;
    if h.iter().any(|&v| v < 1.0 - 1e-9) {
        // (I-P)^{-1} has a negative entry: not an M-matrix, so ρ(P) > 1.
        return Err(NetworkError::SingularSystem);
    }
    let h_max = h.iter().cloned().fold(f64::MIN, f64::max);
    Ok(RemainingServices { h, h_max })
}

/// `L(x) = Σ_i h(x_i)`.
pub fn queue_weight(x: &QueueWord, h: &[f64]) -> f64 {
    x.entries().iter().map(|c| h[c.index()]).sum()
}

/// Piecewise-constant external arrival rates. The first breakpoint is at
/// `t = 0`; rates hold until the next breakpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflowSchedule {
    breakpoints: Vec<(f64, Vec<f64>)>,
}

impl InflowSchedule {
    pub fn constant(rates: Vec<f64>) -> Self {
        InflowSchedule {
            breakpoints: vec![(0.0, rates)],
        }
    }

    pub fn piecewise(mut breakpoints: Vec<(f64, Vec<f64>)>) -> Result<Self, NetworkError> {
        if breakpoints.is_empty() {
            return Err(NetworkError::InvalidSchedule("no breakpoints".into()));
        }
        breakpoints.sort_by(|a, b| a.0.total_cmp(&b.0));
        if breakpoints[0].0 != 0.0 {
            return Err(NetworkError::InvalidSchedule(
                "first breakpoint must be at t = 0".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(NetworkError::InvalidSchedule("duplicate breakpoint".into()));
        }
        Ok(InflowSchedule { breakpoints })
    }

    pub fn breakpoints(&self) -> &[(f64, Vec<f64>)] {
        &self.breakpoints
    }

    pub fn is_constant(&self) -> bool {
        self.breakpoints.windows(2).all(|w| w[0].1 == w[1].1)
    }

    /// Rates in force at time `t` (breakpoints within 1e-9 count as passed).
    pub fn rates_at(&self, t: f64) -> &[f64] {
        let idx = self
            .breakpoints
            .partition_point(|(tb, _)| *tb <= t + 1e-9)
            .max(1);
        &self.breakpoints[idx - 1].1
    }

    /// First breakpoint strictly after `t`.
    pub fn next_change_after(&self, t: f64) -> Option<f64> {
        self.breakpoints
            .iter()
            .map(|(tb, _)| *tb)
            .find(|&tb| tb > t + 1e-9)
    }

    pub fn max_rate(&self) -> f64 {
        self.breakpoints
            .iter()
            .flat_map(|(_, r)| r.iter().copied())
            .fold(0.0, f64::max)
    }
}

/// User-facing description of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Node label of each class.
    pub nodes: Vec<String>,
    pub routing: RoutingMatrix,
    pub inflow: InflowSchedule,
    pub discipline: Discipline,
    pub gamma_minus: Option<f64>,
    pub gamma_plus: Option<f64>,
    pub lambda_plus: Option<f64>,
    /// Truncation depth `K` used for the rate-condition check and as the
    /// default depth of the solvers.
    pub truncation: usize,
}

impl NetworkSpec {
    /// Single-node network with uniform service rate and constant inflow.
    pub fn simple(
        routing: RoutingMatrix,
        lambda: Vec<f64>,
        kind: DisciplineKind,
        rate: f64,
        truncation: usize,
    ) -> Self {
        let classes = routing.classes();
        NetworkSpec {
            nodes: vec!["0".to_string(); classes],
            routing,
            inflow: InflowSchedule::constant(lambda),
            discipline: Discipline::uniform(kind, rate, classes),
            gamma_minus: None,
            gamma_plus: None,
            lambda_plus: None,
            truncation,
        }
    }

    pub fn classes(&self) -> usize {
        self.routing.classes()
    }

    /// Short content hash used to tag output files.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(self) -> Result<ValidatedNetwork, NetworkError> {
        validate_spec(self)
    }
}

/// A network that passed every structural and rate check. Immutable.
#[derive(Clone, Debug)]
pub struct ValidatedNetwork {
    spec: NetworkSpec,
    spectral: SpectralEstimate,
    remaining: RemainingServices,
    gamma_minus: f64,
    gamma_plus: f64,
    lambda_plus: f64,
}

pub fn validate_spec(spec: NetworkSpec) -> Result<ValidatedNetwork, NetworkError> {
    let classes = spec.classes();
    if classes == 0 {
        return Err(NetworkError::NoClasses);
    }
    if spec.nodes.len() != classes {
        return Err(NetworkError::DimensionMismatch {
            what: "node labels",
            expected: classes,
            found: spec.nodes.len(),
        });
    }
    if spec.discipline.rates.len() != classes {
        return Err(NetworkError::DimensionMismatch {
            what: "service rates",
            expected: classes,
            found: spec.discipline.rates.len(),
        });
    }
    if let Some((c, r)) = spec
        .discipline
        .rates
        .iter()
        .enumerate()
        .find(|(_, r)| !(r.is_finite() && **r > 0.0))
    {
        return Err(NetworkError::RateConditionViolated(format!(
            "service rate of class {} is {r}, must be positive",
            c + 1
        )));
    }
    for (t, rates) in spec.inflow.breakpoints() {
        if rates.len() != classes {
            return Err(NetworkError::DimensionMismatch {
                what: "external rates",
                expected: classes,
                found: rates.len(),
            });
        }
        if !t.is_finite() || rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(NetworkError::InvalidSchedule(format!(
                "rates at t={t} must be finite and nonnegative"
            )));
        }
    }

    spec.routing.check_substochastic()?;
    let spectral = spec.routing.spectral_radius();
    if spectral.converged && spectral.radius >= 1.0 - POWER_ITERATION_TOL {
        return Err(NetworkError::SpectralRadiusNotSubcritical {
            radius: spectral.radius,
        });
    }
    let remaining = expected_remaining_services(&spec.routing).map_err(|_| {
        NetworkError::SpectralRadiusNotSubcritical {
            radius: spectral.radius,
        }
    })?;

    // RC1
    let observed_lambda = spec.inflow.max_rate();
    let lambda_plus = spec.lambda_plus.unwrap_or(observed_lambda);
    if observed_lambda > lambda_plus {
        let (t, rates) = spec
            .inflow
            .breakpoints()
            .iter()
            .find(|(_, r)| r.iter().any(|&v| v > lambda_plus))
            .expect("a breakpoint attains the maximum");
        let class = rates.iter().position(|&v| v > lambda_plus).unwrap_or(0) + 1;
        return Err(NetworkError::RateConditionViolated(format!(
            "external rate of class {class} at t={t} exceeds lambda_plus={lambda_plus}"
        )));
    }

    // RC2, exhaustively over the truncated space.
    let space = WordSpace::new(classes, spec.truncation.max(1))?;
    let mut seen_min = f64::INFINITY;
    let mut seen_max: f64 = 0.0;
    let mut argmin = QueueWord::empty();
    let mut argmax = QueueWord::empty();
    for x in space.words().iter().filter(|x| !x.is_empty()) {
        let g = spec.discipline.total_rate(x);
        if g < seen_min {
            seen_min = g;
            argmin = x.clone();
        }
        if g > seen_max {
            seen_max = g;
            argmax = x.clone();
        }
    }
    let gamma_minus = spec.gamma_minus.unwrap_or(seen_min);
    let gamma_plus = spec.gamma_plus.unwrap_or(seen_max);
    if !(gamma_minus > 0.0 && gamma_minus <= gamma_plus) {
        return Err(NetworkError::RateConditionViolated(format!(
            "need 0 < gamma_minus <= gamma_plus, got {gamma_minus} and {gamma_plus}"
        )));
    }
    if seen_min < gamma_minus * (1.0 - 1e-12) {
        return Err(NetworkError::RateConditionViolated(format!(
            "word {} has total service rate {seen_min} < gamma_minus={gamma_minus}",
            argmin.encode(classes)
        )));
    }
    if seen_max > gamma_plus * (1.0 + 1e-12) {
        return Err(NetworkError::RateConditionViolated(format!(
            "word {} has total service rate {seen_max} > gamma_plus={gamma_plus}",
            argmax.encode(classes)
        )));
    }

    Ok(ValidatedNetwork {
        spec,
        spectral,
        remaining,
        gamma_minus,
        gamma_plus,
        lambda_plus,
    })
}

impl ValidatedNetwork {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.spec.classes()
    }

    pub fn routing(&self) -> &RoutingMatrix {
        &self.spec.routing
    }

    pub fn discipline(&self) -> &Discipline {
        &self.spec.discipline
    }

    pub fn inflow(&self) -> &InflowSchedule {
        &self.spec.inflow
    }

    pub fn truncation(&self) -> usize {
        self.spec.truncation
    }

    pub fn spectral(&self) -> SpectralEstimate {
        self.spectral
    }

    pub fn remaining_services(&self) -> &RemainingServices {
        &self.remaining
    }

    pub fn h(&self) -> &[f64] {
        &self.remaining.h
    }

    pub fn gamma_minus(&self) -> f64 {
        self.gamma_minus
    }

    pub fn gamma_plus(&self) -> f64 {
        self.gamma_plus
    }

    pub fn lambda_plus(&self) -> f64 {
        self.lambda_plus
    }

    /// Uniform bound `V = λ₊ + γ₊` on every total inflow rate.
    pub fn inflow_bound(&self) -> f64 {
        self.lambda_plus + self.gamma_plus
    }

    pub fn hash(&self) -> String {
        self.spec.hash()
    }

    /// Same network with a different external inflow.
    pub fn with_inflow(&self, inflow: InflowSchedule) -> Result<ValidatedNetwork, NetworkError> {
        let mut spec = self.spec.clone();
        spec.inflow = inflow;
        if spec.lambda_plus.is_some_and(|lp| lp < spec.inflow.max_rate()) {
            spec.lambda_plus = None;
        }
        validate_spec(spec)
    }
}
