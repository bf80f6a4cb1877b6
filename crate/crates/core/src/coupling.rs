//! Red/white coupling of two NLMPs that share their inflows and differ only
//! in the initial state.
//!
//! White mass `W(x)` sits on diagonal pairs `(x, x)` whose queues are
//! identical and served synchronously. Red mass `R(y, z)` sits on pairs
//! whose queues evolve independently. External and white-routed customers
//! arrive in identical pairs. A customer routed out of a red queue arrives
//! alone, so it turns a white pair red and pushes a red pair further apart.
//! A red pair whose two queues both empty becomes the white pair `(∅, ∅)`.
//!
//! The marginals `μ'(x) = W(x) + Σ_z R(x, z) + O'(x)` and its mirror solve
//! the master equation of the single NLMP on the same truncated space. The
//! orphan measures `O'` and `O''` make this exact: when one queue of a pair
//! crosses the length bound its partner is kept, alone, instead of being
//! leaked with it. Each marginal therefore has its own leak counter.
//!
//! Viewing the leak as one extra cemetery state, an orphan is a pair with
//! one queue in the cemetery. The coupling inequality then reads
//! `TV(μ', μ'') ≤ r_t + o_t` with `r_t` the red pair mass and `o_t` the
//! orphan mass; `o_t` is zero until some queue reaches length `K`.
//!
//! Pairs are stored densely, `R` as a row-major `|X_K| × |X_K|` array. At
//! two classes and `K = 6` that is 127² entries; entries that are exactly
//! zero are skipped when evaluating the right-hand side.

use std::ops::Range;
use std::sync::Arc;

use crate::generator::{QueueGenerator, OUTSIDE};
use crate::network::ValidatedNetwork;
use crate::nlmp::{tv_distance, MeasureState, SolverConfig, SolverError, NEGATIVE_WEIGHT_FATAL};
use crate::ode::{OdeSystem, Rk4};
use crate::word::{QueueWord, WordSpace};

/// Default truncation depth of the coupled solver.
pub const DEFAULT_COUPLED_K: usize = 6;

const MASS_TOL: f64 = 1e-9;

/// Offsets of the blocks `[W, R, O', O'', leak', leak'']` in one flat
/// vector.
#[derive(Clone, Copy, Debug)]
struct Layout {
    n: usize,
}

impl Layout {
    fn white(self) -> Range<usize> {
        0..self.n
    }
    fn red(self) -> Range<usize> {
        self.n..self.n + self.n * self.n
    }
    fn orphan(self, side: usize) -> Range<usize> {
        let start = self.n + self.n * self.n + side * self.n;
        start..start + self.n
    }
    fn leak(self, side: usize) -> usize {
        self.n * (self.n + 3) + side
    }
    fn len(self) -> usize {
        self.n * (self.n + 3) + 2
    }
}

#[derive(Clone, Debug)]
pub struct CoupledState {
    space: Arc<WordSpace>,
    data: Vec<f64>,
    time: f64,
}

/// How the two initial measures are joined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialCoupling {
    /// `W₀ = min(μ', μ'')` pointwise, leftover masses paired in canonical
    /// order (north-west corner rule).
    Greedy,
    /// `R₀ = μ' × μ''`, except `(∅, ∅)`, which is white.
    Product,
}

impl CoupledState {
    pub fn zeros(space: Arc<WordSpace>) -> Self {
        let layout = Layout { n: space.len() };
        CoupledState {
            space,
            data: vec![0.0; layout.len()],
            time: 0.0,
        }
    }

    fn layout(&self) -> Layout {
        Layout { n: self.space.len() }
    }

    /// Builds a state from explicit white and red entries.
    pub fn from_parts(
        space: Arc<WordSpace>,
        white: impl IntoIterator<Item = (QueueWord, f64)>,
        red: impl IntoIterator<Item = ((QueueWord, QueueWord), f64)>,
    ) -> Result<Self, SolverError> {
        let mut state = CoupledState::zeros(space);
        let n = state.space.len();
        let locate = |space: &WordSpace, x: &QueueWord| {
            space.index_of(x).ok_or_else(|| {
                SolverError::InvalidInitialState(format!(
                    "word {} is outside the truncated space",
                    x.encode(space.classes())
                ))
            })
        };
        for (x, m) in white {
            let i = locate(&state.space, &x)?;
            state.data[i] += m;
        }
        for ((y, z), m) in red {
            let i = locate(&state.space, &y)?;
            let k = locate(&state.space, &z)?;
            state.data[n + i * n + k] += m;
        }
        state.validate()?;
        Ok(state)
    }

    /// Couples two measures on the same space. Mass that cannot be paired,
    /// because the two measures have leaked different amounts, starts as
    /// orphan mass.
    pub fn couple(a: &MeasureState, b: &MeasureState, how: InitialCoupling) -> Result<Self, SolverError> {
        if a.space().max_len() != b.space().max_len() || a.space().classes() != b.space().classes() {
            return Err(SolverError::TruncationMismatch {
                left: a.space().max_len(),
                right: b.space().max_len(),
            });
        }
        let mut state = CoupledState::zeros(a.space().clone());
        let layout = state.layout();
        let n = layout.n;
        state.time = a.time();
        state.data[layout.leak(0)] = a.leaked();
        state.data[layout.leak(1)] = b.leaked();
        match how {
            InitialCoupling::Greedy => {
                let mut left = a.weights().to_vec();
                let mut right = b.weights().to_vec();
                for i in 0..n {
                    let common = left[i].min(right[i]);
                    state.data[i] = common;
                    left[i] -= common;
                    right[i] -= common;
                }
                let (mut i, mut k) = (0, 0);
                while i < n && k < n {
                    if left[i] <= 0.0 {
                        i += 1;
                        continue;
                    }
                    if right[k] <= 0.0 {
                        k += 1;
                        continue;
                    }
                    let m = left[i].min(right[k]);
                    state.data[n + i * n + k] += m;
                    left[i] -= m;
                    right[k] -= m;
                }
                state.data[layout.orphan(0)].copy_from_slice(&left);
                state.data[layout.orphan(1)].copy_from_slice(&right);
            }
            InitialCoupling::Product => {
                let (ma, mb) = (a.total_mass(), b.total_mass());
                if (ma - mb).abs() > MASS_TOL {
                    return Err(SolverError::InvalidInitialState(format!(
                        "product coupling needs equal masses, got {ma} and {mb}"
                    )));
                }
                let scale = if mb > 0.0 { 1.0 / mb } else { 0.0 };
                for (i, &p) in a.weights().iter().enumerate() {
                    for (k, &q) in b.weights().iter().enumerate() {
                        state.data[n + i * n + k] = p * q * scale;
                    }
                }
                state.data[0] = state.data[n];
                state.data[n] = 0.0;
            }
        }
        state.validate()?;
        Ok(state)
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.data.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(SolverError::InvalidInitialState("negative or non-finite weight".into()));
        }
        if self.red_weights()[0] != 0.0 {
            return Err(SolverError::InvalidInitialState("the pair (∅, ∅) must be white".into()));
        }
        let (l1, l2) = (
            self.leaked_on(0) - self.orphan_mass(1),
            self.leaked_on(1) - self.orphan_mass(0),
        );
        if (l1 - l2).abs() > MASS_TOL || l1 < -MASS_TOL {
            return Err(SolverError::InvalidInitialState(format!(
                "leaks and orphans disagree: {l1} vs {l2}"
            )));
        }
        let (a, b) = self.marginals();
        for m in [a, b] {
            if m.ledger_defect() > MASS_TOL {
                return Err(SolverError::InvalidInitialState(format!(
                    "marginal mass plus leak is {}, not 1",
                    m.total_mass() + m.leaked()
                )));
            }
        }
        Ok(())
    }

    pub fn space(&self) -> &Arc<WordSpace> {
        &self.space
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn white(&self, x: &QueueWord) -> f64 {
        self.space.index_of(x).map_or(0.0, |i| self.white_weights()[i])
    }

    pub fn red(&self, y: &QueueWord, z: &QueueWord) -> f64 {
        match (self.space.index_of(y), self.space.index_of(z)) {
            (Some(i), Some(k)) => self.red_weights()[i * self.space.len() + k],
            _ => 0.0,
        }
    }

    pub fn white_weights(&self) -> &[f64] {
        &self.data[self.layout().white()]
    }

    /// Row-major red weights, `R(y, z)` at `index(y) * |X_K| + index(z)`.
    pub fn red_weights(&self) -> &[f64] {
        &self.data[self.layout().red()]
    }

    /// Unpaired mass of the first (`side = 0`) or second marginal.
    pub fn orphan_weights(&self, side: usize) -> &[f64] {
        &self.data[self.layout().orphan(side)]
    }

    pub fn white_mass(&self) -> f64 {
        self.white_weights().iter().sum()
    }

    /// `r_t`, the mass not yet merged: red pairs plus orphans. An orphan is
    /// a queue whose partner sits in the leaked state, so it counts as red.
    /// By the coupling inequality `TV(μ', μ'') ≤ r_t`.
    pub fn red_mass(&self) -> f64 {
        self.red_pair_mass() + self.orphan_mass(0) + self.orphan_mass(1)
    }

    /// Mass of red pairs with both queues inside the truncation.
    pub fn red_pair_mass(&self) -> f64 {
        self.red_weights().iter().sum()
    }

    pub fn orphan_mass(&self, side: usize) -> f64 {
        self.orphan_weights(side).iter().sum()
    }

    /// Mass the given marginal lost to the truncation.
    pub fn leaked_on(&self, side: usize) -> f64 {
        self.data[self.layout().leak(side)]
    }

    /// Mass of pairs that lost both queues to the truncation. Computed from
    /// either side, `leak' - O''` and `leak'' - O'`, which agree.
    pub fn leaked_both(&self) -> f64 {
        0.5 * (self.leaked_on(0) - self.orphan_mass(1) + self.leaked_on(1) - self.orphan_mass(0))
    }

    /// `white_mass + red_mass + leaked_both = 1` up to round-off.
    pub fn ledger_defect(&self) -> f64 {
        (self.white_mass() + self.red_mass() + self.leaked_both() - 1.0).abs()
    }

    /// `(μ', μ'')` with their own leaks.
    pub fn marginals(&self) -> (MeasureState, MeasureState) {
        let n = self.space.len();
        let mut first = self.white_weights().to_vec();
        let mut second = first.clone();
        let red = self.red_weights();
        for i in 0..n {
            for (k, &m) in red[i * n..(i + 1) * n].iter().enumerate() {
                first[i] += m;
                second[k] += m;
            }
        }
        for (f, o) in first.iter_mut().zip(self.orphan_weights(0)) {
            *f += o;
        }
        for (s, o) in second.iter_mut().zip(self.orphan_weights(1)) {
            *s += o;
        }
        (
            MeasureState::from_parts(self.space.clone(), first, self.leaked_on(0), self.time),
            MeasureState::from_parts(self.space.clone(), second, self.leaked_on(1), self.time),
        )
    }
}

/// White and red flows of a coupled state. Orphans count with the red
/// queues of their side.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledFlows {
    pub u_white: Vec<f64>,
    pub u_first: Vec<f64>,
    pub u_second: Vec<f64>,
    pub v_white: Vec<f64>,
    pub v_first: Vec<f64>,
    pub v_second: Vec<f64>,
    /// `v(W) + v'(R) + v''(R)`.
    pub v_total: Vec<f64>,
}

/// Right-hand side of the coupled equations at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledDerivative {
    pub white: Vec<f64>,
    pub red: Vec<f64>,
    pub orphans: [Vec<f64>; 2],
    pub leak_flux: [f64; 2],
}

impl CoupledDerivative {
    /// Time derivative of the total coupled mass, zero up to round-off.
    pub fn total(&self) -> f64 {
        let orphans = self.orphans[0].iter().sum::<f64>() + self.orphans[1].iter().sum::<f64>();
        let both = 0.5 * (self.leak_flux[0] + self.leak_flux[1]) - 0.5 * orphans;
        self.white.iter().sum::<f64>() + self.red.iter().sum::<f64>() + orphans + both
    }
}

/// Coupled solver bound to a validated network and a truncation depth.
#[derive(Clone, Debug)]
pub struct CoupledNlmp {
    net: ValidatedNetwork,
    gen: Arc<QueueGenerator>,
}

impl CoupledNlmp {
    pub fn new(net: &ValidatedNetwork, max_len: usize) -> Result<Self, SolverError> {
        Ok(CoupledNlmp {
            net: net.clone(),
            gen: Arc::new(QueueGenerator::new(net, max_len)?),
        })
    }

    pub fn network(&self) -> &ValidatedNetwork {
        &self.net
    }

    pub fn space(&self) -> &Arc<WordSpace> {
        self.gen.space()
    }

    pub fn max_len(&self) -> usize {
        self.gen.max_len()
    }

    fn check_state(&self, state: &CoupledState) -> Result<(), SolverError> {
        if state.space.max_len() != self.max_len() || state.space.classes() != self.gen.classes() {
            return Err(SolverError::TruncationMismatch {
                left: state.space.max_len(),
                right: self.max_len(),
            });
        }
        Ok(())
    }

    pub fn coupled_flows(&self, state: &CoupledState) -> CoupledFlows {
        flows_of(&self.gen, &self.net, &state.data)
    }

    pub fn coupled_rhs(&self, state: &CoupledState, lambda: &[f64]) -> CoupledDerivative {
        let layout = state.layout();
        let mut d = vec![0.0; layout.len()];
        let flows = self.coupled_flows(state);
        rhs_into(&self.gen, &state.data, lambda, &flows, &mut d);
        CoupledDerivative {
            white: d[layout.white()].to_vec(),
            red: d[layout.red()].to_vec(),
            orphans: [d[layout.orphan(0)].to_vec(), d[layout.orphan(1)].to_vec()],
            leak_flux: [d[layout.leak(0)], d[layout.leak(1)]],
        }
    }

    /// Expected number of remaining services of red customers, orphans
    /// included.
    pub fn red_workload(&self, state: &CoupledState) -> f64 {
        red_workload(&self.gen, &state.data)
    }

    /// Fixed-step RK4 integration of the coupled equations.
    pub fn integrate(&self, state0: &CoupledState, cfg: &SolverConfig) -> Result<CoupledTrajectory, SolverError> {
        self.check_state(state0)?;
        state0.validate()?;
        let net = &self.net;
        let steps = cfg.steps(net)?;
        let gen = &*self.gen;
        let layout = state0.layout();
        let t0 = state0.time;

        let mut y = state0.data.clone();
        let mut system = CoupledSystem {
            gen,
            net,
            lambda: net.inflow().rates_at(t0).to_vec(),
        };
        let mut rk = Rk4::new(y.len());
        let mut samples = Vec::new();
        let mut states = Vec::new();
        let mut red_integral = 0.0;

        let snapshot = |y: &[f64], t: f64| CoupledState {
            space: self.space().clone(),
            data: y.to_vec(),
            time: t,
        };
        let mut record = |state: CoupledState, red_integral: f64, samples: &mut Vec<CoupledSample>| {
            let (first, second) = state.marginals();
            samples.push(CoupledSample {
                t: state.time,
                w_mass: state.white_mass(),
                r_mass: state.red_mass(),
                red_pair_mass: state.red_pair_mass(),
                orphan_mass: state.orphan_mass(0) + state.orphan_mass(1),
                leaked: state.leaked_both(),
                tv_actual: tv_distance(&first, &second).expect("same space"),
                red_l: red_workload(gen, &state.data),
                red_integral,
            });
            if cfg.keep_measures {
                states.push(state);
            }
        };

        let initial = snapshot(&y, t0);
        let mut prev_red = initial.red_mass();
        record(initial, 0.0, &mut samples);
        for step in 1..=steps {
            let t_prev = t0 + (step - 1) as f64 * cfg.dt;
            system.lambda.copy_from_slice(net.inflow().rates_at(t_prev));
            rk.step(&system, &mut y, cfg.dt);
            let t = t0 + step as f64 * cfg.dt;
            clip(&mut y[..layout.leak(0)]).map_err(|(idx, value)| SolverError::StepSizeUnstable {
                time: t,
                word: self.describe(idx),
                value,
            })?;
            let red_now = y[layout.red().start..layout.leak(0)].iter().sum::<f64>();
            red_integral += 0.5 * cfg.dt * (prev_red + red_now);
            prev_red = red_now;
            if step % cfg.sample_every.max(1) == 0 || step == steps {
                record(snapshot(&y, t), red_integral, &mut samples);
            }
        }
        let final_state = snapshot(&y, t0 + steps as f64 * cfg.dt);
        Ok(CoupledTrajectory {
            samples,
            states,
            final_state,
        })
    }

    fn describe(&self, idx: usize) -> String {
        let space = self.space();
        let n = space.len();
        let layout = Layout { n };
        let enc = |i: usize| space.word(i).encode(space.classes());
        if layout.white().contains(&idx) {
            format!("white {}", enc(idx))
        } else if layout.red().contains(&idx) {
            let p = idx - n;
            format!("red ({}, {})", enc(p / n), enc(p % n))
        } else if layout.orphan(0).contains(&idx) {
            format!("first orphan {}", enc(idx - layout.orphan(0).start))
        } else {
            format!("second orphan {}", enc(idx - layout.orphan(1).start))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledSample {
    pub t: f64,
    pub w_mass: f64,
    /// Red pairs plus orphans.
    pub r_mass: f64,
    pub red_pair_mass: f64,
    pub orphan_mass: f64,
    /// Pairs that lost both queues to the truncation.
    pub leaked: f64,
    /// Total-variation distance of the marginals.
    pub tv_actual: f64,
    /// Expected remaining services of red customers.
    pub red_l: f64,
    /// Running `∫₀ᵗ r_s ds` (trapezoid rule on the step grid).
    pub red_integral: f64,
}

#[derive(Clone, Debug)]
pub struct CoupledTrajectory {
    pub samples: Vec<CoupledSample>,
    /// States at the sample times when `keep_measures` is set.
    pub states: Vec<CoupledState>,
    pub final_state: CoupledState,
}

impl CoupledTrajectory {
    /// First sample time at which the red mass is below `threshold`.
    pub fn first_time_red_below(&self, threshold: f64) -> Option<f64> {
        self.samples.iter().find(|s| s.r_mass < threshold).map(|s| s.t)
    }

    pub fn max_ledger_defect(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| (s.w_mass + s.r_mass + s.leaked - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn clip(y: &mut [f64]) -> Result<(), (usize, f64)> {
    for (i, v) in y.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < NEGATIVE_WEIGHT_FATAL {
                return Err((i, *v));
            }
            *v = 0.0;
        }
    }
    Ok(())
}

fn red_workload(gen: &QueueGenerator, data: &[f64]) -> f64 {
    let layout = Layout { n: gen.len() };
    let n = layout.n;
    let red = &data[layout.red()];
    let mut total = 0.0;
    for i in 0..n {
        for (k, &m) in red[i * n..(i + 1) * n].iter().enumerate() {
            if m != 0.0 {
                total += m * (gen.weight(i) + gen.weight(k));
            }
        }
    }
    for side in 0..2 {
        for (i, &m) in data[layout.orphan(side)].iter().enumerate() {
            total += m * gen.weight(i);
        }
    }
    total
}

fn flows_of(gen: &QueueGenerator, net: &ValidatedNetwork, data: &[f64]) -> CoupledFlows {
    let layout = Layout { n: gen.len() };
    let n = layout.n;
    let classes = gen.classes();
    let mut row = data[layout.orphan(0)].to_vec();
    let mut col = data[layout.orphan(1)].to_vec();
    let red = &data[layout.red()];
    for i in 0..n {
        for (k, &m) in red[i * n..(i + 1) * n].iter().enumerate() {
            row[i] += m;
            col[k] += m;
        }
    }
    let outflow = |measure: &[f64]| {
        let mut u = vec![0.0; classes];
        gen.accumulate_outflow(measure, &mut u);
        u
    };
    let routed = |u: &[f64]| {
        let mut v = vec![0.0; classes];
        net.routing().route_outflow(u, &mut v);
        v
    };
    let u_white = outflow(&data[layout.white()]);
    let u_first = outflow(&row);
    let u_second = outflow(&col);
    let v_white = routed(&u_white);
    let v_first = routed(&u_first);
    let v_second = routed(&u_second);
    let v_total = (0..classes).map(|j| v_white[j] + v_first[j] + v_second[j]).collect();
    CoupledFlows {
        u_white,
        u_first,
        u_second,
        v_white,
        v_first,
        v_second,
        v_total,
    }
}

/// Writes the derivative of the flat state `data` into `d`.
///
/// Paired arrivals of class `j` come at rate `λ_j + v_j(W)` and move both
/// queues of a pair. Single arrivals at rate `v'_j` (resp. `v''_j`) move
/// only the first (resp. second) queue and turn a white pair `x` into the
/// red pair `(x ⊕ j, x)` (resp. `(x, x ⊕ j)`), for every `x`. A queue pushed
/// past length `K` is leaked on its own side; its partner, if still inside,
/// becomes an orphan of the other side.
fn rhs_into(gen: &QueueGenerator, data: &[f64], lambda: &[f64], flows: &CoupledFlows, d: &mut [f64]) {
    let layout = Layout { n: gen.len() };
    let n = layout.n;
    d.iter_mut().for_each(|x| *x = 0.0);
    let classes = lambda.len();
    let paired: Vec<f64> = lambda.iter().zip(&flows.v_white).map(|(l, v)| l + v).collect();
    let (v1, v2) = (&flows.v_first, &flows.v_second);
    let side_rate = [
        (0..classes).map(|j| paired[j] + v1[j]).collect::<Vec<f64>>(),
        (0..classes).map(|j| paired[j] + v2[j]).collect::<Vec<f64>>(),
    ];
    let arrival_total: f64 = lambda.iter().sum::<f64>() + flows.v_total.iter().sum::<f64>();
    let (w0, r0) = (layout.white().start, layout.red().start);
    let o = [layout.orphan(0).start, layout.orphan(1).start];
    let (l1, l2) = (layout.leak(0), layout.leak(1));

    for x in 0..n {
        let m = data[w0 + x];
        if m == 0.0 {
            continue;
        }
        d[w0 + x] -= m * (arrival_total + gen.total_rate(x));
        for (j, &t) in gen.appends(x).iter().enumerate() {
            if t == OUTSIDE {
                d[l1] += m * (paired[j] + v1[j]);
                d[l2] += m * (paired[j] + v2[j]);
                d[o[1] + x] += m * v1[j];
                d[o[0] + x] += m * v2[j];
                continue;
            }
            let t = t as usize;
            d[w0 + t] += m * paired[j];
            d[r0 + t * n + x] += m * v1[j];
            d[r0 + x * n + t] += m * v2[j];
        }
        for (t, rate) in gen.services(x) {
            d[w0 + t] += m * rate;
        }
    }

    for y in 0..n {
        let gamma_y = gen.total_rate(y);
        let append_y = gen.appends(y);
        for z in 0..n {
            let m = data[r0 + y * n + z];
            if m == 0.0 {
                continue;
            }
            d[r0 + y * n + z] -= m * (arrival_total + gamma_y + gen.total_rate(z));
            let append_z = gen.appends(z);
            for j in 0..classes {
                let (ty, tz) = (append_y[j], append_z[j]);
                let flux = m * paired[j];
                match (ty == OUTSIDE, tz == OUTSIDE) {
                    (false, false) => d[r0 + ty as usize * n + tz as usize] += flux,
                    (true, false) => {
                        d[l1] += flux;
                        d[o[1] + tz as usize] += flux;
                    }
                    (false, true) => {
                        d[l2] += flux;
                        d[o[0] + ty as usize] += flux;
                    }
                    (true, true) => {
                        d[l1] += flux;
                        d[l2] += flux;
                    }
                }
                if ty == OUTSIDE {
                    d[l1] += m * v1[j];
                    d[o[1] + z] += m * v1[j];
                } else {
                    d[r0 + ty as usize * n + z] += m * v1[j];
                }
                if tz == OUTSIDE {
                    d[l2] += m * v2[j];
                    d[o[0] + y] += m * v2[j];
                } else {
                    d[r0 + y * n + tz as usize] += m * v2[j];
                }
            }
            for (ty, rate) in gen.services(y) {
                if ty == 0 && z == 0 {
                    d[w0] += m * rate;
                } else {
                    d[r0 + ty * n + z] += m * rate;
                }
            }
            for (tz, rate) in gen.services(z) {
                if y == 0 && tz == 0 {
                    d[w0] += m * rate;
                } else {
                    d[r0 + y * n + tz] += m * rate;
                }
            }
        }
    }

    for side in 0..2 {
        let rates = &side_rate[side];
        let total: f64 = rates.iter().sum();
        let leak = layout.leak(side);
        for x in 0..n {
            let m = data[o[side] + x];
            if m == 0.0 {
                continue;
            }
            d[o[side] + x] -= m * (total + gen.total_rate(x));
            for (j, &t) in gen.appends(x).iter().enumerate() {
                if t == OUTSIDE {
                    d[leak] += m * rates[j];
                } else {
                    d[o[side] + t as usize] += m * rates[j];
                }
            }
            for (t, rate) in gen.services(x) {
                d[o[side] + t] += m * rate;
            }
        }
    }
}

/// The flat coupled state as an ODE.
struct CoupledSystem<'a> {
    gen: &'a QueueGenerator,
    net: &'a ValidatedNetwork,
    lambda: Vec<f64>,
}

impl OdeSystem for CoupledSystem<'_> {
    fn dim(&self) -> usize {
        Layout { n: self.gen.len() }.len()
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let flows = flows_of(self.gen, self.net, y);
        rhs_into(self.gen, y, &self.lambda, &flows, dy);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{DisciplineKind, InflowSchedule, NetworkSpec, RoutingMatrix};
    use crate::nlmp::Nlmp;
    use proptest::prelude::*;

    fn network(rows: Vec<Vec<f64>>, lambda: Vec<f64>) -> ValidatedNetwork {
        NetworkSpec::simple(RoutingMatrix::from_rows(rows).unwrap(), lambda, DisciplineKind::Fifo, 1.0, 8)
            .validate()
            .unwrap()
    }

    fn e1() -> ValidatedNetwork {
        network(vec![vec![0.0, 0.5], vec![0.0, 0.0]], vec![0.05, 0.05])
    }

    fn w(labels: &[usize]) -> QueueWord {
        QueueWord::from_labels(labels, 2).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn flows_examples() {
        let c = CoupledNlmp::new(&e1(), 3).unwrap();
        let space = c.space().clone();

        let empty = CoupledState::from_parts(space.clone(), [(w(&[]), 1.0)], []).unwrap();
        let f = c.coupled_flows(&empty);
        assert!(f.v_total.iter().chain(&f.u_white).all(|x| *x == 0.0));

        let red = CoupledState::from_parts(space.clone(), [], [((w(&[1]), w(&[])), 1.0)]).unwrap();
        let f = c.coupled_flows(&red);
        assert_eq!(f.u_first, vec![1.0, 0.0]);
        assert_eq!(f.u_second, vec![0.0, 0.0]);
        assert_eq!(f.v_first, vec![0.0, 0.5]);
        assert_eq!(f.v_second, vec![0.0, 0.0]);
        assert_eq!(f.v_total, vec![0.0, 0.5]);

        let nlmp = Nlmp::new(&e1(), 3).unwrap();
        let mu = MeasureState::geometric(space.clone(), 0.3).unwrap();
        let white = CoupledState::from_parts(space, mu.support().map(|(x, m)| (x.clone(), m)).collect::<Vec<_>>(), [])
            .unwrap();
        let f = c.coupled_flows(&white);
        assert!(close(&f.u_white, &nlmp.compute_flows(&mu, &[0.0, 0.0]).u, 1e-15));
        assert_eq!(f.u_first, vec![0.0, 0.0]);
    }

    #[test]
    fn all_white_reduces_to_the_master_equation() {
        let c = CoupledNlmp::new(&e1(), 3).unwrap();
        let nlmp = Nlmp::new(&e1(), 3).unwrap();
        let mu = MeasureState::geometric(c.space().clone(), 0.3).unwrap();
        let state = CoupledState::couple(&mu, &mu, InitialCoupling::Greedy).unwrap();
        assert_eq!(state.red_mass(), 0.0);
        let d = c.coupled_rhs(&state, &[0.05, 0.05]);
        let plain = nlmp.self_consistent_rhs(&mu, &[0.05, 0.05]);
        assert!(d.red.iter().all(|x| *x == 0.0));
        assert!(close(&d.white, &plain.weights, 1e-15));
        assert!(d.orphans.iter().flatten().all(|x| *x == 0.0));
        assert!((d.leak_flux[0] - plain.leak_flux).abs() < 1e-15);
        assert!((d.leak_flux[1] - plain.leak_flux).abs() < 1e-15);
    }

    #[test]
    fn red_pair_emptying_turns_white() {
        let c = CoupledNlmp::new(&e1(), 3).unwrap();
        let state =
            CoupledState::from_parts(c.space().clone(), [(w(&[]), 0.5)], [((w(&[1]), w(&[])), 0.5)]).unwrap();
        let d = c.coupled_rhs(&state, &[0.05, 0.05]);
        // Loss 0.5 * (0.1 + v'_2 = 0.25) plus creation R((1),∅) γ(1) = 0.5.
        assert!((d.white[0] - (0.5 - 0.5 * 0.35)).abs() < 1e-15);
        // The red customer's routed copy taints the white empty pair.
        let space = c.space();
        let at = |y: &[usize], z: &[usize]| {
            d.red[space.index_of(&w(y)).unwrap() * space.len() + space.index_of(&w(z)).unwrap()]
        };
        assert!((at(&[2], &[]) - 0.5 * 0.25).abs() < 1e-15);
        assert_eq!(at(&[], &[]), 0.0);
    }

    #[test]
    fn greedy_coupling_examples() {
        let space = Arc::new(WordSpace::new(2, 3).unwrap());
        let a = MeasureState::point(space.clone(), &w(&[1])).unwrap();
        let b = MeasureState::empty_queue(space.clone());
        let s = CoupledState::couple(&a, &b, InitialCoupling::Greedy).unwrap();
        assert_eq!((s.white_mass(), s.red(&w(&[1]), &w(&[]))), (0.0, 1.0));

        let s = CoupledState::couple(&a, &a, InitialCoupling::Greedy).unwrap();
        assert_eq!((s.white(&w(&[1])), s.red_mass()), (1.0, 0.0));

        let mixed = MeasureState::from_pairs(space.clone(), [(w(&[]), 0.5), (w(&[1]), 0.5)]).unwrap();
        let s = CoupledState::couple(&mixed, &b, InitialCoupling::Greedy).unwrap();
        assert_eq!((s.white(&w(&[])), s.red(&w(&[1]), &w(&[]))), (0.5, 0.5));

        let s = CoupledState::couple(&mixed, &mixed, InitialCoupling::Product).unwrap();
        assert_eq!(s.white(&w(&[])), 0.25);
        assert_eq!(s.red(&w(&[1]), &w(&[1])), 0.25);
        let (m1, m2) = s.marginals();
        assert!(m1.sup_distance(&mixed).unwrap() < 1e-15 && m2.sup_distance(&mixed).unwrap() < 1e-15);
    }

    #[test]
    fn marginals_examples() {
        let space = Arc::new(WordSpace::new(2, 2).unwrap());
        let s = CoupledState::from_parts(space.clone(), [(w(&[]), 1.0)], []).unwrap();
        let (a, b) = s.marginals();
        assert_eq!((a.get(&w(&[])), b.get(&w(&[]))), (1.0, 1.0));

        let s = CoupledState::from_parts(space, [], [((w(&[1]), w(&[2])), 1.0)]).unwrap();
        let (a, b) = s.marginals();
        assert_eq!((a.get(&w(&[1])), b.get(&w(&[2]))), (1.0, 1.0));
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn invalid_states_are_rejected() {
        let space = Arc::new(WordSpace::new(2, 2).unwrap());
        assert!(CoupledState::from_parts(space.clone(), [], [((w(&[]), w(&[])), 1.0)]).is_err());
        assert!(CoupledState::from_parts(space.clone(), [(w(&[]), 0.7)], []).is_err());
        assert!(CoupledState::from_parts(space, [(w(&[1, 1, 1]), 1.0)], []).is_err());
    }

    #[test]
    fn identical_initial_states_stay_white() {
        let c = CoupledNlmp::new(&e1(), 4).unwrap();
        let mu = MeasureState::point(c.space().clone(), &w(&[1, 2])).unwrap();
        let s = CoupledState::couple(&mu, &mu, InitialCoupling::Greedy).unwrap();
        let traj = c.integrate(&s, &SolverConfig::new(4, 0.01, 5.0)).unwrap();
        assert!(traj.samples.iter().all(|s| s.r_mass == 0.0 && s.tv_actual == 0.0));
    }

    #[test]
    fn lone_red_customer_without_routing_decays_exponentially() {
        let net = network(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![0.0, 0.0]);
        let c = CoupledNlmp::new(&net, 3).unwrap();
        let s = CoupledState::from_parts(c.space().clone(), [], [((w(&[1]), w(&[])), 1.0)]).unwrap();
        let traj = c.integrate(&s, &SolverConfig::new(3, 0.01, 2.0).with_sampling(50, false)).unwrap();
        for sample in &traj.samples {
            assert!((sample.r_mass - (-sample.t).exp()).abs() < 1e-9, "t={}", sample.t);
        }
    }

    #[test]
    fn without_input_red_workload_never_grows() {
        // With no arrivals the white mass only ever sits on (∅, ∅), so no
        // white customer can turn red.
        let net = e1().with_inflow(InflowSchedule::constant(vec![0.0, 0.0])).unwrap();
        let c = CoupledNlmp::new(&net, 4).unwrap();
        let s = CoupledState::from_parts(c.space().clone(), [], [((w(&[1, 1]), w(&[])), 1.0)]).unwrap();
        let traj = c.integrate(&s, &SolverConfig::new(4, 0.01, 30.0).with_sampling(10, false)).unwrap();
        for pair in traj.samples.windows(2) {
            assert!(pair[1].red_l <= pair[0].red_l + 1e-14);
        }
        assert!(traj.final_state.red_pair_mass() < 1e-9);
        let f = &traj.final_state;
        // Red queues can still grow through routed single arrivals, so some
        // mass crosses the boundary at this small K and leaves orphans.
        assert!(f.orphan_mass(1) > 0.0);
        assert!(f.ledger_defect() < 1e-12);
    }

    #[test]
    fn coupled_marginals_track_independent_runs() {
        let net = e1();
        let k = 5;
        let c = CoupledNlmp::new(&net, k).unwrap();
        let nlmp = Nlmp::new(&net, k).unwrap();
        // Starting close to the boundary exercises the orphan bookkeeping.
        let a = nlmp.point_state(&w(&[1, 1, 1, 2])).unwrap();
        let b = nlmp.empty_state();
        let cfg = SolverConfig::new(k, 0.01, 10.0).with_sampling(100, true);
        let traj = c.integrate(&CoupledState::couple(&a, &b, InitialCoupling::Greedy).unwrap(), &cfg).unwrap();
        let ta = nlmp.integrate(&a, &cfg).unwrap();
        let tb = nlmp.integrate(&b, &cfg).unwrap();
        for ((s, ma), mb) in traj.states.iter().zip(&ta.measures).zip(&tb.measures) {
            let (m1, m2) = s.marginals();
            let tol = 1e-12 * s.time().max(1.0);
            assert!(m1.sup_distance(ma).unwrap() <= tol, "t={}", s.time());
            assert!(m2.sup_distance(mb).unwrap() <= tol, "t={}", s.time());
        }
        for s in &traj.samples {
            assert!(s.tv_actual <= s.r_mass + 1e-12);
        }
        assert!(traj.max_ledger_defect() < 1e-12);
    }

    #[test]
    fn one_sided_overflow_keeps_the_partner() {
        let c = CoupledNlmp::new(&e1(), 2).unwrap();
        let s = CoupledState::from_parts(c.space().clone(), [(w(&[]), 0.5)], [((w(&[1, 1]), w(&[])), 0.5)]).unwrap();
        let d = c.coupled_rhs(&s, &[0.05, 0.05]);
        let empty = c.space().index_of(&w(&[])).unwrap();
        let one = c.space().index_of(&w(&[1])).unwrap();
        let two = c.space().index_of(&w(&[2])).unwrap();
        // Paired class-j arrivals overflow the first queue only.
        assert!((d.orphans[1][one] - 0.5 * 0.05).abs() < 1e-15);
        // v'_2 = 0.5 * u'_1 = 0.25 single arrivals overflow it too.
        assert!((d.orphans[1][two] - 0.5 * 0.05).abs() < 1e-15);
        assert!((d.orphans[1][empty] - 0.5 * 0.25).abs() < 1e-15);
        assert!((d.leak_flux[0] - 0.5 * 0.35).abs() < 1e-15);
        assert_eq!(d.leak_flux[1], 0.0);
    }

    #[test]
    fn greedy_coupling_of_unequal_masses_uses_orphans() {
        let space = Arc::new(WordSpace::new(2, 2).unwrap());
        let a = MeasureState::from_parts(space.clone(), vec![0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.1, 0.0);
        let b = MeasureState::empty_queue(space);
        let s = CoupledState::couple(&a, &b, InitialCoupling::Greedy).unwrap();
        assert_eq!(s.white(&w(&[])), 0.9);
        assert!((s.orphan_weights(1)[0] - 0.1).abs() < 1e-15);
        assert_eq!(s.red_pair_mass(), 0.0);
        assert!((s.red_mass() - 0.1).abs() < 1e-15);
        assert!(s.leaked_both().abs() < 1e-15);
        assert!(s.ledger_defect() < 1e-15);
        assert!(CoupledState::couple(&a, &b, InitialCoupling::Product).is_err());
    }

    proptest! {
        #[test]
        fn rhs_balances_mass_and_projects_onto_marginals(
            seed in proptest::collection::vec(0.0f64..1.0, 15 * 18),
            masks in proptest::collection::vec(proptest::bool::ANY, 4),
        ) {
            let c = CoupledNlmp::new(&e1(), 3).unwrap();
            let n = c.space().len();
            let layout = Layout { n };
            let mut state = CoupledState::zeros(c.space().clone());
            state.data[..layout.leak(0)].copy_from_slice(&seed);
            // Switch whole blocks off to reach sparse corners of the space.
            for (block, off) in [layout.white(), layout.red(), layout.orphan(0), layout.orphan(1)].into_iter().zip(&masks) {
                if *off {
                    state.data[block].iter_mut().for_each(|m| *m = 0.0);
                }
            }
            state.data[layout.red().start] = 0.0;
            let total: f64 = state.data.iter().sum::<f64>() - 0.5 * (state.orphan_mass(0) + state.orphan_mass(1));
            prop_assume!(total > 0.0);
            state.data.iter_mut().for_each(|m| *m /= total);
            let d = c.coupled_rhs(&state, &[0.05, 0.05]);
            prop_assert!(d.total().abs() < 1e-12);
            prop_assert_eq!(d.red[0], 0.0);

            // The projection of the coupled derivative onto each side is
            // the master equation of that marginal.
            let nlmp = Nlmp::new(&e1(), 3).unwrap();
            let (m1, m2) = state.marginals();
            let mut p1 = d.white.clone();
            let mut p2 = d.white.clone();
            for i in 0..n {
                p1[i] += d.orphans[0][i];
                p2[i] += d.orphans[1][i];
                for k in 0..n {
                    p1[i] += d.red[i * n + k];
                    p2[k] += d.red[i * n + k];
                }
            }
            let e1d = nlmp.self_consistent_rhs(&m1, &[0.05, 0.05]);
            let e2d = nlmp.self_consistent_rhs(&m2, &[0.05, 0.05]);
            for i in 0..n {
                prop_assert!((p1[i] - e1d.weights[i]).abs() < 1e-12);
                prop_assert!((p2[i] - e2d.weights[i]).abs() < 1e-12);
            }
            prop_assert!((d.leak_flux[0] - e1d.leak_flux).abs() < 1e-12);
            prop_assert!((d.leak_flux[1] - e2d.leak_flux).abs() < 1e-12);
        }
    }
}
