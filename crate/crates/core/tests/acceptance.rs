//! Acceptance suite for the reference network: two classes at one node,
//! `p₁₂ = 0.5`, class 2 always leaves, `λ = (0.05, 0.05)`, unit-rate FIFO.
//!
//! Prints one PASS/FAIL line per criterion and exits nonzero if any fails.
//! Expected values are computed here from closed forms, not taken from the
//! library.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mfqnet::coupling::{CoupledNlmp, CoupledState, InitialCoupling};
use mfqnet::network::{DisciplineKind, InflowSchedule, NetworkSpec, RoutingMatrix, ValidatedNetwork};
use mfqnet::nlmp::{tv_distance, MeasureState, Nlmp, SolverConfig};
use mfqnet::output::{write_event_log, Provenance};
use mfqnet::sim::{self, EnsembleState, EventFilter, SimConfig};
use mfqnet::word::QueueWord;

const LAMBDA: [f64; 2] = [0.05, 0.05];
const ROUTING: [[f64; 2]; 2] = [[0.0, 0.5], [0.0, 0.0]];
const SEED: u64 = 20240611;

fn e1() -> ValidatedNetwork {
    let rows = ROUTING.iter().map(|r| r.to_vec()).collect();
    NetworkSpec::simple(RoutingMatrix::from_rows(rows).unwrap(), LAMBDA.to_vec(), DisciplineKind::Fifo, 1.0, 8)
        .validate()
        .unwrap()
}

fn word(labels: &[usize]) -> QueueWord {
    QueueWord::from_labels(labels, 2).unwrap()
}

/// `w = Pᵀ(λ + w)` by plain iteration, written out by hand.
fn oracle_internal_flow() -> [f64; 2] {
    let mut w = [0.0; 2];
    for _ in 0..200 {
        let v = [LAMBDA[0] + w[0], LAMBDA[1] + w[1]];
        w = [
            ROUTING[0][0] * v[0] + ROUTING[1][0] * v[1],
            ROUTING[0][1] * v[0] + ROUTING[1][1] * v[1],
        ];
    }
    w
}

/// `h = 1 + P h`: class 2 needs one service, class 1 needs `1 + ½`.
const ORACLE_H: [f64; 2] = [1.5, 1.0];

/// `L(μ) = Σ_x μ(x) Σ_i h(x_i)`.
fn oracle_l(mu: &MeasureState) -> f64 {
    mu.support()
        .map(|(x, m)| m * x.entries().iter().map(|c| ORACLE_H[c.index()]).sum::<f64>())
        .sum()
}

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("{id} {}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn main() -> ExitCode {
    let mut report = Report { failures: 0 };
    let net = e1();
    mass_flow_bound_lyapunov(&net, &mut report);
    splitting(&net, &mut report);
    coupling(&net, &mut report);
    propagation_of_chaos(&net, &mut report);
    poisson_hypothesis(&net, &mut report);
    closed_forms(&net, &mut report);
    determinism(&net, &mut report);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", report.failures);
        ExitCode::FAILURE
    }
}

/// Criteria 1 to 4 share one trajectory from the empty queue.
fn mass_flow_bound_lyapunov(net: &ValidatedNetwork, report: &mut Report) {
    let dt = 0.01;
    let solver = Nlmp::new(net, 8).unwrap();
    let start = Instant::now();
    let traj = solver
        .integrate(&solver.empty_state(), &SolverConfig::new(8, dt, 200.0).with_sampling(1, true))
        .unwrap();
    let elapsed = start.elapsed();

    let max_defect = traj
        .measures
        .iter()
        .map(|m| (m.weights().iter().sum::<f64>() + m.leaked() - 1.0).abs())
        .fold(0.0, f64::max);
    let leak = traj.final_state.leaked();
    // Near equilibrium the length is geometric with load ρ = Σ v* and mass
    // leaves from length 8 at rate ρ, so the leak grows by (1-ρ)ρ⁸·ρ per unit
    // time.
    let rho: f64 = 0.125;
    let leak_rate = (1.0 - rho) * rho.powi(8) * rho;
    report.line(
        "C1",
        max_defect <= 1e-9 && leak <= 1e-6 && elapsed < Duration::from_secs(30),
        format!(
            "max |mass + leak - 1| = {max_defect:.2e}, leak(200) = {leak:.3e} (equilibrium leak rate {leak_rate:.2e}/time), runtime {elapsed:.1?}"
        ),
    );

    let w = oracle_internal_flow();
    let expected = [LAMBDA[0] + w[0], LAMBDA[1] + w[1]];
    let v = &traj.samples.last().unwrap().flows.v;
    let gap = (v[0] - expected[0]).abs().max((v[1] - expected[1]).abs());
    report.line(
        "C2",
        gap <= 1e-4,
        format!("v(200) = ({:.8}, {:.8}), lambda + w* = ({}, {}), gap {gap:.2e}", v[0], v[1], expected[0], expected[1]),
    );

    // Geometric domination with ε = λ₊ as stated, and with ε = max v*.
    let empty = word(&[]);
    let min_p0 = traj.measures.iter().map(|m| m.get(&empty)).fold(1.0, f64::min);
    let kappa_stated = 2.0 * LAMBDA[0] / 1.0;
    report.line(
        "C3",
        min_p0 >= 1.0 - kappa_stated - 1e-6,
        format!("min_t mu_t(empty) = {min_p0:.6}, bound 1 - kappa = {:.6} with eps = lambda_plus", 1.0 - kappa_stated),
    );
    let kappa_total = 2.0 * expected[0].max(expected[1]) / 1.0;
    report.line(
        "C3 (companion)",
        min_p0 >= 1.0 - kappa_total - 1e-6,
        format!("bound 1 - kappa = {:.6} with eps = max_j v*_j = {}", 1.0 - kappa_total, expected[1]),
    );

    // dL/dt by centered differences against Σ λ_j h_j - S with S = 1 - μ(∅)
    // for unit-rate service.
    let input: f64 = LAMBDA.iter().zip(ORACLE_H).map(|(l, h)| l * h).sum();
    let ls: Vec<f64> = traj.measures.iter().map(oracle_l).collect();
    let mut worst: f64 = 0.0;
    for i in 1..ls.len() - 1 {
        let derivative = (ls[i + 1] - ls[i - 1]) / (2.0 * dt);
        let drift = input - (1.0 - traj.measures[i].get(&empty));
        worst = worst.max((derivative - drift).abs());
    }
    report.line("C4", worst <= 1e-4, format!("max |dL/dt - (sum lambda h - S)| = {worst:.2e} over {} samples", ls.len() - 2));
}

fn splitting(net: &ValidatedNetwork, report: &mut Report) {
    let rho = 0.1;
    let solver = Nlmp::new(net, 8).unwrap();
    let cfg = SolverConfig::new(8, 0.01, 50.0).with_sampling(5000, true);
    let one = solver.point_state(&word(&[1])).unwrap();
    let empty = solver.empty_state();
    let split = solver.split_integrate(&one, &empty, rho, &cfg).unwrap();
    let mixed0 = one.mix(rho, &empty).unwrap();
    let direct = solver.integrate(&mixed0, &cfg).unwrap().final_state;
    let last = split.samples.last().unwrap();
    let mixture = last.mixture(rho);
    let defect = mixture
        .weights()
        .iter()
        .zip(direct.weights())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    report.line("C5", defect <= 1e-8 && (last.t - 50.0).abs() < 1e-9, format!("sup |rho mu1 + (1-rho) mu2 - mu| at t = {} is {defect:.2e}", last.t));
}

/// Criteria 6 and 7: δ_(1,1,1) against δ_∅ on the coupled space.
fn coupling(net: &ValidatedNetwork, report: &mut Report) {
    let k = 6;
    let coupled = CoupledNlmp::new(net, k).unwrap();
    let solver = Nlmp::new(net, k).unwrap();
    let a = solver.point_state(&word(&[1, 1, 1])).unwrap();
    let b = solver.empty_state();
    let cfg = SolverConfig::new(k, 0.01, 500.0).with_sampling(500, true);
    let start = Instant::now();
    let traj = coupled
        .integrate(&CoupledState::couple(&a, &b, InitialCoupling::Greedy).unwrap(), &cfg)
        .unwrap();
    let elapsed = start.elapsed();
    let ta = solver.integrate(&a, &cfg).unwrap();
    let tb = solver.integrate(&b, &cfg).unwrap();

    let mut marginal_ok = true;
    let mut worst_ratio: f64 = 0.0;
    let mut tv_ok = true;
    let mut worst_excess = f64::NEG_INFINITY;
    for (((state, sample), ma), mb) in traj.states.iter().zip(&traj.samples).zip(&ta.measures).zip(&tb.measures) {
        let (m1, m2) = state.marginals();
        let d = m1.sup_distance(ma).unwrap().max(m2.sup_distance(mb).unwrap());
        let tol = 1e-6 * state.time();
        marginal_ok &= d <= tol;
        if state.time() > 0.0 {
            worst_ratio = worst_ratio.max(d / state.time());
        }
        let tv = tv_distance(ma, mb).unwrap();
        tv_ok &= tv <= sample.r_mass + 1e-12;
        worst_excess = worst_excess.max(tv - sample.r_mass);
    }
    report.line(
        "C6",
        marginal_ok && tv_ok,
        format!(
            "{} samples: max sup-distance / t = {worst_ratio:.2e}, max (TV - r_t) = {worst_excess:.2e}",
            traj.samples.len()
        ),
    );

    let last = traj.samples.last().unwrap();
    let at_400 = traj.samples.iter().find(|s| (s.t - 400.0).abs() < 1e-6).unwrap();
    let increase = last.red_integral - at_400.red_integral;
    report.line(
        "C7",
        last.r_mass < 1e-3 && increase < 1e-4 && elapsed < Duration::from_secs(300),
        format!(
            "r_500 = {:.3e} (red pairs {:.3e}, orphans {:.3e}), integral over [400, 500] = {increase:.3e}, runtime {elapsed:.1?}",
            last.r_mass, last.red_pair_mass, last.orphan_mass
        ),
    );
}

fn empirical_distance(net: &ValidatedNetwork, reference: &MeasureState, copies: usize) -> f64 {
    let summary = sim::simulate(net, EnsembleState::empty(copies, SEED), &SimConfig::new(100.0, 8)).unwrap();
    tv_distance(&summary.samples.last().unwrap().measure, reference).unwrap()
}

fn propagation_of_chaos(net: &ValidatedNetwork, report: &mut Report) {
    let start = Instant::now();
    let solver = Nlmp::new(net, 8).unwrap();
    let limit = solver
        .integrate(&solver.empty_state(), &SolverConfig::new(8, 0.01, 100.0))
        .unwrap()
        .final_state;
    let tv_2000 = empirical_distance(net, &limit, 2000);
    let tv_4000 = empirical_distance(net, &limit, 4000);
    let p = limit.get(&word(&[]));
    let half_width = 1.96 * (p * (1.0 - p) / 2000.0).sqrt();
    let elapsed = start.elapsed();
    report.line(
        "C8",
        tv_2000 <= 0.02 && tv_4000 <= tv_2000 + half_width && elapsed < Duration::from_secs(300),
        format!("TV(M=2000) = {tv_2000:.4}, TV(M=4000) = {tv_4000:.4}, binomial half-width {half_width:.4}, runtime {elapsed:.1?}"),
    );
}

fn poisson_hypothesis(net: &ValidatedNetwork, report: &mut Report) {
    let (warmup, t_end) = (100.0, 25_000.0);
    let cfg = SimConfig::new(t_end, 8).with_log(EventFilter::copy_window(0, warmup, t_end));
    let summary = sim::simulate(net, EnsembleState::empty(2000, SEED), &cfg).unwrap();
    let w = oracle_internal_flow();
    let mut pass = true;
    let mut parts = Vec::new();
    for j in 0..2 {
        let rate = LAMBDA[j] + w[j];
        let gaps = sim::interarrival_samples(&summary.log, 0, j, warmup, t_end).unwrap();
        match sim::ks_exponential(&gaps, rate) {
            Ok(r) => {
                pass &= r.p_value > 0.01 && r.n >= 1000;
                parts.push(format!("class {}: n = {}, D = {:.4}, p = {:.3}", j + 1, r.n, r.statistic, r.p_value));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("class {}: {e}", j + 1));
            }
        }
    }
    report.line("C9", pass, parts.join("; "));
}

fn closed_forms(net: &ValidatedNetwork, report: &mut Report) {
    let quiet = net.with_inflow(InflowSchedule::constant(vec![0.0, 0.0])).unwrap();
    let solver = Nlmp::new(&quiet, 8).unwrap();
    let two = word(&[2]);
    let traj = solver
        .integrate(&solver.point_state(&two).unwrap(), &SolverConfig::new(8, 0.01, 2.0).with_sampling(1, true))
        .unwrap();
    let mut death = 0.0f64;
    for t in [0.5, 1.0, 2.0] {
        let m = traj.measures.iter().find(|m| (m.time() - t).abs() < 1e-9).unwrap();
        death = death.max((m.get(&two) - (-t).exp()).abs());
    }

    let mm1 = NetworkSpec::simple(RoutingMatrix::from_rows(vec![vec![0.0]]).unwrap(), vec![0.05], DisciplineKind::Fifo, 1.0, 8)
        .validate()
        .unwrap();
    let single = Nlmp::new(&mm1, 8).unwrap();
    let st = single.stationary_state(&SolverConfig::new(8, 0.01, 1000.0)).unwrap();
    let pairs = (0..=8).map(|k| (QueueWord::from_labels(&vec![1; k], 1).unwrap(), 0.95 * 0.05f64.powi(k as i32)));
    // The truncated geometric weights fall short of one by 0.05⁹ ≈ 2e-12.
    let geometric = MeasureState::from_pairs(single.space().clone(), pairs.collect::<Vec<_>>()).unwrap();
    let tv = tv_distance(&st.measure, &geometric).unwrap();
    report.line(
        "C10",
        death <= 1e-8 && tv <= 1e-6,
        format!("max |mu_t((2)) - e^-t| = {death:.2e}; TV(M/M/1 stationary, geometric(0.05)) = {tv:.2e}"),
    );
}

fn determinism(net: &ValidatedNetwork, report: &mut Report) {
    let cfg = SimConfig::new(200.0, 8).with_log(EventFilter::all());
    let bytes = || {
        let summary = sim::simulate(net, EnsembleState::empty(200, SEED), &cfg).unwrap();
        let mut buf = Vec::new();
        write_event_log(&mut buf, &Provenance::new(Some(SEED), net.hash()), &summary.log).unwrap();
        (buf, summary.log.events.len())
    };
    let (first, n) = bytes();
    let (second, _) = bytes();
    report.line("C11", first == second && n > 0, format!("{n} events, {} bytes, identical = {}", first.len(), first == second));
}
