use crate::ode::Rk4;
use crate::word::WordSpace;

use super::engine::{flows_of, NlmpSystem, SplitSystem};
use super::lyapunov::report_of;
use super::{FlowRates, LyapunovReport, MeasureState, Nlmp, SolverConfig, SolverError, NEGATIVE_WEIGHT_FATAL};

#[derive(Clone, Debug)]
pub struct TrajectorySample {
    pub t: f64,
    /// `Σ_x μ_t(x)` over the truncated space.
    pub mass: f64,
    pub leaked: f64,
    pub lyapunov: LyapunovReport,
    pub flows: FlowRates,
}

impl TrajectorySample {
    pub fn ledger_defect(&self) -> f64 {
        (self.mass + self.leaked - 1.0).abs()
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    /// Measures at the sample times, when requested.
    pub measures: Vec<MeasureState>,
    pub final_state: MeasureState,
    /// Total negative round-off set to zero.
    pub clipped_mass: f64,
}

impl Trajectory {
    /// Time of the first sample satisfying `pred`.
    pub fn first_time(&self, pred: impl Fn(&TrajectorySample) -> bool) -> Option<f64> {
        self.samples.iter().find(|s| pred(s)).map(|s| s.t)
    }

    pub fn max_ledger_defect(&self) -> f64 {
        self.samples.iter().map(|s| s.ledger_defect()).fold(0.0, f64::max)
    }

    /// First time `α(μ_t)` is at or below `threshold`.
    pub fn alpha_settling_time(&self, threshold: f64) -> Option<f64> {
        self.first_time(|s| s.lyapunov.alpha <= threshold)
    }
}

/// Sets small negative weights in `y` to zero and returns the clipped
/// total; a weight below [`NEGATIVE_WEIGHT_FATAL`] is reported as
/// `Err((index, value))`.
pub(crate) fn clip_negative(y: &mut [f64]) -> Result<f64, (usize, f64)> {
    let mut clipped = 0.0;
    for (i, v) in y.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < NEGATIVE_WEIGHT_FATAL {
                return Err((i, *v));
            }
            clipped -= *v;
            *v = 0.0;
        }
    }
    Ok(clipped)
}

fn unstable(space: &WordSpace, time: f64, (idx, value): (usize, f64)) -> SolverError {
    SolverError::StepSizeUnstable {
        time,
        word: space.word(idx).encode(space.classes()),
        value,
    }
}

/// Time after `step` steps of size `dt` from `t0`, without accumulated
/// summation error.
#[inline]
pub(crate) fn step_time(t0: f64, step: usize, dt: f64) -> f64 {
    t0 + step as f64 * dt
}

#[inline]
pub(crate) fn should_sample(step: usize, steps: usize, every: usize) -> bool {
    step.is_multiple_of(every.max(1)) || step == steps
}

impl Nlmp {
    /// Fixed-step RK4 integration of the master equation from `mu0`.
    pub fn integrate(&self, mu0: &MeasureState, cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
        self.check_state(mu0)?;
        let net = self.network();
        let steps = cfg.steps(net)?;
        let gen = self.generator();
        let n = gen.len();
        let t0 = mu0.time();

        let mut y = Vec::with_capacity(n + 1);
        y.extend_from_slice(mu0.weights());
        y.push(mu0.leaked());

        let mut system = NlmpSystem {
            gen,
            net,
            lambda: net.inflow().rates_at(t0).to_vec(),
        };
        let mut rk = Rk4::new(n + 1);
        let mut samples = Vec::new();
        let mut measures = Vec::new();
        let mut clipped_mass = 0.0;

        let mut record = |t: f64, y: &[f64], samples: &mut Vec<TrajectorySample>| {
            let lambda = net.inflow().rates_at(t);
            let flows = flows_of(gen, net, &y[..n], lambda);
            let lyapunov = report_of(gen, net.h(), &y[..n], lambda);
            samples.push(TrajectorySample {
                t,
                mass: y[..n].iter().sum(),
                leaked: y[n],
                lyapunov,
                flows,
            });
            if cfg.keep_measures {
                measures.push(MeasureState::from_parts(self.space().clone(), y[..n].to_vec(), y[n], t));
            }
        };

        record(t0, &y, &mut samples);
        for step in 1..=steps {
            let t_prev = step_time(t0, step - 1, cfg.dt);
            system.lambda.copy_from_slice(net.inflow().rates_at(t_prev));
            rk.step(&system, &mut y, cfg.dt);
            let t = step_time(t0, step, cfg.dt);
            clipped_mass += clip_negative(&mut y[..n]).map_err(|e| unstable(self.space(), t, e))?;
            if should_sample(step, steps, cfg.sample_every) {
                record(t, &y, &mut samples);
            }
        }

        let t_final = step_time(t0, steps, cfg.dt);
        let final_state = MeasureState::from_parts(self.space().clone(), y[..n].to_vec(), y[n], t_final);
        Ok(Trajectory {
            samples,
            measures,
            final_state,
            clipped_mass,
        })
    }

    /// Evolves `μ¹` and `μ²` jointly under the shared inflow
    /// `v' = λ + ρ w¹ + (1-ρ) w²`. The mixture `ρ μ¹_t + (1-ρ) μ²_t` then
    /// follows the plain NLMP started from the mixed initial state.
    pub fn split_integrate(
        &self,
        first: &MeasureState,
        second: &MeasureState,
        rho: f64,
        cfg: &SolverConfig,
    ) -> Result<SplitTrajectory, SolverError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(SolverError::InvalidConfig(format!("split weight {rho} outside [0, 1]")));
        }
        self.check_state(first)?;
        self.check_state(second)?;
        let net = self.network();
        let steps = cfg.steps(net)?;
        let gen = self.generator();
        let n = gen.len();
        let t0 = first.time();

        let mut y = Vec::with_capacity(2 * (n + 1));
        y.extend_from_slice(first.weights());
        y.push(first.leaked());
        y.extend_from_slice(second.weights());
        y.push(second.leaked());

        let mut system = SplitSystem {
            gen,
            net,
            lambda: net.inflow().rates_at(t0).to_vec(),
            rho,
        };
        let mut rk = Rk4::new(y.len());
        let space = self.space();
        let snapshot = |t: f64, y: &[f64]| SplitSample {
            t,
            first: MeasureState::from_parts(space.clone(), y[..n].to_vec(), y[n], t),
            second: MeasureState::from_parts(space.clone(), y[n + 1..2 * n + 1].to_vec(), y[2 * n + 1], t),
        };

        let mut samples = vec![snapshot(t0, &y)];
        for step in 1..=steps {
            system
                .lambda
                .copy_from_slice(net.inflow().rates_at(step_time(t0, step - 1, cfg.dt)));
            rk.step(&system, &mut y, cfg.dt);
            let t = step_time(t0, step, cfg.dt);
            clip_negative(&mut y[..n]).map_err(|e| unstable(space, t, e))?;
            clip_negative(&mut y[n + 1..2 * n + 1]).map_err(|e| unstable(space, t, e))?;
            if should_sample(step, steps, cfg.sample_every) {
                samples.push(snapshot(t, &y));
            }
        }
        Ok(SplitTrajectory { rho, samples })
    }
}

#[derive(Clone, Debug)]
pub struct SplitSample {
    pub t: f64,
    pub first: MeasureState,
    pub second: MeasureState,
}

#[derive(Clone, Debug)]
pub struct SplitTrajectory {
    pub rho: f64,
    pub samples: Vec<SplitSample>,
}

impl SplitSample {
    /// `ρ μ¹_t + (1-ρ) μ²_t`.
    pub fn mixture(&self, rho: f64) -> MeasureState {
        self.first.mix(rho, &self.second).expect("components share a space")
    }
}
