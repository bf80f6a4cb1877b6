use crate::network::ValidatedNetwork;
use crate::ode::Rk4;

use super::engine::{flows_of, master_rhs_into, NlmpSystem};
use super::integrate::{clip_negative, step_time};
use super::{MeasureState, Nlmp, SolverConfig, SolverError};

/// Residual below which the conditional right-hand side counts as zero.
pub const STATIONARY_RESIDUAL: f64 = 1e-10;
/// Allowed gap between the realized and the fixed-point internal inflow.
pub const FLOW_MATCH_TOL: f64 = 1e-6;

const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_CAP: usize = 1_000_000;
const CHECK_EVERY: usize = 10;

/// Constant internal inflow `w*` and total inflow `v* = λ + w*` of the
/// stationary regime.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryFlow {
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

/// Solves `w*_j = Σ_i p_{ij} (λ_i + w*_i)` directly and cross-checks the
/// answer against plain fixed-point iteration.
pub fn stationary_internal_flow(net: &ValidatedNetwork) -> Result<StationaryFlow, SolverError> {
    if !net.inflow().is_constant() {
        return Err(SolverError::NonConstantInflow);
    }
    let lambda = net.inflow().rates_at(0.0);
    let routing = net.routing();
    let classes = net.classes();

    let mut routed = vec![0.0; classes];
    routing.route_outflow(lambda, &mut routed);
    let w = routing.solve_identity_minus(&routed, true)?;

    let mut iterate = vec![0.0; classes];
    let mut next = vec![0.0; classes];
    let mut total = vec![0.0; classes];
    for _ in 0..FIXED_POINT_CAP {
        for j in 0..classes {
            total[j] = lambda[j] + iterate[j];
        }
        routing.route_outflow(&total, &mut next);
        let change = next
            .iter()
            .zip(&iterate)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut iterate, &mut next);
        if change <= FIXED_POINT_TOL {
            break;
        }
    }
    let gap = w
        .iter()
        .zip(&iterate)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if gap > 1e-9 {
        return Err(SolverError::FlowMismatch {
            realized: iterate,
            expected: w,
        });
    }
    let v = lambda.iter().zip(&w).map(|(l, w)| l + w).collect();
    Ok(StationaryFlow { w, v })
}

#[derive(Clone, Debug)]
pub struct StationaryState {
    /// Integrated state at convergence (leak included).
    pub measure: MeasureState,
    /// Sup-norm of the right-hand side of the renormalized measure.
    pub residual: f64,
    pub flows: StationaryFlow,
    pub realized_w: Vec<f64>,
}

impl Nlmp {
    /// Integrates from `δ_∅` under the constant inflow until the measure
    /// stops moving.
    ///
    /// The absorbing boundary drains mass at a tiny constant rate, so the
    /// test is applied to the renormalized measure `ν = μ / Σμ`, whose
    /// derivative is `(dμ + ν · leak_flux) / Σμ`. `cfg.t_end` is the
    /// horizon.
    pub fn stationary_state(&self, cfg: &SolverConfig) -> Result<StationaryState, SolverError> {
        let net = self.network();
        let flows = stationary_internal_flow(net)?;
        let steps = cfg.steps(net)?;
        let gen = self.generator();
        let n = gen.len();
        let lambda = net.inflow().rates_at(0.0).to_vec();

        let mut y = vec![0.0; n + 1];
        y[0] = 1.0;
        let system = NlmpSystem {
            gen,
            net,
            lambda: lambda.clone(),
        };
        let mut rk = Rk4::new(n + 1);
        let mut dmu = vec![0.0; n];

        let residual_of = |y: &[f64], dmu: &mut [f64]| {
            let f = flows_of(gen, net, &y[..n], &lambda);
            let leak = master_rhs_into(gen, &y[..n], &f.v, dmu);
            let mass: f64 = y[..n].iter().sum();
            dmu.iter()
                .zip(&y[..n])
                .map(|(d, m)| ((d + m / mass * leak) / mass).abs())
                .fold(0.0, f64::max)
        };

        let mut residual = residual_of(&y, &mut dmu);
        let mut step = 0;
        while residual >= STATIONARY_RESIDUAL {
            if step >= steps {
                return Err(SolverError::NoConvergenceWithinHorizon {
                    horizon: cfg.t_end,
                    residual,
                });
            }
            rk.step(&system, &mut y, cfg.dt);
            step += 1;
            clip_negative(&mut y[..n]).map_err(|(idx, value)| SolverError::StepSizeUnstable {
                time: step_time(0.0, step, cfg.dt),
                word: self.space().word(idx).encode(net.classes()),
                value,
            })?;
            if step % CHECK_EVERY == 0 || step == steps {
                residual = residual_of(&y, &mut dmu);
            }
        }

        let measure = MeasureState::from_parts(self.space().clone(), y[..n].to_vec(), y[n], step_time(0.0, step, cfg.dt));
        let realized_w = flows_of(gen, net, measure.weights(), &lambda).w;
        let gap = realized_w
            .iter()
            .zip(&flows.w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if gap > FLOW_MATCH_TOL {
            return Err(SolverError::FlowMismatch {
                realized: realized_w,
                expected: flows.w,
            });
        }
        Ok(StationaryState {
            measure,
            residual,
            flows,
            realized_w,
        })
    }
}
