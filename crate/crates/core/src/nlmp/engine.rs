use std::sync::Arc;

use crate::generator::{QueueGenerator, OUTSIDE};
use crate::network::ValidatedNetwork;
use crate::ode::OdeSystem;
use crate::word::{QueueWord, WordSpace};

use super::{MeasureState, SolverConfig, SolverError};

/// Class flows of a measure: outflow `u`, internal inflow `w = Pᵀu`, and
/// total inflow `v = λ + w`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowRates {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

/// Right-hand side of the master equation at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureDerivative {
    pub weights: Vec<f64>,
    /// Rate at which mass crosses the truncation boundary.
    pub leak_flux: f64,
}

impl MeasureDerivative {
    pub fn sup_norm(&self) -> f64 {
        self.weights.iter().map(|d| d.abs()).fold(0.0, f64::max)
    }
}

/// NLMP solver bound to a validated network and a truncation depth.
#[derive(Clone, Debug)]
pub struct Nlmp {
    net: ValidatedNetwork,
    gen: Arc<QueueGenerator>,
}

impl Nlmp {
    pub fn new(net: &ValidatedNetwork, max_len: usize) -> Result<Self, SolverError> {
        Ok(Nlmp {
            net: net.clone(),
            gen: Arc::new(QueueGenerator::new(net, max_len)?),
        })
    }

    pub fn for_config(net: &ValidatedNetwork, cfg: &SolverConfig) -> Result<Self, SolverError> {
        Self::new(net, cfg.max_len)
    }

    pub fn network(&self) -> &ValidatedNetwork {
        &self.net
    }

    pub fn generator(&self) -> &Arc<QueueGenerator> {
        &self.gen
    }

    pub fn space(&self) -> &Arc<WordSpace> {
        self.gen.space()
    }

    pub fn max_len(&self) -> usize {
        self.gen.max_len()
    }

    pub fn empty_state(&self) -> MeasureState {
        MeasureState::empty_queue(self.space().clone())
    }

    pub fn point_state(&self, x: &QueueWord) -> Result<MeasureState, SolverError> {
        MeasureState::point(self.space().clone(), x)
    }

    pub(crate) fn check_state(&self, mu: &MeasureState) -> Result<(), SolverError> {
        if mu.space().max_len() != self.max_len() || mu.space().classes() != self.gen.classes() {
            return Err(SolverError::TruncationMismatch {
                left: mu.space().max_len(),
                right: self.max_len(),
            });
        }
        Ok(())
    }

    /// Flows of `μ` under external rates `lambda`.
    pub fn compute_flows(&self, mu: &MeasureState, lambda: &[f64]) -> FlowRates {
        flows_of(&self.gen, &self.net, mu.weights(), lambda)
    }

    /// Master-equation right-hand side of `μ` for a given inflow `v`.
    pub fn master_rhs(&self, mu: &MeasureState, v: &[f64]) -> MeasureDerivative {
        let mut weights = vec![0.0; self.gen.len()];
        let leak_flux = master_rhs_into(&self.gen, mu.weights(), v, &mut weights);
        MeasureDerivative { weights, leak_flux }
    }

    /// Right-hand side with the inflow computed from `μ` itself.
    pub fn self_consistent_rhs(&self, mu: &MeasureState, lambda: &[f64]) -> MeasureDerivative {
        let flows = self.compute_flows(mu, lambda);
        self.master_rhs(mu, &flows.v)
    }
}

pub(crate) fn flows_of(
    gen: &QueueGenerator,
    net: &ValidatedNetwork,
    weights: &[f64],
    lambda: &[f64],
) -> FlowRates {
    let classes = gen.classes();
    let mut u = vec![0.0; classes];
    gen.accumulate_outflow(weights, &mut u);
    let mut w = vec![0.0; classes];
    net.routing().route_outflow(&u, &mut w);
    let v = lambda.iter().zip(&w).map(|(l, w)| l + w).collect();
    FlowRates { u, w, v }
}

/// `dμ = Σ_x μ(x) [Σ_r γ(x,x_r)(δ_{x⊖x_r} - δ_x) + Σ_j v_j (δ_{x⊕j} - δ_x)]`
/// with arrivals out of length-`K` words diverted to the returned leak flux.
pub(crate) fn master_rhs_into(gen: &QueueGenerator, weights: &[f64], v: &[f64], out: &mut [f64]) -> f64 {
    out.iter_mut().for_each(|d| *d = 0.0);
    let v_total: f64 = v.iter().sum();
    let mut leak = 0.0;
    for (idx, &m) in weights.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        out[idx] -= m * (gen.total_rate(idx) + v_total);
        for (target, rate) in gen.services(idx) {
            out[target] += m * rate;
        }
        for (&target, &vj) in gen.appends(idx).iter().zip(v) {
            let flux = m * vj;
            if target == OUTSIDE {
                leak += flux;
            } else {
                out[target as usize] += flux;
            }
        }
    }
    leak
}

/// `[μ..., leaked]` as an ODE with the inflow recomputed at every stage.
pub(crate) struct NlmpSystem<'a> {
    pub gen: &'a QueueGenerator,
    pub net: &'a ValidatedNetwork,
    pub lambda: Vec<f64>,
}

impl OdeSystem for NlmpSystem<'_> {
    fn dim(&self) -> usize {
        self.gen.len() + 1
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.gen.len();
        let flows = flows_of(self.gen, self.net, &y[..n], &self.lambda);
        dy[n] = master_rhs_into(self.gen, &y[..n], &flows.v, &mut dy[..n]);
    }
}

/// Two components evolved under the shared inflow
/// `v' = λ + ρ w¹ + (1-ρ) w²`. Layout: `[μ¹, leak¹, μ², leak²]`.
pub(crate) struct SplitSystem<'a> {
    pub gen: &'a QueueGenerator,
    pub net: &'a ValidatedNetwork,
    pub lambda: Vec<f64>,
    pub rho: f64,
}

impl OdeSystem for SplitSystem<'_> {
    fn dim(&self) -> usize {
        2 * (self.gen.len() + 1)
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.gen.len();
        let (y1, y2) = y.split_at(n + 1);
        let zero = vec![0.0; self.gen.classes()];
        let f1 = flows_of(self.gen, self.net, &y1[..n], &zero);
        let f2 = flows_of(self.gen, self.net, &y2[..n], &zero);
        let shared: Vec<f64> = (0..self.gen.classes())
            .map(|j| self.lambda[j] + self.rho * f1.w[j] + (1.0 - self.rho) * f2.w[j])
            .collect();
        let (d1, d2) = dy.split_at_mut(n + 1);
        d1[n] = master_rhs_into(self.gen, &y1[..n], &shared, &mut d1[..n]);
        d2[n] = master_rhs_into(self.gen, &y2[..n], &shared, &mut d2[..n]);
    }
}
