use crate::generator::QueueGenerator;

use super::{MeasureState, Nlmp, SolverError};

/// Lyapunov diagnostics of a measure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovReport {
    /// `L(μ) = Σ_x L(x) μ(x)`: expected remaining services.
    pub l: f64,
    /// `S(μ) = Σ_{x≠∅} γ(x) μ(x)`: mean service rate.
    pub s: f64,
    /// `α(μ) = 1 - μ(∅)`.
    pub alpha: f64,
    /// `Σ_j λ_j h(j) - S(μ)`, which equals `dL/dt` along the flow.
    pub drift: f64,
}

pub(crate) fn report_of(gen: &QueueGenerator, h: &[f64], weights: &[f64], lambda: &[f64]) -> LyapunovReport {
    let mut l = 0.0;
    let mut s = 0.0;
    for (idx, &m) in weights.iter().enumerate().skip(1) {
        if m == 0.0 {
            continue;
        }
        l += m * gen.weight(idx);
        s += m * gen.total_rate(idx);
    }
    let input: f64 = lambda.iter().zip(h).map(|(l, h)| l * h).sum();
    LyapunovReport {
        l,
        s,
        alpha: 1.0 - weights[0],
        drift: input - s,
    }
}

impl Nlmp {
    pub fn lyapunov_report(&self, mu: &MeasureState, lambda: &[f64]) -> LyapunovReport {
        report_of(self.generator(), self.network().h(), mu.weights(), lambda)
    }

    /// `|J| ε h / γ₋` with `ε = λ₊`: once `α(μ_t)` is below this level the
    /// Lyapunov function no longer has to decrease.
    pub fn alpha_threshold(&self) -> f64 {
        let net = self.network();
        net.classes() as f64 * net.lambda_plus() * net.remaining_services().h_max / net.gamma_minus()
    }
}

/// Bounds for a queue fed by Poisson inflows of rate at most `ε` per class
/// and served at total rate at least `γ₋`, started empty. The dominating
/// queue is geometric with ratio `ϰ = |J| ε / γ₋`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricBounds {
    pub kappa: f64,
    /// Lower bound on the probability of an empty queue, `1 - ϰ`.
    pub p0_lower: f64,
    /// Upper bound on the mean length, `ϰ / (1 - ϰ)`.
    pub mean_upper: f64,
    /// Upper bound on `Σ_{k>1} k ν(k)`, `ϰ² / (1 - ϰ)`.
    pub tail_mean_upper: f64,
}

pub fn geometric_bounds(epsilon: f64, gamma_minus: f64, classes: usize) -> Result<GeometricBounds, SolverError> {
    if !(epsilon >= 0.0 && gamma_minus > 0.0) {
        return Err(SolverError::InvalidConfig(format!(
            "need epsilon >= 0 and gamma_minus > 0, got {epsilon} and {gamma_minus}"
        )));
    }
    let kappa = classes as f64 * epsilon / gamma_minus;
    if kappa >= 1.0 {
        return Err(SolverError::KappaNotSubcritical { kappa });
    }
    Ok(GeometricBounds {
        kappa,
        p0_lower: 1.0 - kappa,
        mean_upper: kappa / (1.0 - kappa),
        tail_mean_upper: kappa * kappa / (1.0 - kappa),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{DisciplineKind, NetworkSpec, RoutingMatrix};
    use crate::word::QueueWord;

    fn e1_nlmp() -> Nlmp {
        let routing = RoutingMatrix::from_rows(vec![vec![0.0, 0.5], vec![0.0, 0.0]]).unwrap();
        let net = NetworkSpec::simple(routing, vec![0.05, 0.05], DisciplineKind::Fifo, 1.0, 8)
            .validate()
            .unwrap();
        Nlmp::new(&net, 4).unwrap()
    }

    #[test]
    fn bounds_examples() {
        let b = geometric_bounds(0.05, 1.0, 2).unwrap();
        assert!((b.kappa - 0.1).abs() < 1e-15);
        assert!((b.p0_lower - 0.9).abs() < 1e-15);
        assert!((b.mean_upper - 1.0 / 9.0).abs() < 1e-15);
        assert!((b.tail_mean_upper - 1.0 / 90.0).abs() < 1e-15);

        let z = geometric_bounds(0.0, 1.0, 2).unwrap();
        assert_eq!((z.kappa, z.p0_lower, z.mean_upper, z.tail_mean_upper), (0.0, 1.0, 0.0, 0.0));

        assert!(matches!(
            geometric_bounds(0.6, 1.0, 2),
            Err(SolverError::KappaNotSubcritical { .. })
        ));
    }

    #[test]
    fn report_examples() {
        let nlmp = e1_nlmp();
        let lambda = [0.05, 0.05];
        let r = nlmp.lyapunov_report(&nlmp.empty_state(), &lambda);
        assert_eq!((r.l, r.s, r.alpha), (0.0, 0.0, 0.0));
        assert!((r.drift - 0.125).abs() < 1e-15);

        let one = nlmp
            .point_state(&QueueWord::from_labels(&[1], 2).unwrap())
            .unwrap();
        let r = nlmp.lyapunov_report(&one, &lambda);
        assert_eq!((r.l, r.s, r.alpha), (1.5, 1.0, 1.0));
        assert!((r.drift + 0.875).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_dominates_alpha() {
        let nlmp = e1_nlmp();
        for ratio in [0.0, 0.1, 0.5, 0.9] {
            let mu = MeasureState::geometric(nlmp.space().clone(), ratio).unwrap();
            let r = nlmp.lyapunov_report(&mu, &[0.05, 0.05]);
            assert!(r.l >= r.alpha - 1e-15);
        }
    }

    #[test]
    fn settling_threshold() {
        // 2 * 0.05 * 1.5 / 1
        assert!((e1_nlmp().alpha_threshold() - 0.15).abs() < 1e-15);
    }
}
