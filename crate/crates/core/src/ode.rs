//! Classical fixed-step Runge-Kutta 4 for autonomous-within-a-step systems.

/// A right-hand side `dy/dt = f(y)` whose external inputs are frozen for
/// the duration of one step.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, y: &[f64], dy: &mut [f64]);
}

/// Stage buffers for RK4, reused across steps.
#[derive(Clone, Debug)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Rk4 {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            stage: vec![0.0; dim],
        }
    }

    /// Advances `y` in place by `dt`. Every stage re-evaluates the full
    /// right-hand side, including any state-dependent rates.
    pub fn step<S: OdeSystem + ?Sized>(&mut self, system: &S, y: &mut [f64], dt: f64) {
        debug_assert_eq!(y.len(), self.k1.len());
        system.rhs(y, &mut self.k1);
        axpy_into(&mut self.stage, y, 0.5 * dt, &self.k1);
        system.rhs(&self.stage, &mut self.k2);
        axpy_into(&mut self.stage, y, 0.5 * dt, &self.k2);
        system.rhs(&self.stage, &mut self.k3);
        axpy_into(&mut self.stage, y, dt, &self.k3);
        system.rhs(&self.stage, &mut self.k4);
        let c = dt / 6.0;
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += c * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }
}

#[inline]
fn axpy_into(out: &mut [f64], y: &[f64], a: f64, k: &[f64]) {
    for ((o, &yi), &ki) in out.iter_mut().zip(y).zip(k) {
        *o = yi + a * ki;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay(f64);

    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, y: &[f64], dy: &mut [f64]) {
            dy[0] = -self.0 * y[0];
        }
    }

    #[test]
    fn fourth_order_convergence_on_decay() {
        let err = |dt: f64| {
            let mut y = [1.0];
            let mut rk = Rk4::new(1);
            let steps = (1.0 / dt).round() as usize;
            for _ in 0..steps {
                rk.step(&Decay(2.0), &mut y, dt);
            }
            (y[0] - (-2.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
    }
}
