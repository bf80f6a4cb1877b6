use std::fmt;
use std::sync::Arc;

use crate::word::{QueueWord, WordSpace};

use super::SolverError;

/// Probability weights over `X_K` plus the mass absorbed at the truncation
/// boundary. `Σ weights + leaked = 1` up to integration round-off.
#[derive(Clone)]
pub struct MeasureState {
    space: Arc<WordSpace>,
    weights: Vec<f64>,
    leaked: f64,
    time: f64,
}

impl fmt::Debug for MeasureState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let classes = self.space.classes();
        let mut map = f.debug_map();
        for (x, w) in self.space.words().iter().zip(&self.weights) {
            if *w != 0.0 {
                map.entry(&x.encode(classes), w);
            }
        }
        map.entry(&"leaked", &self.leaked);
        map.entry(&"t", &self.time);
        map.finish()
    }
}

impl MeasureState {
    pub fn zeros(space: Arc<WordSpace>) -> Self {
        let n = space.len();
        MeasureState {
            space,
            weights: vec![0.0; n],
            leaked: 0.0,
            time: 0.0,
        }
    }

    /// `δ_∅`.
    pub fn empty_queue(space: Arc<WordSpace>) -> Self {
        let mut m = MeasureState::zeros(space);
        m.weights[0] = 1.0;
        m
    }

    /// Unit mass at `x`.
    pub fn point(space: Arc<WordSpace>, x: &QueueWord) -> Result<Self, SolverError> {
        Self::from_pairs(space, [(x.clone(), 1.0)])
    }

    /// Measure from explicit `(word, weight)` pairs; weights must be
    /// nonnegative and sum to one.
    pub fn from_pairs(
        space: Arc<WordSpace>,
        pairs: impl IntoIterator<Item = (QueueWord, f64)>,
    ) -> Result<Self, SolverError> {
        let mut m = MeasureState::zeros(space);
        for (x, w) in pairs {
            let idx = m.space.index_of(&x).ok_or_else(|| {
                SolverError::InvalidInitialState(format!(
                    "word {} does not fit the truncated space",
                    x.encode(m.space.classes())
                ))
            })?;
            if !(w.is_finite() && w >= 0.0) {
                return Err(SolverError::InvalidInitialState(format!(
                    "weight {w} is not a nonnegative number"
                )));
            }
            m.weights[idx] += w;
        }
        let total = m.total_mass();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SolverError::InvalidInitialState(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(m)
    }

    /// Queue length geometric with the given ratio, classes uniform given
    /// the length, truncated to `K` and renormalized.
    pub fn geometric(space: Arc<WordSpace>, ratio: f64) -> Result<Self, SolverError> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(SolverError::InvalidInitialState(format!(
                "geometric ratio {ratio} must lie in [0, 1)"
            )));
        }
        let mut m = MeasureState::zeros(space);
        let classes = m.space.classes() as f64;
        for k in 0..=m.space.max_len() {
            let layer = m.space.layer(k);
            let per_word = ratio.powi(k as i32) / classes.powi(k as i32);
            m.weights[layer].iter_mut().for_each(|w| *w = per_word);
        }
        let total = m.total_mass();
        m.weights.iter_mut().for_each(|w| *w /= total);
        Ok(m)
    }

    /// Convex combination `a·self + (1-a)·other` (weights, leak, not time).
    pub fn mix(&self, a: f64, other: &MeasureState) -> Result<MeasureState, SolverError> {
        self.check_same_space(other)?;
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(x, y)| a * x + (1.0 - a) * y)
            .collect();
        Ok(MeasureState {
            space: self.space.clone(),
            weights,
            leaked: a * self.leaked + (1.0 - a) * other.leaked,
            time: self.time,
        })
    }

    pub(crate) fn from_parts(space: Arc<WordSpace>, weights: Vec<f64>, leaked: f64, time: f64) -> Self {
        debug_assert_eq!(space.len(), weights.len());
        MeasureState {
            space,
            weights,
            leaked,
            time,
        }
    }

    pub fn space(&self) -> &Arc<WordSpace> {
        &self.space
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn leaked(&self) -> f64 {
        self.leaked
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    /// Weight of `x`; zero for words outside the truncated space.
    pub fn get(&self, x: &QueueWord) -> f64 {
        self.space.index_of(x).map_or(0.0, |i| self.weights[i])
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `|Σ weights + leaked - 1|`.
    pub fn ledger_defect(&self) -> f64 {
        (self.total_mass() + self.leaked - 1.0).abs()
    }

    /// `α(μ) = 1 - μ(∅)`.
    pub fn alpha(&self) -> f64 {
        1.0 - self.weights[0]
    }

    /// Weights renormalized to the mass that has not leaked.
    pub fn conditional(&self) -> MeasureState {
        let total = self.total_mass();
        MeasureState {
            space: self.space.clone(),
            weights: self.weights.iter().map(|w| w / total).collect(),
            leaked: 0.0,
            time: self.time,
        }
    }

    /// Nonzero `(word, weight)` pairs in canonical order.
    pub fn support(&self) -> impl Iterator<Item = (&QueueWord, f64)> {
        self.space
            .words()
            .iter()
            .zip(self.weights.iter().copied())
            .filter(|(_, w)| *w != 0.0)
    }

    /// Largest absolute weight difference.
    pub fn sup_distance(&self, other: &MeasureState) -> Result<f64, SolverError> {
        self.check_same_space(other)?;
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn check_same_space(&self, other: &MeasureState) -> Result<(), SolverError> {
        if self.space.max_len() != other.space.max_len()
            || self.space.classes() != other.space.classes()
        {
            return Err(SolverError::TruncationMismatch {
                left: self.space.max_len(),
                right: other.space.max_len(),
            });
        }
        Ok(())
    }
}

/// Total-variation distance: `½ Σ |a - b|` over words plus half the leak
/// difference.
pub fn tv_distance(a: &MeasureState, b: &MeasureState) -> Result<f64, SolverError> {
    a.check_same_space(b)?;
    let body: f64 = a
        .weights
        .iter()
        .zip(&b.weights)
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(0.5 * body + 0.5 * (a.leaked - b.leaked).abs())
}
