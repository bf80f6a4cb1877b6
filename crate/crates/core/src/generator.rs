//! Precomputed transition tables of a single queue on the truncated space.
//!
//! For each word index the table stores the append targets per class, the
//! nonzero service transitions, the total service rate, the per-class
//! outflow rate `Σ_{r: x_r = j} γ(x, x_r)`, and `L(x)`. Both the NLMP and
//! the coupled solver evaluate their right-hand sides from these arrays.

use std::sync::Arc;

use crate::network::{queue_weight, ValidatedNetwork};
use crate::word::{ClassId, WordError, WordSpace};

/// Marker for "arrival leaves the truncated space".
pub const OUTSIDE: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub struct QueueGenerator {
    space: Arc<WordSpace>,
    classes: usize,
    append: Vec<u32>,
    service_start: Vec<usize>,
    service_target: Vec<u32>,
    service_rate: Vec<f64>,
    total_rate: Vec<f64>,
    class_rate: Vec<f64>,
    weight: Vec<f64>,
}

impl QueueGenerator {
    pub fn new(net: &ValidatedNetwork, max_len: usize) -> Result<Self, WordError> {
        let classes = net.classes();
        let space = WordSpace::new(classes, max_len)?;
        let n = space.len();
        let mut append = Vec::with_capacity(n * classes);
        let mut service_start = Vec::with_capacity(n + 1);
        let mut service_target = Vec::new();
        let mut service_rate = Vec::new();
        let mut total_rate = Vec::with_capacity(n);
        let mut class_rate = vec![0.0; n * classes];
        let mut weight = Vec::with_capacity(n);
        for (idx, x) in space.words().iter().enumerate() {
            for c in 0..classes {
                let target = if x.len() < max_len {
                    space.index_of(&x.arrival(ClassId::new(c))).expect("in space") as u32
                } else {
                    OUTSIDE
                };
                append.push(target);
            }
            service_start.push(service_target.len());
            let mut total = 0.0;
            net.discipline().for_each_rate(x, |r, rate| {
                if rate > 0.0 {
                    let y = x.service(r).expect("position from profile");
                    service_target.push(space.index_of(&y).expect("closed under service") as u32);
                    service_rate.push(rate);
                    class_rate[idx * classes + x.entries()[r].index()] += rate;
                    total += rate;
                }
            });
            total_rate.push(total);
            weight.push(queue_weight(x, net.h()));
        }
        service_start.push(service_target.len());
        Ok(QueueGenerator {
            space: Arc::new(space),
            classes,
            append,
            service_start,
            service_target,
            service_rate,
            total_rate,
            class_rate,
            weight,
        })
    }

    #[inline]
    pub fn space(&self) -> &Arc<WordSpace> {
        &self.space
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.space.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn max_len(&self) -> usize {
        self.space.max_len()
    }

    /// Index of `x ⊕ j`, or [`OUTSIDE`].
    #[inline]
    pub fn append(&self, idx: usize, class: usize) -> u32 {
        self.append[idx * self.classes + class]
    }

    #[inline]
    pub fn appends(&self, idx: usize) -> &[u32] {
        &self.append[idx * self.classes..(idx + 1) * self.classes]
    }

    /// Nonzero service transitions `(target index, rate)` out of `idx`.
    #[inline]
    pub fn services(&self, idx: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.service_start[idx]..self.service_start[idx + 1];
        self.service_target[range.clone()]
            .iter()
            .zip(&self.service_rate[range])
            .map(|(&t, &r)| (t as usize, r))
    }

    #[inline]
    pub fn total_rate(&self, idx: usize) -> f64 {
        self.total_rate[idx]
    }

    #[inline]
    pub fn class_rates(&self, idx: usize) -> &[f64] {
        &self.class_rate[idx * self.classes..(idx + 1) * self.classes]
    }

    /// `L(x)` of the word at `idx`.
    #[inline]
    pub fn weight(&self, idx: usize) -> f64 {
        self.weight[idx]
    }

    /// Adds `Σ_x m(x) class_rate(x)` into `out`.
    pub fn accumulate_outflow(&self, measure: &[f64], out: &mut [f64]) {
        for (idx, &m) in measure.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (o, &r) in out.iter_mut().zip(self.class_rates(idx)) {
                *o += m * r;
            }
        }
    }
}
