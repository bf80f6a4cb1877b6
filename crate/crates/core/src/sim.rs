//! Exact-jump simulation of `M` interconnected copies of the network.
//!
//! Every copy receives external class-`j` customers at rate `λ_j(t)`. A
//! customer finishing service at copy `m` leaves with probability `p_{i0}`
//! or joins class `j` at a copy chosen uniformly among all `M`, itself
//! included, with probability `p_{ij}`. Queues are unbounded; truncation
//! only enters when the ensemble is summarized as a measure.
//!
//! Per-copy service rates live in a Fenwick tree so that picking the next
//! server and updating its rate cost `O(log M)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::network::ValidatedNetwork;
use crate::nlmp::{MeasureState, SolverError};
use crate::word::{ClassId, QueueWord, WordSpace};

/// RNG stream for the dynamics.
const DYNAMICS_STREAM: u64 = 0;
/// RNG stream for drawing initial queues.
const INITIAL_STREAM: u64 = 1;
/// Rebuild the rate tree after this many updates to shed round-off.
const REBUILD_EVERY: u64 = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
    #[error("window [{start}, {end}] is empty or not covered by the event log")]
    WindowEmpty { start: f64, end: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// The queues of all copies plus the clock and the random stream.
#[derive(Clone, Debug)]
pub struct EnsembleState {
    pub queues: Vec<QueueWord>,
    pub time: f64,
    rng: ChaCha8Rng,
}

impl EnsembleState {
    pub fn empty(copies: usize, seed: u64) -> Self {
        Self::from_queues(vec![QueueWord::empty(); copies], seed)
    }

    pub fn from_queues(queues: Vec<QueueWord>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DYNAMICS_STREAM);
        EnsembleState { queues, time: 0.0, rng }
    }

    /// Draws every queue independently from `measure`, renormalized over
    /// the words it covers.
    pub fn sample_from(measure: &MeasureState, copies: usize, seed: u64) -> Result<Self, SimError> {
        let total = measure.total_mass();
        if total <= 0.0 {
            return Err(SimError::InvalidConfig("initial measure has no mass".into()));
        }
        let mut draw = ChaCha8Rng::seed_from_u64(seed);
        draw.set_stream(INITIAL_STREAM);
        let words = measure.space().words();
        let weights = measure.weights();
        let mut queues = Vec::with_capacity(copies);
        for _ in 0..copies {
            let mut u = draw.random::<f64>() * total;
            let mut pick = weights.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            queues.push(words[pick].clone());
        }
        Ok(Self::from_queues(queues, seed))
    }

    pub fn copies(&self) -> usize {
        self.queues.len()
    }

    pub fn customers(&self) -> usize {
        self.queues.iter().map(QueueWord::len).sum()
    }

    /// Fraction of copies with a nonempty queue.
    pub fn occupancy(&self) -> f64 {
        self.queues.iter().filter(|q| !q.is_empty()).count() as f64 / self.queues.len() as f64
    }
}

/// `(1/M) Σ_m δ_{x_m}` on the truncated space; longer words go to `leaked`.
pub fn empirical_measure(queues: &[QueueWord], space: &Arc<WordSpace>, time: f64) -> MeasureState {
    let mut counts = vec![0usize; space.len()];
    let mut outside = 0usize;
    for q in queues {
        match space.index_of(q) {
            Some(i) => counts[i] += 1,
            None => outside += 1,
        }
    }
    let m = queues.len() as f64;
    let weights = counts.iter().map(|&c| c as f64 / m).collect();
    MeasureState::from_parts(space.clone(), weights, outside as f64 / m, time)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    ExternalArrival,
    ServiceLeave,
    ServiceRoute,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ExternalArrival => "external_arrival",
            EventKind::ServiceLeave => "service_leave",
            EventKind::ServiceRoute => "service_route",
        }
    }
}

/// One logged event. Classes are zero-based.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub copy: usize,
    /// Copy joined by a routed customer.
    pub target: Option<usize>,
    /// Class of the served customer, or of the external arrival.
    pub class_before: usize,
    /// Class a routed customer joins.
    pub class_after: Option<usize>,
}

impl EventRecord {
    /// `(copy, class)` of the arrival this event causes, if any.
    pub fn arrival(&self) -> Option<(usize, usize)> {
        match self.kind {
            EventKind::ExternalArrival => Some((self.copy, self.class_before)),
            EventKind::ServiceRoute => Some((self.target?, self.class_after?)),
            EventKind::ServiceLeave => None,
        }
    }
}

/// Which events to keep.
#[derive(Clone, Debug, PartialEq)]
pub struct EventFilter {
    /// Keep events touching these copies; all copies when `None`.
    pub copies: Option<Vec<usize>>,
    pub start: f64,
    pub end: f64,
}

impl EventFilter {
    pub fn all() -> Self {
        EventFilter {
            copies: None,
            start: 0.0,
            end: f64::INFINITY,
        }
    }

    pub fn copy_window(copy: usize, start: f64, end: f64) -> Self {
        EventFilter {
            copies: Some(vec![copy]),
            start,
            end,
        }
    }

    fn keeps(&self, e: &EventRecord) -> bool {
        if e.time < self.start || e.time > self.end {
            return false;
        }
        match &self.copies {
            None => true,
            Some(set) => set.contains(&e.copy) || e.target.is_some_and(|t| set.contains(&t)),
        }
    }
}

/// Event log together with the filter that produced it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    pub filter: Option<EventFilter>,
    pub events: Vec<EventRecord>,
}

/// Cumulative per-class event counts.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowCounts {
    pub external: Vec<u64>,
    /// Customers that joined this class after a service.
    pub routed: Vec<u64>,
    /// Services completed in this class.
    pub served: Vec<u64>,
}

impl FlowCounts {
    fn new(classes: usize) -> Self {
        FlowCounts {
            external: vec![0; classes],
            routed: vec![0; classes],
            served: vec![0; classes],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub t_end: f64,
    /// Truncation used for the sampled empirical measures.
    pub max_len: usize,
    /// Spacing of the sampled measures; `None` samples only the end.
    pub sample_every: Option<f64>,
    pub log: Option<EventFilter>,
}

impl SimConfig {
    pub fn new(t_end: f64, max_len: usize) -> Self {
        SimConfig {
            t_end,
            max_len,
            sample_every: None,
            log: None,
        }
    }

    pub fn with_samples(mut self, every: f64) -> Self {
        self.sample_every = Some(every);
        self
    }

    pub fn with_log(mut self, filter: EventFilter) -> Self {
        self.log = Some(filter);
        self
    }
}

#[derive(Clone, Debug)]
pub struct SimSample {
    pub t: f64,
    pub measure: MeasureState,
    pub occupancy: f64,
    pub flows: FlowCounts,
}

#[derive(Clone, Debug)]
pub struct SimSummary {
    pub samples: Vec<SimSample>,
    pub log: EventLog,
    pub flows: FlowCounts,
    pub final_state: EnsembleState,
    pub events: u64,
    /// `(1/t) ∫₀ᵗ occupancy`, the time-averaged fraction of busy copies.
    pub mean_occupancy: f64,
}

/// Fenwick tree over nonnegative reals.
#[derive(Clone, Debug)]
struct RateTree {
    values: Vec<f64>,
    tree: Vec<f64>,
}

impl RateTree {
    fn new(values: Vec<f64>) -> Self {
        let mut t = RateTree {
            tree: vec![0.0; values.len() + 1],
            values,
        };
        t.rebuild();
        t
    }

    fn rebuild(&mut self) {
        let n = self.values.len();
        self.tree.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let pos = i + 1;
            self.tree[pos] += self.values[i];
            let parent = pos + (pos & pos.wrapping_neg());
            if parent <= n {
                self.tree[parent] += self.tree[pos];
            }
        }
    }

    fn set(&mut self, index: usize, value: f64) {
        let delta = value - self.values[index];
        if delta == 0.0 {
            return;
        }
        self.values[index] = value;
        let n = self.values.len();
        let mut pos = index + 1;
        while pos <= n {
            self.tree[pos] += delta;
            pos += pos & pos.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        let mut pos = self.values.len();
        let mut sum = 0.0;
        while pos > 0 {
            sum += self.tree[pos];
            pos &= pos - 1;
        }
        sum.max(0.0)
    }

    /// Index `i` with `prefix(i) ≤ u < prefix(i + 1)`, skipping zero-rate
    /// entries that round-off might otherwise select.
    fn find(&self, mut u: f64) -> usize {
        let n = self.values.len();
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= u {
                pos = next;
                u -= self.tree[next];
            }
            step >>= 1;
        }
        let mut idx = pos.min(n - 1);
        while self.values[idx] == 0.0 && idx > 0 {
            idx -= 1;
        }
        while self.values[idx] == 0.0 && idx + 1 < n {
            idx += 1;
        }
        idx
    }
}

/// Runs the ensemble from `state` to `cfg.t_end`.
pub fn simulate(net: &ValidatedNetwork, state: EnsembleState, cfg: &SimConfig) -> Result<SimSummary, SimError> {
    if state.queues.is_empty() {
        return Err(SimError::InvalidConfig("need at least one copy".into()));
    }
    if !(cfg.t_end.is_finite() && cfg.t_end >= state.time) {
        return Err(SimError::InvalidConfig(format!("t_end = {}", cfg.t_end)));
    }
    if let Some(every) = cfg.sample_every {
        if !(every.is_finite() && every > 0.0) {
            return Err(SimError::InvalidConfig(format!("sample spacing {every}")));
        }
    }
    let classes = net.classes();
    if let Some(bad) = state.queues.iter().flat_map(|q| q.entries()).find(|c| c.index() >= classes) {
        return Err(SimError::InvalidConfig(format!("class {} out of range", bad.label())));
    }
    let space = Arc::new(WordSpace::new(classes, cfg.max_len).map_err(SolverError::from)?);
    let copies = state.queues.len();
    let discipline = net.discipline();
    let routing = net.routing();

    let EnsembleState {
        mut queues,
        time: t0,
        mut rng,
    } = state;
    let mut tree = RateTree::new(queues.iter().map(|q| discipline.total_rate(q)).collect());
    let mut busy = queues.iter().filter(|q| !q.is_empty()).count();
    let mut flows = FlowCounts::new(classes);
    let mut log = EventLog {
        filter: cfg.log.clone(),
        events: Vec::new(),
    };
    let mut samples = Vec::new();
    let mut sample_index = 0usize;
    let mut busy_integral = 0.0;
    let mut events = 0u64;
    let mut updates = 0u64;
    let mut t = t0;

    let mut positions: Vec<(usize, f64)> = Vec::new();
    loop {
        let lambda = net.inflow().rates_at(t);
        let lambda_total: f64 = lambda.iter().sum();
        let external = copies as f64 * lambda_total;
        let service = tree.total();
        let rate = external + service;
        let horizon = net
            .inflow()
            .next_change_after(t)
            .map_or(cfg.t_end, |b| b.min(cfg.t_end));
        let t_next = if rate > 0.0 {
            t + Exp::new(rate).expect("positive rate").sample(&mut rng)
        } else {
            f64::INFINITY
        };

        // Grid points before the next jump see the current state; a grid
        // point on `t_end` is taken after the loop.
        let until = t_next.min(horizon);
        if let Some(every) = cfg.sample_every {
            loop {
                let s = t0 + sample_index as f64 * every;
                if s >= until || s >= cfg.t_end {
                    break;
                }
                samples.push(SimSample {
                    t: s,
                    measure: empirical_measure(&queues, &space, s),
                    occupancy: busy as f64 / copies as f64,
                    flows: flows.clone(),
                });
                sample_index += 1;
            }
        }

        if t_next >= horizon {
            busy_integral += busy as f64 * (horizon - t);
            t = horizon;
            if horizon >= cfg.t_end {
                break;
            }
            continue;
        }
        busy_integral += busy as f64 * (t_next - t);
        t = t_next;
        events += 1;

        let u = rng.random::<f64>() * rate;
        let record = if u < external {
            let copy = ((u / lambda_total) as usize).min(copies - 1);
            let mut v = u - copy as f64 * lambda_total;
            let mut class = classes - 1;
            for (j, &l) in lambda.iter().enumerate() {
                if v < l {
                    class = j;
                    break;
                }
                v -= l;
            }
            flows.external[class] += 1;
            let was_empty = queues[copy].is_empty();
            queues[copy].push(ClassId::new(class));
            busy += was_empty as usize;
            tree.set(copy, discipline.total_rate(&queues[copy]));
            EventRecord {
                time: t,
                kind: EventKind::ExternalArrival,
                copy,
                target: None,
                class_before: class,
                class_after: None,
            }
        } else {
            let copy = tree.find(u - external);
            positions.clear();
            discipline.for_each_rate(&queues[copy], |r, rate| {
                if rate > 0.0 {
                    positions.push((r, rate));
                }
            });
            let served_total: f64 = positions.iter().map(|p| p.1).sum();
            let mut v = rng.random::<f64>() * served_total;
            let mut position = positions.last().expect("busy copy").0;
            for &(r, rate) in &positions {
                if v < rate {
                    position = r;
                    break;
                }
                v -= rate;
            }
            let class = queues[copy].remove(position).index();
            flows.served[class] += 1;
            busy -= queues[copy].is_empty() as usize;
            tree.set(copy, discipline.total_rate(&queues[copy]));

            let mut w = rng.random::<f64>();
            let mut next_class = None;
            for (j, &p) in routing.row(class).iter().enumerate() {
                if w < p {
                    next_class = Some(j);
                    break;
                }
                w -= p;
            }
            match next_class {
                None => EventRecord {
                    time: t,
                    kind: EventKind::ServiceLeave,
                    copy,
                    target: None,
                    class_before: class,
                    class_after: None,
                },
                Some(j) => {
                    let target = rng.random_range(0..copies);
                    flows.routed[j] += 1;
                    let was_empty = queues[target].is_empty();
                    queues[target].push(ClassId::new(j));
                    busy += was_empty as usize;
                    tree.set(target, discipline.total_rate(&queues[target]));
                    EventRecord {
                        time: t,
                        kind: EventKind::ServiceRoute,
                        copy,
                        target: Some(target),
                        class_before: class,
                        class_after: Some(j),
                    }
                }
            }
        };
        if let Some(filter) = &cfg.log {
            if filter.keeps(&record) {
                log.events.push(record);
            }
        }
        updates += 1;
        if updates.is_multiple_of(REBUILD_EVERY) {
            tree.rebuild();
        }
    }

    {
        samples.push(SimSample {
            t: cfg.t_end,
            measure: empirical_measure(&queues, &space, cfg.t_end),
            occupancy: busy as f64 / copies as f64,
            flows: flows.clone(),
        });
    }
    let span = cfg.t_end - t0;
    let mean_occupancy = if span > 0.0 {
        busy_integral / (span * copies as f64)
    } else {
        busy as f64 / copies as f64
    };
    Ok(SimSummary {
        samples,
        log,
        flows,
        final_state: EnsembleState {
            queues,
            time: cfg.t_end,
            rng,
        },
        events,
        mean_occupancy,
    })
}

/// Gaps between consecutive class-`class` arrivals (external or routed) at
/// `copy` inside `[start, end]`, in time order.
pub fn interarrival_samples(log: &EventLog, copy: usize, class: usize, start: f64, end: f64) -> Result<Vec<f64>, SimError> {
    let covered = match &log.filter {
        None => false,
        Some(f) => {
            f.start <= start && end <= f.end && f.copies.as_ref().is_none_or(|set| set.contains(&copy))
        }
    };
    if !(end > start) || !covered {
        return Err(SimError::WindowEmpty { start, end });
    }
    let times: Vec<f64> = log
        .events
        .iter()
        .filter(|e| e.time >= start && e.time <= end && e.arrival() == Some((copy, class)))
        .map(|e| e.time)
        .collect();
    Ok(times.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Result of a one-sample Kolmogorov–Smirnov test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

pub const KS_MIN_SAMPLES: usize = 20;

/// Tests `samples` against `Exp(rate)`; the p-value comes from the
/// asymptotic Kolmogorov distribution of `√n D`.
pub fn ks_exponential(samples: &[f64], rate: f64) -> Result<KsResult, SimError> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(SimError::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(SimError::InvalidConfig(format!("rate {rate}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = 1.0 - (-rate * x.max(0.0)).exp();
        d = d.max((i + 1) as f64 / n - cdf).max(cdf - i as f64 / n);
    }
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(n.sqrt() * d),
        n: sorted.len(),
    })
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // Jacobi theta form, fast for small arguments.
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * x * x);
        let s: f64 = (1..=20)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (-m * m * c).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                let kf = k as f64;
                sign * (-2.0 * kf * kf * x * x).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}
