//! CSV artifacts. Every file opens with one comment line carrying the seed
//! (or `none`) and the spec hash, followed by a CSV header row.
//!
//! Words are written in their text form (`-` for the empty queue) and
//! classes as 1-based labels.

use std::io::Write;

use thiserror::Error;

use crate::coupling::CoupledSample;
use crate::nlmp::{MeasureState, TrajectorySample};
use crate::sim::{EventLog, KsResult, SimSample};
use crate::word::WordSpace;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Provenance line written at the top of every file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub spec_hash: String,
}

impl Provenance {
    pub fn new(seed: Option<u64>, spec_hash: impl Into<String>) -> Self {
        Provenance {
            seed,
            spec_hash: spec_hash.into(),
        }
    }

    pub fn line(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        format!("# seed={seed} spec_hash={}", self.spec_hash)
    }

    /// Reads the provenance back from the first line of a file.
    pub fn parse(line: &str) -> Option<Self> {
        let rest = line.strip_prefix("# ")?;
        let mut seed = None;
        let mut hash = None;
        for field in rest.split_whitespace() {
            match field.split_once('=')? {
                ("seed", "none") => seed = Some(None),
                ("seed", s) => seed = Some(Some(s.parse().ok()?)),
                ("spec_hash", h) => hash = Some(h.to_string()),
                _ => {}
            }
        }
        Some(Provenance {
            seed: seed?,
            spec_hash: hash?,
        })
    }
}

fn writer<W: Write>(mut out: W, prov: &Provenance) -> Result<csv::Writer<W>, OutputError> {
    writeln!(out, "{}", prov.line())?;
    Ok(csv::Writer::from_writer(out))
}

fn class_columns(prefix: &str, classes: usize) -> impl Iterator<Item = String> + '_ {
    (1..=classes).map(move |j| format!("{prefix}_{j}"))
}

fn word_columns(space: &WordSpace) -> impl Iterator<Item = String> + '_ {
    space.words().iter().map(move |x| x.encode(space.classes()))
}

fn num(x: f64) -> String {
    x.to_string()
}

/// `t, mass, leaked, alpha, L, S, drift, u_j.., w_j.., v_j..`.
pub fn write_trajectory<W: Write>(out: W, prov: &Provenance, classes: usize, samples: &[TrajectorySample]) -> Result<(), OutputError> {
    let mut w = writer(out, prov)?;
    let mut header: Vec<String> = ["t", "mass", "leaked", "alpha", "L", "S", "drift"].map(String::from).to_vec();
    header.extend(class_columns("u", classes));
    header.extend(class_columns("w", classes));
    header.extend(class_columns("v", classes));
    w.write_record(&header)?;
    for s in samples {
        let l = &s.lyapunov;
        let mut row = vec![num(s.t), num(s.mass), num(s.leaked), num(l.alpha), num(l.l), num(l.s), num(l.drift)];
        row.extend(s.flows.u.iter().chain(&s.flows.w).chain(&s.flows.v).map(|x| num(*x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `t, <word>.., leaked`: one row per measure.
pub fn write_measures<W: Write>(out: W, prov: &Provenance, measures: &[MeasureState]) -> Result<(), OutputError> {
    let mut w = writer(out, prov)?;
    if let Some(first) = measures.first() {
        let mut header = vec!["t".to_string()];
        header.extend(word_columns(first.space()));
        header.push("leaked".into());
        w.write_record(&header)?;
    }
    for m in measures {
        let mut row = vec![num(m.time())];
        row.extend(m.weights().iter().map(|x| num(*x)));
        row.push(num(m.leaked()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `t, w_mass, r_mass, leaked, tv_bound, tv_actual, red_L, red_pair_mass,
/// orphan_mass, r_integral`. `tv_bound` repeats `r_mass`, the coupling bound.
pub fn write_coupling<W: Write>(out: W, prov: &Provenance, samples: &[CoupledSample]) -> Result<(), OutputError> {
    let mut w = writer(out, prov)?;
    w.write_record([
        "t",
        "w_mass",
        "r_mass",
        "leaked",
        "tv_bound",
        "tv_actual",
        "red_L",
        "red_pair_mass",
        "orphan_mass",
        "r_integral",
    ])?;
    for s in samples {
        w.write_record([
            num(s.t),
            num(s.w_mass),
            num(s.r_mass),
            num(s.leaked),
            num(s.r_mass),
            num(s.tv_actual),
            num(s.red_l),
            num(s.red_pair_mass),
            num(s.orphan_mass),
            num(s.red_integral),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `t, <word>.., leaked, occupancy, external_j.., routed_j.., served_j..`.
pub fn write_sim_summary<W: Write>(out: W, prov: &Provenance, samples: &[SimSample]) -> Result<(), OutputError> {
    let mut w = writer(out, prov)?;
    if let Some(first) = samples.first() {
        let classes = first.flows.external.len();
        let mut header = vec!["t".to_string()];
        header.extend(word_columns(first.measure.space()));
        header.extend(["leaked".to_string(), "occupancy".to_string()]);
        header.extend(class_columns("external", classes));
        header.extend(class_columns("routed", classes));
        header.extend(class_columns("served", classes));
        w.write_record(&header)?;
    }
    for s in samples {
        let mut row = vec![num(s.t)];
        row.extend(s.measure.weights().iter().map(|x| num(*x)));
        row.push(num(s.measure.leaked()));
        row.push(num(s.occupancy));
        let f = &s.flows;
        row.extend(f.external.iter().chain(&f.routed).chain(&f.served).map(u64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `time, kind, copy, target, class_before, class_after`; absent fields
/// are left empty.
pub fn write_event_log<W: Write>(out: W, prov: &Provenance, log: &EventLog) -> Result<(), OutputError> {
    let mut w = writer(out, prov)?;
    w.write_record(["time", "kind", "copy", "target", "class_before", "class_after"])?;
    for e in &log.events {
        w.write_record([
            num(e.time),
            e.kind.as_str().to_string(),
            e.copy.to_string(),
            e.target.map_or_else(String::new, |t| t.to_string()),
            (e.class_before + 1).to_string(),
            e.class_after.map_or_else(String::new, |c| (c + 1).to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per time of a distance series: `t, <name>..`.
pub fn write_series<W: Write>(out: W, prov: &Provenance, names: &[&str], rows: &[Vec<f64>]) -> Result<(), OutputError> {
    let mut w = writer(out, prov)?;
    w.write_record(names)?;
    for r in rows {
        w.write_record(r.iter().map(|x| num(*x)))?;
    }
    w.flush()?;
    Ok(())
}

/// `class, rate, n, statistic, p_value`.
pub fn write_ks<W: Write>(out: W, prov: &Provenance, results: &[(usize, f64, KsResult)]) -> Result<(), OutputError> {
    let mut w = writer(out, prov)?;
    w.write_record(["class", "rate", "n", "statistic", "p_value"])?;
    for (class, rate, r) in results {
        w.write_record([
            (class + 1).to_string(),
            num(*rate),
            r.n.to_string(),
            num(r.statistic),
            num(r.p_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}
