//! TOML network files.
//!
//! ```toml
//! classes = 2
//! nodes = ["a", "a"]              # optional, one label per class
//! routing = [[0.0, 0.5],          # row i: probabilities of moving from
//!            [0.0, 0.0]]          # class i to each class j
//! lambda = [0.05, 0.05]           # constant external rates, or a schedule:
//! # lambda = [{ t = 0.0, rates = [0.05, 0.05] },
//! #           { t = 10.0, rates = [0.0, 0.0] }]
//! discipline = "fifo"             # fifo | lifo-preemptive | processor-sharing
//! base_rate = 1.0                 # one rate for all classes, or a list
//! truncation_K = 8
//! # gamma_minus, gamma_plus, lambda_plus: optional overrides of the
//! # derived rate constants
//! ```

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::network::{
    Discipline, DisciplineKind, InflowSchedule, NetworkError, NetworkSpec, RoutingMatrix, ValidatedNetwork,
};

#[derive(Debug, Error)]
pub enum SpecFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed network file: {0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(#[from] NetworkError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    classes: usize,
    #[serde(default)]
    nodes: Option<Vec<String>>,
    routing: Vec<Vec<f64>>,
    lambda: RawInflow,
    discipline: DisciplineKind,
    base_rate: RawRates,
    #[serde(rename = "truncation_K")]
    truncation_k: usize,
    #[serde(default)]
    gamma_minus: Option<f64>,
    #[serde(default)]
    gamma_plus: Option<f64>,
    #[serde(default)]
    lambda_plus: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawInflow {
    Constant(Vec<f64>),
    Schedule(Vec<RawBreakpoint>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBreakpoint {
    t: f64,
    rates: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawRates {
    Uniform(f64),
    PerClass(Vec<f64>),
}

/// Parses a network file into a spec without validating it.
pub fn parse_spec(text: &str) -> Result<NetworkSpec, SpecFileError> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| SpecFileError::Parse(e.to_string()))?;
    let classes = raw.classes;
    let count = |what: &'static str, found: usize| {
        if found == classes {
            Ok(())
        } else {
            Err(NetworkError::DimensionMismatch {
                what,
                expected: classes,
                found,
            })
        }
    };
    count("routing rows", raw.routing.len())?;
    let routing = RoutingMatrix::from_rows(raw.routing)?;
    let inflow = match raw.lambda {
        RawInflow::Constant(rates) => {
            count("lambda", rates.len())?;
            InflowSchedule::constant(rates)
        }
        RawInflow::Schedule(points) => {
            for p in &points {
                count("lambda breakpoint", p.rates.len())?;
            }
            InflowSchedule::piecewise(points.into_iter().map(|p| (p.t, p.rates)).collect())?
        }
    };
    let rates = match raw.base_rate {
        RawRates::Uniform(r) => vec![r; classes],
        RawRates::PerClass(r) => {
            count("base_rate", r.len())?;
            r
        }
    };
    let nodes = raw.nodes.unwrap_or_else(|| vec!["0".to_string(); classes]);
    Ok(NetworkSpec {
        nodes,
        routing,
        inflow,
        discipline: Discipline::new(raw.discipline, rates),
        gamma_minus: raw.gamma_minus,
        gamma_plus: raw.gamma_plus,
        lambda_plus: raw.lambda_plus,
        truncation: raw.truncation_k,
    })
}

pub fn read_spec(path: &Path) -> Result<NetworkSpec, SpecFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpecFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_spec(&text)
}

/// Reads and validates a network file.
pub fn load_network(path: &Path) -> Result<ValidatedNetwork, SpecFileError> {
    Ok(read_spec(path)?.validate()?)
}
