//! Analytic oracles and statistical reduction.
//!
//! The Erlang delay formula gives closed-form equilibrium waiting times for
//! Markovian multi-server queues and anchors the distributional acceptance
//! checks; batch summaries and a two-sample Kolmogorov-Smirnov test compare
//! the samplers against it and against each other.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::sampler::SampleRecord;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("unstable: lambda {lambda} must be below servers {servers} * mu {mu}")]
    Unstable {
        lambda: f64,
        mu: f64,
        servers: usize,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("batch is not homogeneous: {0}")]
    Heterogeneous(String),
    #[error("selector {0} not present in the batch")]
    MissingSelector(String),
}

/// Probability that an arrival must wait (Erlang delay probability), via the
/// blocking-probability recurrence, which stays in (0, 1] and never overflows
/// regardless of the server count.
pub fn erlang_c_delay_probability(
    servers: usize,
    lambda: f64,
    mu: f64,
) -> Result<f64, AnalyticsError> {
    check_stable(servers, lambda, mu)?;
    let offered = lambda / mu;
    let mut blocking = 1.0;
    for k in 1..=servers {
        blocking = offered * blocking / (k as f64 + offered * blocking);
    }
    let rho = offered / servers as f64;
    Ok(blocking / (1.0 - rho * (1.0 - blocking)))
}

/// Expected equilibrium waiting time of a Markovian multi-server queue.
pub fn erlang_c_wait(servers: usize, lambda: f64, mu: f64) -> Result<f64, AnalyticsError> {
    let p_wait = erlang_c_delay_probability(servers, lambda, mu)?;
    Ok(p_wait / (servers as f64 * mu - lambda))
}

fn check_stable(servers: usize, lambda: f64, mu: f64) -> Result<(), AnalyticsError> {
    if servers >= 1 && lambda > 0.0 && mu > 0.0 && lambda < servers as f64 * mu {
        Ok(())
    } else {
        Err(AnalyticsError::Unstable {
            lambda,
            mu,
            servers,
        })
    }
}

/// Which family of samples to reduce from a batch of records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    M(usize),
    Beta(f64),
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selector::M(m) => write!(f, "m={m}"),
            Selector::Beta(b) => write!(f, "beta={b}"),
        }
    }
}

/// Per-coordinate reduction of a batch: exact sample means, unbiased standard
/// errors, empirical distribution on the pooled order statistics, and the
/// histogram of condition-extension counts.
#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub means: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Per coordinate: sorted `(x, F(x))` grid.
    pub cdfs: Vec<Vec<(f64, f64)>>,
    /// doublings-for-condition value -> number of runs.
    pub extension_histogram: BTreeMap<u32, usize>,
}

/// Reduces the samples selected by `selector` from a homogeneous batch.
pub fn summarize(
    batch: &[SampleRecord],
    selector: Selector,
) -> Result<BatchSummary, AnalyticsError> {
    if batch.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let vectors: Vec<&[f64]> = batch
        .iter()
        .map(|r| {
            let v = match selector {
                Selector::M(m) => r.m_samples.iter().find(|(k, _)| *k == m).map(|(_, v)| v),
                Selector::Beta(b) => r.beta_samples.iter().find(|(k, _)| *k == b).map(|(_, v)| v),
            };
            v.map(|w| w.coords())
                .ok_or_else(|| AnalyticsError::MissingSelector(selector.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let coords = vectors[0].len();
    if vectors.iter().any(|v| v.len() != coords) {
        return Err(AnalyticsError::Heterogeneous(
            "records carry vectors of different lengths".into(),
        ));
    }

    let n = vectors.len();
    let mut means = Vec::with_capacity(coords);
    let mut stderrs = Vec::with_capacity(coords);
    let mut cdfs = Vec::with_capacity(coords);
    for k in 0..coords {
        let values: Vec<f64> = vectors.iter().map(|v| v[k]).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var =
                values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values;
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("samples are finite"));
        let cdf = sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| (x, (i + 1) as f64 / n as f64))
            .collect();
        means.push(mean);
        stderrs.push(stderr);
        cdfs.push(cdf);
    }

    let mut extension_histogram = BTreeMap::new();
    for r in batch {
        *extension_histogram
            .entry(r.doublings_for_condition)
            .or_insert(0) += 1;
    }
    Ok(BatchSummary {
        runs: n,
        means,
        stderrs,
        cdfs,
        extension_histogram,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), AnalyticsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).expect("samples are finite"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("samples are finite"));

    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = a[i].min(b[j]);
        while i < n && a[i] <= t {
            i += 1;
        }
        while j < m && b[j] <= t {
            j += 1;
        }
        let fa = i as f64 / n as f64;
        let fb = j as f64 / m as f64;
        d = d.max((fa - fb).abs());
    }

    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let sqrt_ne = ne.sqrt();
    let t = (sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d;
    Ok((d, ks_survival(t)))
}

/// Kolmogorov distribution tail Q(t) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 t^2).
fn ks_survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * t * t).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Expected equilibrium wait of the single-server Markov queue, for reduction
/// checks.
pub fn mm1_wait(lambda: f64, mu: f64) -> Result<f64, AnalyticsError> {
    check_stable(1, lambda, mu)?;
    Ok(lambda / (mu * (mu - lambda)))
}
