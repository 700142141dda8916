//! Orchestration of the perfect samplers.
//!
//! `sandwich_sample` runs the binary-backoff scheme for one server count:
//! build the dominating path over `[T, 0]`, run the sandwich pair, and double
//! the window until the pair coalesces by time zero. `omnithermal_sample`
//! additionally doubles until the coalescence-monotonicity condition holds
//! over the coalesced stretch, after which a single lower process per extra
//! server count (and per work-rate scaling) evolved through the shared marks
//! is already an exact equilibrium draw. `emptying_sample` is the older,
//! slower scheme — wait for the dominating queue to empty, then run forward
//! from empty — kept as an independent distributional oracle.

use serde::Serialize;
use thiserror::Error;

use crate::dominating::{self, DominatingError, DominatingPath};
use crate::rng::Streams;
use crate::sandwich::{self, ConditionStatus, RunTranscript, SandwichError};
use crate::workload::{leq_partial, InsertRule, MarkSequence, WorkloadError, WorkloadVector};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidSpec(String),
    #[error(
        "run {run_id} aborted: backoff doubled {doublings} times without success; \
             the run is discarded rather than truncated"
    )]
    MaxDoublingsExceeded { run_id: u64, doublings: u32 },
    #[error("run {run_id} aborted: {source}")]
    EmptyingCapExceeded {
        run_id: u64,
        source: DominatingError,
    },
    #[error(transparent)]
    Dominating(#[from] DominatingError),
    #[error(transparent)]
    Sandwich(#[from] SandwichError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

/// Parameters of one sampling problem.
#[derive(Debug, Clone, Serialize)]
pub struct QueueSpec {
    /// Base server count.
    pub servers: usize,
    pub lambda: f64,
    pub mu: f64,
    /// Extra-server increments to sample simultaneously (0 = base system).
    pub m_list: Vec<usize>,
    /// Work-rate scalings in (0, 1]: servers complete work at rate 1/beta.
    pub beta_list: Vec<f64>,
    /// Initial backoff, strictly negative.
    pub initial_backoff: f64,
    pub max_doublings: u32,
}

pub const DEFAULT_INITIAL_BACKOFF: f64 = -1.0;
pub const DEFAULT_MAX_DOUBLINGS: u32 = 40;

impl QueueSpec {
    pub fn new(servers: usize, lambda: f64, mu: f64) -> Self {
        QueueSpec {
            servers,
            lambda,
            mu,
            m_list: vec![0],
            beta_list: vec![1.0],
            initial_backoff: DEFAULT_INITIAL_BACKOFF,
            max_doublings: DEFAULT_MAX_DOUBLINGS,
        }
    }

    pub fn with_m_list(mut self, m_list: Vec<usize>) -> Self {
        self.m_list = m_list;
        self
    }

    pub fn with_beta_list(mut self, beta_list: Vec<f64>) -> Self {
        self.beta_list = beta_list;
        self
    }

    pub fn with_initial_backoff(mut self, t0: f64) -> Self {
        self.initial_backoff = t0;
        self
    }

    pub fn with_max_doublings(mut self, n: u32) -> Self {
        self.max_doublings = n;
        self
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.servers < 1 {
            return Err(SamplerError::InvalidSpec(
                "server count must be at least 1".into(),
            ));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(SamplerError::InvalidSpec(format!(
                "arrival rate must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(SamplerError::InvalidSpec(format!(
                "service rate must be positive, got {}",
                self.mu
            )));
        }
        if self.lambda >= self.servers as f64 * self.mu {
            return Err(SamplerError::InvalidSpec(format!(
                "unstable: lambda {} >= c*mu {}",
                self.lambda,
                self.servers as f64 * self.mu
            )));
        }
        if self.m_list.is_empty() {
            return Err(SamplerError::InvalidSpec("m list must be non-empty".into()));
        }
        if self.m_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SamplerError::InvalidSpec(
                "m list must be sorted and distinct".into(),
            ));
        }
        if self.beta_list.is_empty() {
            return Err(SamplerError::InvalidSpec(
                "beta list must be non-empty".into(),
            ));
        }
        if self.beta_list.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
            return Err(SamplerError::InvalidSpec(
                "every beta must lie in (0, 1]".into(),
            ));
        }
        if !(self.initial_backoff < 0.0) || !self.initial_backoff.is_finite() {
            return Err(SamplerError::InvalidSpec(format!(
                "initial backoff must be negative, got {}",
                self.initial_backoff
            )));
        }
        Ok(())
    }
}

/// One omnithermal draw: equilibrium vectors per extra-server count and per
/// work-rate scaling, plus run metadata.
#[derive(Debug, Clone, Serialize)]
pub struct SampleRecord {
    pub run_id: u64,
    /// `(m, equilibrium vector of the (c+m)-server system)`.
    pub m_samples: Vec<(usize, WorkloadVector)>,
    /// `(beta, equilibrium vector with work completed at rate 1/beta)`, in
    /// time units of the scaled system.
    pub beta_samples: Vec<(f64, WorkloadVector)>,
    /// Final window start.
    pub backoff: f64,
    /// Coalescence time of the base pair within the final window.
    pub coalesced_at: Option<f64>,
    pub doublings_for_coalescence: u32,
    pub doublings_for_condition: u32,
    pub condition_was_extended: bool,
}

/// Evolves a single lower process from empty through the marks, scaling
/// durations by `beta`; returns the window-end vector. The arithmetic matches
/// the sandwich lower path bit for bit: completion instants, canonicalized at
/// each arrival, converted to workloads once at the end.
pub fn evolve_lower(
    marks: &MarkSequence,
    servers: usize,
    beta: f64,
) -> Result<WorkloadVector, SamplerError> {
    let mut instants = vec![marks.start(); servers];
    for e in marks.events() {
        for x in instants.iter_mut() {
            if *x < e.time {
                *x = e.time;
            }
        }
        let (next, _) =
            crate::workload::shift_insert(&instants, e.duration * beta, InsertRule::LowestIndex);
        instants = next;
    }
    let end = marks.end();
    Ok(WorkloadVector::new(
        instants.iter().map(|x| (x - end).max(0.0)).collect(),
    )?)
}

/// Binary-backoff sandwich sampler for the base server count. Returns the
/// first coalescing transcript together with the dominating path that
/// produced it and the number of doublings used.
pub fn sandwich_sample(
    streams: Streams,
    spec: &QueueSpec,
    run_id: u64,
) -> Result<(RunTranscript, DominatingPath, u32), SamplerError> {
    spec.validate()?;
    let mut path = DominatingPath::build(
        streams,
        spec.servers,
        spec.lambda,
        spec.mu,
        spec.initial_backoff,
        run_id,
    )?;
    let mut doublings = 0u32;
    loop {
        let transcript = run_base_window(&path, spec.servers)?;
        if transcript.coalesced() {
            return Ok((transcript, path, doublings));
        }
        doublings += 1;
        if doublings > spec.max_doublings {
            return Err(SamplerError::MaxDoublingsExceeded { run_id, doublings });
        }
        path.extend(path.window_start() * 2.0)?;
    }
}

fn run_base_window(path: &DominatingPath, servers: usize) -> Result<RunTranscript, SamplerError> {
    let upper_start = path.upper_start_instants(servers, 1.0)?;
    Ok(sandwich::run_window_instants(
        upper_start,
        path.marks(),
        servers,
        1.0,
    )?)
}

/// Full omnithermal draw: coalesce the base pair, keep doubling until the
/// monotonicity condition holds over the coalesced stretch, then read off one
/// lower process per requested extra-server count and work-rate scaling.
pub fn omnithermal_sample(
    streams: Streams,
    spec: &QueueSpec,
    run_id: u64,
) -> Result<SampleRecord, SamplerError> {
    omnithermal_sample_with(streams, spec, run_id, false)
}

/// As [`omnithermal_sample`], optionally reconstructing every wider upper
/// process to check it coalesced onto the returned sample (diagnostic only;
/// the accepted condition already guarantees it).
pub fn omnithermal_sample_with(
    streams: Streams,
    spec: &QueueSpec,
    run_id: u64,
    verify_upper: bool,
) -> Result<SampleRecord, SamplerError> {
    let (mut transcript, mut path, doublings_for_coalescence) =
        sandwich_sample(streams, spec, run_id)?;
    let mut doublings_for_condition = 0u32;
    while transcript.condition() != ConditionStatus::Satisfied {
        doublings_for_condition += 1;
        if doublings_for_coalescence + doublings_for_condition > spec.max_doublings {
            return Err(SamplerError::MaxDoublingsExceeded {
                run_id,
                doublings: doublings_for_coalescence + doublings_for_condition,
            });
        }
        path.extend(path.window_start() * 2.0)?;
        transcript = run_base_window(&path, spec.servers)?;
        // A deeper window is funnelled inside the old one, so the pair must
        // still coalesce; a non-coalescing rerun indicates a broken coupling.
        if !transcript.coalesced() {
            return Err(DominatingError::Inconsistent(format!(
                "run {run_id}: extension of a coalesced window failed to coalesce"
            ))
            .into());
        }
    }
    if verify_upper {
        for &m in &spec.m_list {
            if !verify_upper_coalesced(&path, &transcript, m)? {
                return Err(DominatingError::Inconsistent(format!(
                    "run {run_id}: upper process for {} servers did not coalesce onto the sample",
                    spec.servers + m
                ))
                .into());
            }
        }
    }
    assemble_record(
        spec,
        path.marks(),
        &transcript,
        run_id,
        doublings_for_coalescence,
        doublings_for_condition,
    )
}

fn assemble_record(
    spec: &QueueSpec,
    marks: &MarkSequence,
    transcript: &RunTranscript,
    run_id: u64,
    doublings_for_coalescence: u32,
    doublings_for_condition: u32,
) -> Result<SampleRecord, SamplerError> {
    let mut m_samples = Vec::with_capacity(spec.m_list.len());
    for &m in &spec.m_list {
        m_samples.push((m, evolve_lower(marks, spec.servers + m, 1.0)?));
    }
    let mut beta_samples = Vec::with_capacity(spec.beta_list.len());
    for &beta in &spec.beta_list {
        beta_samples.push((beta, evolve_lower(marks, spec.servers, beta)?));
    }
    Ok(SampleRecord {
        run_id,
        m_samples,
        beta_samples,
        backoff: marks.start(),
        coalesced_at: transcript.coalesced_at,
        doublings_for_coalescence,
        doublings_for_condition,
        condition_was_extended: doublings_for_condition > 0,
    })
}

/// Emptying-time sampler: wait (backwards) until the dominating queue is
/// empty at `T*`, then evolve plain FCFS systems forward from empty through
/// the window's marks. Distributionally equivalent to the sandwich sampler
/// and kept as its independent oracle.
pub fn emptying_sample(
    streams: Streams,
    spec: &QueueSpec,
    run_id: u64,
) -> Result<SampleRecord, SamplerError> {
    spec.validate()?;
    let scan = dominating::emptying_scan(
        streams,
        spec.servers,
        spec.lambda,
        spec.mu,
        run_id,
        dominating::DEFAULT_EMPTYING_EVENT_CAP,
    )
    .map_err(|e| match e {
        DominatingError::EmptyingHorizonExceeded { .. } => {
            SamplerError::EmptyingCapExceeded { run_id, source: e }
        }
        other => SamplerError::Dominating(other),
    })?;
    let path = DominatingPath::build(
        streams,
        spec.servers,
        spec.lambda,
        spec.mu,
        scan.build_anchor,
        run_id,
    )?;
    let marks = path.marks();

    let mut m_samples = Vec::with_capacity(spec.m_list.len());
    for &m in &spec.m_list {
        m_samples.push((m, evolve_lower(marks, spec.servers + m, 1.0)?));
    }
    // Every sampled vector must respect the cross-dimension order.
    for pair in m_samples.windows(2) {
        if !leq_partial(&pair[1].1, &pair[0].1)? {
            return Err(DominatingError::Inconsistent(format!(
                "run {run_id}: emptying sampler broke the cross-dimension order"
            ))
            .into());
        }
    }
    let mut beta_samples = Vec::with_capacity(spec.beta_list.len());
    for &beta in &spec.beta_list {
        beta_samples.push((beta, evolve_lower(marks, spec.servers, beta)?));
    }
    Ok(SampleRecord {
        run_id,
        m_samples,
        beta_samples,
        backoff: scan.time,
        coalesced_at: None,
        doublings_for_coalescence: 0,
        doublings_for_condition: 0,
        condition_was_extended: false,
    })
}

/// Diagnostic reconstruction of the upper process for `servers + m`: on a
/// window whose condition holds, the (c+m) pair must itself have coalesced by
/// the base coalescence time, making the upper construction redundant. Used
/// by tests and the `--verify-upper` flag, not by the sampling hot path.
pub fn verify_upper_coalesced(
    path: &DominatingPath,
    transcript: &RunTranscript,
    m: usize,
) -> Result<bool, SamplerError> {
    let upper_start =
        path.upper_start_instants(transcript.servers + m, transcript.duration_scale)?;
    let wide = sandwich::run_window_instants(
        upper_start,
        path.marks(),
        transcript.servers + m,
        transcript.duration_scale,
    )?;
    let coalesced_in_time = match (wide.coalesced_at, transcript.coalesced_at) {
        (Some(tm), Some(tc)) => tm <= tc,
        _ => false,
    };
    Ok(coalesced_in_time && wide.final_upper.coords() == wide.final_lower.coords())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn streams() -> Streams {
        Streams::new(31_415_926)
    }

    fn base_spec() -> QueueSpec {
        QueueSpec::new(2, 1.2, 1.0)
            .with_m_list(vec![0, 1, 2])
            .with_beta_list(vec![0.5, 1.0])
    }

    #[test]
    fn spec_validation_names_the_constraint() {
        let unstable = QueueSpec::new(2, 2.0, 1.0);
        let err = unstable.validate().unwrap_err().to_string();
        assert!(err.contains("unstable"), "{err}");

        assert!(QueueSpec::new(2, 1.0, 1.0)
            .with_m_list(vec![1, 1])
            .validate()
            .is_err());
        assert!(QueueSpec::new(2, 1.0, 1.0)
            .with_beta_list(vec![0.0])
            .validate()
            .is_err());
        assert!(QueueSpec::new(2, 1.0, 1.0)
            .with_beta_list(vec![1.5])
            .validate()
            .is_err());
        assert!(QueueSpec::new(2, 1.0, 1.0)
            .with_initial_backoff(1.0)
            .validate()
            .is_err());
        assert!(base_spec().validate().is_ok());
    }

    #[test]
    fn sandwich_sampler_is_deterministic() {
        let spec = base_spec();
        let (t1, p1, d1) = sandwich_sample(streams(), &spec, 5).unwrap();
        let (t2, p2, d2) = sandwich_sample(streams(), &spec, 5).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(t1.coalesced_at, t2.coalesced_at);
        assert_eq!(t1.final_lower.coords(), t2.final_lower.coords());
        assert_eq!(p1.window_start(), p2.window_start());

        let r1 = omnithermal_sample(streams(), &spec, 5).unwrap();
        let r2 = omnithermal_sample(streams(), &spec, 5).unwrap();
        assert_eq!(format!("{r1:?}"), format!("{r2:?}"));
    }

    #[test]
    fn coalesced_sample_is_the_common_value() {
        let spec = base_spec();
        for run in 0..50 {
            let (t, _, _) = sandwich_sample(streams(), &spec, run).unwrap();
            assert!(t.coalesced());
            assert_eq!(t.final_upper.coords(), t.final_lower.coords());
        }
    }

    #[test]
    fn identity_cases_m0_and_beta1() {
        let spec = base_spec();
        for run in 0..30 {
            let (t, path, dc) = sandwich_sample(streams(), &spec, run).unwrap();
            let record = omnithermal_sample(streams(), &spec, run).unwrap();
            // m = 0 equals the plain sandwich draw whenever no condition
            // extension occurred (the windows then coincide).
            if !record.condition_was_extended {
                assert_eq!(record.backoff, path.window_start());
                assert_eq!(record.doublings_for_coalescence, dc);
                let m0 = &record.m_samples.iter().find(|(m, _)| *m == 0).unwrap().1;
                assert_eq!(m0.coords(), t.final_lower.coords());
            }
            // beta = 1 equals m = 0 bit for bit, always.
            let m0 = &record.m_samples.iter().find(|(m, _)| *m == 0).unwrap().1;
            let b1 = &record
                .beta_samples
                .iter()
                .find(|(b, _)| *b == 1.0)
                .unwrap()
                .1;
            assert_eq!(m0.coords(), b1.coords());
        }
    }

    #[test]
    fn near_zero_load_needs_no_doubling() {
        let spec = QueueSpec::new(2, 1e-9, 1.0);
        let mut zero_runs = 0;
        for run in 0..20 {
            let r = omnithermal_sample(streams(), &spec, run).unwrap();
            if r.doublings_for_coalescence == 0
                && r.m_samples[0].1.is_empty_system()
                && !r.condition_was_extended
            {
                zero_runs += 1;
            }
        }
        assert!(zero_runs >= 19, "only {zero_runs}/20 degenerate runs");
    }

    #[test]
    fn emptying_sampler_respects_cross_dimension_order() {
        let spec = base_spec();
        for run in 0..100 {
            let r = emptying_sample(streams(), &spec, run).unwrap();
            assert!(r.backoff <= 0.0);
            for pair in r.m_samples.windows(2) {
                assert!(leq_partial(&pair[1].1, &pair[0].1).unwrap());
            }
        }
    }

    #[test]
    fn emptying_sampler_vanishing_load() {
        // The dominating queue is idle essentially always, so the scan stops
        // almost immediately and every sampled vector is zero.
        let spec = QueueSpec::new(2, 1e-9, 1.0);
        for run in 0..20 {
            let r = emptying_sample(streams(), &spec, run).unwrap();
            assert!(
                r.backoff > -1.0,
                "emptying time {} not close to zero",
                r.backoff
            );
            assert!(r.m_samples.iter().all(|(_, v)| v.is_empty_system()));
            assert!(r.beta_samples.iter().all(|(_, v)| v.is_empty_system()));
        }
    }

    #[test]
    fn upper_verification_on_accepting_runs() {
        let spec = base_spec();
        let mut accepted = 0;
        for run in 0..80 {
            let (t, path, _) = sandwich_sample(streams(), &spec, run).unwrap();
            if sandwich::monotonicity_condition_holds(&t) {
                accepted += 1;
                for m in [0, 1, 2] {
                    assert!(
                        verify_upper_coalesced(&path, &t, m).unwrap(),
                        "run {run} m {m}"
                    );
                }
            }
        }
        assert!(accepted > 40, "only {accepted}/80 runs accepted");
    }

    #[test]
    fn single_server_equilibrium_mean() {
        // One-server system: the first (only) coordinate is the equilibrium
        // wait, lambda/(mu(mu-lambda)) = 1 at half load.
        let spec = QueueSpec::new(1, 0.5, 1.0);
        let runs = 3000u64;
        let s = streams();
        let waits: Vec<f64> = (0..runs)
            .map(|run| {
                omnithermal_sample(s, &spec, run).unwrap().m_samples[0]
                    .1
                    .coords()[0]
            })
            .collect();
        let mean = waits.iter().sum::<f64>() / runs as f64;
        let var = waits.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (runs as f64 - 1.0);
        let se = (var / runs as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean wait {mean} (se {se})");
    }

    #[test]
    fn max_doublings_aborts_instead_of_truncating() {
        // One doubling allowed from a microscopic backoff at high load: the
        // sampler must refuse rather than return a biased draw.
        let spec = QueueSpec::new(1, 0.95, 1.0)
            .with_initial_backoff(-1e-9)
            .with_max_doublings(1);
        let mut aborted = 0;
        for run in 0..10 {
            match omnithermal_sample(streams(), &spec, run) {
                Err(SamplerError::MaxDoublingsExceeded { .. }) => aborted += 1,
                Ok(_) => {}
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(aborted >= 9, "only {aborted}/10 runs aborted");
    }
}
