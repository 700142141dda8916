//! Workload-vector algebra for multi-server FCFS queues.
//!
//! The state of a c-server FCFS queue is its sorted vector of residual work
//! amounts (the Kiefer-Wolfowitz vector). An arrival adds its service duration
//! to the least-loaded coordinate and the vector is re-sorted; between
//! arrivals every coordinate drains towards zero. Everything downstream
//! (sandwiching, coalescence detection, the cross-dimension partial order) is
//! built from these few operations.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("workload vector must be non-empty")]
    Empty,
    #[error("coordinate {index} is {value}, which is negative or not finite")]
    BadCoordinate { index: usize, value: f64 },
    #[error("coordinates must be sorted non-decreasing (index {index})")]
    Unsorted { index: usize },
    #[error("service duration must be positive and finite, got {0}")]
    BadDuration(f64),
    #[error("drain interval must be non-negative and finite, got {0}")]
    BadInterval(f64),
    #[error("work rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("vector of length {big} cannot be compared against longer vector of length {small}")]
    LengthMismatch { big: usize, small: usize },
    #[error("event at {time} lies outside the window ({start}, {end}]")]
    EventOutsideWindow { time: f64, start: f64, end: f64 },
    #[error("event times must be strictly increasing (index {index})")]
    NonIncreasingTimes { index: usize },
    #[error("window start {start} must precede window end {end}")]
    BadWindow { start: f64, end: f64 },
    #[error("query time {time} lies outside the trajectory window [{start}, {end}]")]
    QueryOutsideWindow { time: f64, start: f64, end: f64 },
}

/// Where an arriving job is slotted when two sorted positions tie.
/// `LowestIndex` is the canonical convention: the inserted value strictly
/// exceeds the value previously at its index. `HighestIndex` exists only as a
/// corruption hook for mutation-testing the validation suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InsertRule {
    LowestIndex,
    // Only ever constructed by the mutation checks.
    #[allow(dead_code)]
    HighestIndex,
}

/// Sorted vector of residual work, one coordinate per server.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadVector {
    coords: Vec<f64>,
}

impl WorkloadVector {
    /// Builds from already-sorted coordinates, validating the invariants.
    pub fn new(coords: Vec<f64>) -> Result<Self, WorkloadError> {
        if coords.is_empty() {
            return Err(WorkloadError::Empty);
        }
        for (i, &v) in coords.iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(WorkloadError::BadCoordinate { index: i, value: v });
            }
            if i > 0 && coords[i - 1] > v {
                return Err(WorkloadError::Unsorted { index: i });
            }
        }
        Ok(WorkloadVector { coords })
    }

    /// Builds from arbitrary-order coordinates by sorting them.
    pub fn from_unsorted(mut coords: Vec<f64>) -> Result<Self, WorkloadError> {
        coords.sort_by(|a, b| a.partial_cmp(b).expect("coordinates must not be NaN"));
        Self::new(coords)
    }

    /// The empty system with `servers` idle servers.
    pub fn zeros(servers: usize) -> Self {
        assert!(servers >= 1, "a queue needs at least one server");
        WorkloadVector {
            coords: vec![0.0; servers],
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty_system(&self) -> bool {
        self.coords.iter().all(|&v| v == 0.0)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub(crate) fn arrival_with_rule(
        &self,
        duration: f64,
        rule: InsertRule,
    ) -> Result<(Self, usize), WorkloadError> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(WorkloadError::BadDuration(duration));
        }
        let (coords, pos) = shift_insert(&self.coords, duration, rule);
        Ok((WorkloadVector { coords }, pos))
    }

    /// Adds an arriving job's duration to the least-loaded server and
    /// re-sorts. Returns the new vector and the index at which the job's
    /// total landed; ties resolve to the lowest feasible index, so the value
    /// at the returned index strictly exceeds the value that was there.
    pub fn arrival(&self, duration: f64) -> Result<(Self, usize), WorkloadError> {
        self.arrival_with_rule(duration, InsertRule::LowestIndex)
    }

    /// Drains every coordinate at `rate` for `dt` time units, truncating at
    /// zero. Order is preserved.
    pub fn drain(&self, dt: f64, rate: f64) -> Result<Self, WorkloadError> {
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(WorkloadError::BadInterval(dt));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(WorkloadError::BadRate(rate));
        }
        let work = rate * dt;
        let coords = self.coords.iter().map(|&v| (v - work).max(0.0)).collect();
        Ok(WorkloadVector { coords })
    }

    /// One step of the queue recursion: arrival of `duration`, then drain for
    /// the gap until the next observation.
    pub fn step(&self, duration: f64, gap: f64) -> Result<Self, WorkloadError> {
        let (after_arrival, _) = self.arrival(duration)?;
        after_arrival.drain(gap, 1.0)
    }

    /// Largest coordinate.
    pub fn max_coord(&self) -> f64 {
        *self.coords.last().expect("non-empty by invariant")
    }

    /// Pads with idle servers up to `servers` coordinates.
    pub fn padded_to(&self, servers: usize) -> Self {
        assert!(servers >= self.coords.len());
        let mut coords = vec![0.0; servers - self.coords.len()];
        coords.extend_from_slice(&self.coords);
        WorkloadVector { coords }
    }
}

/// Removes the least entry of a sorted slice, inserts `least + add`, and
/// returns the new sorted vector with the insertion index. Shared by the
/// workload-unit and completion-instant representations so the tie-break
/// convention lives in one place.
pub(crate) fn shift_insert(coords: &[f64], add: f64, rule: InsertRule) -> (Vec<f64>, usize) {
    let value = coords[0] + add;
    let mut out = Vec::with_capacity(coords.len());
    out.extend_from_slice(&coords[1..]);
    let pos = match rule {
        // Lowest feasible index: first slot whose occupant is >= value.
        InsertRule::LowestIndex => out.partition_point(|&c| c < value),
        InsertRule::HighestIndex => out.partition_point(|&c| c <= value),
    };
    out.insert(pos, value);
    (out, pos)
}

/// Cross-dimension partial order: a (c+m)-server state is below a c-server
/// state when each of the c busiest servers of the larger system carries no
/// more work than the corresponding server of the smaller one.
pub fn leq_partial(big: &WorkloadVector, small: &WorkloadVector) -> Result<bool, WorkloadError> {
    let (cb, cs) = (big.len(), small.len());
    if cb < cs {
        return Err(WorkloadError::LengthMismatch { big: cb, small: cs });
    }
    let shift = cb - cs;
    Ok((0..cs).all(|k| big.coords[k + shift] <= small.coords[k]))
}

/// One arrival: absolute time and the service duration coupled to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArrivalEvent {
    pub time: f64,
    pub duration: f64,
}

/// Arrival times with coupled service durations on a window `(start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkSequence {
    start: f64,
    end: f64,
    events: Vec<ArrivalEvent>,
}

impl MarkSequence {
    pub fn new(start: f64, end: f64, events: Vec<ArrivalEvent>) -> Result<Self, WorkloadError> {
        if !(start < end) || !start.is_finite() || !end.is_finite() {
            return Err(WorkloadError::BadWindow { start, end });
        }
        for (i, ev) in events.iter().enumerate() {
            if !(ev.time > start) || !(ev.time <= end) {
                return Err(WorkloadError::EventOutsideWindow {
                    time: ev.time,
                    start,
                    end,
                });
            }
            if i > 0 && events[i - 1].time >= ev.time {
                return Err(WorkloadError::NonIncreasingTimes { index: i });
            }
            if !(ev.duration > 0.0) || !ev.duration.is_finite() {
                return Err(WorkloadError::BadDuration(ev.duration));
            }
        }
        Ok(MarkSequence { start, end, events })
    }

    pub fn empty(start: f64, end: f64) -> Self {
        MarkSequence::new(start, end, Vec::new()).expect("valid window")
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn events(&self) -> &[ArrivalEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Splits the window into drain segments: `(gap, Some(event))` for each
    /// arrival and a trailing `(gap, None)` to the window end. Every consumer
    /// iterates through this so that coupled processes see bit-identical
    /// drain intervals.
    pub fn segments(&self) -> impl Iterator<Item = (f64, Option<ArrivalEvent>)> + '_ {
        let mut prev = self.start;
        let tail = std::iter::once(None);
        self.events
            .iter()
            .map(Some)
            .chain(tail)
            .map(move |ev| match ev {
                Some(&e) => {
                    let gap = e.time - prev;
                    prev = e.time;
                    (gap, Some(e))
                }
                None => (self.end - prev, None),
            })
    }
}

/// Event-indexed record of one evolution: state just before and just after
/// each arrival, with closed-form linear drain in between.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    start: f64,
    end: f64,
    rate: f64,
    initial: WorkloadVector,
    /// (time, state just before arrival, state just after arrival)
    events: Vec<(f64, WorkloadVector, WorkloadVector)>,
    terminal: WorkloadVector,
}

impl Trajectory {
    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    /// State at time `t`, just after any arrival at `t`.
    pub fn at(&self, t: f64) -> Result<WorkloadVector, WorkloadError> {
        let (anchor_time, anchor) = self.anchor_before(t, true)?;
        anchor.drain(t - anchor_time, self.rate)
    }

    /// Left limit at time `t`: just before any arrival at `t`.
    pub fn left_limit(&self, t: f64) -> Result<WorkloadVector, WorkloadError> {
        match self.events.iter().find(|(time, _, _)| *time == t) {
            Some((_, pre, _)) => Ok(pre.clone()),
            None => self.at(t),
        }
    }

    /// State at the window end.
    pub fn terminal(&self) -> &WorkloadVector {
        &self.terminal
    }

    pub fn event_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|(t, _, _)| *t)
    }

    pub fn event_states(&self) -> &[(f64, WorkloadVector, WorkloadVector)] {
        &self.events
    }

    fn anchor_before(
        &self,
        t: f64,
        inclusive: bool,
    ) -> Result<(f64, &WorkloadVector), WorkloadError> {
        if t < self.start || t > self.end {
            return Err(WorkloadError::QueryOutsideWindow {
                time: t,
                start: self.start,
                end: self.end,
            });
        }
        let last = self
            .events
            .iter()
            .take_while(|(time, _, _)| if inclusive { *time <= t } else { *time < t })
            .last();
        Ok(match last {
            Some((time, _, post)) => (*time, post),
            None => (self.start, &self.initial),
        })
    }
}

/// Evolves `initial` through `marks`, recording the trajectory. Work drains
/// at `rate`; durations are consumed as given.
pub fn evolve(
    initial: &WorkloadVector,
    marks: &MarkSequence,
    rate: f64,
) -> Result<Trajectory, WorkloadError> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(WorkloadError::BadRate(rate));
    }
    let mut state = initial.clone();
    let mut events = Vec::with_capacity(marks.len());
    for (gap, ev) in marks.segments() {
        state = state.drain(gap, rate)?;
        if let Some(e) = ev {
            let pre = state.clone();
            let (post, _) = state.arrival(e.duration)?;
            events.push((e.time, pre, post.clone()));
            state = post;
        }
    }
    Ok(Trajectory {
        start: marks.start(),
        end: marks.end(),
        rate,
        initial: initial.clone(),
        events,
        terminal: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wv(coords: &[f64]) -> WorkloadVector {
        WorkloadVector::new(coords.to_vec()).unwrap()
    }

    #[test]
    fn arrival_places_job_and_reports_index() {
        let (v, k) = wv(&[0.0, 0.9]).arrival(1.2).unwrap();
        assert_eq!(v.coords(), &[0.9, 1.2]);
        assert_eq!(k, 1);

        let (v, k) = wv(&[0.0, 0.0, 0.0]).arrival(5.0).unwrap();
        assert_eq!(v.coords(), &[0.0, 0.0, 5.0]);
        assert_eq!(k, 2);

        // Tie forced to the lowest feasible index.
        let (v, k) = wv(&[1.0, 2.0]).arrival(1.0).unwrap();
        assert_eq!(v.coords(), &[2.0, 2.0]);
        assert_eq!(k, 0);
    }

    #[test]
    fn arrival_rejects_non_positive_duration() {
        assert!(wv(&[0.0]).arrival(0.0).is_err());
        assert!(wv(&[0.0]).arrival(-1.0).is_err());
    }

    #[test]
    fn drain_truncates_and_scales() {
        let v = wv(&[0.9, 1.2]).drain(0.2, 1.0).unwrap();
        assert!((v.coords()[0] - 0.7).abs() < 1e-12);
        assert!((v.coords()[1] - 1.0).abs() < 1e-12);

        assert_eq!(
            wv(&[0.5, 1.3]).drain(10.0, 1.0).unwrap().coords(),
            &[0.0, 0.0]
        );
        assert_eq!(
            wv(&[2.0, 4.0]).drain(1.0, 2.0).unwrap().coords(),
            &[0.0, 2.0]
        );
        assert!(wv(&[1.0]).drain(-0.1, 1.0).is_err());
    }

    #[test]
    fn step_composes_arrival_and_drain() {
        let v = wv(&[0.0, 0.9]).step(1.2, 0.2).unwrap();
        assert!((v.coords()[0] - 0.7).abs() < 1e-12);
        assert!((v.coords()[1] - 1.0).abs() < 1e-12);

        let v = wv(&[0.7, 1.0]).step(1.8, 0.5).unwrap();
        assert!((v.coords()[0] - 0.5).abs() < 1e-12);
        assert!((v.coords()[1] - 2.0).abs() < 1e-12);

        let v = wv(&[0.0, 0.0]).step(3.5, 0.0).unwrap();
        assert_eq!(v.coords(), &[0.0, 3.5]);
    }

    #[test]
    fn partial_order_examples() {
        assert!(leq_partial(&wv(&[0.5, 1.3, 5.2]), &wv(&[2.0, 5.5])).unwrap());
        assert!(leq_partial(&wv(&[0.7, 1.0, 1.8]), &wv(&[1.0, 2.5])).unwrap());
        assert!(!leq_partial(&wv(&[0.0, 1.0, 3.0]), &wv(&[0.5, 2.0])).unwrap());
        assert!(leq_partial(&wv(&[1.0]), &wv(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn mark_sequence_validation() {
        let ok = MarkSequence::new(
            -1.0,
            0.0,
            vec![
                ArrivalEvent {
                    time: -0.5,
                    duration: 1.0,
                },
                ArrivalEvent {
                    time: -0.25,
                    duration: 2.0,
                },
            ],
        );
        assert!(ok.is_ok());

        let outside = MarkSequence::new(
            -1.0,
            0.0,
            vec![ArrivalEvent {
                time: 0.5,
                duration: 1.0,
            }],
        );
        assert!(outside.is_err());
        let at_start = MarkSequence::new(
            -1.0,
            0.0,
            vec![ArrivalEvent {
                time: -1.0,
                duration: 1.0,
            }],
        );
        assert!(at_start.is_err());
        let unordered = MarkSequence::new(
            -1.0,
            0.0,
            vec![
                ArrivalEvent {
                    time: -0.25,
                    duration: 1.0,
                },
                ArrivalEvent {
                    time: -0.5,
                    duration: 2.0,
                },
            ],
        );
        assert!(unordered.is_err());
    }

    #[test]
    fn evolve_reproduces_post_arrival_states() {
        let marks = MarkSequence::new(
            0.0,
            3.0,
            vec![
                ArrivalEvent {
                    time: 0.1,
                    duration: 1.2,
                },
                ArrivalEvent {
                    time: 0.3,
                    duration: 1.8,
                },
                ArrivalEvent {
                    time: 0.8,
                    duration: 5.0,
                },
            ],
        )
        .unwrap();

        let upper = evolve(&wv(&[0.0, 1.0]), &marks, 1.0).unwrap();
        let at_t3 = upper.at(0.8).unwrap();
        assert!((at_t3.coords()[0] - 2.0).abs() < 1e-12);
        assert!((at_t3.coords()[1] - 5.5).abs() < 1e-12);

        let lower = evolve(&WorkloadVector::zeros(2), &marks, 1.0).unwrap();
        let at_t3 = lower.at(0.8).unwrap();
        assert!((at_t3.coords()[0] - 1.3).abs() < 1e-12);
        assert!((at_t3.coords()[1] - 5.5).abs() < 1e-12);

        let idle = evolve(
            &WorkloadVector::zeros(3),
            &MarkSequence::empty(0.0, 5.0),
            1.0,
        )
        .unwrap();
        assert!(idle.at(2.5).unwrap().is_empty_system());
        assert!(idle.terminal().is_empty_system());
    }

    #[test]
    fn trajectory_left_limits_and_window_checks() {
        let marks = MarkSequence::new(
            0.0,
            2.0,
            vec![ArrivalEvent {
                time: 1.0,
                duration: 2.0,
            }],
        )
        .unwrap();
        let traj = evolve(&wv(&[0.0, 1.0]), &marks, 1.0).unwrap();
        assert_eq!(traj.left_limit(1.0).unwrap().coords(), &[0.0, 0.0]);
        assert_eq!(traj.at(1.0).unwrap().coords(), &[0.0, 2.0]);
        assert!(traj.at(2.5).is_err());
        assert!(traj.left_limit(-0.1).is_err());
    }

    fn sorted_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..10.0, len).prop_map(|mut v| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v
        })
    }

    proptest! {
        #[test]
        fn arrival_keeps_invariants_and_exceeds_old_value(
            coords in sorted_vec(6),
            s in 0.001f64..20.0,
        ) {
            let w = WorkloadVector::new(coords).unwrap();
            let (r, k) = w.arrival(s).unwrap();
            // Sorted, non-negative.
            prop_assert!(WorkloadVector::new(r.coords().to_vec()).is_ok());
            // The inserted total strictly exceeds the value previously at k.
            prop_assert!(r.coords()[k] > w.coords()[k]);
            prop_assert_eq!(r.coords()[k], w.coords()[0] + s);
        }

        #[test]
        fn drain_preserves_order(coords in sorted_vec(5), dt in 0.0f64..20.0) {
            let w = WorkloadVector::new(coords).unwrap();
            let d = w.drain(dt, 1.0).unwrap();
            prop_assert!(WorkloadVector::new(d.coords().to_vec()).is_ok());
        }

        #[test]
        fn step_is_coordinatewise_monotone(
            lo in sorted_vec(4),
            bump in proptest::collection::vec(0.0f64..5.0, 4),
            s in 0.001f64..10.0,
            gap in 0.0f64..10.0,
        ) {
            let w = WorkloadVector::new(lo.clone()).unwrap();
            let mut hi: Vec<f64> = lo.iter().zip(&bump).map(|(a, b)| a + b).collect();
            hi.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let w2 = WorkloadVector::new(hi).unwrap();
            // Sorting the bumped copy keeps it coordinate-wise above: the
            // k-th order statistic is monotone in every input.
            let lo_after = w.step(s, gap).unwrap();
            let hi_after = w2.step(s, gap).unwrap();
            for (a, b) in lo_after.coords().iter().zip(hi_after.coords()) {
                prop_assert!(a <= b);
            }
        }
    }
}
