//! Self-contained validation suites.
//!
//! Each suite drives the library against an independent oracle — hand-checked
//! evolution tables, direct recomputation of incrementally maintained
//! quantities, order-preservation laws, closed-form queueing formulas, or a
//! second sampler — and reports a pass/fail outcome carrying the first
//! counterexample on failure. The `validate` command runs them all; the
//! acceptance tests call them individually with pinned sizes.

use rayon::prelude::*;

use crate::analytics::{
    erlang_c_delay_probability, erlang_c_wait, ks_two_sample, summarize, Selector,
};
use crate::dominating::DominatingPath;
use crate::rng::Streams;
use crate::sampler::{
    emptying_sample, evolve_lower, omnithermal_sample, sandwich_sample, verify_upper_coalesced,
    QueueSpec,
};
use crate::sandwich::{
    monotonicity_condition_holds, recompute_tracker, run_window, run_window_instants,
    RunTranscript, SandwichState,
};
use crate::workload::{
    evolve, leq_partial, ArrivalEvent, InsertRule, MarkSequence, WorkloadVector,
};

/// Outcome of one suite.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Summary when passed, first counterexample when failed.
    pub detail: String,
}

impl SuiteOutcome {
    fn pass(name: &'static str, detail: String) -> Self {
        SuiteOutcome {
            name,
            passed: true,
            detail,
        }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        SuiteOutcome {
            name,
            passed: false,
            detail,
        }
    }
}

/// Sequential splitmix generator for synthetic suite inputs.
struct TestRng {
    state: u64,
}

impl TestRng {
    fn new(seed: u64) -> Self {
        TestRng {
            state: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x1234_5678_9abc_def0,
        }
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    fn exp(&mut self, rate: f64) -> f64 {
        -self.uniform().ln() / rate
    }

    fn pick<T: Copy>(&mut self, choices: &[T]) -> T {
        choices[(self.next_u64() % choices.len() as u64) as usize]
    }

    fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }
}

fn fmt_vec(v: &WorkloadVector) -> String {
    let coords: Vec<String> = v.coords().iter().map(|x| format!("{x}")).collect();
    format!("({})", coords.join(", "))
}

// ---------------------------------------------------------------------------
// Golden evolution tables
// ---------------------------------------------------------------------------

struct GoldenCase {
    servers: usize,
    initial: Vec<f64>,
    /// Expected upper/lower states just after each of the three arrivals.
    upper: [Vec<f64>; 3],
    lower: [Vec<f64>; 3],
}

fn golden_cases(scale: f64) -> Vec<GoldenCase> {
    let v = |xs: &[f64]| xs.iter().map(|x| x * scale).collect::<Vec<f64>>();
    vec![
        GoldenCase {
            servers: 2,
            initial: v(&[0.0, 1.0]),
            upper: [v(&[0.9, 1.2]), v(&[1.0, 2.5]), v(&[2.0, 5.5])],
            lower: [v(&[0.0, 1.2]), v(&[1.0, 1.8]), v(&[1.3, 5.5])],
        },
        GoldenCase {
            servers: 3,
            initial: v(&[0.0, 0.0, 1.0]),
            upper: [
                v(&[0.0, 0.9, 1.2]),
                v(&[0.7, 1.0, 1.8]),
                v(&[0.5, 1.3, 5.2]),
            ],
            lower: [
                v(&[0.0, 0.0, 1.2]),
                v(&[0.0, 1.0, 1.8]),
                v(&[0.5, 1.3, 5.0]),
            ],
        },
        GoldenCase {
            servers: 4,
            initial: v(&[0.0, 0.0, 0.0, 1.0]),
            upper: [
                v(&[0.0, 0.0, 0.9, 1.2]),
                v(&[0.0, 0.7, 1.0, 1.8]),
                v(&[0.2, 0.5, 1.3, 5.0]),
            ],
            lower: [
                v(&[0.0, 0.0, 0.0, 1.2]),
                v(&[0.0, 0.0, 1.0, 1.8]),
                v(&[0.0, 0.5, 1.3, 5.0]),
            ],
        },
    ]
}

fn golden_marks(scale: f64, end: f64) -> MarkSequence {
    MarkSequence::new(
        0.0,
        end * scale,
        vec![
            ArrivalEvent {
                time: 0.1 * scale,
                duration: 1.2 * scale,
            },
            ArrivalEvent {
                time: 0.3 * scale,
                duration: 1.8 * scale,
            },
            ArrivalEvent {
                time: 0.8 * scale,
                duration: 5.0 * scale,
            },
        ],
    )
    .expect("valid golden window")
}

fn check_golden_tables(scale: f64, tol: f64) -> Result<usize, String> {
    let marks = golden_marks(scale, 3.0);
    let mut cells = 0usize;
    for case in golden_cases(scale) {
        let initial = WorkloadVector::new(case.initial.clone()).expect("sorted");
        let upper = evolve(&initial, &marks, 1.0).map_err(|e| e.to_string())?;
        let lower =
            evolve(&WorkloadVector::zeros(case.servers), &marks, 1.0).map_err(|e| e.to_string())?;
        for (traj, expected, label) in [
            (&upper, &case.upper, "upper"),
            (&lower, &case.lower, "lower"),
        ] {
            let t0 = traj.at(0.0).map_err(|e| e.to_string())?;
            let expect0 = if label == "upper" {
                case.initial.clone()
            } else {
                vec![0.0; case.servers]
            };
            compare_cell(&t0, &expect0, tol, case.servers, label, 0)?;
            cells += 1;
            for (i, (_, _, post)) in traj.event_states().iter().enumerate() {
                compare_cell(post, &expected[i], tol, case.servers, label, i + 1)?;
                cells += 1;
            }
        }
    }
    Ok(cells)
}

fn compare_cell(
    got: &WorkloadVector,
    expected: &[f64],
    tol: f64,
    servers: usize,
    label: &str,
    column: usize,
) -> Result<(), String> {
    for (k, (&g, &e)) in got.coords().iter().zip(expected).enumerate() {
        let ok = if tol == 0.0 {
            g == e
        } else {
            (g - e).abs() <= tol
        };
        if !ok {
            return Err(format!(
                "{label} table, {servers} servers, column {column}, coordinate {}: \
                 got {g}, expected {e}",
                k + 1
            ));
        }
    }
    Ok(())
}

/// Worked-example tables for two, three and four servers; the coalescence
/// time 2.8 of the two-server pair; non-coalescence of the three-server pair
/// by then; coalescence of the four-server pair; and the violating third
/// arrival. Decimal inputs are checked to 1e-12 (the literals are not exactly
/// representable in binary); a ten-fold rescaling makes every quantity an
/// exact float and is checked bit for bit.
pub fn golden_example_suite() -> SuiteOutcome {
    const NAME: &str = "golden-example";
    let mut cells = 0usize;
    for (scale, tol) in [(1.0, 1e-12), (10.0, 0.0)] {
        match check_golden_tables(scale, tol) {
            Ok(n) => cells += n,
            Err(e) => return SuiteOutcome::fail(NAME, format!("scale {scale}: {e}")),
        }

        let run_at = |servers: usize, init: &[f64], end: f64| {
            let initial = WorkloadVector::new(init.to_vec()).expect("sorted");
            run_window(&initial, &golden_marks(scale, end), servers, 1.0).expect("run")
        };
        let two = run_at(2, &[0.0, 1.0 * scale], 3.0);
        let expected_tc = 2.8 * scale;
        let tc_ok = match two.coalesced_at {
            Some(tc) if tol == 0.0 => tc == expected_tc,
            Some(tc) => (tc - expected_tc).abs() <= tol,
            None => false,
        };
        if !tc_ok {
            return SuiteOutcome::fail(
                NAME,
                format!(
                    "two-server coalescence time {:?}, expected {expected_tc}",
                    two.coalesced_at
                ),
            );
        }
        if two.violations.len() != 1 {
            return SuiteOutcome::fail(
                NAME,
                format!(
                    "two-server violations {:?}, expected exactly one at the third arrival",
                    two.violations
                ),
            );
        }
        if monotonicity_condition_holds(&two) {
            return SuiteOutcome::fail(NAME, "two-server condition should fail".into());
        }

        let three = run_at(3, &[0.0, 0.0, 1.0 * scale], 2.8);
        if three.coalesced() {
            return SuiteOutcome::fail(
                NAME,
                format!("three-server pair coalesced by {expected_tc}, expected not to"),
            );
        }
        let four = run_at(4, &[0.0, 0.0, 0.0, 1.0 * scale], 2.8);
        if !four.coalesced() {
            return SuiteOutcome::fail(
                NAME,
                format!("four-server pair failed to coalesce by {expected_tc}"),
            );
        }
    }
    SuiteOutcome::pass(NAME, format!("{cells} table cells matched at both scales"))
}

// ---------------------------------------------------------------------------
// Tracker equivalence
// ---------------------------------------------------------------------------

fn tracker_equivalence_impl(seed: u64, min_events: usize) -> Result<usize, String> {
    let mut rng = TestRng::new(seed);
    let mut events = 0usize;
    while events < min_events {
        let servers = rng.range(1, 6);
        let beta = rng.pick(&[1.0, 1.0, 0.8, 0.5]);
        let residuals: Vec<f64> = (0..servers)
            .map(|_| {
                if rng.uniform() < 0.4 {
                    0.0
                } else {
                    rng.exp(0.7)
                }
            })
            .collect();
        let residuals = WorkloadVector::from_unsorted(residuals).expect("non-negative");
        let mut state =
            SandwichState::init_pair(&residuals, servers, 0.0, beta).map_err(|e| e.to_string())?;
        check_tracker(&state, "after init")?;

        let n_arrivals = rng.range(5, 40);
        let mut clock = 0.0;
        for _ in 0..n_arrivals {
            let gap = rng.exp(1.3);
            let s = rng.exp(0.9);
            clock += gap;
            state.advance(gap).map_err(|e| e.to_string())?;
            check_tracker(&state, "after drain")?;

            let tracker_before = state.tracker();
            let least_agree = state.upper().coords()[0] == state.lower().coords()[0];
            state.apply_arrival(clock, s).map_err(|e| e.to_string())?;
            check_tracker(&state, "after arrival")?;
            if least_agree && state.tracker() != tracker_before {
                return Err(format!(
                    "arrival onto agreeing least-loaded coordinates moved the tracker \
                     {tracker_before} -> {}",
                    state.tracker()
                ));
            }
            for (u, l) in state.upper().coords().iter().zip(state.lower().coords()) {
                if l > u {
                    return Err(format!(
                        "lower exceeds upper: upper {} lower {}",
                        fmt_vec(&state.upper()),
                        fmt_vec(&state.lower())
                    ));
                }
            }
            events += 1;
        }
    }
    Ok(events)
}

fn check_tracker(state: &SandwichState, when: &str) -> Result<(), String> {
    let direct = recompute_tracker(&state.upper(), &state.lower());
    if state.tracker() != direct {
        return Err(format!(
            "{when}: incremental tracker {} != direct recomputation {direct}\n  \
             upper {}\n  lower {}",
            state.tracker(),
            fmt_vec(&state.upper()),
            fmt_vec(&state.lower())
        ));
    }
    Ok(())
}

/// Insertion contract under a given tie-break rule, on drives engineered to
/// collide values exactly: the arriving job's total must land strictly above
/// the value previously at its index. The canonical lowest-index rule
/// guarantees this even under ties; the corrupted highest-index hook breaks
/// it, which is what makes this a mutation check of the suite itself.
pub(crate) fn arrival_convention_with_rule(
    seed: u64,
    events: usize,
    rule: InsertRule,
) -> Result<(), String> {
    let mut rng = TestRng::new(seed);
    let mut upper =
        WorkloadVector::from_unsorted((0..4).map(|_| rng.pick(&[0.0, 1.0, 2.0, 3.0])).collect())
            .expect("non-negative");
    let mut lower = WorkloadVector::zeros(4);
    for i in 0..events {
        let s = rng.pick(&[1.0, 2.0, 3.0]);
        let dt = rng.pick(&[0.0, 0.5, 1.0]);
        upper = upper.drain(dt, 1.0).map_err(|e| e.to_string())?;
        lower = lower.drain(dt, 1.0).map_err(|e| e.to_string())?;
        for v in [&mut upper, &mut lower] {
            let (next, k) = v.arrival_with_rule(s, rule).map_err(|e| e.to_string())?;
            if !(next.coords()[k] > v.coords()[k]) {
                return Err(format!(
                    "event {i}: insertion not strictly increasing at index {k}: \
                     {} + {s} -> {}",
                    fmt_vec(v),
                    fmt_vec(&next)
                ));
            }
            *v = next;
        }
    }
    Ok(())
}

/// Incrementally maintained time-to-coalescence equals direct recomputation
/// from the vectors, bit for bit, at every drain and every arrival, across
/// random configurations and work-rate scalings; plus the strict-insertion
/// contract under deliberately tie-rich drives.
pub fn tracker_equivalence_suite(seed: u64, min_events: usize) -> SuiteOutcome {
    const NAME: &str = "tracker-equivalence";
    match tracker_equivalence_impl(seed, min_events) {
        Ok(n) => match arrival_convention_with_rule(seed ^ 0xa5, 5_000, InsertRule::LowestIndex) {
            Ok(()) => SuiteOutcome::pass(NAME, format!("{n} arrival events checked exactly")),
            Err(e) => SuiteOutcome::fail(NAME, e),
        },
        Err(e) => SuiteOutcome::fail(NAME, e),
    }
}

// ---------------------------------------------------------------------------
// Cross-dimension order preservation
// ---------------------------------------------------------------------------

/// Systems with more servers stay below systems with fewer (in the
/// busiest-coordinates order) when both consume the same arrivals and
/// durations from ordered starting states.
pub fn order_preservation_suite(seed: u64, cases: usize) -> SuiteOutcome {
    const NAME: &str = "order-preservation";
    let mut rng = TestRng::new(seed);
    for case in 0..cases {
        let c = rng.range(1, 5);
        let m = rng.range(1, 4);
        let small: Vec<f64> = {
            let mut v: Vec<f64> = (0..c).map(|_| rng.exp(0.5)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v
        };
        // Shrinking each coordinate and appending small values keeps every
        // order statistic of the larger vector below its counterpart.
        let mut big: Vec<f64> = small.iter().map(|&x| x * rng.uniform()).collect();
        for _ in 0..m {
            big.push(rng.uniform() * small[0]);
        }
        let big = WorkloadVector::from_unsorted(big).expect("non-negative");
        let small = WorkloadVector::new(small).expect("sorted");
        if !leq_partial(&big, &small).expect("lengths") {
            return SuiteOutcome::fail(
                NAME,
                format!(
                    "case {case}: construction violated the order: big {} small {}",
                    fmt_vec(&big),
                    fmt_vec(&small)
                ),
            );
        }

        let n_arrivals = rng.range(0, 25);
        let mut t = 0.0;
        let mut evs = Vec::with_capacity(n_arrivals);
        for _ in 0..n_arrivals {
            t += rng.exp(1.0);
            evs.push(ArrivalEvent {
                time: t,
                duration: rng.exp(0.8),
            });
        }
        let marks = MarkSequence::new(0.0, t + rng.exp(0.5), evs).expect("valid");
        let big_traj = evolve(&big, &marks, 1.0).expect("evolve");
        let small_traj = evolve(&small, &marks, 1.0).expect("evolve");
        for ((tb, pre_b, post_b), (_, pre_s, post_s)) in big_traj
            .event_states()
            .iter()
            .zip(small_traj.event_states())
        {
            for (what, b, s) in [("left limit", pre_b, pre_s), ("state", post_b, post_s)] {
                if !leq_partial(b, s).expect("lengths") {
                    return SuiteOutcome::fail(
                        NAME,
                        format!(
                            "case {case}: order broken at {what} of arrival t={tb}: \
                             big {} small {}",
                            fmt_vec(b),
                            fmt_vec(s)
                        ),
                    );
                }
            }
        }
        if !leq_partial(big_traj.terminal(), small_traj.terminal()).expect("lengths") {
            return SuiteOutcome::fail(NAME, format!("case {case}: order broken at the horizon"));
        }
    }
    SuiteOutcome::pass(
        NAME,
        format!("{cases} random coupled evolutions stayed ordered"),
    )
}

// ---------------------------------------------------------------------------
// Monotone coalescence across server counts
// ---------------------------------------------------------------------------

/// On windows whose condition holds: every wider sandwich pair coalesces no
/// later than the base pair, its upper process is redundant, its tracker
/// never exceeds the base tracker, the wider upper process stays below the
/// base upper process, and the dominating path stays above the base upper
/// process.
pub fn monotonicity_suite(
    seed: u64,
    spec: &QueueSpec,
    m_values: &[usize],
    accepting_runs: usize,
) -> SuiteOutcome {
    const NAME: &str = "coalescence-monotonicity";
    let streams = Streams::new(seed);
    let results: Vec<Result<bool, String>> = (0..(accepting_runs as u64 * 2))
        .into_par_iter()
        .map(|run| monotonicity_one_run(streams, spec, m_values, run))
        .collect();
    let mut accepted = 0usize;
    for r in results {
        match r {
            Ok(true) => accepted += 1,
            Ok(false) => {}
            Err(e) => return SuiteOutcome::fail(NAME, e),
        }
        if accepted >= accepting_runs {
            break;
        }
    }
    if accepted < accepting_runs {
        return SuiteOutcome::fail(
            NAME,
            format!("only {accepted} accepting runs out of the budget, needed {accepting_runs}"),
        );
    }
    SuiteOutcome::pass(
        NAME,
        format!("{accepted} accepting runs verified for m in {m_values:?}"),
    )
}

fn monotonicity_one_run(
    streams: Streams,
    spec: &QueueSpec,
    m_values: &[usize],
    run: u64,
) -> Result<bool, String> {
    let (base, path, _) = sandwich_sample(streams, spec, run).map_err(|e| e.to_string())?;
    if !monotonicity_condition_holds(&base) {
        return Ok(false);
    }
    let tc = base.coalesced_at.expect("coalesced");

    for &m in m_values {
        if !verify_upper_coalesced(&path, &base, m).map_err(|e| e.to_string())? {
            return Err(format!(
                "run {run}, m={m}: wider upper process not redundant on an accepting window"
            ));
        }
        let upper0 = path
            .upper_start_instants(spec.servers + m, 1.0)
            .map_err(|e| e.to_string())?;
        let wide = run_window_instants(upper0, path.marks(), spec.servers + m, 1.0)
            .map_err(|e| e.to_string())?;
        match wide.coalesced_at {
            Some(tm) if tm <= tc => {}
            other => {
                return Err(format!(
                    "run {run}, m={m}: wider pair coalesced at {other:?}, base at {tc}"
                ));
            }
        }
        // The recorded lower-only sample is the certified common value.
        let sample =
            evolve_lower(path.marks(), spec.servers + m, 1.0).map_err(|e| e.to_string())?;
        if sample.coords() != wide.final_lower.coords() {
            return Err(format!("run {run}, m={m}: lower-only evolution diverged"));
        }
        // Tracker monotone in the server count at every event, and the wider
        // upper process below the base upper process.
        for (i, (ws, bs)) in wide.events.iter().zip(&base.events).enumerate() {
            if ws.tracker_before > bs.tracker_before || ws.tracker_after > bs.tracker_after {
                return Err(format!(
                    "run {run}, m={m}, event {i}: wider tracker above base \
                     ({} > {} or {} > {})",
                    ws.tracker_before, bs.tracker_before, ws.tracker_after, bs.tracker_after
                ));
            }
            for (what, w, b) in [
                ("left limit", &ws.upper_before, &bs.upper_before),
                ("state", &ws.upper_after, &bs.upper_after),
            ] {
                if !leq_partial(w, b).map_err(|e| e.to_string())? {
                    return Err(format!(
                        "run {run}, m={m}, event {i}: upper order broken at {what}: \
                         wide {} base {}",
                        fmt_vec(w),
                        fmt_vec(b)
                    ));
                }
            }
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Funnel property under window extension
// ---------------------------------------------------------------------------

/// Re-running the sandwich over a doubled window funnels strictly inside the
/// shallower pair: lower <= deep lower <= deep upper <= upper at every event
/// time of the shallower window.
pub fn funnel_suite(seed: u64, spec: &QueueSpec, doubled_pairs: usize) -> SuiteOutcome {
    const NAME: &str = "extension-funnel";
    let streams = Streams::new(seed);
    let results: Vec<Result<usize, String>> = (0..(doubled_pairs as u64))
        .into_par_iter()
        .map(|run| funnel_one_run(streams, spec, run))
        .collect();
    let mut pairs = 0usize;
    for r in results {
        match r {
            Ok(n) => pairs += n,
            Err(e) => return SuiteOutcome::fail(NAME, e),
        }
    }
    if pairs < doubled_pairs {
        return SuiteOutcome::fail(
            NAME,
            format!("only {pairs} doubled windows observed, needed {doubled_pairs}"),
        );
    }
    SuiteOutcome::pass(NAME, format!("{pairs} window doublings stayed funnelled"))
}

fn funnel_one_run(streams: Streams, spec: &QueueSpec, run: u64) -> Result<usize, String> {
    let mut path = DominatingPath::build(
        streams,
        spec.servers,
        spec.lambda,
        spec.mu,
        spec.initial_backoff,
        run,
    )
    .map_err(|e| e.to_string())?;
    let mut pairs = 0usize;
    let mut shallow: Option<RunTranscript> = None;
    for _ in 0..=spec.max_doublings {
        let upper0 = path
            .upper_start_instants(spec.servers, 1.0)
            .map_err(|e| e.to_string())?;
        let t = run_window_instants(upper0, path.marks(), spec.servers, 1.0)
            .map_err(|e| e.to_string())?;
        if let Some(prev) = &shallow {
            check_funnel_pair(prev, &t, run)?;
            pairs += 1;
        }
        if t.coalesced() {
            return Ok(pairs);
        }
        shallow = Some(t);
        path.extend(path.window_start() * 2.0)
            .map_err(|e| e.to_string())?;
    }
    Err(format!(
        "run {run}: no coalescence within the doubling budget"
    ))
}

/// Coordinate-wise order allowing a few units in the last place: a window and
/// its extension compute mathematically equal states through differently
/// grouped sums, so exact ties carry representation noise. Any real order
/// violation is at the scale of a service duration, many orders above this.
fn leq_up_to_ulps(a: &WorkloadVector, b: &WorkloadVector) -> bool {
    a.coords()
        .iter()
        .zip(b.coords())
        .all(|(&x, &y)| x <= y + 16.0 * f64::EPSILON * x.abs().max(y.abs()).max(1.0))
}

fn check_funnel_pair(
    shallow: &RunTranscript,
    deep: &RunTranscript,
    run: u64,
) -> Result<(), String> {
    if deep.events.len() < shallow.events.len() {
        return Err(format!("run {run}: deep window lost events"));
    }
    let offset = deep.events.len() - shallow.events.len();
    for (i, (s, d)) in shallow
        .events
        .iter()
        .zip(&deep.events[offset..])
        .enumerate()
    {
        if s.time != d.time {
            return Err(format!(
                "run {run}, event {i}: time mismatch {} vs {}",
                s.time, d.time
            ));
        }
        for (what, lo, mid_lo, mid_hi, hi) in [
            (
                "left limit",
                &s.lower_before,
                &d.lower_before,
                &d.upper_before,
                &s.upper_before,
            ),
            (
                "state",
                &s.lower_after,
                &d.lower_after,
                &d.upper_after,
                &s.upper_after,
            ),
        ] {
            let ordered = leq_up_to_ulps(lo, mid_lo)
                && leq_partial(mid_lo, mid_hi).map_err(|e| e.to_string())?
                && leq_up_to_ulps(mid_hi, hi);
            if !ordered {
                return Err(format!(
                    "run {run}, event {i} ({what} at t={}): funnel broken\n  \
                     lower      {}\n  deep lower {}\n  deep upper {}\n  upper      {}",
                    s.time,
                    fmt_vec(lo),
                    fmt_vec(mid_lo),
                    fmt_vec(mid_hi),
                    fmt_vec(hi)
                ));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Work-rate variants
// ---------------------------------------------------------------------------

/// Scale-1 samples equal the base samples bit for bit; on accepting windows
/// the scaled sandwich pairs coalesce no later than the base pair and their
/// lower-only evolution is the certified common value; and each scaled
/// sample's mean waiting time matches the closed form for the equivalently
/// sped-up system.
pub fn beta_suite(
    seed: u64,
    spec: &QueueSpec,
    betas: &[f64],
    accepting_runs: usize,
) -> SuiteOutcome {
    const NAME: &str = "work-rate-variants";
    let streams = Streams::new(seed);
    let results: Vec<Result<(bool, Vec<(f64, f64)>), String>> = (0..(accepting_runs as u64 * 2))
        .into_par_iter()
        .map(|run| beta_one_run(streams, spec, betas, run))
        .collect();
    let mut accepted = 0usize;
    let mut waits: Vec<(f64, Vec<f64>)> = spec.beta_list.iter().map(|&b| (b, Vec::new())).collect();
    for r in results {
        match r {
            Ok((ok, sampled)) => {
                accepted += ok as usize;
                for (beta, w) in sampled {
                    waits
                        .iter_mut()
                        .find(|(b, _)| *b == beta)
                        .expect("sampled beta is requested")
                        .1
                        .push(w);
                }
            }
            Err(e) => return SuiteOutcome::fail(NAME, e),
        }
    }
    if accepted < accepting_runs {
        return SuiteOutcome::fail(
            NAME,
            format!("only {accepted} accepting runs out of the budget, needed {accepting_runs}"),
        );
    }
    // A system completing work at rate 1/beta is the same queue with service
    // rate mu/beta; its expected wait is closed-form.
    for (beta, ws) in &waits {
        let target = erlang_c_wait(spec.servers, spec.lambda, spec.mu / beta).expect("stable");
        let n = ws.len() as f64;
        let mean = ws.iter().sum::<f64>() / n;
        let var = ws.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt().max(1e-12);
        if (mean - target).abs() > 3.0 * se {
            return SuiteOutcome::fail(
                NAME,
                format!(
                    "beta={beta}: mean wait {mean} outside {target} +- {}",
                    3.0 * se
                ),
            );
        }
    }
    SuiteOutcome::pass(
        NAME,
        format!(
            "{accepted} accepting runs verified for betas {betas:?}; scaled means match \
             closed form over {} runs",
            accepting_runs * 2
        ),
    )
}

fn beta_one_run(
    streams: Streams,
    spec: &QueueSpec,
    betas: &[f64],
    run: u64,
) -> Result<(bool, Vec<(f64, f64)>), String> {
    let full = omnithermal_sample(streams, spec, run).map_err(|e| e.to_string())?;
    let m0 = &full
        .m_samples
        .iter()
        .find(|(m, _)| *m == 0)
        .expect("m=0 requested")
        .1;
    let b1 = &full
        .beta_samples
        .iter()
        .find(|(b, _)| *b == 1.0)
        .expect("beta=1 requested")
        .1;
    if m0.coords() != b1.coords() {
        return Err(format!(
            "run {run}: scale-1 sample differs from base sample: {} vs {}",
            fmt_vec(b1),
            fmt_vec(m0)
        ));
    }
    let sampled: Vec<(f64, f64)> = full
        .beta_samples
        .iter()
        .map(|(b, v)| (*b, v.coords()[0]))
        .collect();

    let (base, path, _) = sandwich_sample(streams, spec, run).map_err(|e| e.to_string())?;
    if !monotonicity_condition_holds(&base) {
        return Ok((false, sampled));
    }
    let tc = base.coalesced_at.expect("coalesced");
    for &beta in betas {
        let upper0 = path
            .upper_start_instants(spec.servers, beta)
            .map_err(|e| e.to_string())?;
        let scaled = run_window_instants(upper0, path.marks(), spec.servers, beta)
            .map_err(|e| e.to_string())?;
        match scaled.coalesced_at {
            Some(tb) if tb <= tc => {}
            other => {
                return Err(format!(
                    "run {run}, beta={beta}: scaled pair coalesced at {other:?}, base at {tc}"
                ));
            }
        }
        if scaled.final_upper.coords() != scaled.final_lower.coords() {
            return Err(format!("run {run}, beta={beta}: scaled pair did not meet"));
        }
        let sample = evolve_lower(path.marks(), spec.servers, beta).map_err(|e| e.to_string())?;
        if sample.coords() != scaled.final_lower.coords() {
            return Err(format!(
                "run {run}, beta={beta}: lower-only evolution diverged"
            ));
        }
    }
    Ok((true, sampled))
}

// ---------------------------------------------------------------------------
// Distributional checks
// ---------------------------------------------------------------------------

/// Sample means of the first coordinate against the closed-form expected
/// equilibrium waiting time, for each server count in the batch.
pub fn erlang_means_suite(seed: u64, runs: usize) -> SuiteOutcome {
    const NAME: &str = "equilibrium-means";
    let spec = QueueSpec::new(2, 1.2, 1.0).with_m_list(vec![0, 1, 2]);
    let streams = Streams::new(seed);
    let records: Result<Vec<_>, _> = (0..runs as u64)
        .into_par_iter()
        .map(|run| omnithermal_sample(streams, &spec, run))
        .collect();
    let records = match records {
        Ok(r) => r,
        Err(e) => return SuiteOutcome::fail(NAME, e.to_string()),
    };
    let mut details = Vec::new();
    // Simulated reference values reported for the same two systems elsewhere;
    // they must sit inside the same acceptance bands.
    let reported = [0.57, 0.08, f64::NAN];
    for (i, m) in [0usize, 1, 2].into_iter().enumerate() {
        let summary = match summarize(&records, Selector::M(m)) {
            Ok(s) => s,
            Err(e) => return SuiteOutcome::fail(NAME, e.to_string()),
        };
        let target = erlang_c_wait(2 + m, 1.2, 1.0).expect("stable");
        let mean = summary.means[0];
        let se = summary.stderrs[0];
        if (mean - target).abs() > 3.0 * se {
            return SuiteOutcome::fail(
                NAME,
                format!(
                    "m={m}: first-coordinate mean {mean} outside {target} +- {}",
                    3.0 * se
                ),
            );
        }
        if reported[i].is_finite() && (reported[i] - target).abs() > 3.0 * se {
            return SuiteOutcome::fail(
                NAME,
                format!(
                    "m={m}: reference value {} outside {target} +- {}",
                    reported[i],
                    3.0 * se
                ),
            );
        }
        // The atom at zero is the probability an arrival starts service
        // immediately, one minus the closed-form delay probability.
        let p_wait = erlang_c_delay_probability(2 + m, 1.2, 1.0).expect("stable");
        let zero_frac = records
            .iter()
            .filter(|r| {
                r.m_samples
                    .iter()
                    .find(|(k, _)| *k == m)
                    .expect("requested")
                    .1
                    .coords()[0]
                    == 0.0
            })
            .count() as f64
            / records.len() as f64;
        let zero_se = (p_wait * (1.0 - p_wait) / records.len() as f64).sqrt();
        if (zero_frac - (1.0 - p_wait)).abs() > 3.0 * zero_se {
            return SuiteOutcome::fail(
                NAME,
                format!(
                    "m={m}: zero-wait fraction {zero_frac} outside {} +- {}",
                    1.0 - p_wait,
                    3.0 * zero_se
                ),
            );
        }
        details.push(format!(
            "m={m}: mean {mean:.4} target {target:.4} se {se:.4}, idle-arrival rate {zero_frac:.3} vs {:.3}",
            1.0 - p_wait
        ));
    }
    SuiteOutcome::pass(NAME, details.join("; "))
}

/// Distributional agreement between independent sampling routes on the first
/// coordinate, by two-sample Kolmogorov-Smirnov at significance 0.01:
/// sandwich-based vs emptying-time samplers for the base system; the coupled
/// extra-server sample vs direct draws of the wider system; and the coupled
/// work-rate sample vs direct draws of the equivalently sped-up system.
pub fn ks_cross_validation_suite(seed: u64, n: usize) -> SuiteOutcome {
    const NAME: &str = "sampler-cross-validation";
    let streams = Streams::new(seed);
    // Disjoint run-id ranges keep all batches independent of one another.
    let batch = |spec: QueueSpec, base: u64, pick: fn(&crate::sampler::SampleRecord) -> f64| {
        let spec = spec;
        (0..n as u64)
            .into_par_iter()
            .map(|run| omnithermal_sample(streams, &spec, base + run).map(|r| pick(&r)))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| e.to_string())
    };

    let omni = match batch(
        QueueSpec::new(2, 1.2, 1.0)
            .with_m_list(vec![0, 1])
            .with_beta_list(vec![0.5, 1.0]),
        0,
        |r| r.m_samples[0].1.coords()[0],
    ) {
        Ok(v) => v,
        Err(e) => return SuiteOutcome::fail(NAME, e),
    };
    let emptying: Result<Vec<f64>, _> = (0..n as u64)
        .into_par_iter()
        .map(|run| {
            emptying_sample(streams, &QueueSpec::new(2, 1.2, 1.0), 1_000_000 + run)
                .map(|r| r.m_samples[0].1.coords()[0])
        })
        .collect();
    let emptying = match emptying {
        Ok(v) => v,
        Err(e) => return SuiteOutcome::fail(NAME, e.to_string()),
    };
    // The emptying-time sampler must hit the closed-form mean on its own,
    // not just agree with the sandwich sampler.
    let target = erlang_c_wait(2, 1.2, 1.0).expect("stable");
    let mean = emptying.iter().sum::<f64>() / emptying.len() as f64;
    let var = emptying
        .iter()
        .map(|y| (y - mean) * (y - mean))
        .sum::<f64>()
        / (emptying.len() as f64 - 1.0);
    let se = (var / emptying.len() as f64).sqrt();
    if (mean - target).abs() > 3.0 * se {
        return SuiteOutcome::fail(
            NAME,
            format!(
                "emptying sampler mean {mean} outside {target} +- {}",
                3.0 * se
            ),
        );
    }

    // Coupled samples for wider / sped-up systems vs direct base draws of the
    // equivalent systems, from fresh randomness.
    let coupled_m1 = match batch(
        QueueSpec::new(2, 1.2, 1.0).with_m_list(vec![0, 1]),
        2_000_000,
        |r| {
            r.m_samples
                .iter()
                .find(|(m, _)| *m == 1)
                .expect("m=1")
                .1
                .coords()[0]
        },
    ) {
        Ok(v) => v,
        Err(e) => return SuiteOutcome::fail(NAME, e),
    };
    let direct_c3 = match batch(QueueSpec::new(3, 1.2, 1.0), 3_000_000, |r| {
        r.m_samples[0].1.coords()[0]
    }) {
        Ok(v) => v,
        Err(e) => return SuiteOutcome::fail(NAME, e),
    };
    let coupled_beta = match batch(
        QueueSpec::new(2, 1.2, 1.0).with_beta_list(vec![0.5, 1.0]),
        4_000_000,
        |r| {
            r.beta_samples
                .iter()
                .find(|(b, _)| *b == 0.5)
                .expect("beta=0.5")
                .1
                .coords()[0]
        },
    ) {
        Ok(v) => v,
        Err(e) => return SuiteOutcome::fail(NAME, e),
    };
    let direct_fast = match batch(QueueSpec::new(2, 1.2, 2.0), 5_000_000, |r| {
        r.m_samples[0].1.coords()[0]
    }) {
        Ok(v) => v,
        Err(e) => return SuiteOutcome::fail(NAME, e),
    };

    let mut details = Vec::new();
    for (label, xs, ys) in [
        ("sandwich vs emptying", &omni, &emptying),
        ("coupled m=1 vs direct 3 servers", &coupled_m1, &direct_c3),
        (
            "coupled beta=0.5 vs direct doubled rate",
            &coupled_beta,
            &direct_fast,
        ),
    ] {
        match ks_two_sample(xs, ys) {
            Ok((d, p)) if p > 0.01 => details.push(format!("{label}: D={d:.4} p={p:.3}")),
            Ok((d, p)) => {
                return SuiteOutcome::fail(
                    NAME,
                    format!("{label}: distributions differ, D={d:.4}, p={p:.4} <= 0.01"),
                )
            }
            Err(e) => return SuiteOutcome::fail(NAME, e.to_string()),
        }
    }
    SuiteOutcome::pass(NAME, format!("n={n} per batch; {}", details.join("; ")))
}

/// Frequency of condition extensions at the reference configurations:
/// moderate load sees a small percentage of extended runs, light load almost
/// none, and no run needs many extension doublings.
pub fn extension_frequency_suite(seed: u64, runs: usize) -> SuiteOutcome {
    const NAME: &str = "extension-frequency";
    let streams = Streams::new(seed);

    let run_config = |servers: usize, lambda: f64| -> Result<(usize, u32), String> {
        let spec = QueueSpec::new(servers, lambda, 2.0);
        let records: Result<Vec<_>, _> = (0..runs as u64)
            .into_par_iter()
            .map(|run| omnithermal_sample(streams, &spec, run))
            .collect();
        let records = records.map_err(|e| e.to_string())?;
        let extended = records.iter().filter(|r| r.condition_was_extended).count();
        let max_doublings = records
            .iter()
            .map(|r| r.doublings_for_condition)
            .max()
            .unwrap_or(0);
        Ok((extended, max_doublings))
    };

    let (ext10, max10) = match run_config(10, 10.0) {
        Ok(x) => x,
        Err(e) => return SuiteOutcome::fail(NAME, e),
    };
    let frac10 = ext10 as f64 / runs as f64;
    if !(0.014..=0.031).contains(&frac10) {
        return SuiteOutcome::fail(
            NAME,
            format!("10 servers: extended fraction {frac10:.4} outside [0.014, 0.031]"),
        );
    }
    let (ext50, max50) = match run_config(50, 50.0) {
        Ok(x) => x,
        Err(e) => return SuiteOutcome::fail(NAME, e),
    };
    let budget50 = (runs as f64 * 3.0 / 5000.0).ceil() as usize;
    if ext50 > budget50 {
        return SuiteOutcome::fail(
            NAME,
            format!("50 servers: {ext50} extended runs, allowed at most {budget50}"),
        );
    }
    let worst = max10.max(max50);
    if worst > 5 {
        return SuiteOutcome::fail(
            NAME,
            format!("a run needed {worst} condition doublings, allowed at most 5"),
        );
    }
    SuiteOutcome::pass(
        NAME,
        format!(
            "10 servers: {ext10}/{runs} extended ({:.2}%); 50 servers: {ext50}/{runs}; \
             worst doublings {worst}",
            frac10 * 100.0
        ),
    )
}

/// Runs every suite at acceptance sizes.
pub fn run_all(seed: u64) -> Vec<SuiteOutcome> {
    let means_spec = QueueSpec::new(2, 1.2, 1.0);
    let funnel_spec = QueueSpec::new(2, 1.2, 1.0).with_initial_backoff(-0.25);
    vec![
        golden_example_suite(),
        tracker_equivalence_suite(seed ^ 0x01, 100_000),
        order_preservation_suite(seed ^ 0x02, 10_000),
        monotonicity_suite(seed ^ 0x03, &means_spec, &[1, 2, 5], 10_000),
        funnel_suite(seed ^ 0x04, &funnel_spec, 1_000),
        beta_suite(
            seed ^ 0x05,
            &QueueSpec::new(2, 1.2, 1.0).with_beta_list(vec![0.5, 0.8, 1.0]),
            &[0.5, 0.8],
            1_000,
        ),
        erlang_means_suite(seed ^ 0x06, 5_000),
        ks_cross_validation_suite(seed ^ 0x07, 5_000),
        extension_frequency_suite(seed ^ 0x08, 5_000),
    ]
}
