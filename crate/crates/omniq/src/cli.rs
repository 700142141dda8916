//! Command-line front end: single draws, batch sampling, experiment presets
//! with CSV/SVG emission, and the validation suites — all reproducible from
//! one 64-bit seed, byte for byte, regardless of the thread count.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;

use crate::analytics::{summarize, BatchSummary, Selector};
use crate::rng::Streams;
use crate::sampler::{
    omnithermal_sample_with, sandwich_sample, QueueSpec, SampleRecord, SamplerError,
    DEFAULT_INITIAL_BACKOFF, DEFAULT_MAX_DOUBLINGS,
};
use crate::validate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// One equilibrium draw, printed as a JSON record.
    Sample,
    /// A batch of draws, one JSON record per line, in run order.
    Omni,
    /// Preset or custom batch experiments with CSV and SVG outputs.
    Experiment,
    /// Run the validation suites and report pass/fail per suite.
    Validate,
}

#[derive(Debug, Parser)]
#[command(
    name = "omniq",
    version,
    about = "Exact equilibrium sampling for multi-server FCFS queues"
)]
pub struct Args {
    /// What to do; may also come from the config file.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Base server count.
    #[arg(long)]
    c: Option<usize>,
    /// Arrival rate.
    #[arg(long)]
    lambda: Option<f64>,
    /// Service rate.
    #[arg(long)]
    mu: Option<f64>,
    /// Extra-server increments, comma separated (e.g. 0,1,2).
    #[arg(long, value_delimiter = ',')]
    m_list: Option<Vec<usize>>,
    /// Work-rate scalings in (0,1], comma separated (e.g. 0.5,1).
    #[arg(long, value_delimiter = ',')]
    beta_list: Option<Vec<f64>>,
    /// Number of runs for batch modes.
    #[arg(long)]
    runs: Option<u64>,
    /// Global seed; one number reproduces an entire experiment.
    #[arg(long)]
    seed: Option<u64>,
    /// Initial backoff (negative).
    #[arg(long, allow_hyphen_values = true)]
    t0: Option<f64>,
    /// Abort a run after this many window doublings.
    #[arg(long)]
    max_doublings: Option<u32>,
    /// Experiment preset: "backoff" or "means".
    #[arg(long)]
    preset: Option<String>,
    /// Output directory for experiment files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads; results are merged in run order, so the output bytes
    /// do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Dump the final window transcript and dominating path to stderr
    /// (sample mode).
    #[arg(long)]
    verbose: bool,
    /// Reconstruct each wider upper process and verify it coalesced onto the
    /// returned sample (diagnostic; slows sampling down).
    #[arg(long)]
    verify_upper: bool,
    /// JSON config file mirroring these flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    mode: Option<String>,
    c: Option<usize>,
    lambda: Option<f64>,
    mu: Option<f64>,
    m_list: Option<Vec<usize>>,
    beta_list: Option<Vec<f64>>,
    runs: Option<u64>,
    seed: Option<u64>,
    t0: Option<f64>,
    max_doublings: Option<u32>,
    preset: Option<String>,
    out_dir: Option<PathBuf>,
    threads: Option<usize>,
    verbose: Option<bool>,
    verify_upper: Option<bool>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    mode: Mode,
    servers: usize,
    lambda: f64,
    mu: f64,
    m_list: Vec<usize>,
    beta_list: Vec<f64>,
    runs: u64,
    seed: u64,
    t0: f64,
    max_doublings: u32,
    preset: Option<String>,
    out_dir: PathBuf,
    threads: usize,
    verbose: bool,
    verify_upper: bool,
}

const EXIT_SUITE_FAILURE: u8 = 1;
const EXIT_INVALID_CONFIG: u8 = 2;
const EXIT_ABORTED_RUN: u8 = 3;

fn invalid(msg: String) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_INVALID_CONFIG)
}

pub fn run(args: Args) -> ExitCode {
    let file = match &args.config {
        Some(path) => match fs::read_to_string(path) {
            Ok(text) => match serde_json::from_str::<FileConfig>(&text) {
                Ok(cfg) => cfg,
                Err(e) => return invalid(format!("config file {}: {e}", path.display())),
            },
            Err(e) => return invalid(format!("config file {}: {e}", path.display())),
        },
        None => FileConfig::default(),
    };

    let mode = match args.mode.or_else(|| parse_mode(file.mode.as_deref())) {
        Some(m) => m,
        None => return invalid("mode is required (sample | omni | experiment | validate)".into()),
    };
    let config = ExperimentConfig {
        mode,
        servers: args.c.or(file.c).unwrap_or(2),
        lambda: args.lambda.or(file.lambda).unwrap_or(1.2),
        mu: args.mu.or(file.mu).unwrap_or(1.0),
        m_list: args.m_list.or(file.m_list).unwrap_or_else(|| vec![0]),
        beta_list: args
            .beta_list
            .or(file.beta_list)
            .unwrap_or_else(|| vec![1.0]),
        runs: args.runs.or(file.runs).unwrap_or(0), // 0 = per-mode default
        seed: args.seed.or(file.seed).unwrap_or(1),
        t0: args.t0.or(file.t0).unwrap_or(DEFAULT_INITIAL_BACKOFF),
        max_doublings: args
            .max_doublings
            .or(file.max_doublings)
            .unwrap_or(DEFAULT_MAX_DOUBLINGS),
        preset: args.preset.or(file.preset),
        out_dir: args
            .out_dir
            .or(file.out_dir)
            .unwrap_or_else(|| PathBuf::from("out")),
        threads: args.threads.or(file.threads).unwrap_or(1),
        verbose: args.verbose || file.verbose.unwrap_or(false),
        verify_upper: args.verify_upper || file.verify_upper.unwrap_or(false),
    };
    if config.threads == 0 {
        return invalid("threads must be at least 1".into());
    }

    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => return invalid(format!("thread pool: {e}")),
    };
    pool.install(|| dispatch(&config))
}

fn parse_mode(s: Option<&str>) -> Option<Mode> {
    match s? {
        "sample" => Some(Mode::Sample),
        "omni" => Some(Mode::Omni),
        "experiment" => Some(Mode::Experiment),
        "validate" => Some(Mode::Validate),
        _ => None,
    }
}

fn dispatch(config: &ExperimentConfig) -> ExitCode {
    match config.mode {
        Mode::Sample => cmd_sample(config),
        Mode::Omni => cmd_omni(config),
        Mode::Experiment => cmd_experiment(config),
        Mode::Validate => cmd_validate(config),
    }
}

fn queue_spec(config: &ExperimentConfig) -> Result<QueueSpec, SamplerError> {
    let spec = QueueSpec::new(config.servers, config.lambda, config.mu)
        .with_m_list(config.m_list.clone())
        .with_beta_list(config.beta_list.clone())
        .with_initial_backoff(config.t0)
        .with_max_doublings(config.max_doublings);
    spec.validate()?;
    Ok(spec)
}

fn sampler_exit(e: &SamplerError) -> ExitCode {
    match e {
        SamplerError::InvalidSpec(_) => ExitCode::from(EXIT_INVALID_CONFIG),
        SamplerError::MaxDoublingsExceeded { .. } | SamplerError::EmptyingCapExceeded { .. } => {
            ExitCode::from(EXIT_ABORTED_RUN)
        }
        _ => ExitCode::from(EXIT_ABORTED_RUN),
    }
}

fn record_json(config: &ExperimentConfig, record: &SampleRecord) -> serde_json::Value {
    let mut samples = BTreeMap::new();
    for (m, v) in &record.m_samples {
        samples.insert(format!("m={m}"), v.coords().to_vec());
    }
    let mut betas = BTreeMap::new();
    for (b, v) in &record.beta_samples {
        betas.insert(format!("beta={b}"), v.coords().to_vec());
    }
    serde_json::json!({
        "schema": "omniq-sample-v1",
        "seed": config.seed,
        "run_id": record.run_id,
        "c": config.servers,
        "lambda": config.lambda,
        "mu": config.mu,
        "T": record.backoff,
        "Tc": record.coalesced_at,
        "doublings": {
            "coalescence": record.doublings_for_coalescence,
            "condition": record.doublings_for_condition,
        },
        "condition_was_extended": record.condition_was_extended,
        "samples": samples,
        "betas": betas,
    })
}

fn cmd_sample(config: &ExperimentConfig) -> ExitCode {
    let spec = match queue_spec(config) {
        Ok(s) => s,
        Err(e) => return invalid(e.to_string()),
    };
    let streams = Streams::new(config.seed);
    match omnithermal_sample_with(streams, &spec, 0, config.verify_upper) {
        Ok(record) => {
            println!("{}", record_json(config, &record));
            if config.verbose {
                // Diagnostics go to stderr so stdout stays byte-stable.
                if let Ok((transcript, path, _)) = sandwich_sample(streams, &spec, 0) {
                    eprintln!(
                        "{}",
                        serde_json::json!({
                            "schema": "omniq-transcript-v1",
                            "transcript": transcript,
                            "path": path.to_debug_json(),
                        })
                    );
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            sampler_exit(&e)
        }
    }
}

fn sample_batch(
    config: &ExperimentConfig,
    spec: &QueueSpec,
    runs: u64,
) -> Result<Vec<SampleRecord>, SamplerError> {
    let streams = Streams::new(config.seed);
    let verify = config.verify_upper;
    (0..runs)
        .into_par_iter()
        .map(|run| omnithermal_sample_with(streams, spec, run, verify))
        .collect()
}

fn cmd_omni(config: &ExperimentConfig) -> ExitCode {
    let spec = match queue_spec(config) {
        Ok(s) => s,
        Err(e) => return invalid(e.to_string()),
    };
    let runs = if config.runs == 0 { 1 } else { config.runs };
    match sample_batch(config, &spec, runs) {
        Ok(records) => {
            let mut out = String::new();
            for record in &records {
                out.push_str(&record_json(config, record).to_string());
                out.push('\n');
            }
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            sampler_exit(&e)
        }
    }
}

fn cmd_validate(config: &ExperimentConfig) -> ExitCode {
    let outcomes = validate::run_all(config.seed);
    let mut all_ok = true;
    for o in &outcomes {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {}", o.name, o.detail);
        all_ok &= o.passed;
    }
    if all_ok {
        println!("all {} suites passed", outcomes.len());
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_SUITE_FAILURE)
    }
}

/// One output file, buffered in memory so an aborted run writes nothing.
struct OutFile {
    name: String,
    bytes: Vec<u8>,
}

fn cmd_experiment(config: &ExperimentConfig) -> ExitCode {
    let runs = if config.runs == 0 { 5000 } else { config.runs };
    let result = match config.preset.as_deref() {
        Some("backoff") => experiment_backoff(config, runs),
        Some("means") => experiment_means(config, runs),
        Some(other) => {
            return invalid(format!(
                "unknown preset {other:?} (expected \"backoff\" or \"means\")"
            ))
        }
        None => experiment_custom(config, runs),
    };
    let files = match result {
        Ok(files) => files,
        Err(e) => {
            eprintln!("error: {e}");
            return sampler_exit(&e);
        }
    };
    if let Err(e) = fs::create_dir_all(&config.out_dir) {
        return invalid(format!(
            "output directory {} not writable: {e}",
            config.out_dir.display()
        ));
    }
    for f in &files {
        let path = config.out_dir.join(&f.name);
        if let Err(e) = fs::write(&path, &f.bytes) {
            return invalid(format!("writing {}: {e}", path.display()));
        }
        println!("wrote {}", path.display());
    }
    ExitCode::SUCCESS
}

/// Per-run extension bookkeeping at the reference loads: one parameter set
/// per server count, extension counts to its own CSV plus a histogram figure.
fn experiment_backoff(config: &ExperimentConfig, runs: u64) -> Result<Vec<OutFile>, SamplerError> {
    let mut files = Vec::new();
    for servers in [10usize, 30, 50] {
        let spec = QueueSpec::new(servers, servers as f64, 2.0)
            .with_initial_backoff(config.t0)
            .with_max_doublings(config.max_doublings);
        spec.validate()?;
        let records = sample_batch(config, &spec, runs)?;
        files.push(OutFile {
            name: format!("extensions_c{servers}.csv"),
            bytes: extensions_csv(&records)?,
        });
        files.push(OutFile {
            name: format!("backoff_histogram_c{servers}.svg"),
            bytes: histogram_svg(&records, servers),
        });
    }
    Ok(files)
}

/// Equilibrium means and distribution functions across server counts from a
/// single coupled batch.
fn experiment_means(config: &ExperimentConfig, runs: u64) -> Result<Vec<OutFile>, SamplerError> {
    let spec = QueueSpec::new(2, 1.2, 1.0)
        .with_m_list(vec![0, 1, 2])
        .with_initial_backoff(config.t0)
        .with_max_doublings(config.max_doublings);
    spec.validate()?;
    let records = sample_batch(config, &spec, runs)?;
    summary_files(&spec, &records)
}

fn experiment_custom(config: &ExperimentConfig, runs: u64) -> Result<Vec<OutFile>, SamplerError> {
    let spec = queue_spec(config)?;
    let records = sample_batch(config, &spec, runs)?;
    summary_files(&spec, &records)
}

fn summary_files(spec: &QueueSpec, records: &[SampleRecord]) -> Result<Vec<OutFile>, SamplerError> {
    let mut summaries = Vec::new();
    for &m in &spec.m_list {
        let summary = summarize(records, Selector::M(m))
            .map_err(|e| SamplerError::InvalidSpec(e.to_string()))?;
        summaries.push((m, summary));
    }
    let mut files = vec![
        OutFile {
            name: "extensions.csv".into(),
            bytes: extensions_csv(records)?,
        },
        OutFile {
            name: "means.csv".into(),
            bytes: means_csv(&summaries)?,
        },
        OutFile {
            name: "cdf.csv".into(),
            bytes: cdf_csv(&summaries)?,
        },
        OutFile {
            name: "means.svg".into(),
            bytes: means_svg(&summaries),
        },
    ];
    for coordinate in [1usize, 2] {
        if summaries.iter().all(|(_, s)| s.means.len() >= coordinate) {
            files.push(OutFile {
                name: format!("cdf_coord{coordinate}.svg"),
                bytes: cdf_svg(&summaries, coordinate),
            });
        }
    }
    Ok(files)
}

fn csv_error(e: impl std::fmt::Display) -> SamplerError {
    SamplerError::InvalidSpec(format!("csv serialization: {e}"))
}

fn extensions_csv(records: &[SampleRecord]) -> Result<Vec<u8>, SamplerError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "run_id",
        "T_final",
        "Tc",
        "doublings_coalesce",
        "doublings_condition",
    ])
    .map_err(csv_error)?;
    for r in records {
        let tc = r.coalesced_at.map_or(String::new(), |t| format!("{t}"));
        w.write_record([
            r.run_id.to_string(),
            format!("{}", r.backoff),
            tc,
            r.doublings_for_coalescence.to_string(),
            r.doublings_for_condition.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.into_inner().map_err(csv_error)
}

fn means_csv(summaries: &[(usize, BatchSummary)]) -> Result<Vec<u8>, SamplerError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["m", "coordinate", "mean", "stderr"])
        .map_err(csv_error)?;
    for (m, s) in summaries {
        for (k, (mean, se)) in s.means.iter().zip(&s.stderrs).enumerate() {
            w.write_record([
                m.to_string(),
                (k + 1).to_string(),
                format!("{mean}"),
                format!("{se}"),
            ])
            .map_err(csv_error)?;
        }
    }
    w.into_inner().map_err(csv_error)
}

fn cdf_csv(summaries: &[(usize, BatchSummary)]) -> Result<Vec<u8>, SamplerError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["m", "coordinate", "x", "F(x)"])
        .map_err(csv_error)?;
    for (m, s) in summaries {
        for (k, cdf) in s.cdfs.iter().enumerate() {
            for (x, f) in cdf {
                w.write_record([
                    m.to_string(),
                    (k + 1).to_string(),
                    format!("{x}"),
                    format!("{f}"),
                ])
                .map_err(csv_error)?;
            }
        }
    }
    w.into_inner().map_err(csv_error)
}

// ---------------------------------------------------------------------------
// Static SVG figures
// ---------------------------------------------------------------------------

const SVG_W: f64 = 560.0;
const SVG_H: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        SVG_W / 2.0
    )
}

fn histogram_svg(records: &[SampleRecord], servers: usize) -> Vec<u8> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.condition_was_extended) {
        *counts.entry(r.doublings_for_condition).or_insert(0) += 1;
    }
    let extended: usize = counts.values().sum();
    let mut svg = svg_open(&format!(
        "Condition extensions, {servers} servers ({extended} of {} runs extended)",
        records.len()
    ));
    let max_count = counts.values().copied().max().unwrap_or(1) as f64;
    let n_bars = counts.len().max(1) as f64;
    let band = (SVG_W - 2.0 * MARGIN) / n_bars;
    for (i, (doublings, count)) in counts.iter().enumerate() {
        let h = (SVG_H - 2.0 * MARGIN) * (*count as f64) / max_count;
        let x = MARGIN + i as f64 * band + band * 0.15;
        let y = SVG_H - MARGIN - h;
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{}\" height=\"{h}\" fill=\"#4a78b0\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{doublings}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{count}</text>\n",
            band * 0.7,
            x + band * 0.35,
            SVG_H - MARGIN + 16.0,
            x + band * 0.35,
            y - 4.0,
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">doublings needed for the condition</text>\n</svg>\n",
        SVG_H - MARGIN,
        SVG_W - MARGIN,
        SVG_H - MARGIN,
        SVG_W / 2.0,
        SVG_H - 10.0,
    ));
    svg.into_bytes()
}

fn means_svg(summaries: &[(usize, BatchSummary)]) -> Vec<u8> {
    let mut svg = svg_open("Mean workload per coordinate by server count");
    let max_mean = summaries
        .iter()
        .flat_map(|(_, s)| s.means.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let groups = summaries.len() as f64;
    let band = (SVG_W - 2.0 * MARGIN) / groups;
    for (g, (m, s)) in summaries.iter().enumerate() {
        let coords = s.means.len() as f64;
        let sub = band * 0.8 / coords;
        for (k, mean) in s.means.iter().enumerate() {
            let h = (SVG_H - 2.0 * MARGIN) * mean / max_mean;
            let x = MARGIN + g as f64 * band + band * 0.1 + k as f64 * sub;
            let y = SVG_H - MARGIN - h;
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{}\" height=\"{h}\" fill=\"hsl({},60%,50%)\"/>\n",
                sub * 0.9,
                (k * 47) % 360,
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">m={m}</text>\n",
            MARGIN + g as f64 * band + band * 0.5,
            SVG_H - MARGIN + 16.0,
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n</svg>\n",
        SVG_H - MARGIN,
        SVG_W - MARGIN,
        SVG_H - MARGIN,
    ));
    svg.into_bytes()
}

fn cdf_svg(summaries: &[(usize, BatchSummary)], coordinate: usize) -> Vec<u8> {
    let mut svg = svg_open(&format!("Workload distribution, coordinate {coordinate}"));
    let x_max = summaries
        .iter()
        .filter_map(|(_, s)| s.cdfs[coordinate - 1].last().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    for (i, (m, s)) in summaries.iter().enumerate() {
        let cdf = &s.cdfs[coordinate - 1];
        let mut points = String::new();
        // Start each curve at the origin of its support.
        points.push_str(&format!("{},{} ", MARGIN, SVG_H - MARGIN));
        for (x, f) in cdf {
            let px = MARGIN + (SVG_W - 2.0 * MARGIN) * x / x_max;
            let py = SVG_H - MARGIN - (SVG_H - 2.0 * MARGIN) * f;
            points.push_str(&format!("{px},{py} "));
        }
        svg.push_str(&format!(
            "<polyline points=\"{points}\" fill=\"none\" stroke=\"hsl({},60%,45%)\" stroke-width=\"1.5\"/>\n\
             <text x=\"{}\" y=\"{}\" fill=\"hsl({},60%,45%)\">m={m}</text>\n",
            (i * 67) % 360,
            SVG_W - MARGIN - 60.0,
            MARGIN + 16.0 * (i + 1) as f64,
            (i * 67) % 360,
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n</svg>\n",
        SVG_H - MARGIN,
        SVG_W - MARGIN,
        SVG_H - MARGIN,
        SVG_H - MARGIN,
    ));
    svg.into_bytes()
}
