//! File exports: per-step traces, run summaries, position snapshots and
//! Monte-Carlo batch reports.
//!
//! Every writer renders its output fully in memory first, so a failing run
//! never leaves half-written files behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{BarrierKind, ControllerGains};
use crate::sim::{self, Environment, MinH, OutcomeLabel, RunSummary, Scenario, SimError, SimTrace, StrictTraffic};

/// Column order of the trace export.
pub const TRACE_COLUMNS: [&str; 19] = [
    "t", "x", "y", "psi", "v", "a", "beta", "delta_f", "fsm_state", "c", "p", "e", "h_fc", "h_ft", "h_bt",
    "qp_status", "delta_v", "delta_y", "delta_psi",
];

/// Spacing of the position snapshots.
pub const SNAPSHOT_PERIOD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("cannot encode JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read config {path}: {reason}")]
    Config { path: String, reason: String },
    #[error("runs must be at least 1")]
    NoRuns,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Trace rows as comma-separated text with a header line.
pub fn trace_csv(trace: &SimTrace) -> String {
    let mut out = TRACE_COLUMNS.join(",");
    out.push('\n');
    for r in &trace.rows {
        let o = &r.output;
        let d = &o.diagnostics;
        let [dv, dy, dpsi] = d.slacks;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.ego.x,
            r.ego.y,
            r.ego.psi,
            r.ego.v,
            o.input.a,
            o.input.beta,
            o.delta_f,
            d.state,
            o.signals.c,
            o.signals.p.value(),
            o.signals.e_value(),
            opt(d.h(BarrierKind::Fc)),
            opt(d.h(BarrierKind::Ft)),
            opt(d.h(BarrierKind::Bt)),
            d.qp_status,
            dv,
            dy,
            dpsi,
        );
    }
    out
}

/// Positions of every vehicle at whole multiples of [`SNAPSHOT_PERIOD`]
/// and at the last recorded step.
pub fn snapshots_csv(trace: &SimTrace) -> String {
    let mut out = String::from("t,vehicle,x,y,v\n");
    let last = trace.rows.len().saturating_sub(1);
    for (i, r) in trace.rows.iter().enumerate() {
        let phase = r.t / SNAPSHOT_PERIOD;
        if (phase - phase.round()).abs() > 1e-9 && i != last {
            continue;
        }
        let _ = writeln!(out, "{},ego,{},{},{}", r.t, r.ego.x, r.ego.y, r.ego.v);
        for o in &r.others {
            let _ = writeln!(out, "{},{},{},{},{}", r.t, o.id, o.x, o.y, o.v);
        }
    }
    out
}

/// Structured run summary: outcome, timings and the lowest barrier values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryExport {
    #[serde(flatten)]
    pub summary: RunSummary,
    pub duration_to_success: Option<f64>,
    pub mean_step_seconds: f64,
    pub max_step_seconds: f64,
}

impl SummaryExport {
    pub fn new(trace: &SimTrace) -> Self {
        Self {
            summary: trace.summary.clone(),
            duration_to_success: trace.summary.success_time,
            mean_step_seconds: trace.timing.mean_step_seconds(),
            max_step_seconds: trace.timing.max_step_seconds,
        }
    }
}

fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<(), ReportError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Writes `trace.csv`, `summary.json` and `snapshots.csv` into `dir`.
pub fn write_simulation(trace: &SimTrace, dir: &Path) -> Result<(), ReportError> {
    let summary = serde_json::to_string_pretty(&SummaryExport::new(trace))? + "\n";
    write_all(
        dir,
        &[("trace.csv", trace_csv(trace)), ("summary.json", summary), ("snapshots.csv", snapshots_csv(trace))],
    )
}

/// Gain overrides read from a TOML config file. Unset fields keep the
/// scenario's value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainOverrides {
    pub epsilon: Option<f64>,
    pub alpha_v: Option<f64>,
    pub alpha_y: Option<f64>,
    pub alpha_psi: Option<f64>,
    pub gamma_fc: Option<f64>,
    pub gamma_ft: Option<f64>,
    pub gamma_bt: Option<f64>,
    pub p_v: Option<f64>,
    pub p_y: Option<f64>,
    pub p_psi: Option<f64>,
    pub h: Option<[[f64; 2]; 2]>,
    pub a_l: Option<f64>,
    pub v_d: Option<f64>,
    pub v_l: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub gains: GainOverrides,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let fail = |reason: String| ReportError::Config { path: path.display().to_string(), reason };
        let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        toml::from_str(&text).map_err(|e| fail(e.to_string()))
    }
}

impl GainOverrides {
    pub fn apply(&self, g: &mut ControllerGains) {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut g.epsilon, self.epsilon);
        set(&mut g.alpha_v, self.alpha_v);
        set(&mut g.alpha_y, self.alpha_y);
        set(&mut g.alpha_psi, self.alpha_psi);
        set(&mut g.gamma_fc, self.gamma_fc);
        set(&mut g.gamma_ft, self.gamma_ft);
        set(&mut g.gamma_bt, self.gamma_bt);
        set(&mut g.p_v, self.p_v);
        set(&mut g.p_y, self.p_y);
        set(&mut g.p_psi, self.p_psi);
        set(&mut g.a_l, self.a_l);
        set(&mut g.v_d, self.v_d);
        set(&mut g.v_l, self.v_l);
        if let Some(h) = self.h {
            g.h = h;
        }
    }
}

/// Everything that shapes a Monte-Carlo batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchConfig {
    pub env: Environment,
    pub runs: usize,
    pub base_seed: u64,
    pub workers: usize,
    pub strict_traffic: bool,
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    pub gains: GainOverrides,
}

impl BatchConfig {
    pub fn new(env: Environment, runs: usize, base_seed: u64) -> Self {
        Self {
            env,
            runs,
            base_seed,
            workers: 1,
            strict_traffic: false,
            dt: None,
            duration: None,
            gains: GainOverrides::default(),
        }
    }

    /// Scenario of run `index`; its seed is `base_seed + index`.
    pub fn scenario(&self, index: usize) -> Scenario {
        let mut scn = sim::build_random(self.env, self.base_seed.wrapping_add(index as u64));
        if self.strict_traffic {
            scn.strict_traffic = Some(StrictTraffic::default());
        }
        if let Some(dt) = self.dt {
            scn.dt = dt;
        }
        if let Some(d) = self.duration {
            scn.duration = d;
        }
        self.gains.apply(&mut scn.gains);
        scn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub count: usize,
    pub percent: f64,
}

/// Aggregate of one batch. Contains no wall-clock data, so two runs of the
/// same batch serialise to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub env: Environment,
    pub runs: usize,
    pub base_seed: u64,
    pub strict_traffic: bool,
    pub outcomes: BTreeMap<String, OutcomeRow>,
    pub qp_infeasible: usize,
    pub fallback_events: usize,
    pub collisions: usize,
    pub aborts: usize,
    pub switch_violations: usize,
    pub min_h: MinH,
    pub max_kkt_residual: f64,
    pub mean_duration_to_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub seed: u64,
    pub outcome: OutcomeLabel,
    pub duration_to_success: Option<f64>,
}

/// Wall-clock statistics of a batch, reported apart from [`BatchReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchTiming {
    pub workers: usize,
    pub wall_seconds: f64,
    pub control_steps: usize,
    pub mean_step_seconds: f64,
    pub max_step_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub report: BatchReport,
    pub ledger: Vec<LedgerRow>,
    pub summaries: Vec<RunSummary>,
    pub timing: BatchTiming,
}

/// Runs the batch on `workers` threads. Results are gathered by run index,
/// so the report does not depend on the worker count.
pub fn run_batch(cfg: &BatchConfig) -> Result<BatchResult, ReportError> {
    use rayon::prelude::*;
    if cfg.runs == 0 {
        return Err(ReportError::NoRuns);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers.max(1)).build()?;
    let started = Instant::now();
    let traces: Vec<SimTrace> = pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|i| sim::run_with(&cfg.scenario(i), false))
            .collect::<Result<_, _>>()
    })?;
    let wall_seconds = started.elapsed().as_secs_f64();

    let mut counts: BTreeMap<OutcomeLabel, usize> = OutcomeLabel::ALL.iter().map(|&o| (o, 0)).collect();
    let mut min_h = MinH::default();
    let mut max_kkt: f64 = 0.0;
    let (mut fallbacks, mut aborts, mut switch_violations) = (0, 0, 0);
    let mut success_durations = Vec::new();
    let mut timing = BatchTiming { workers: cfg.workers.max(1), wall_seconds, control_steps: 0, mean_step_seconds: 0.0, max_step_seconds: 0.0 };
    let mut total_step_seconds = 0.0;
    for t in &traces {
        let s = &t.summary;
        *counts.entry(s.outcome).or_default() += 1;
        min_h.merge(&s.min_h);
        max_kkt = max_kkt.max(s.max_kkt_residual);
        fallbacks += s.fallback_events;
        aborts += s.aborts;
        switch_violations += s.switch_violations;
        if s.outcome == OutcomeLabel::LaneChangeSuccess {
            success_durations.extend(s.success_time);
        }
        timing.control_steps += t.timing.control_steps;
        total_step_seconds += t.timing.total_seconds;
        timing.max_step_seconds = timing.max_step_seconds.max(t.timing.max_step_seconds);
    }
    if timing.control_steps > 0 {
        timing.mean_step_seconds = total_step_seconds / timing.control_steps as f64;
    }

    let runs = cfg.runs;
    let outcomes = counts
        .iter()
        .map(|(o, &count)| (o.as_str().to_owned(), OutcomeRow { count, percent: 100.0 * count as f64 / runs as f64 }))
        .collect();
    let mean_duration_to_success =
        (!success_durations.is_empty()).then(|| success_durations.iter().sum::<f64>() / success_durations.len() as f64);
    let report = BatchReport {
        env: cfg.env,
        runs,
        base_seed: cfg.base_seed,
        strict_traffic: cfg.strict_traffic,
        outcomes,
        qp_infeasible: counts[&OutcomeLabel::QpInfeasible],
        fallback_events: fallbacks,
        collisions: counts[&OutcomeLabel::Collision],
        aborts,
        switch_violations,
        min_h,
        max_kkt_residual: max_kkt,
        mean_duration_to_success,
    };
    let ledger = traces
        .iter()
        .map(|t| LedgerRow { seed: t.summary.seed, outcome: t.summary.outcome, duration_to_success: t.summary.success_time })
        .collect();
    let summaries = traces.into_iter().map(|t| t.summary).collect();
    Ok(BatchResult { report, ledger, summaries, timing })
}

pub fn ledger_csv(rows: &[LedgerRow]) -> String {
    let mut out = String::from("seed,outcome,duration_to_success\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.seed, r.outcome, opt(r.duration_to_success));
    }
    out
}

/// Writes `report.json`, `ledger.csv` and `timing.json` into `dir`.
pub fn write_batch(result: &BatchResult, dir: &Path) -> Result<(), ReportError> {
    let report = serde_json::to_string_pretty(&result.report)? + "\n";
    let timing = serde_json::to_string_pretty(&result.timing)? + "\n";
    write_all(dir, &[("report.json", report), ("ledger.csv", ledger_csv(&result.ledger)), ("timing.json", timing)])
}

/// Human-readable table of a batch report.
pub fn format_report(r: &BatchReport) -> String {
    let mut out = format!(
        "{} environment, {} runs from seed {}{}\n",
        r.env,
        r.runs,
        r.base_seed,
        if r.strict_traffic { ", strict traffic" } else { "" }
    );
    for o in OutcomeLabel::ALL {
        let row = &r.outcomes[o.as_str()];
        let _ = writeln!(out, "  {:<22} {:>6} {:>8.2}%", o.as_str(), row.count, row.percent);
    }
    let _ = writeln!(out, "  fallback events {}, aborts {}, switch violations {}", r.fallback_events, r.aborts, r.switch_violations);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_has_one_row_per_step_and_fixed_header() {
        let trace = sim::run(&sim::build_typical(1).unwrap()).unwrap();
        let csv = trace_csv(&trace);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TRACE_COLUMNS.join(","));
        assert_eq!(lines.count(), trace.rows.len());
        for line in csv.lines().skip(1) {
            assert_eq!(line.split(',').count(), TRACE_COLUMNS.len());
        }
    }

    #[test]
    fn missing_barriers_are_empty_fields() {
        let trace = sim::run(&sim::build_typical(1).unwrap()).unwrap();
        let csv = trace_csv(&trace);
        let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        // only the leader in the current lane exists at the start
        assert!(!first[12].is_empty());
        assert!(first[13].is_empty() && first[14].is_empty());
    }

    #[test]
    fn snapshots_cover_whole_seconds() {
        let trace = sim::run(&sim::build_typical(2).unwrap()).unwrap();
        let csv = snapshots_csv(&trace);
        let times: std::collections::BTreeSet<String> =
            csv.lines().skip(1).map(|l| l.split(',').next().unwrap().to_owned()).collect();
        assert!(times.contains("0") && times.contains("1") && times.contains("2"));
    }

    #[test]
    fn overrides_touch_only_given_fields() {
        let cfg: ConfigFile = toml::from_str("[gains]\ngamma_fc = 2.5\n").unwrap();
        let mut g = ControllerGains::default();
        cfg.gains.apply(&mut g);
        assert_eq!(g.gamma_fc, 2.5);
        assert_eq!(g.gamma_ft, ControllerGains::default().gamma_ft);
        assert!(toml::from_str::<ConfigFile>("[gains]\nnot_a_gain = 1\n").is_err());
    }

    #[test]
    fn batch_percentages_sum_to_hundred() {
        let mut cfg = BatchConfig::new(Environment::Urban, 4, 3);
        cfg.duration = Some(10.0);
        let res = run_batch(&cfg).unwrap();
        let total: f64 = res.report.outcomes.values().map(|r| r.percent).sum();
        assert!((total - 100.0).abs() < 1e-9);
        assert_eq!(res.ledger.len(), 4);
        assert_eq!(res.ledger[2].seed, 5);
        assert!(res.report.outcomes.contains_key("collision"));
    }

    #[test]
    fn zero_runs_rejected() {
        assert!(matches!(run_batch(&BatchConfig::new(Environment::Highway, 0, 1)), Err(ReportError::NoRuns)));
    }
}
