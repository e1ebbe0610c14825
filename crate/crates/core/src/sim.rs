//! Trace-driven decision loop, metrics and parameter sweeps.
//!
//! At frame `t` the policy decides from summaries over frames `< t`; the
//! chosen server's latency at `t` is then what the client experiences, and
//! only afterwards are the windows updated. In [`Observability::Full`] every
//! server's latency is pushed each frame, in [`Observability::SelectedOnly`]
//! only the selected server's is and the others go stale.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{
    baseline_select, bootstrap_select, feasible_set, hybrid_risk_select, hysteresis_step,
    in_warmup, Decision, PolicyConfig, PolicyKind, PolicyState, Reason,
};
use crate::risk::{assess, RiskAssessment};
use crate::summaries::{Summary, Window, DEFAULT_WINDOW};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observability {
    #[default]
    Full,
    SelectedOnly,
}

impl fmt::Display for Observability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Observability::Full => "full",
            Observability::SelectedOnly => "selected_only",
        })
    }
}

impl FromStr for Observability {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Observability::Full),
            "selected_only" | "selected" => Ok(Observability::SelectedOnly),
            other => Err(Error::validation(format!(
                "unknown observability '{other}' (expected full or selected_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub policy: PolicyKind,
    pub policy_config: PolicyConfig,
    pub window_w: usize,
    pub observability: Observability,
    /// Leave the first `window_w` frames out of the metrics.
    pub exclude_warmup: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Hysteresis,
            policy_config: PolicyConfig::default(),
            window_w: DEFAULT_WINDOW,
            observability: Observability::Full,
            exclude_warmup: false,
        }
    }
}

impl SimConfig {
    pub fn with_policy(self, policy: PolicyKind) -> Self {
        Self { policy, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy_config.validate()?;
        if self.window_w == 0 {
            return Err(Error::validation("window_w must be >= 1"));
        }
        if self.policy.uses_risk() && self.window_w < 2 {
            return Err(Error::validation(format!(
                "window_w must be >= 2 for the {} policy",
                self.policy
            )));
        }
        if self.policy_config.min_samples > self.window_w {
            return Err(Error::validation(format!(
                "min_samples ({}) exceeds window_w ({})",
                self.policy_config.min_samples, self.window_w
            )));
        }
        Ok(())
    }

    fn metrics_start(&self) -> usize {
        if self.exclude_warmup {
            self.window_w
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Fraction of frames whose experienced latency exceeds tau.
    pub dmr: f64,
    pub mean_delay: f64,
    /// Nearest-rank 95th percentile of experienced latency.
    pub p95_delay: f64,
    /// `switch_count / frames`.
    pub switch_freq: f64,
    pub switch_count: usize,
    pub frames: usize,
}

impl Metrics {
    /// Metrics over parallel per-frame slices of experienced latency and
    /// switch flags.
    pub fn compute(experienced: &[f64], switched: &[bool], tau: f64) -> Result<Self> {
        if experienced.is_empty() || experienced.len() != switched.len() {
            return Err(Error::validation(
                "metrics need a non-empty, aligned frame log",
            ));
        }
        let n = experienced.len();
        let misses = experienced.iter().filter(|&&d| d > tau).count();
        let switch_count = switched.iter().filter(|&&s| s).count();
        let mut sorted = experienced.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = (95 * n).div_ceil(100);
        Ok(Self {
            dmr: misses as f64 / n as f64,
            mean_delay: experienced.iter().sum::<f64>() / n as f64,
            p95_delay: sorted[rank.max(1) - 1],
            switch_freq: switch_count as f64 / n as f64,
            switch_count,
            frames: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: SimConfig,
    pub decisions: Vec<Decision>,
    /// Latency of the selected server at each frame.
    pub experienced_latency: Vec<f64>,
    /// Summaries the policy saw at each frame (`None` before any sample).
    pub summaries: Vec<Vec<Option<Summary>>>,
    pub metrics: Metrics,
}

impl RunReport {
    pub fn selections(&self) -> Vec<usize> {
        self.decisions.iter().map(|d| d.selected).collect()
    }

    /// Hash of the bit patterns of every summary seen at `frame`.
    pub fn summary_checksum(&self, frame: usize) -> u64 {
        let mut h = DefaultHasher::new();
        for s in &self.summaries[frame] {
            match s {
                None => 0u8.hash(&mut h),
                Some(s) => {
                    1u8.hash(&mut h);
                    s.mean.to_bits().hash(&mut h);
                    s.deviation.map(f64::to_bits).hash(&mut h);
                    s.count.hash(&mut h);
                }
            }
        }
        h.finish()
    }
}

fn warmup_decision(
    frame: usize,
    state: &PolicyState,
    cfg: &SimConfig,
    num_servers: usize,
    assessments: Vec<RiskAssessment>,
) -> Decision {
    let selected = bootstrap_select(frame, num_servers, cfg.observability);
    Decision {
        selected,
        switched: state.current.is_some_and(|c| c != selected),
        previous: state.current,
        best: None,
        feasible_set: feasible_set(&assessments, cfg.policy_config.slo.epsilon),
        assessments,
        counter: 0,
        reason: Reason::Initial,
    }
}

/// Replays `trace` under one policy.
pub fn run(cfg: &SimConfig, trace: &Trace) -> Result<RunReport> {
    cfg.validate()?;
    let num_servers = trace.num_servers();
    let num_frames = trace.num_frames();
    let start = cfg.metrics_start();
    if start >= num_frames {
        return Err(Error::validation(format!(
            "excluding {start} warm-up frames leaves nothing of a {num_frames}-frame trace"
        )));
    }
    let pc = &cfg.policy_config;

    let mut windows = vec![Window::new(cfg.window_w)?; num_servers];
    let mut state = PolicyState::default();
    let mut decisions = Vec::with_capacity(num_frames);
    let mut experienced = Vec::with_capacity(num_frames);
    let mut seen = Vec::with_capacity(num_frames);

    for frame in 0..num_frames {
        let summaries: Vec<Option<Summary>> = windows.iter().map(|w| w.summarize().ok()).collect();
        let assessments: Vec<RiskAssessment> = summaries
            .iter()
            .enumerate()
            .map(|(i, s)| s.map_or(RiskAssessment::undefined(i), |s| assess(&s, &pc.slo, i)))
            .collect();
        let counts: Vec<usize> = windows.iter().map(Window::len).collect();

        let decision = if in_warmup(&counts, pc.min_samples, state.current) {
            let d = warmup_decision(frame, &state, cfg, num_servers, assessments);
            state = PolicyState {
                current: Some(d.selected),
                ..PolicyState::default()
            };
            d
        } else {
            match cfg.policy {
                PolicyKind::Baseline => {
                    let mut d = baseline_select(&summaries, &state, pc.min_samples)?;
                    d.feasible_set = feasible_set(&assessments, pc.slo.epsilon);
                    d.assessments = assessments;
                    state.current = Some(d.selected);
                    d
                }
                PolicyKind::HybridRisk => {
                    let d = hybrid_risk_select(&assessments, &state, pc.slo.epsilon)?;
                    state.current = Some(d.selected);
                    d
                }
                PolicyKind::Hysteresis => {
                    let (d, next) = hysteresis_step(&assessments, &state, pc)?;
                    state = next;
                    d
                }
            }
        };

        let observed = trace.frame(frame);
        experienced.push(observed[decision.selected]);
        match cfg.observability {
            Observability::Full => {
                for (w, &v) in windows.iter_mut().zip(observed) {
                    w.push(v)?;
                }
            }
            Observability::SelectedOnly => {
                windows[decision.selected].push(observed[decision.selected])?
            }
        }
        decisions.push(decision);
        seen.push(summaries);
    }

    let switched: Vec<bool> = decisions.iter().map(|d| d.switched).collect();
    let metrics = Metrics::compute(&experienced[start..], &switched[start..], pc.slo.tau)?;
    Ok(RunReport {
        config: *cfg,
        decisions,
        experienced_latency: experienced,
        summaries: seen,
        metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub policy: PolicyKind,
    pub metrics: Metrics,
}

/// Runs every policy on the same trace with otherwise identical settings.
pub fn compare(
    policies: &[PolicyKind],
    trace: &Trace,
    base: &SimConfig,
) -> Result<Vec<CompareRow>> {
    if policies.is_empty() {
        return Err(Error::validation("compare needs at least one policy"));
    }
    policies
        .par_iter()
        .map(|&policy| {
            run(&base.with_policy(policy), trace).map(|r| CompareRow {
                policy,
                metrics: r.metrics,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub metrics: Metrics,
}

fn sweep<T: Copy + Sync>(
    values: &[T],
    trace: &Trace,
    base: &SimConfig,
    apply: impl Fn(&mut SimConfig, T) -> f64 + Sync,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::validation("sweep needs at least one value"));
    }
    // Collecting an indexed parallel iterator keeps parameter order.
    values
        .par_iter()
        .map(|&v| {
            let mut cfg = *base;
            let value = apply(&mut cfg, v);
            run(&cfg, trace).map(|r| SweepRow {
                value,
                metrics: r.metrics,
            })
        })
        .collect()
}

pub fn sweep_dwell(trace: &Trace, base: &SimConfig, dwell_values: &[u32]) -> Result<Vec<SweepRow>> {
    sweep(dwell_values, trace, base, |cfg, n| {
        cfg.policy_config.dwell = n;
        f64::from(n)
    })
}

pub fn sweep_k(trace: &Trace, base: &SimConfig, k_values: &[f64]) -> Result<Vec<SweepRow>> {
    sweep(k_values, trace, base, |cfg, k| {
        cfg.policy_config.slo.k = k;
        k
    })
}

pub const DECISION_LOG_HEADER: [&str; 11] = [
    "frame",
    "selected",
    "switched",
    "experienced_latency_s",
    "feasible_count",
    "score_curr",
    "score_best",
    "p_norm_best",
    "p_cant_best",
    "counter",
    "reason",
];

/// One parsed row of the decision log CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionLogRow {
    pub frame: usize,
    pub selected: usize,
    pub switched: bool,
    pub experienced_latency: f64,
    pub feasible_count: usize,
    pub score_curr: Option<f64>,
    pub score_best: Option<f64>,
    pub p_norm_best: Option<f64>,
    pub p_cant_best: Option<f64>,
    pub counter: u32,
    pub reason: Reason,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_decision_log(report: &RunReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DECISION_LOG_HEADER)?;
    for (frame, (d, lat)) in report
        .decisions
        .iter()
        .zip(&report.experienced_latency)
        .enumerate()
    {
        let find =
            |id: Option<usize>| id.and_then(|i| d.assessments.iter().find(|a| a.server_id == i));
        let curr = find(d.previous);
        let best = find(d.best);
        w.write_record([
            frame.to_string(),
            d.selected.to_string(),
            d.switched.to_string(),
            lat.to_string(),
            d.feasible_set.len().to_string(),
            opt(curr.map(|a| a.score)),
            opt(best.map(|a| a.score)),
            opt(best.map(|a| a.p_norm)),
            opt(best.map(|a| a.p_cant)),
            d.counter.to_string(),
            d.reason.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("decision log", e))?;
    Ok(())
}

pub fn read_decision_log(input: impl Read) -> Result<Vec<DecisionLogRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != DECISION_LOG_HEADER {
        return Err(Error::validation(format!(
            "not a decision log: header '{}'",
            header.join(",")
        )));
    }
    let bad =
        |line: u64, what: &str| Error::validation(format!("decision log line {line}: bad {what}"));
    let mut rows = Vec::new();
    for record in r.records() {
        let rec = record?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<Option<f64>> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| bad(line, DECISION_LOG_HEADER[i]))
            }
        };
        rows.push(DecisionLogRow {
            frame: rec[0].parse().map_err(|_| bad(line, "frame"))?,
            selected: rec[1].parse().map_err(|_| bad(line, "selected"))?,
            switched: rec[2].parse().map_err(|_| bad(line, "switched"))?,
            experienced_latency: num(3)?.ok_or_else(|| bad(line, "experienced_latency_s"))?,
            feasible_count: rec[4].parse().map_err(|_| bad(line, "feasible_count"))?,
            score_curr: num(5)?,
            score_best: num(6)?,
            p_norm_best: num(7)?,
            p_cant_best: num(8)?,
            counter: rec[9].parse().map_err(|_| bad(line, "counter"))?,
            reason: rec[10].parse()?,
        });
    }
    Ok(rows)
}
