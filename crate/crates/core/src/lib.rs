//! Risk-aware and switching-stable edge server selection under a latency SLO.
//!
//! The crate is a small decision layer plus a trace-driven simulator around it:
//!
//! - [`summaries`]: per-server sliding-window mean / sample deviation.
//! - [`risk`]: Gaussian and Cantelli SLO-violation estimates, percentile score.
//! - [`policy`]: mean-only baseline, hybrid risk selection, percentile hysteresis.
//! - [`trace`]: CSV replay and seeded synthetic latency traces.
//! - [`sim`]: the per-frame decision loop, metrics and parameter sweeps.
//! - [`cli`]: the `edgesel` command-line front end.
//!
//! Every policy is a deterministic step function; given the same trace and
//! configuration a run reproduces the same decision log bit for bit.

pub mod cli;
pub mod error;
pub mod policy;
pub mod risk;
pub mod sim;
pub mod summaries;
pub mod trace;

pub use error::{Error, Result};
pub use policy::{
    baseline_select, bootstrap_select, feasible_set, hybrid_risk_select, hysteresis_step, Decision,
    PolicyConfig, PolicyKind, PolicyState, Reason, TieBreak,
};
pub use risk::{
    assess, cantelli_violation_prob, normal_violation_prob, percentile_score, std_normal_cdf,
    RiskAssessment, SloConfig,
};
pub use sim::{compare, run, sweep_dwell, sweep_k, Metrics, Observability, RunReport, SimConfig};
pub use summaries::{aggregate_frame, LatencySample, Summary, Window};
pub use trace::{generate, load_csv, preset, save_csv, GeneratorSpec, Process, Trace};
