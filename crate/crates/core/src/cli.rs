//! `edgesel` command-line front end.
//!
//! Settings resolve in layers: built-in defaults, then preset overrides,
//! then an optional flat `key = value` config file, then command-line flags.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::{PolicyConfig, PolicyKind, TieBreak};
use crate::risk::SloConfig;
use crate::sim::{
    compare, read_decision_log, run, sweep_dwell, sweep_k, write_decision_log, CompareRow, Metrics,
    Observability, SimConfig, SweepRow,
};
use crate::summaries::DEFAULT_WINDOW;
use crate::trace::{generate, load_csv, preset, save_csv, Trace};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(
    name = "edgesel",
    version,
    about = "Risk-aware edge server selection simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trace CSV from a preset.
    Gen(GenArgs),
    /// Replay a trace under one policy; write the decision log and metrics.
    Run(RunArgs),
    /// Compare policies on the same trace.
    Compare(CompareArgs),
    /// Sweep the dwell window or the percentile factor.
    Sweep(SweepArgs),
    /// Extract (frame, selected_server) pairs from a decision log.
    Timeline(TimelineArgs),
}

#[derive(Debug, Args, Default, Clone)]
pub struct ExperimentArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trace CSV to replay.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Built-in scenario (testbed3, replay10, heteroscedastic2).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frames to generate when using a preset.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "dwell-n")]
    pub dwell_n: Option<u32>,
    #[arg(long = "window-w")]
    pub window_w: Option<usize>,
    #[arg(long = "min-samples")]
    pub min_samples: Option<usize>,
    /// full or selected_only.
    #[arg(long)]
    pub observability: Option<String>,
    #[arg(long = "tie-break")]
    pub tie_break: Option<String>,
    #[arg(long = "reset-on-challenger-change")]
    pub reset_on_challenger_change: Option<bool>,
    #[arg(long = "exclude-warmup")]
    pub exclude_warmup: Option<bool>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub preset: String,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Decision log CSV output.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Metrics JSON output (defaults to the decision log path with .json).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Print the metrics report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Comma-separated policies to compare.
    #[arg(long, value_delimiter = ',', default_values_t = ["baseline".to_string(), "hybrid_risk".to_string(), "hysteresis".to_string()])]
    pub policies: Vec<String>,
    /// CSV output for the table.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    #[value(name = "dwell_n")]
    DwellN,
    #[value(name = "k")]
    K,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated parameter values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<String>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TimelineArgs {
    /// Decision log CSV written by `run`.
    #[arg(long)]
    pub log: PathBuf,
    /// Frame range `start:end` (end exclusive; either side may be empty).
    #[arg(long)]
    pub span: Option<String>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// Fully resolved experiment settings; also the config echo in JSON output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub tau: f64,
    pub epsilon: f64,
    pub k: f64,
    pub delta: f64,
    pub dwell_n: u32,
    pub window_w: Option<usize>,
    pub min_samples: usize,
    pub observability: Observability,
    pub policy: PolicyKind,
    pub seed: u64,
    pub trace_path: Option<PathBuf>,
    pub preset: Option<String>,
    pub frames: Option<usize>,
    pub tie_break: TieBreak,
    pub reset_on_challenger_change: bool,
    pub exclude_warmup: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = PolicyConfig::default();
        Self {
            tau: p.slo.tau,
            epsilon: p.slo.epsilon,
            k: p.slo.k,
            delta: p.delta,
            dwell_n: p.dwell,
            window_w: None,
            min_samples: p.min_samples,
            observability: Observability::Full,
            policy: PolicyKind::Hysteresis,
            seed: DEFAULT_SEED,
            trace_path: None,
            preset: None,
            frames: None,
            tie_break: TieBreak::default(),
            reset_on_challenger_change: false,
            exclude_warmup: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::validation(format!("invalid value '{value}' for '{key}'")))
}

impl ExperimentConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "tau" => self.tau = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "delta" => self.delta = parse_value(key, value)?,
            "dwell_n" => self.dwell_n = parse_value(key, value)?,
            "window_w" => self.window_w = Some(parse_value(key, value)?),
            "min_samples" => self.min_samples = parse_value(key, value)?,
            "observability" => self.observability = value.parse()?,
            "policy" => self.policy = value.parse()?,
            "seed" => self.seed = parse_value(key, value)?,
            "trace_path" => self.trace_path = Some(PathBuf::from(value)),
            "preset" => self.preset = Some(value.to_string()),
            "frames" => self.frames = Some(parse_value(key, value)?),
            "tie_break" => self.tie_break = value.parse()?,
            "reset_on_challenger_change" => {
                self.reset_on_challenger_change = parse_value(key, value)?
            }
            "exclude_warmup" => self.exclude_warmup = parse_value(key, value)?,
            other => return Err(Error::validation(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are skipped.
    pub fn apply_file_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: format!("expected key=value, found '{line}'"),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 1,
                    message: e.to_string(),
                })?;
        }
        if self.trace_path.is_some() && self.preset.is_some() {
            return Err(Error::validation(format!(
                "{}: set either trace_path or preset, not both",
                path.display()
            )));
        }
        Ok(())
    }

    pub fn resolve(args: &ExperimentArgs) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_file_text(&text, path)?;
        }
        if let Some(p) = &args.trace {
            cfg.trace_path = Some(p.clone());
            cfg.preset = None;
        }
        if let Some(p) = &args.preset {
            cfg.preset = Some(p.clone());
            cfg.trace_path = None;
        }
        if args.trace.is_some() && args.preset.is_some() {
            return Err(Error::validation(
                "pass either --trace or --preset, not both",
            ));
        }
        macro_rules! flag {
            ($field:ident) => {
                if let Some(v) = args.$field {
                    cfg.$field = v;
                }
            };
        }
        flag!(seed);
        flag!(tau);
        flag!(epsilon);
        flag!(k);
        flag!(delta);
        flag!(dwell_n);
        flag!(min_samples);
        flag!(reset_on_challenger_change);
        flag!(exclude_warmup);
        if let Some(v) = args.frames {
            cfg.frames = Some(v);
        }
        if let Some(v) = args.window_w {
            cfg.window_w = Some(v);
        }
        if let Some(v) = &args.policy {
            cfg.policy = v.parse()?;
        }
        if let Some(v) = &args.observability {
            cfg.observability = v.parse()?;
        }
        if let Some(v) = &args.tie_break {
            cfg.tie_break = v.parse()?;
        }
        Ok(cfg)
    }

    /// Loads or generates the trace and builds the simulator config.
    pub fn materialize(&mut self) -> Result<(Trace, SimConfig)> {
        let (trace, preset_window) = match (&self.trace_path, &self.preset) {
            (Some(path), _) => (load_csv(path)?, None),
            (None, Some(name)) => {
                let (spec, overrides) = preset(name, self.seed)?;
                let frames = self.frames.or(overrides.default_frames).unwrap_or(200);
                (
                    generate(&spec, spec.num_servers(), frames)?,
                    overrides.window_w,
                )
            }
            (None, None) => {
                return Err(Error::validation(
                    "no trace: pass --trace <path> or --preset <name>",
                ))
            }
        };
        let window_w = *self
            .window_w
            .get_or_insert(preset_window.unwrap_or(DEFAULT_WINDOW));
        let sim = SimConfig {
            policy: self.policy,
            policy_config: PolicyConfig {
                slo: SloConfig::new(self.tau, self.epsilon, self.k)?,
                delta: self.delta,
                dwell: self.dwell_n,
                tie_break: self.tie_break,
                reset_on_challenger_change: self.reset_on_challenger_change,
                min_samples: self.min_samples,
            },
            window_w,
            observability: self.observability,
            exclude_warmup: self.exclude_warmup,
        };
        sim.validate()?;
        Ok((trace, sim))
    }
}

#[derive(Debug, Serialize)]
struct TraceEcho<'a> {
    name: &'a str,
    num_servers: usize,
    num_frames: usize,
    seed: Option<u64>,
}

impl<'a> From<&'a Trace> for TraceEcho<'a> {
    fn from(t: &'a Trace) -> Self {
        Self {
            name: &t.meta.name,
            num_servers: t.num_servers(),
            num_frames: t.num_frames(),
            seed: t.meta.seed,
        }
    }
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    policy: PolicyKind,
    metrics: Metrics,
    config: &'a ExperimentConfig,
    trace: TraceEcho<'a>,
}

#[derive(Debug, Serialize)]
struct CompareSummary<'a> {
    rows: &'a [CompareRow],
    config: &'a ExperimentConfig,
    trace: TraceEcho<'a>,
}

#[derive(Debug, Serialize)]
struct SweepSummary<'a> {
    param: &'static str,
    rows: &'a [SweepRow],
    config: &'a ExperimentConfig,
    trace: TraceEcho<'a>,
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn secs(x: f64) -> String {
    format!("{x:.3}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_csv_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Left-aligned first column, right-aligned numeric columns.
fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[0])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub const COMPARE_HEADER: [&str; 4] = ["Algorithm", "Avg Delay (s)", "DMR (%)", "Switches (%)"];
pub const SWEEP_HEADER: [&str; 4] = [
    "value",
    "Switch Freq. (%)",
    "Mean Delay (s)",
    "P95 Delay (s)",
];

fn cmd_gen(args: &GenArgs, stdout: &mut dyn Write) -> Result<()> {
    let (spec, overrides) = preset(&args.preset, args.seed)?;
    let frames = args.frames.or(overrides.default_frames).unwrap_or(200);
    let trace = generate(&spec, spec.num_servers(), frames)?;
    save_csv(&trace, &args.out)?;
    writeln!(
        stdout,
        "wrote {}: K={} T={} seed={}",
        args.out.display(),
        trace.num_servers(),
        trace.num_frames(),
        args.seed
    )
    .map_err(|e| Error::io("stdout", e))
}

fn metrics_line(policy: PolicyKind, m: &Metrics) -> String {
    format!(
        "policy={policy} frames={} dmr={}% mean_delay={}s p95={}s switches={} ({}%)",
        m.frames,
        pct(m.dmr),
        secs(m.mean_delay),
        secs(m.p95_delay),
        m.switch_count,
        pct(m.switch_freq)
    )
}

fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = ExperimentConfig::resolve(&args.exp)?;
    let (trace, sim) = cfg.materialize()?;
    let report = run(&sim, &trace)?;
    let summary = RunSummary {
        policy: sim.policy,
        metrics: report.metrics,
        config: &cfg,
        trace: TraceEcho::from(&trace),
    };
    let json = serde_json::to_string_pretty(&summary)?;

    if let Some(out) = &args.out {
        let mut w = create(out)?;
        write_decision_log(&report, &mut w)?;
        w.flush().map_err(|e| Error::io(out, e))?;
    }
    let metrics_path = args
        .metrics
        .clone()
        .or_else(|| args.out.as_ref().map(|p| p.with_extension("json")));
    if let Some(path) = metrics_path {
        fs::write(&path, format!("{json}\n")).map_err(|e| Error::io(&path, e))?;
    }

    let text = if args.json {
        json
    } else {
        metrics_line(sim.policy, &report.metrics)
    };
    writeln!(stdout, "{text}").map_err(|e| Error::io("stdout", e))
}

fn cmd_compare(args: &CompareArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = ExperimentConfig::resolve(&args.exp)?;
    let (trace, sim) = cfg.materialize()?;
    let policies = args
        .policies
        .iter()
        .map(|p| p.trim().parse())
        .collect::<Result<Vec<PolicyKind>>>()?;
    let rows = compare(&policies, &trace, &sim)?;
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.policy.label().to_string(),
                secs(r.metrics.mean_delay),
                pct(r.metrics.dmr),
                pct(r.metrics.switch_freq),
            ]
        })
        .collect();
    if let Some(out) = &args.out {
        let csv_rows: Vec<Vec<String>> = rows
            .iter()
            .zip(&cells)
            .map(|(r, c)| {
                let mut row = vec![r.policy.as_str().to_string()];
                row.extend(c[1..].iter().cloned());
                row
            })
            .collect();
        write_csv_rows(
            out,
            &["policy", "avg_delay_s", "dmr_pct", "switches_pct"],
            &csv_rows,
        )?;
    }
    let text = if args.json {
        serde_json::to_string_pretty(&CompareSummary {
            rows: &rows,
            config: &cfg,
            trace: TraceEcho::from(&trace),
        })?
    } else {
        render_table(&COMPARE_HEADER, &cells)
    };
    writeln!(stdout, "{}", text.trim_end()).map_err(|e| Error::io("stdout", e))
}

fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write) -> Result<()> {
    if args.values.is_empty() {
        return Err(Error::validation("--values needs at least one value"));
    }
    let mut cfg = ExperimentConfig::resolve(&args.exp)?;
    let (trace, sim) = cfg.materialize()?;
    let (name, rows) = match args.param {
        SweepParam::DwellN => {
            let values = args
                .values
                .iter()
                .map(|v| parse_value::<u32>("dwell_n", v.trim()))
                .collect::<Result<Vec<_>>>()?;
            ("dwell_n", sweep_dwell(&trace, &sim, &values)?)
        }
        SweepParam::K => {
            let values = args
                .values
                .iter()
                .map(|v| parse_value::<f64>("k", v.trim()))
                .collect::<Result<Vec<_>>>()?;
            ("k", sweep_k(&trace, &sim, &values)?)
        }
    };
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.value.to_string(),
                pct(r.metrics.switch_freq),
                secs(r.metrics.mean_delay),
                secs(r.metrics.p95_delay),
            ]
        })
        .collect();
    if let Some(out) = &args.out {
        write_csv_rows(
            out,
            &[name, "switch_freq_pct", "mean_delay_s", "p95_delay_s"],
            &cells,
        )?;
    }
    let text = if args.json {
        serde_json::to_string_pretty(&SweepSummary {
            param: name,
            rows: &rows,
            config: &cfg,
            trace: TraceEcho::from(&trace),
        })?
    } else {
        let mut header = SWEEP_HEADER;
        header[0] = name;
        render_table(&header, &cells)
    };
    writeln!(stdout, "{}", text.trim_end()).map_err(|e| Error::io("stdout", e))
}

fn parse_span(span: &str) -> Result<(usize, usize)> {
    let (a, b) = span
        .split_once(':')
        .ok_or_else(|| Error::validation(format!("span must be start:end, got '{span}'")))?;
    let start = if a.is_empty() {
        0
    } else {
        parse_value("span", a)?
    };
    let end = if b.is_empty() {
        usize::MAX
    } else {
        parse_value("span", b)?
    };
    if start > end {
        return Err(Error::validation(format!("empty span '{span}'")));
    }
    Ok((start, end))
}

fn cmd_timeline(args: &TimelineArgs, stdout: &mut dyn Write) -> Result<()> {
    let file = File::open(&args.log).map_err(|e| Error::io(&args.log, e))?;
    let rows = read_decision_log(file)?;
    let (start, end) = match &args.span {
        Some(s) => parse_span(s)?,
        None => (0, usize::MAX),
    };
    let mut text = String::from("frame,selected_server\n");
    for row in rows.iter().filter(|r| (start..end).contains(&r.frame)) {
        text.push_str(&format!("{},{}\n", row.frame, row.selected));
    }
    match &args.out {
        Some(path) => fs::write(path, &text).map_err(|e| Error::io(path, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("stdout", e)),
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, stdout),
        Command::Run(a) => cmd_run(a, stdout),
        Command::Compare(a) => cmd_compare(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::Timeline(a) => cmd_timeline(a, stdout),
    }
}
