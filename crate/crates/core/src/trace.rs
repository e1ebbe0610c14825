//! Latency traces: CSV replay and seeded synthetic generation.
//!
//! A [`Trace`] always holds the full `T x K` matrix of latencies, one value
//! per frame and server. Whether a policy gets to see all of it is decided
//! by the simulator's observability mode.
//!
//! CSV layout (long format, UTF-8, LF):
//!
//! ```text
//! frame,server,latency_s
//! 0,0,0.412
//! 0,1,0.398
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "frame,server,latency_s";

/// Clamp applied to every generated latency, in seconds.
pub const DEFAULT_FLOOR: f64 = 0.001;

pub const PRESETS: [&str; 3] = ["testbed3", "replay10", "heteroscedastic2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub name: String,
    pub seed: Option<u64>,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    num_servers: usize,
    num_frames: usize,
    /// Row-major, `observations[frame * num_servers + server]`.
    observations: Vec<f64>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn new(num_servers: usize, rows: Vec<Vec<f64>>, meta: TraceMeta) -> Result<Self> {
        if num_servers == 0 {
            return Err(Error::validation("trace needs at least one server"));
        }
        if rows.is_empty() {
            return Err(Error::validation("trace needs at least one frame"));
        }
        let num_frames = rows.len();
        let mut observations = Vec::with_capacity(num_frames * num_servers);
        for (t, row) in rows.into_iter().enumerate() {
            if row.len() != num_servers {
                return Err(Error::validation(format!(
                    "frame {t} has {} values, expected {num_servers}",
                    row.len()
                )));
            }
            observations.extend(row);
        }
        Self::from_flat(num_servers, num_frames, observations, meta)
    }

    fn from_flat(
        num_servers: usize,
        num_frames: usize,
        observations: Vec<f64>,
        meta: TraceMeta,
    ) -> Result<Self> {
        if let Some((i, v)) = observations
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v <= 0.0)
        {
            return Err(Error::validation(format!(
                "latency at frame {}, server {} must be finite and > 0, got {v}",
                i / num_servers,
                i % num_servers
            )));
        }
        Ok(Self {
            num_servers,
            num_frames,
            observations,
            meta,
        })
    }

    pub fn num_servers(&self) -> usize {
        self.num_servers
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn latency(&self, frame: usize, server: usize) -> f64 {
        self.observations[frame * self.num_servers + server]
    }

    /// All servers' latencies at one frame.
    pub fn frame(&self, frame: usize) -> &[f64] {
        let start = frame * self.num_servers;
        &self.observations[start..start + self.num_servers]
    }

    /// One server's latencies over all frames.
    pub fn column(&self, server: usize) -> Vec<f64> {
        (0..self.num_frames)
            .map(|t| self.latency(t, server))
            .collect()
    }

    /// True when both traces hold bit-identical observation matrices.
    pub fn same_observations(&self, other: &Trace) -> bool {
        self.num_servers == other.num_servers
            && self.num_frames == other.num_frames
            && self
                .observations
                .iter()
                .zip(&other.observations)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Latency process for one server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    Gaussian {
        mean: f64,
        std: f64,
    },
    /// Log of the latency is `N(mu_log, sigma_log^2)`.
    LogNormal {
        mu_log: f64,
        sigma_log: f64,
    },
    /// Piecewise process; each segment runs from its start frame until the
    /// next segment's start. The first segment must start at frame 0.
    RegimeShift {
        segments: Vec<(usize, Process)>,
    },
    /// With probability `burst_prob` a sample is multiplied by `burst_multiplier`.
    Bursty {
        base: Box<Process>,
        burst_prob: f64,
        burst_multiplier: f64,
    },
}

impl Process {
    pub fn gaussian(mean: f64, std: f64) -> Self {
        Process::Gaussian { mean, std }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Process::Gaussian { mean, std } => {
                if !(mean.is_finite() && *mean > 0.0) || !(std.is_finite() && *std >= 0.0) {
                    return Err(Error::validation(format!(
                        "gaussian needs mean > 0 and std >= 0, got ({mean}, {std})"
                    )));
                }
            }
            Process::LogNormal { mu_log, sigma_log } => {
                if !mu_log.is_finite() || !(sigma_log.is_finite() && *sigma_log >= 0.0) {
                    return Err(Error::validation(format!(
                        "lognormal needs finite mu_log and sigma_log >= 0, got ({mu_log}, {sigma_log})"
                    )));
                }
            }
            Process::RegimeShift { segments } => {
                let Some((first, _)) = segments.first() else {
                    return Err(Error::validation("regime_shift needs at least one segment"));
                };
                if *first != 0 {
                    return Err(Error::validation(format!(
                        "regime_shift must start at frame 0, first segment starts at {first}"
                    )));
                }
                for pair in segments.windows(2) {
                    if pair[1].0 <= pair[0].0 {
                        return Err(Error::validation(format!(
                            "regime_shift segments must have strictly increasing starts ({} then {})",
                            pair[0].0, pair[1].0
                        )));
                    }
                }
                for (_, p) in segments {
                    p.validate()?;
                }
            }
            Process::Bursty {
                base,
                burst_prob,
                burst_multiplier,
            } => {
                if !(0.0..=1.0).contains(burst_prob) {
                    return Err(Error::validation(format!(
                        "burst_prob must be in [0, 1], got {burst_prob}"
                    )));
                }
                if !(burst_multiplier.is_finite() && *burst_multiplier > 0.0) {
                    return Err(Error::validation(format!(
                        "burst_multiplier must be > 0, got {burst_multiplier}"
                    )));
                }
                base.validate()?;
            }
        }
        Ok(())
    }

    fn sample(&self, frame: usize, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Process::Gaussian { mean, std } => {
                // Validated: std >= 0 and finite.
                Normal::new(*mean, *std).expect("valid normal").sample(rng)
            }
            Process::LogNormal { mu_log, sigma_log } => LogNormal::new(*mu_log, *sigma_log)
                .expect("valid lognormal")
                .sample(rng),
            Process::RegimeShift { segments } => {
                let idx = segments.partition_point(|(start, _)| *start <= frame) - 1;
                segments[idx].1.sample(frame, rng)
            }
            Process::Bursty {
                base,
                burst_prob,
                burst_multiplier,
            } => {
                let v = base.sample(frame, rng);
                if rng.random::<f64>() < *burst_prob {
                    v * burst_multiplier
                } else {
                    v
                }
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            Process::Gaussian { mean, std } => format!("gaussian({mean},{std})"),
            Process::LogNormal { mu_log, sigma_log } => format!("lognormal({mu_log},{sigma_log})"),
            Process::RegimeShift { segments } => {
                let parts: Vec<_> = segments
                    .iter()
                    .map(|(s, p)| format!("{s}:{}", p.describe()))
                    .collect();
                format!("regime_shift[{}]", parts.join(";"))
            }
            Process::Bursty {
                base,
                burst_prob,
                burst_multiplier,
            } => format!(
                "bursty({},{burst_prob},{burst_multiplier})",
                base.describe()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub name: String,
    /// One process per server, or a single process shared by all servers.
    pub servers: Vec<Process>,
    pub floor: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(name: impl Into<String>, servers: Vec<Process>, seed: u64) -> Self {
        Self {
            name: name.into(),
            servers,
            floor: DEFAULT_FLOOR,
            seed,
        }
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }
}

/// Rounds to 9 significant digits, the precision of the CSV format, so a
/// value survives a save/load cycle unchanged.
pub fn round_sig9(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("formatted float parses")
}

/// Draws a `num_frames x num_servers` trace. Each server has its own ChaCha
/// stream derived from the seed, so a server's column does not depend on how
/// many other servers exist.
pub fn generate(spec: &GeneratorSpec, num_servers: usize, num_frames: usize) -> Result<Trace> {
    if num_servers == 0 || num_frames == 0 {
        return Err(Error::validation("generate needs K >= 1 and T >= 1"));
    }
    if spec.servers.len() != num_servers && spec.servers.len() != 1 {
        return Err(Error::validation(format!(
            "generator has {} processes for {num_servers} servers",
            spec.servers.len()
        )));
    }
    if !(spec.floor.is_finite() && spec.floor > 0.0) {
        return Err(Error::validation(format!(
            "floor must be > 0, got {}",
            spec.floor
        )));
    }
    for p in &spec.servers {
        p.validate()?;
    }

    let mut observations = vec![0.0; num_servers * num_frames];
    for server in 0..num_servers {
        let process = &spec.servers[server.min(spec.servers.len() - 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(server as u64);
        for frame in 0..num_frames {
            let v = process.sample(frame, &mut rng).max(spec.floor);
            observations[frame * num_servers + server] = round_sig9(v);
        }
    }

    let generator = spec
        .servers
        .iter()
        .map(Process::describe)
        .collect::<Vec<_>>()
        .join(" | ");
    Trace::from_flat(
        num_servers,
        num_frames,
        observations,
        TraceMeta {
            name: spec.name.clone(),
            seed: Some(spec.seed),
            generator,
        },
    )
}

/// Knob overrides a preset applies on top of the defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PresetOverrides {
    pub window_w: Option<usize>,
    pub default_frames: Option<usize>,
}

/// Built-in scenarios.
///
/// - `testbed3`: three servers with means close to the 0.5 s SLO, similar
///   long-run quality and regime shifts that reorder them.
/// - `replay10`: ten servers with well separated means and little jitter.
/// - `heteroscedastic2`: A has the lower mean but a wide spread
///   (`N(0.42, 0.08^2)`), B is slower but tight (`N(0.45, 0.01^2)`).
pub fn preset(name: &str, seed: u64) -> Result<(GeneratorSpec, PresetOverrides)> {
    let g = Process::gaussian;
    match name {
        "testbed3" => {
            // In every regime two servers are statistically tied and the third
            // lags by ~10%; the lagging server changes at each boundary.
            let bursty = |mean: f64| Process::Bursty {
                base: Box::new(g(mean, 0.02)),
                burst_prob: 0.03,
                burst_multiplier: 1.2,
            };
            let shift = |segments: Vec<(usize, Process)>| Process::RegimeShift { segments };
            let servers = vec![
                shift(vec![
                    (0, bursty(0.40)),
                    (70, bursty(0.44)),
                    (140, bursty(0.40)),
                ]),
                shift(vec![
                    (0, bursty(0.40)),
                    (70, bursty(0.40)),
                    (140, bursty(0.44)),
                ]),
                shift(vec![
                    (0, bursty(0.44)),
                    (70, bursty(0.40)),
                    (140, bursty(0.40)),
                ]),
            ];
            Ok((
                GeneratorSpec::new("testbed3", servers, seed),
                PresetOverrides {
                    window_w: None,
                    default_frames: Some(200),
                },
            ))
        }
        "replay10" => {
            let servers = (0..10).map(|i| g(0.30 + 0.02 * i as f64, 0.008)).collect();
            Ok((
                GeneratorSpec::new("replay10", servers, seed),
                PresetOverrides {
                    window_w: None,
                    default_frames: Some(500),
                },
            ))
        }
        "heteroscedastic2" => Ok((
            GeneratorSpec::new("heteroscedastic2", vec![g(0.42, 0.08), g(0.45, 0.01)], seed),
            PresetOverrides {
                window_w: Some(50),
                default_frames: Some(20_000),
            },
        )),
        other => Err(Error::UnknownPreset {
            name: other.to_string(),
            available: PRESETS.join(", "),
        }),
    }
}

/// Writes the trace in long CSV format, one row per (frame, server), values
/// rounded to 9 significant digits.
pub fn save_csv(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_csv(trace, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_csv(trace: &Trace, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for t in 0..trace.num_frames {
        for (s, v) in trace.frame(t).iter().enumerate() {
            writeln!(out, "{t},{s},{}", round_sig9(*v))?;
        }
    }
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);

    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut cells: Vec<(usize, usize, f64, u64)> = Vec::new();
    let mut saw_header = false;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if !saw_header {
            let header: Vec<&str> = record.iter().collect();
            if header.join(",") != CSV_HEADER {
                return Err(parse_err(
                    line,
                    format!(
                        "expected header '{CSV_HEADER}', found '{}'",
                        header.join(",")
                    ),
                ));
            }
            saw_header = true;
            continue;
        }
        if record.len() != 3 {
            return Err(parse_err(
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let frame: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad frame index '{}'", &record[0])))?;
        let server: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad server id '{}'", &record[1])))?;
        let latency: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad latency '{}'", &record[2])))?;
        if !latency.is_finite() || latency <= 0.0 {
            return Err(parse_err(
                line,
                format!("latency must be finite and > 0, got '{}'", &record[2]),
            ));
        }
        cells.push((frame, server, latency, line));
    }
    if !saw_header {
        return Err(parse_err(1, "empty file".into()));
    }
    if cells.is_empty() {
        return Err(parse_err(2, "no observations".into()));
    }

    let num_frames = cells.iter().map(|c| c.0).max().unwrap_or(0) + 1;
    let num_servers = cells.iter().map(|c| c.1).max().unwrap_or(0) + 1;
    let mut observations = vec![f64::NAN; num_frames * num_servers];
    let mut seen = HashSet::with_capacity(cells.len());
    for (frame, server, latency, line) in cells {
        if !seen.insert((frame, server)) {
            return Err(parse_err(
                line,
                format!("duplicate observation for frame {frame}, server {server}"),
            ));
        }
        observations[frame * num_servers + server] = latency;
    }
    if let Some(i) = observations.iter().position(|v| v.is_nan()) {
        return Err(Error::MissingObservation {
            path: path.to_path_buf(),
            frame: i / num_servers,
            server: i % num_servers,
        });
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Trace::from_flat(
        num_servers,
        num_frames,
        observations,
        TraceMeta {
            name,
            seed: None,
            generator: "csv".into(),
        },
    )
}
