//! SLO-violation risk estimates from a two-moment summary.
//!
//! Two complementary measures are produced for a server with windowed mean
//! `mu` and deviation `sigma`, against the SLO threshold `tau`:
//!
//! - the Gaussian tail `1 - Phi((tau - mu) / sigma)`,
//! - the one-sided Cantelli bound `1 / (1 + ((tau - mu) / sigma)^2)`, which
//!   holds for any finite-variance latency distribution when `tau > mu`.
//!
//! A server is feasible when both fall strictly below the tolerance
//! `epsilon`. Servers are additionally ranked by the percentile score
//! `mu + k * sigma`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::summaries::Summary;

/// Latency SLO and risk preferences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloConfig {
    /// SLO threshold in seconds.
    pub tau: f64,
    /// Risk tolerance in (0, 1].
    pub epsilon: f64,
    /// Risk-aversion factor for the percentile score.
    pub k: f64,
}

impl Default for SloConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            epsilon: 0.15,
            k: 1.645,
        }
    }
}

impl SloConfig {
    pub fn new(tau: f64, epsilon: f64, k: f64) -> Result<Self> {
        let cfg = Self { tau, epsilon, k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::validation(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::validation(format!(
                "epsilon must be in (0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.k.is_finite() && self.k >= 0.0) {
            return Err(Error::validation(format!("k must be >= 0, got {}", self.k)));
        }
        Ok(())
    }
}

/// Risk view of one server at one decision step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub server_id: usize,
    pub p_norm: f64,
    pub p_cant: f64,
    /// `mu + k * sigma` in seconds; `+inf` when the deviation is undefined.
    pub score: f64,
    pub feasible: bool,
    /// False while the server has too few samples for a deviation.
    pub defined: bool,
}

impl RiskAssessment {
    /// Placeholder for a server with fewer than two samples.
    pub fn undefined(server_id: usize) -> Self {
        Self {
            server_id,
            p_norm: 1.0,
            p_cant: 1.0,
            score: f64::INFINITY,
            feasible: false,
            defined: false,
        }
    }
}

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// `erf(x)` for `0 <= x < 2.5` by the all-positive series
/// `2/sqrt(pi) * exp(-x^2) * sum 2^n x^(2n+1) / (2n+1)!!`.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > sum * 1e-17 {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 * FRAC_1_SQRT_PI * (-x2).exp() * sum
}

/// `erfc(x)` for `x >= 2.5` by the Laplace continued fraction
/// `x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))`, evaluated with modified Lentz.
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..1000 {
        let a = n as f64 * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() * FRAC_1_SQRT_PI / f
}

fn erfc_nonneg(x: f64) -> f64 {
    if x < 2.5 {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

fn phi(z: f64) -> f64 {
    let x = z.abs() * std::f64::consts::FRAC_1_SQRT_2;
    let lower = 0.5 * erfc_nonneg(x);
    let p = if z < 0.0 { lower } else { 1.0 - lower };
    p.clamp(0.0, 1.0)
}

/// Standard Normal CDF. Absolute error is far below 1e-7 everywhere; the
/// result is clamped to `[0, 1]`.
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::validation(format!("z must be finite, got {z}")));
    }
    Ok(phi(z))
}

fn moments(summary: &Summary) -> Result<(f64, f64)> {
    match summary.deviation {
        Some(sigma) => Ok((summary.mean, sigma)),
        None => Err(Error::InsufficientSamples {
            count: summary.count,
        }),
    }
}

/// Gaussian-surrogate probability that latency exceeds `tau`.
///
/// A zero deviation is a point mass: 0 when `mu < tau`, else 1.
pub fn normal_violation_prob(summary: &Summary, tau: f64) -> Result<f64> {
    let (mu, sigma) = moments(summary)?;
    if sigma == 0.0 {
        return Ok(if mu < tau { 0.0 } else { 1.0 });
    }
    // Upper tail computed as Phi(-z) to avoid cancellation in 1 - Phi(z).
    Ok(phi(-(tau - mu) / sigma))
}

/// One-sided Cantelli upper bound on the probability that latency exceeds `tau`.
///
/// The bound is only meaningful for `tau > mu`; otherwise 1 is returned.
pub fn cantelli_violation_prob(summary: &Summary, tau: f64) -> Result<f64> {
    let (mu, sigma) = moments(summary)?;
    if mu >= tau {
        return Ok(1.0);
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let z = (tau - mu) / sigma;
    Ok(1.0 / (1.0 + z * z))
}

/// Percentile score `mu + k * sigma`.
pub fn percentile_score(summary: &Summary, k: f64) -> Result<f64> {
    let (mu, sigma) = moments(summary)?;
    Ok(mu + k * sigma)
}

/// Full risk assessment of one server. Never fails: an undefined deviation
/// yields `defined = false, feasible = false`.
pub fn assess(summary: &Summary, cfg: &SloConfig, server_id: usize) -> RiskAssessment {
    let (Ok(p_norm), Ok(p_cant), Ok(score)) = (
        normal_violation_prob(summary, cfg.tau),
        cantelli_violation_prob(summary, cfg.tau),
        percentile_score(summary, cfg.k),
    ) else {
        return RiskAssessment::undefined(server_id);
    };
    RiskAssessment {
        server_id,
        p_norm,
        p_cant,
        score,
        feasible: p_norm < cfg.epsilon && p_cant < cfg.epsilon,
        defined: true,
    }
}
