//! Server selection policies.
//!
//! Three deterministic step functions over the per-server assessments:
//!
//! - [`baseline_select`]: lowest windowed mean.
//! - [`hybrid_risk_select`]: lowest Gaussian risk, accepted only if both the
//!   Gaussian estimate and the Cantelli bound are below `epsilon`; otherwise
//!   the client stays where it is.
//! - [`hysteresis_step`]: among feasible servers, the lowest percentile
//!   score challenges the current server, and a switch commits only after the
//!   challenger has beaten the current score by a relative margin `delta` on
//!   `dwell` consecutive steps.
//!
//! All three break ties the same way: keep the current server if it is among
//! the minimisers, otherwise take the lowest server id.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::{RiskAssessment, SloConfig};
use crate::sim::Observability;
use crate::summaries::Summary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    PreferCurrentThenLowestId,
}

impl FromStr for TieBreak {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prefer_current_then_lowest_id" => Ok(TieBreak::PreferCurrentThenLowestId),
            other => Err(Error::validation(format!(
                "unknown tie_break '{other}' (expected prefer_current_then_lowest_id)"
            ))),
        }
    }
}

impl fmt::Display for TieBreak {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("prefer_current_then_lowest_id")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub slo: SloConfig,
    /// Relative improvement a challenger must show over the current score.
    pub delta: f64,
    /// Consecutive qualifying steps required before a switch commits.
    pub dwell: u32,
    pub tie_break: TieBreak,
    /// Restart the dwell counter at 1 whenever the best challenger changes.
    pub reset_on_challenger_change: bool,
    /// Samples every server needs before the policy takes over from probing.
    pub min_samples: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            slo: SloConfig::default(),
            delta: 0.05,
            dwell: 5,
            tie_break: TieBreak::default(),
            reset_on_challenger_change: false,
            min_samples: 2,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        self.slo.validate()?;
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::validation(format!(
                "delta must be >= 0, got {}",
                self.delta
            )));
        }
        if self.dwell == 0 {
            return Err(Error::validation("dwell window must be >= 1"));
        }
        if self.min_samples == 0 {
            return Err(Error::validation("min_samples must be >= 1"));
        }
        Ok(())
    }
}

/// Persistent controller state carried between decision steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolicyState {
    pub current: Option<usize>,
    pub counter: u32,
    pub last_challenger: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    /// First assignment, or a warm-up probe.
    Initial,
    HoldNoFeasible,
    HoldInsufficientImprovement,
    /// Challenger qualified but the dwell counter has not reached `dwell`.
    HoldCounter,
    SwitchCommitted,
    /// The policy's best candidate was selected (possibly the current server).
    BestRisk,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Initial => "initial",
            Reason::HoldNoFeasible => "hold_no_feasible",
            Reason::HoldInsufficientImprovement => "hold_insufficient_improvement",
            Reason::HoldCounter => "hold_counter",
            Reason::SwitchCommitted => "switch_committed",
            Reason::BestRisk => "best_risk",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Reason {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "initial" => Reason::Initial,
            "hold_no_feasible" => Reason::HoldNoFeasible,
            "hold_insufficient_improvement" => Reason::HoldInsufficientImprovement,
            "hold_counter" => Reason::HoldCounter,
            "switch_committed" => Reason::SwitchCommitted,
            "best_risk" => Reason::BestRisk,
            other => return Err(Error::validation(format!("unknown reason '{other}'"))),
        })
    }
}

/// Outcome of one decision step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub selected: usize,
    pub switched: bool,
    /// Server that was current entering the step.
    pub previous: Option<usize>,
    /// The policy's preferred candidate: lowest mean, lowest risk or the
    /// hysteresis challenger, depending on the policy.
    pub best: Option<usize>,
    pub feasible_set: Vec<usize>,
    pub assessments: Vec<RiskAssessment>,
    /// Dwell counter after the step (always 0 outside hysteresis).
    pub counter: u32,
    pub reason: Reason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Baseline,
    HybridRisk,
    Hysteresis,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [
        PolicyKind::Baseline,
        PolicyKind::HybridRisk,
        PolicyKind::Hysteresis,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Baseline => "baseline",
            PolicyKind::HybridRisk => "hybrid_risk",
            PolicyKind::Hysteresis => "hysteresis",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Baseline => "Mean-only Baseline",
            PolicyKind::HybridRisk => "Hybrid Risk Eval.",
            PolicyKind::Hysteresis => "Percentile + Hysteresis",
        }
    }

    pub fn uses_risk(self) -> bool {
        !matches!(self, PolicyKind::Baseline)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(PolicyKind::Baseline),
            "hybrid_risk" | "hybrid" => Ok(PolicyKind::HybridRisk),
            "hysteresis" => Ok(PolicyKind::Hysteresis),
            other => Err(Error::validation(format!(
                "unknown policy '{other}' (expected baseline, hybrid_risk or hysteresis)"
            ))),
        }
    }
}

/// Index of the smallest key. Exact ties keep `current` if it is tied,
/// otherwise the lowest id wins.
fn argmin_prefer_current(
    items: impl IntoIterator<Item = (usize, f64)>,
    current: Option<usize>,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (id, key) in items {
        best = match best {
            None => Some((id, key)),
            Some((bid, bkey)) => {
                if key < bkey
                    || (key == bkey && (Some(id) == current || (Some(bid) != current && id < bid)))
                {
                    Some((id, key))
                } else {
                    Some((bid, bkey))
                }
            }
        };
    }
    best.map(|(id, _)| id)
}

fn select(previous: Option<usize>, selected: usize) -> (bool, Reason) {
    match previous {
        None => (false, Reason::Initial),
        Some(p) => (p != selected, Reason::BestRisk),
    }
}

/// Mean-only baseline: lowest windowed mean among servers with at least
/// `min_samples` observations.
pub fn baseline_select(
    summaries: &[Option<Summary>],
    state: &PolicyState,
    min_samples: usize,
) -> Result<Decision> {
    let threshold = min_samples.max(1);
    let candidates = summaries
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.filter(|s| s.count >= threshold).map(|s| (i, s.mean)));
    let selected = argmin_prefer_current(candidates, state.current).ok_or(Error::NoData)?;
    let (switched, reason) = select(state.current, selected);
    Ok(Decision {
        selected,
        switched,
        previous: state.current,
        best: Some(selected),
        feasible_set: Vec::new(),
        assessments: Vec::new(),
        counter: 0,
        reason,
    })
}

/// Servers that are assessable and strictly below `epsilon` on both measures.
pub fn feasible_set(assessments: &[RiskAssessment], epsilon: f64) -> Vec<usize> {
    assessments
        .iter()
        .filter(|a| a.defined && a.p_norm < epsilon && a.p_cant < epsilon)
        .map(|a| a.server_id)
        .collect()
}

/// Hybrid risk selection.
///
/// Ranks assessable servers by the Gaussian risk and accepts the minimiser
/// only if it is feasible. Otherwise the current server is held. With no
/// current server yet, the lowest-risk assessable server is taken as the
/// initial assignment; with nothing assessable at all this is [`Error::NoData`].
pub fn hybrid_risk_select(
    assessments: &[RiskAssessment],
    state: &PolicyState,
    epsilon: f64,
) -> Result<Decision> {
    let feasible = feasible_set(assessments, epsilon);
    let best = argmin_prefer_current(
        assessments
            .iter()
            .filter(|a| a.defined)
            .map(|a| (a.server_id, a.p_norm)),
        state.current,
    );
    let accepted = best.filter(|j| feasible.contains(j));

    let (selected, switched, reason) = match (accepted, state.current) {
        (Some(j), prev) => {
            let (switched, reason) = select(prev, j);
            (j, switched, reason)
        }
        (None, Some(curr)) => (curr, false, Reason::HoldNoFeasible),
        (None, None) => match best {
            Some(j) => (j, false, Reason::Initial),
            None => return Err(Error::NoData),
        },
    };
    Ok(Decision {
        selected,
        switched,
        previous: state.current,
        best,
        feasible_set: feasible,
        assessments: assessments.to_vec(),
        counter: 0,
        reason,
    })
}

/// One step of percentile-based hysteresis control.
///
/// The current server's score is always taken from its own assessment, even
/// when it is infeasible; an unassessable current server scores `+inf`, so
/// any feasible challenger qualifies.
pub fn hysteresis_step(
    assessments: &[RiskAssessment],
    state: &PolicyState,
    cfg: &PolicyConfig,
) -> Result<(Decision, PolicyState)> {
    let current = state
        .current
        .ok_or_else(|| Error::validation("hysteresis step needs a current server"))?;
    let score_of = |id: usize| {
        assessments
            .iter()
            .find(|a| a.server_id == id)
            .map_or(f64::INFINITY, |a| a.score)
    };
    let feasible = feasible_set(assessments, cfg.slo.epsilon);

    let mut next = PolicyState {
        current: Some(current),
        counter: 0,
        last_challenger: None,
    };
    let mut selected = current;
    let challenger =
        argmin_prefer_current(feasible.iter().map(|&i| (i, score_of(i))), Some(current));

    let reason = match challenger {
        None => Reason::HoldNoFeasible,
        Some(j) if j == current => Reason::BestRisk,
        Some(j) => {
            let score_curr = score_of(current);
            let score_j = score_of(j);
            let qualifies =
                score_curr.is_infinite() || score_curr - score_j >= cfg.delta * score_curr;
            if !qualifies {
                Reason::HoldInsufficientImprovement
            } else {
                let counter = if cfg.reset_on_challenger_change && state.last_challenger != Some(j)
                {
                    1
                } else {
                    state.counter + 1
                };
                if counter >= cfg.dwell {
                    selected = j;
                    next.current = Some(j);
                    Reason::SwitchCommitted
                } else {
                    next.counter = counter;
                    next.last_challenger = Some(j);
                    Reason::HoldCounter
                }
            }
        }
    };

    let decision = Decision {
        selected,
        switched: selected != current,
        previous: Some(current),
        best: challenger,
        feasible_set: feasible,
        assessments: assessments.to_vec(),
        counter: next.counter,
        reason,
    };
    Ok((decision, next))
}

/// True while the policy must not run yet: no assignment exists, or some
/// server has fewer than `min_samples` observations.
pub fn in_warmup(counts: &[usize], min_samples: usize, current: Option<usize>) -> bool {
    current.is_none() || counts.iter().any(|&c| c < min_samples)
}

/// Warm-up probe. With only the selected server observable the probe cycles
/// through servers round-robin; with full observability every server fills
/// its window regardless, so the lowest id is used.
pub fn bootstrap_select(
    step_index: usize,
    num_servers: usize,
    observability: Observability,
) -> usize {
    match observability {
        Observability::SelectedOnly if num_servers > 0 => step_index % num_servers,
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::assess;

    fn summary(mean: f64) -> Option<Summary> {
        Some(Summary::from_moments(mean, 0.01, 20).unwrap())
    }

    fn ra(server_id: usize, p_norm: f64, p_cant: f64, score: f64) -> RiskAssessment {
        RiskAssessment {
            server_id,
            p_norm,
            p_cant,
            score,
            feasible: p_norm < 0.15 && p_cant < 0.15,
            defined: true,
        }
    }

    fn state(current: usize, counter: u32) -> PolicyState {
        PolicyState {
            current: Some(current),
            counter,
            last_challenger: None,
        }
    }

    #[test]
    fn argmin_tie_break() {
        assert_eq!(
            argmin_prefer_current([(0, 1.0), (1, 1.0)], Some(1)),
            Some(1)
        );
        assert_eq!(argmin_prefer_current([(0, 1.0), (1, 1.0)], None), Some(0));
        assert_eq!(
            argmin_prefer_current([(2, 1.0), (1, 1.0), (0, 2.0)], Some(0)),
            Some(1)
        );
        assert_eq!(
            argmin_prefer_current([(1, 1.0), (0, 1.0), (2, 1.0)], Some(2)),
            Some(2)
        );
        assert_eq!(argmin_prefer_current(std::iter::empty(), None), None);
    }

    #[test]
    fn baseline_examples() {
        let d = baseline_select(
            &[summary(0.45), summary(0.40), summary(0.50)],
            &state(0, 0),
            2,
        )
        .unwrap();
        assert_eq!((d.selected, d.switched), (1, true));

        let d = baseline_select(&[summary(0.40), summary(0.40)], &state(1, 0), 2).unwrap();
        assert_eq!((d.selected, d.switched), (1, false));

        let d =
            baseline_select(&[summary(0.40), summary(0.40)], &PolicyState::default(), 2).unwrap();
        assert_eq!(
            (d.selected, d.switched, d.reason),
            (0, false, Reason::Initial)
        );
    }

    #[test]
    fn baseline_without_data_fails() {
        assert!(matches!(
            baseline_select(&[None, None], &PolicyState::default(), 1),
            Err(Error::NoData)
        ));
    }

    #[test]
    fn feasible_set_examples() {
        let a = [ra(0, 0.01, 0.0588, 0.4), ra(1, 0.2, 0.5, 0.5)];
        assert_eq!(feasible_set(&a, 0.15), vec![0]);
        let warm = [RiskAssessment::undefined(0), RiskAssessment::undefined(1)];
        assert!(feasible_set(&warm, 0.15).is_empty());
        let a = [ra(0, 0.3, 0.9, 0.4), ra(1, 0.5, 0.99, 0.5)];
        assert_eq!(feasible_set(&a, 1.0), vec![0, 1]);
    }

    #[test]
    fn hybrid_prefers_lower_risk_over_lower_mean() {
        let slo = SloConfig::default();
        let a = assess(&Summary::from_moments(0.30, 0.05, 20).unwrap(), &slo, 0);
        let b = assess(&Summary::from_moments(0.40, 0.02, 20).unwrap(), &slo, 1);
        assert!(b.p_norm < a.p_norm);
        assert!(a.feasible && b.feasible);
        let d = hybrid_risk_select(&[a, b], &state(0, 0), slo.epsilon).unwrap();
        assert_eq!(
            (d.selected, d.switched, d.reason),
            (1, true, Reason::BestRisk)
        );
    }

    #[test]
    fn hybrid_holds_when_best_is_infeasible() {
        let slo = SloConfig::default();
        let a = assess(&Summary::from_moments(0.49, 0.2, 20).unwrap(), &slo, 0);
        assert!((a.p_norm - 0.4800612).abs() < 1e-6);
        let d = hybrid_risk_select(&[a], &state(0, 0), slo.epsilon).unwrap();
        assert_eq!(
            (d.selected, d.switched, d.reason),
            (0, false, Reason::HoldNoFeasible)
        );
    }

    #[test]
    fn hybrid_keeps_feasible_current() {
        let a = [ra(0, 0.001, 0.05, 0.45)];
        let d = hybrid_risk_select(&a, &state(0, 0), 0.15).unwrap();
        assert_eq!((d.selected, d.switched), (0, false));
    }

    #[test]
    fn hybrid_initial_assignment_rules() {
        let a = [ra(0, 0.3, 0.6, 0.5), ra(1, 0.2, 0.5, 0.5)];
        let d = hybrid_risk_select(&a, &PolicyState::default(), 0.15).unwrap();
        assert_eq!((d.selected, d.reason), (1, Reason::Initial));
        let warm = [RiskAssessment::undefined(0)];
        assert!(matches!(
            hybrid_risk_select(&warm, &PolicyState::default(), 0.15),
            Err(Error::NoData)
        ));
    }

    #[test]
    fn hysteresis_counts_qualifying_step() {
        let cfg = PolicyConfig::default();
        let a = [ra(0, 0.01, 0.05, 0.50), ra(1, 0.01, 0.05, 0.47)];
        let (d, s) = hysteresis_step(&a, &state(0, 0), &cfg).unwrap();
        assert_eq!(
            (d.selected, d.switched, d.reason),
            (0, false, Reason::HoldCounter)
        );
        assert_eq!(s.counter, 1);
        assert_eq!(d.best, Some(1));
    }

    #[test]
    fn hysteresis_commits_at_dwell() {
        let cfg = PolicyConfig::default();
        let a = [ra(0, 0.01, 0.05, 0.50), ra(1, 0.01, 0.05, 0.47)];
        let (d, s) = hysteresis_step(&a, &state(0, 4), &cfg).unwrap();
        assert_eq!(
            (d.selected, d.switched, d.reason),
            (1, true, Reason::SwitchCommitted)
        );
        assert_eq!((s.current, s.counter), (Some(1), 0));
    }

    #[test]
    fn hysteresis_resets_on_empty_feasible_set() {
        let cfg = PolicyConfig::default();
        let a = [ra(0, 0.3, 0.6, 0.50), ra(1, 0.2, 0.5, 0.47)];
        let (d, s) = hysteresis_step(&a, &state(0, 3), &cfg).unwrap();
        assert_eq!((d.selected, d.reason), (0, Reason::HoldNoFeasible));
        assert_eq!(s.counter, 0);
    }

    #[test]
    fn hysteresis_resets_on_small_improvement_and_when_current_is_best() {
        let cfg = PolicyConfig::default();
        // 0.50 - 0.48 = 0.02 < 0.025.
        let a = [ra(0, 0.01, 0.05, 0.50), ra(1, 0.01, 0.05, 0.48)];
        let (d, s) = hysteresis_step(&a, &state(0, 3), &cfg).unwrap();
        assert_eq!(
            (d.reason, s.counter),
            (Reason::HoldInsufficientImprovement, 0)
        );

        let a = [ra(0, 0.01, 0.05, 0.40), ra(1, 0.01, 0.05, 0.48)];
        let (d, s) = hysteresis_step(&a, &state(0, 3), &cfg).unwrap();
        assert_eq!((d.reason, s.counter, d.selected), (Reason::BestRisk, 0, 0));
    }

    #[test]
    fn hysteresis_improvement_test_is_inclusive() {
        let cfg = PolicyConfig {
            delta: 0.25,
            dwell: 1,
            ..PolicyConfig::default()
        };
        // 0.5 - 0.375 = 0.125 = 0.25 * 0.5 exactly in binary.
        let a = [ra(0, 0.01, 0.05, 0.5), ra(1, 0.01, 0.05, 0.375)];
        let (d, _) = hysteresis_step(&a, &state(0, 0), &cfg).unwrap();
        assert!(d.switched);
    }

    #[test]
    fn hysteresis_infeasible_current_keeps_its_score() {
        let cfg = PolicyConfig::default();
        // Current is infeasible but its score still enters the comparison.
        let a = [ra(0, 0.3, 0.6, 0.49), ra(1, 0.01, 0.05, 0.48)];
        let (d, s) = hysteresis_step(&a, &state(0, 2), &cfg).unwrap();
        assert_eq!(
            (d.reason, s.counter),
            (Reason::HoldInsufficientImprovement, 0)
        );
    }

    #[test]
    fn hysteresis_undefined_current_scores_infinity() {
        let cfg = PolicyConfig {
            delta: 0.0,
            ..PolicyConfig::default()
        };
        let a = [RiskAssessment::undefined(0), ra(1, 0.01, 0.05, 0.48)];
        let (d, s) = hysteresis_step(&a, &state(0, 0), &cfg).unwrap();
        assert_eq!((d.reason, s.counter), (Reason::HoldCounter, 1));
    }

    #[test]
    fn hysteresis_challenger_change_variant() {
        let literal = PolicyConfig::default();
        let strict = PolicyConfig {
            reset_on_challenger_change: true,
            ..literal
        };
        let a = [
            ra(0, 0.01, 0.05, 0.50),
            ra(1, 0.01, 0.05, 0.47),
            ra(2, 0.01, 0.05, 0.46),
        ];
        let prior = PolicyState {
            current: Some(0),
            counter: 3,
            last_challenger: Some(1),
        };
        let (_, s) = hysteresis_step(&a, &prior, &literal).unwrap();
        assert_eq!(s.counter, 4);
        let (_, s) = hysteresis_step(&a, &prior, &strict).unwrap();
        assert_eq!((s.counter, s.last_challenger), (1, Some(2)));
    }

    #[test]
    fn hysteresis_requires_current() {
        let a = [ra(0, 0.01, 0.05, 0.50)];
        assert!(hysteresis_step(&a, &PolicyState::default(), &PolicyConfig::default()).is_err());
    }

    #[test]
    fn bootstrap_examples() {
        let picks: Vec<_> = (0..6)
            .map(|t| bootstrap_select(t, 3, Observability::SelectedOnly))
            .collect();
        assert_eq!(picks, vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(bootstrap_select(1, 3, Observability::Full), 0);
        assert!((0..5).all(|t| bootstrap_select(t, 1, Observability::SelectedOnly) == 0));
        assert!(in_warmup(&[2, 1], 2, Some(0)));
        assert!(in_warmup(&[2, 2], 2, None));
        assert!(!in_warmup(&[2, 3], 2, Some(0)));
    }

    #[test]
    fn policy_config_validation() {
        assert!(PolicyConfig::default().validate().is_ok());
        let bad = PolicyConfig {
            dwell: 0,
            ..PolicyConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PolicyConfig {
            delta: -0.1,
            ..PolicyConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
