//! Combining the comparison stratum and the polling stratum.
//!
//! Two routes are provided. With a fixed partition `lambda_1 + lambda_2 = 1`
//! of the tolerable overstatement, each stratum is audited at its own risk
//! limit and the escalation rule decides what happens when one stratum is
//! hand counted ([`AuditState`]). Alternatively, Fisher's combining function
//! is maximized over every feasible `lambda_1`
//! ([`combined_pvalue_over_lambda`]).

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::error::{bad_param, AuditError, Result};
use crate::model::{MarginTable, PairMargin};
use crate::polling::null_threshold;

/// What happens to the other stratum once one stratum has been fully hand counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EscalationRule {
    /// A count that exceeds its tolerable overstatement forces a full count of the other stratum.
    AutoFullCount,
    /// The other stratum is re-tested against the threshold implied by the count.
    AdjustThreshold,
}

impl EscalationRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            EscalationRule::AutoFullCount => "auto-full-count",
            EscalationRule::AdjustThreshold => "adjust-threshold",
        }
    }
}

/// Risk limits and the split of tolerable overstatement between strata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskAllocation {
    pub alpha: f64,
    /// Risk limit of stratum 1 (comparison).
    pub alpha1: f64,
    /// Risk limit of stratum 2 (polling).
    pub alpha2: f64,
    /// Share of the margin stratum 1 may overstate; stratum 2 gets `1 - lambda1`.
    pub lambda1: f64,
    pub rule: EscalationRule,
}

impl RiskAllocation {
    /// Adjust-threshold allocation with `alpha1 = 0.04` (capped at `alpha`) and
    /// the largest `alpha2` satisfying `(1 - alpha1)(1 - alpha2) >= 1 - alpha`.
    pub fn with_defaults(alpha: f64, lambda1: f64) -> Self {
        let alpha1 = alpha.min(0.04);
        Self {
            alpha,
            alpha1,
            alpha2: largest_partner_alpha(alpha, alpha1),
            lambda1,
            rule: EscalationRule::AdjustThreshold,
        }
    }

    pub fn lambda2(&self) -> f64 {
        1.0 - self.lambda1
    }

    pub fn stratum_alpha(&self, stratum: usize) -> f64 {
        if stratum == 0 {
            self.alpha1
        } else {
            self.alpha2
        }
    }

    pub fn stratum_lambda(&self, stratum: usize) -> f64 {
        if stratum == 0 {
            self.lambda1
        } else {
            self.lambda2()
        }
    }
}

/// Largest `a2` with `(1 - a1)(1 - a2) >= 1 - alpha`.
pub fn largest_partner_alpha(alpha: f64, alpha1: f64) -> f64 {
    let mut a2 = 1.0 - (1.0 - alpha) / (1.0 - alpha1);
    while (1.0 - alpha1) * (1.0 - a2) < 1.0 - alpha {
        a2 = next_down(a2);
    }
    a2
}

fn next_down(x: f64) -> f64 {
    if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else {
        x
    }
}

/// A violated constraint of a [`RiskAllocation`], with both sides evaluated.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{constraint}: {lhs} vs {rhs}")]
pub struct AllocationViolation {
    pub constraint: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

const COMPOSITION_TOL: f64 = 1e-12;

pub fn validate_allocation(alloc: &RiskAllocation) -> core::result::Result<(), AllocationViolation> {
    let unit = |name: &'static str, v: f64| {
        if v > 0.0 && v < 1.0 {
            Ok(())
        } else {
            Err(AllocationViolation {
                constraint: name,
                lhs: v,
                rhs: 1.0,
            })
        }
    };
    unit("alpha in (0,1)", alloc.alpha)?;
    unit("alpha1 in (0,1)", alloc.alpha1)?;
    unit("alpha2 in (0,1)", alloc.alpha2)?;
    if alloc.alpha1 > alloc.alpha {
        return Err(AllocationViolation {
            constraint: "alpha1 <= alpha",
            lhs: alloc.alpha1,
            rhs: alloc.alpha,
        });
    }
    if alloc.alpha2 > alloc.alpha {
        return Err(AllocationViolation {
            constraint: "alpha2 <= alpha",
            lhs: alloc.alpha2,
            rhs: alloc.alpha,
        });
    }
    if !alloc.lambda1.is_finite() {
        return Err(AllocationViolation {
            constraint: "lambda1 finite",
            lhs: alloc.lambda1,
            rhs: 0.0,
        });
    }
    if alloc.rule == EscalationRule::AdjustThreshold {
        let lhs = (1.0 - alloc.alpha1) * (1.0 - alloc.alpha2);
        let rhs = 1.0 - alloc.alpha;
        if lhs < rhs - COMPOSITION_TOL {
            return Err(AllocationViolation {
                constraint: "(1-alpha1)(1-alpha2) >= 1-alpha",
                lhs,
                rhs,
            });
        }
    }
    Ok(())
}

/// Tolerable overstatement share left for the other stratum once a hand
/// count has shown overstatement `handcount_overstatement` (in votes):
/// `(V_{wl} - omega_h) / V_{wl}`.
///
/// Negative values mean the other stratum must show a net understatement.
pub fn adjust_lambda_after_handcount(overall_margin: i64, handcount_overstatement: i64) -> f64 {
    (overall_margin - handcount_overstatement) as f64 / overall_margin as f64
}

/// Survival function of the chi-square distribution with 4 degrees of
/// freedom: `exp(-x/2) (1 + x/2)`.
pub fn chi2_4_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    let h = 0.5 * x;
    libm::exp(-h) * (1.0 + h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherCombination {
    /// `-2 (ln p1 + ln p2)`.
    pub statistic: f64,
    pub pvalue: f64,
    /// Set when an input p-value was zero.
    pub degenerate: bool,
}

pub fn fisher_combine(p1: f64, p2: f64) -> Result<FisherCombination> {
    for (name, p) in [("p1", p1), ("p2", p2)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(bad_param(name, format!("{p} not in [0, 1]")));
        }
    }
    if p1 == 0.0 || p2 == 0.0 {
        return Ok(FisherCombination {
            statistic: f64::INFINITY,
            pvalue: 0.0,
            degenerate: true,
        });
    }
    let statistic = -2.0 * (libm::log(p1) + libm::log(p2));
    Ok(FisherCombination {
        statistic,
        pvalue: chi2_4_sf(statistic),
        degenerate: false,
    })
}

fn fisher_p(p1: f64, p2: f64) -> f64 {
    fisher_combine(p1.clamp(0.0, 1.0), p2.clamp(0.0, 1.0))
        .map(|f| f.pvalue)
        .unwrap_or(1.0)
}

/// Closed interval of `lambda_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaInterval {
    pub lo: f64,
    pub hi: f64,
}

/// `lambda_1` values for which both stratum nulls can hold for this pair,
/// using `omega_s in [V_{wl,s} - N_s, V_{wl,s} + N_s]`. `None` when empty.
pub fn feasible_lambda_interval(
    pair: &PairMargin,
    strata: (usize, usize),
    ballots: (u64, u64),
) -> Option<LambdaInterval> {
    let v = pair.overall as f64;
    let (v1, v2) = (pair.by_stratum[strata.0] as f64, pair.by_stratum[strata.1] as f64);
    let lo = (v - v2 - ballots.1 as f64) / v;
    let hi = (v1 + ballots.0 as f64) / v;
    (lo <= hi).then_some(LambdaInterval { lo, hi })
}

/// Feasible interval for every pair of a two-stratum contest.
pub fn feasible_lambda_intervals(margins: &MarginTable) -> Vec<Option<LambdaInterval>> {
    let ballots = (margins.stratum_ballots(0), margins.stratum_ballots(1));
    margins
        .pairs()
        .iter()
        .map(|p| feasible_lambda_interval(p, (0, 1), ballots))
        .collect()
}

/// `points` equally spaced values over the interval, endpoints included.
pub fn lambda_grid(interval: LambdaInterval, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(bad_param("grid", format!("{points} points; need at least 2")));
    }
    let step = (interval.hi - interval.lo) / (points - 1) as f64;
    let mut grid: Vec<f64> = (0..points).map(|i| interval.lo + step * i as f64).collect();
    grid[points - 1] = interval.hi;
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedScan {
    /// Largest combined p-value over the interval.
    pub pvalue: f64,
    /// `lambda_1` at (or, for a supremum approached from the right, next to) the maximum.
    pub argmax: f64,
    pub evaluations: usize,
}

/// Maximum of `combined(lambda)` over the grid points only.
pub fn max_over_grid(
    interval: LambdaInterval,
    points: usize,
    mut combined: impl FnMut(f64) -> f64,
) -> Result<CombinedScan> {
    let grid = lambda_grid(interval, points)?;
    let mut best = CombinedScan {
        pvalue: f64::NEG_INFINITY,
        argmax: interval.lo,
        evaluations: 0,
    };
    for lambda in grid {
        let p = combined(lambda);
        best.evaluations += 1;
        if p > best.pvalue {
            best.pvalue = p;
            best.argmax = lambda;
        }
    }
    Ok(best)
}

/// Polling-side threshold `c(lambda_1) = ceil(V_{wl,2} - (1 - lambda_1) V_{wl})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PollingThreshold {
    pub stratum_margin: i64,
    pub overall_margin: i64,
}

impl PollingThreshold {
    pub fn at(&self, lambda1: f64) -> i64 {
        null_threshold(self.stratum_margin, self.overall_margin, 1.0 - lambda1)
    }

    /// Largest `lambda_1` with `c(lambda_1) = j - 1`; just above it `c = j`.
    pub fn jump_before(&self, j: i64) -> f64 {
        (j - 1 - self.stratum_margin + self.overall_margin) as f64 / self.overall_margin as f64
    }
}

struct Pending {
    bound: f64,
    lo: i64,
    hi: i64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.lo.cmp(&self.lo))
    }
}

/// Supremum over `lambda_1` in `interval` of Fisher's combined p-value.
///
/// `comparison(lambda_1)` must be non-increasing and `polling_at_c(c)`
/// non-decreasing in `c`; the polling p-value depends on `lambda_1` only
/// through the integer threshold `c(lambda_1)`. The grid is evaluated first;
/// cells in which `c` jumps are then resolved by branch and bound on the
/// jump points, so the result is the supremum over the whole interval, not
/// just over the grid.
pub fn combined_pvalue_over_lambda(
    interval: LambdaInterval,
    points: usize,
    threshold: PollingThreshold,
    mut comparison: impl FnMut(f64) -> f64,
    mut polling_at_c: impl FnMut(i64) -> f64,
) -> Result<CombinedScan> {
    if threshold.overall_margin <= 0 {
        return Err(bad_param("overall margin", "must be positive"));
    }
    let grid = lambda_grid(interval, points)?;
    let mut cache: BTreeMap<i64, f64> = BTreeMap::new();
    let mut evaluations = 0usize;
    let mut polling = |c: i64, evals: &mut usize| -> f64 {
        *cache.entry(c).or_insert_with(|| {
            *evals += 1;
            polling_at_c(c)
        })
    };

    let mut best = CombinedScan {
        pvalue: f64::NEG_INFINITY,
        argmax: interval.lo,
        evaluations: 0,
    };
    let mut cs = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let c = threshold.at(lambda);
        let p = fisher_p(comparison(lambda), polling(c, &mut evaluations));
        cs.push(c);
        if p > best.pvalue {
            best.pvalue = p;
            best.argmax = lambda;
        }
    }

    let mut heap = BinaryHeap::new();
    for w in cs.windows(2) {
        let (ca, cb) = (w[0], w[1]);
        if cb > ca {
            let lo = ca + 1;
            let bound = fisher_p(comparison(threshold.jump_before(lo)), polling(cb, &mut evaluations));
            if bound > best.pvalue {
                heap.push(Pending { bound, lo, hi: cb });
            }
        }
    }
    while let Some(Pending { bound, lo, hi }) = heap.pop() {
        if bound <= best.pvalue {
            break;
        }
        for j in [lo, hi] {
            let mu = threshold.jump_before(j);
            let v = fisher_p(comparison(mu), polling(j, &mut evaluations));
            if v > best.pvalue {
                best.pvalue = v;
                best.argmax = mu;
            }
        }
        if hi - lo >= 2 {
            let mid = lo + (hi - lo) / 2;
            for (a, b) in [(lo + 1, mid), (mid + 1, hi - 1)] {
                if a <= b {
                    let bound = fisher_p(comparison(threshold.jump_before(a)), polling(b, &mut evaluations));
                    if bound > best.pvalue {
                        heap.push(Pending { bound, lo: a, hi: b });
                    }
                }
            }
        }
    }
    best.evaluations = evaluations;
    Ok(best)
}

/// Progress of one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StratumStatus {
    Sampling,
    /// Null rejected at the stratum risk limit under the current threshold.
    Confirmed,
    /// Full hand count required or under way.
    FullHandCount,
    /// Full hand count finished; overstatements known exactly.
    HandCounted,
}

impl StratumStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            StratumStatus::Sampling => "sampling",
            StratumStatus::Confirmed => "confirmed",
            StratumStatus::FullHandCount => "full-hand-count",
            StratumStatus::HandCounted => "hand-counted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditEvent {
    RoundRecorded { stratum: usize, round: u32 },
    /// The stratum's p-value reached its risk limit after `round`.
    Rejected { stratum: usize, round: u32 },
    EscalationStarted { stratum: usize },
    /// Hand count finished; `overstatements[pair] = V_{wl,s} - A_{wl,s}`.
    HandCountComplete { stratum: usize, overstatements: Vec<i64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditDecision {
    Continue,
    Confirmed,
    /// At least one stratum must be (or is being) fully hand counted.
    FullHandCount,
    /// Every stratum was hand counted; the count is the result.
    Decided { reported_outcome_correct: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub event: AuditEvent,
    pub note: String,
}

/// Escalation state of a two-stratum audit. Transitions only through
/// [`audit_state_step`]; the log is append-only.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditState {
    rule: EscalationRule,
    overall: Vec<i64>,
    status: [StratumStatus; 2],
    thresholds: [Vec<f64>; 2],
    last_round: [u32; 2],
    overstatements: [Option<Vec<i64>>; 2],
    adjusted_from_count: [bool; 2],
    log: Vec<LogEntry>,
}

impl AuditState {
    pub fn new(margins: &MarginTable, alloc: &RiskAllocation) -> Result<Self> {
        if margins.strata().len() != 2 {
            return Err(AuditError::State(format!(
                "stratified audit needs exactly two strata, found {}",
                margins.strata().len()
            )));
        }
        let pairs = margins.pairs().len();
        Ok(Self {
            rule: alloc.rule,
            overall: margins.pairs().iter().map(|p| p.overall).collect(),
            status: [StratumStatus::Sampling; 2],
            thresholds: [
                alloc::vec![alloc.lambda1; pairs],
                alloc::vec![alloc.lambda2(); pairs],
            ],
            last_round: [0; 2],
            overstatements: [None, None],
            adjusted_from_count: [false; 2],
            log: Vec::new(),
        })
    }

    pub fn status(&self, stratum: usize) -> StratumStatus {
        self.status[stratum]
    }

    pub fn rule(&self) -> EscalationRule {
        self.rule
    }

    /// Current tolerable-overstatement share of `stratum` for each pair.
    pub fn thresholds(&self, stratum: usize) -> &[f64] {
        &self.thresholds[stratum]
    }

    /// Share used by the comparison test, which covers all pairs at once.
    pub fn min_threshold(&self, stratum: usize) -> f64 {
        self.thresholds[stratum]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn last_round(&self, stratum: usize) -> u32 {
        self.last_round[stratum]
    }

    pub fn hand_count_overstatements(&self, stratum: usize) -> Option<&[i64]> {
        self.overstatements[stratum].as_deref()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    fn within_threshold(&self, stratum: usize) -> bool {
        self.overstatements[stratum].as_ref().is_some_and(|om| {
            om.iter()
                .zip(&self.thresholds[stratum])
                .zip(&self.overall)
                .all(|((&o, &lam), &v)| (o as f64) < lam * v as f64)
        })
    }

    pub fn decision(&self) -> AuditDecision {
        if let [Some(a), Some(b)] = &self.overstatements {
            let correct = self
                .overall
                .iter()
                .zip(a.iter().zip(b))
                .all(|(&v, (&o1, &o2))| v - o1 - o2 > 0);
            return AuditDecision::Decided {
                reported_outcome_correct: correct,
            };
        }
        if self.status.contains(&StratumStatus::FullHandCount) {
            return AuditDecision::FullHandCount;
        }
        let settled = (0..2).all(|s| match self.status[s] {
            StratumStatus::Confirmed => true,
            StratumStatus::HandCounted => self.within_threshold(s) || self.adjusted_from_count[1 - s],
            _ => false,
        });
        if settled {
            AuditDecision::Confirmed
        } else {
            AuditDecision::Continue
        }
    }
}

fn check_stratum(s: usize) -> Result<()> {
    if s < 2 {
        Ok(())
    } else {
        Err(AuditError::State(format!("no stratum with index {s}")))
    }
}

/// Applies one event, returning the new state; the input is left untouched.
pub fn audit_state_step(state: &AuditState, event: AuditEvent) -> Result<AuditState> {
    let mut next = state.clone();
    let note = match &event {
        AuditEvent::RoundRecorded { stratum, round } => {
            let s = *stratum;
            check_stratum(s)?;
            if matches!(next.status[s], StratumStatus::FullHandCount | StratumStatus::HandCounted) {
                return Err(AuditError::State(format!(
                    "stratum {} is {}; no more sample rounds",
                    s + 1,
                    next.status[s].as_str()
                )));
            }
            if *round <= next.last_round[s] {
                return Err(AuditError::State(format!(
                    "round {round} for stratum {} after round {}",
                    s + 1,
                    next.last_round[s]
                )));
            }
            next.last_round[s] = *round;
            format!("stratum {} round {round} recorded", s + 1)
        }
        AuditEvent::Rejected { stratum, round } => {
            let s = *stratum;
            check_stratum(s)?;
            if next.status[s] != StratumStatus::Sampling {
                return Err(AuditError::State(format!(
                    "stratum {} is {}, cannot confirm",
                    s + 1,
                    next.status[s].as_str()
                )));
            }
            if *round != next.last_round[s] {
                return Err(AuditError::State(format!(
                    "rejection cites round {round}, latest recorded round is {}",
                    next.last_round[s]
                )));
            }
            next.status[s] = StratumStatus::Confirmed;
            format!("stratum {} confirmed after round {round}", s + 1)
        }
        AuditEvent::EscalationStarted { stratum } => {
            let s = *stratum;
            check_stratum(s)?;
            if matches!(next.status[s], StratumStatus::HandCounted | StratumStatus::FullHandCount) {
                return Err(AuditError::State(format!(
                    "stratum {} already {}",
                    s + 1,
                    next.status[s].as_str()
                )));
            }
            next.status[s] = StratumStatus::FullHandCount;
            format!("stratum {} escalated to a full hand count", s + 1)
        }
        AuditEvent::HandCountComplete {
            stratum,
            overstatements,
        } => {
            let h = *stratum;
            check_stratum(h)?;
            if next.status[h] == StratumStatus::HandCounted {
                return Err(AuditError::State(format!("stratum {} already hand counted", h + 1)));
            }
            if overstatements.len() != next.overall.len() {
                return Err(AuditError::State(format!(
                    "hand count lists {} pairs, contest has {}",
                    overstatements.len(),
                    next.overall.len()
                )));
            }
            next.status[h] = StratumStatus::HandCounted;
            next.overstatements[h] = Some(overstatements.clone());
            let exceeded = !next.within_threshold(h);
            let t = 1 - h;
            let mut note = format!(
                "stratum {} hand counted; tolerable overstatement {}",
                h + 1,
                if exceeded { "exceeded" } else { "not exceeded" }
            );
            if next.status[t] != StratumStatus::HandCounted {
                match next.rule {
                    EscalationRule::AutoFullCount => {
                        if exceeded {
                            next.status[t] = StratumStatus::FullHandCount;
                            note.push_str(&format!("; stratum {} must be fully hand counted", t + 1));
                        }
                    }
                    EscalationRule::AdjustThreshold => {
                        let adjusted: Vec<f64> = next
                            .overall
                            .iter()
                            .zip(overstatements)
                            .map(|(&v, &o)| adjust_lambda_after_handcount(v, o))
                            .collect();
                        next.thresholds[t] = adjusted;
                        next.adjusted_from_count[t] = true;
                        note.push_str(&format!(
                            "; stratum {} threshold now {}",
                            t + 1,
                            next.min_threshold(t)
                        ));
                        if next.status[t] == StratumStatus::Confirmed {
                            next.status[t] = StratumStatus::Sampling;
                            note.push_str(&format!("; stratum {} reopened", t + 1));
                        }
                    }
                }
            }
            note
        }
    };
    next.log.push(LogEntry { event, note });
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_margins, ContestSpec, StratumId, StratumTotals};
    use alloc::string::ToString;
    use alloc::vec;

    fn two_strata(v1: (u64, u64), v2: (u64, u64), n: (u64, u64)) -> MarginTable {
        let c = ContestSpec::new(
            vec!["w".to_string(), "l".to_string()],
            &["w"],
            &["l"],
            vec![
                StratumTotals {
                    id: StratumId(1),
                    ballots: n.0,
                    votes: vec![v1.0, v1.1],
                },
                StratumTotals {
                    id: StratumId(2),
                    ballots: n.1,
                    votes: vec![v2.0, v2.1],
                },
            ],
        )
        .unwrap();
        derive_margins(&c).unwrap()
    }

    fn alloc(alpha: f64, a1: f64, a2: f64, rule: EscalationRule) -> RiskAllocation {
        RiskAllocation {
            alpha,
            alpha1: a1,
            alpha2: a2,
            lambda1: 0.5,
            rule,
        }
    }

    #[test]
    fn allocation_rules() {
        assert!(validate_allocation(&alloc(0.05, 0.04, 0.0104, EscalationRule::AdjustThreshold)).is_ok());
        assert!(validate_allocation(&alloc(0.05, 0.05, 0.05, EscalationRule::AutoFullCount)).is_ok());
        let v = validate_allocation(&alloc(0.05, 0.05, 0.05, EscalationRule::AdjustThreshold)).unwrap_err();
        assert_eq!(v.constraint, "(1-alpha1)(1-alpha2) >= 1-alpha");
        assert!((v.lhs - 0.9025).abs() < 1e-12);
        assert!((v.rhs - 0.95).abs() < 1e-12);
        assert!(validate_allocation(&alloc(0.05, 0.06, 0.001, EscalationRule::AutoFullCount)).is_err());
        assert!(validate_allocation(&alloc(0.0, 0.0, 0.0, EscalationRule::AutoFullCount)).is_err());
    }

    #[test]
    fn default_allocation_is_tight() {
        let a = RiskAllocation::with_defaults(0.05, 0.3);
        assert_eq!(a.alpha1, 0.04);
        assert!((1.0 - a.alpha1) * (1.0 - a.alpha2) >= 0.95);
        assert!((a.alpha2 - (1.0 - 0.95 / 0.96)).abs() < 1e-15);
        assert!(validate_allocation(&a).is_ok());
    }

    #[test]
    fn lambda_adjustment() {
        assert_eq!(adjust_lambda_after_handcount(10_000, 2_000), 0.8);
        assert_eq!(adjust_lambda_after_handcount(10_000, 10_000), 0.0);
        assert_eq!(adjust_lambda_after_handcount(10_000, -3_000), 1.3);
    }

    #[test]
    fn fisher_examples() {
        let f = fisher_combine(1.0, 1.0).unwrap();
        assert_eq!((f.statistic, f.pvalue), (0.0, 1.0));
        let f = fisher_combine(0.1, 0.05).unwrap();
        assert!((f.statistic - 10.596_634_733_096_073).abs() < 1e-12);
        // exp(-chi/2) = p1 p2 exactly
        let closed = 0.005 * (1.0 - libm::log(0.005));
        assert!((f.pvalue - closed).abs() < 1e-15);
        assert!((f.pvalue - 0.0315).abs() < 1e-3);
        assert!((chi2_4_sf(9.488) - 0.05).abs() < 1e-4);
        let z = fisher_combine(0.0, 0.5).unwrap();
        assert!(z.degenerate && z.pvalue == 0.0 && z.statistic.is_infinite());
        assert!(fisher_combine(1.5, 0.5).is_err());
    }

    #[test]
    fn intervals() {
        let m = two_strata((2_900, 2_100), (600, 400), (5_000, 1_000));
        let i = feasible_lambda_interval(&m.pairs()[0], (0, 1), (5_000, 1_000)).unwrap();
        assert!((i.lo + 0.2).abs() < 1e-12 && (i.hi - 5.8).abs() < 1e-12);

        // symmetric strata
        let m = two_strata((700, 300), (700, 300), (2_000, 2_000));
        let i = feasible_lambda_interval(&m.pairs()[0], (0, 1), (2_000, 2_000)).unwrap();
        let (v, n) = (800.0, 4_000.0);
        assert!((i.lo - (0.5 - (n / 2.0) / v)).abs() < 1e-12);
        assert!((i.hi - (0.5 + (n / 2.0) / v)).abs() < 1e-12);
    }

    #[test]
    fn empty_polling_stratum_interval() {
        let m = two_strata((700, 300), (0, 0), (2_000, 1));
        let i = feasible_lambda_interval(&m.pairs()[0], (0, 1), (2_000, 0)).unwrap();
        assert_eq!(i.lo, 1.0);
        assert!(i.hi >= 1.0);
    }

    #[test]
    fn grid_toy() {
        let scan = max_over_grid(LambdaInterval { lo: 0.0, hi: 1.0 }, 3, |l| fisher_p(l, 1.0 - l)).unwrap();
        assert_eq!(scan.argmax, 0.5);
        let expect = chi2_4_sf(-2.0 * (libm::log(0.5) + libm::log(0.5)));
        assert!((scan.pvalue - expect).abs() < 1e-15);
        assert!((scan.pvalue - 0.5966).abs() < 1e-4);
        assert!(max_over_grid(LambdaInterval { lo: 0.0, hi: 1.0 }, 1, |_| 0.0).is_err());
    }

    #[test]
    fn scan_with_unit_comparison_pvalue() {
        let th = PollingThreshold {
            stratum_margin: 500,
            overall_margin: 1_000,
        };
        let p2 = |c: i64| ((c + 1_000) as f64 / 3_000.0).clamp(0.0, 1.0);
        let scan = combined_pvalue_over_lambda(LambdaInterval { lo: 0.0, hi: 0.5 }, 11, th, |_| 1.0, p2).unwrap();
        let at_hi = p2(th.at(0.5));
        assert!((scan.pvalue - chi2_4_sf(-2.0 * libm::log(at_hi))).abs() < 1e-15);
        assert!(scan.pvalue >= at_hi);
    }

    #[test]
    fn branch_and_bound_matches_dense_enumeration() {
        // p1 decreasing, p2 increasing in c; a coarse grid misses the peak.
        let th = PollingThreshold {
            stratum_margin: 300,
            overall_margin: 1_000,
        };
        let p1 = |l: f64| libm::exp(-8.0 * l.max(0.0));
        let p2 = |c: i64| libm::exp(-((600 - c).max(0) as f64) / 40.0);
        let interval = LambdaInterval { lo: -0.5, hi: 1.5 };
        let scan = combined_pvalue_over_lambda(interval, 5, th, p1, p2).unwrap();
        let mut dense: f64 = 0.0;
        for j in th.at(interval.lo)..=th.at(interval.hi) {
            let mu = th.jump_before(j).max(interval.lo);
            dense = dense.max(fisher_p(p1(mu), p2(j)));
        }
        assert!((scan.pvalue - dense).abs() < 1e-15, "{} vs {dense}", scan.pvalue);
    }

    fn state(rule: EscalationRule) -> (AuditState, MarginTable) {
        let m = two_strata((6_000, 4_000), (3_000, 1_000), (20_000, 10_000));
        let a = RiskAllocation {
            alpha: 0.05,
            alpha1: 0.04,
            alpha2: 0.0104,
            lambda1: 0.5,
            rule,
        };
        (AuditState::new(&m, &a).unwrap(), m)
    }

    #[test]
    fn both_strata_confirm() {
        let (s, _) = state(EscalationRule::AdjustThreshold);
        let s = audit_state_step(&s, AuditEvent::RoundRecorded { stratum: 0, round: 1 }).unwrap();
        let s = audit_state_step(&s, AuditEvent::RoundRecorded { stratum: 1, round: 1 }).unwrap();
        let s = audit_state_step(&s, AuditEvent::Rejected { stratum: 0, round: 1 }).unwrap();
        assert_eq!(s.decision(), AuditDecision::Continue);
        let s = audit_state_step(&s, AuditEvent::Rejected { stratum: 1, round: 1 }).unwrap();
        assert_eq!(s.decision(), AuditDecision::Confirmed);
        assert_eq!(s.log().len(), 4);
    }

    #[test]
    fn auto_full_count_forces_other_stratum() {
        let (s, m) = state(EscalationRule::AutoFullCount);
        let s = audit_state_step(&s, AuditEvent::EscalationStarted { stratum: 0 }).unwrap();
        // hand count shows a tie in stratum 1: overstatement 2000 >= 0.5 * 4000
        let om = m.overstatements(0, &[5_000, 5_000]);
        let s = audit_state_step(&s, AuditEvent::HandCountComplete { stratum: 0, overstatements: om }).unwrap();
        assert_eq!(s.status(1), StratumStatus::FullHandCount);
        assert_eq!(s.decision(), AuditDecision::FullHandCount);
        let om2 = m.overstatements(1, &[2_000, 2_000]);
        let s = audit_state_step(&s, AuditEvent::HandCountComplete { stratum: 1, overstatements: om2 }).unwrap();
        assert_eq!(
            s.decision(),
            AuditDecision::Decided {
                reported_outcome_correct: false
            }
        );
    }

    #[test]
    fn adjust_threshold_reopens_confirmed_stratum() {
        let (s, m) = state(EscalationRule::AdjustThreshold);
        let s = audit_state_step(&s, AuditEvent::RoundRecorded { stratum: 1, round: 1 }).unwrap();
        let s = audit_state_step(&s, AuditEvent::Rejected { stratum: 1, round: 1 }).unwrap();
        assert_eq!(s.status(1), StratumStatus::Confirmed);
        let s = audit_state_step(&s, AuditEvent::EscalationStarted { stratum: 0 }).unwrap();
        // V = 4000, tolerable overstatement in stratum 1 is 2000
        for (actual, lambda) in [([5_000, 5_000], 0.5), ([5_500, 4_500], 0.75), ([4_000, 6_000], 0.0)] {
            let om = m.overstatements(0, &actual);
            let next = audit_state_step(&s, AuditEvent::HandCountComplete { stratum: 0, overstatements: om }).unwrap();
            assert_eq!(next.status(1), StratumStatus::Sampling);
            assert_eq!(next.thresholds(1), &[lambda]);
            assert_eq!(next.decision(), AuditDecision::Continue);
        }
        // retest passes against the adjusted threshold
        let om = m.overstatements(0, &[5_500, 4_500]);
        let s = audit_state_step(&s, AuditEvent::HandCountComplete { stratum: 0, overstatements: om }).unwrap();
        let s = audit_state_step(&s, AuditEvent::Rejected { stratum: 1, round: 1 }).unwrap();
        assert_eq!(s.decision(), AuditDecision::Confirmed);
        assert_eq!(s.log().len(), 5);
    }

    #[test]
    fn out_of_order_events_are_refused() {
        let (s, _) = state(EscalationRule::AdjustThreshold);
        assert!(audit_state_step(&s, AuditEvent::Rejected { stratum: 0, round: 1 }).is_err());
        let s = audit_state_step(&s, AuditEvent::RoundRecorded { stratum: 0, round: 2 }).unwrap();
        assert!(audit_state_step(&s, AuditEvent::RoundRecorded { stratum: 0, round: 2 }).is_err());
        let s = audit_state_step(&s, AuditEvent::EscalationStarted { stratum: 0 }).unwrap();
        assert!(audit_state_step(&s, AuditEvent::RoundRecorded { stratum: 0, round: 3 }).is_err());
        assert!(audit_state_step(&s, AuditEvent::EscalationStarted { stratum: 0 }).is_err());
        assert!(audit_state_step(&s, AuditEvent::EscalationStarted { stratum: 5 }).is_err());
    }
}
