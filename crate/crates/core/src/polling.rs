//! Ballot-polling tests of `A_{w,s} - A_{l,s} <= c` in a stratum without CVRs.
//!
//! Conditional on the attained sample size `n`, the counts of sampled
//! ballots for the winner, the loser, and neither are tri-hypergeometric.
//! The test statistic is the sample margin `B_w - B_l`; large values are
//! evidence against the null. The null is composite (the split of the
//! population between `A_w`, `A_l` and the rest is unknown), so the p-value
//! is the largest tail probability over the null set. Only the boundary
//! `A_w - A_l = c` needs to be searched.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math::{ceil_snapped, Hypergeometric};
use crate::model::MarginTable;

/// Interior points probed between the two endpoints of the nuisance range.
pub const INTERIOR_GRID: u64 = 100;

/// Tallies of a polling sample for one winner/loser pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PollingSample {
    /// `B_w`: ballots with a vote for the winner but not the loser.
    pub for_winner: u64,
    /// `B_l`: ballots with a vote for the loser but not the winner.
    pub for_loser: u64,
    /// `B_u`: everything else, including undervotes and ballots without the contest.
    pub other: u64,
}

impl PollingSample {
    pub fn new(for_winner: u64, for_loser: u64, other: u64) -> Self {
        Self {
            for_winner,
            for_loser,
            other,
        }
    }

    /// Attained sample size `n = B_w + B_l + B_u`.
    pub fn size(&self) -> u64 {
        self.for_winner + self.for_loser + self.other
    }

    /// `n * d = B_w - B_l`.
    pub fn margin_votes(&self) -> i64 {
        self.for_winner as i64 - self.for_loser as i64
    }

    /// Diluted sample margin `d = (B_w - B_l) / n`; zero for an empty sample.
    pub fn diluted_margin(&self) -> f64 {
        match self.size() {
            0 => 0.0,
            n => self.margin_votes() as f64 / n as f64,
        }
    }
}

/// `P{B_w - B_l >= min_margin | B = n}` for a population of `ballots` ballots
/// holding `a_w` for the winner and `a_l` for the loser.
///
/// `min_margin` is `n d`, kept as an integer so the boundary of the tail is exact.
pub fn tri_hyper_tail(a_w: u64, a_l: u64, ballots: u64, n: u64, min_margin: i64) -> Result<f64> {
    let pair_ballots = a_w
        .checked_add(a_l)
        .filter(|&s| s <= ballots)
        .ok_or_else(|| invalid(format!("{a_w} + {a_l} ballots exceed population {ballots}")))?;
    if n > ballots {
        return Err(invalid(format!("sample of {n} from {ballots} ballots")));
    }
    if min_margin <= -(n as i64) {
        return Ok(1.0);
    }
    if min_margin > n as i64 {
        return Ok(0.0);
    }
    // Condition on M = B_w + B_l, which is hypergeometric; given M = m,
    // B_w is hypergeometric within the pair ballots.
    let pair_draws = Hypergeometric::new(ballots, pair_ballots, n)
        .ok_or_else(|| invalid("inconsistent population"))?;
    let mut total = 0.0;
    pair_draws.for_each_mass(|m, mass| {
        let needed = (m as i64 + min_margin + 1).div_euclid(2).max(0) as u64;
        let inner = Hypergeometric::new(pair_ballots, a_w, m)
            .map(|h| h.sf(needed))
            .unwrap_or(0.0);
        total += mass * inner;
    });
    Ok(total.min(1.0))
}

/// `P{B_w >= i_min | B_w + B_l = m}`: hypergeometric tail with `a_w` winner
/// ballots and `a_l` loser ballots.
pub fn cond_hyper_tail(a_w: u64, a_l: u64, m: u64, i_min: i64) -> Result<f64> {
    let pair_ballots = a_w + a_l;
    if m > pair_ballots {
        return Err(invalid(format!(
            "{m} pair ballots drawn from a population holding {pair_ballots}"
        )));
    }
    if i_min <= 0 {
        return Ok(1.0);
    }
    let h = Hypergeometric::new(pair_ballots, a_w, m).ok_or_else(|| invalid("bad population"))?;
    Ok(h.sf(i_min as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PollingMethod {
    /// Conditions on the sample size only.
    #[default]
    TriHypergeometric,
    /// Also conditions on `B_w + B_l`. Valid but often less efficient.
    ConditionalHypergeometric,
}

impl PollingMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            PollingMethod::TriHypergeometric => "tri",
            PollingMethod::ConditionalHypergeometric => "cond-hyper",
        }
    }
}

/// How the nuisance parameter `A_w` is searched along the null boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NullSearch {
    /// Both endpoints of the `A_w` range plus an interior grid.
    #[default]
    Endpoints,
    /// Every feasible `A_w` ("paranoid").
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullStatus {
    Regular,
    /// `c < -N_s`: no population satisfies the null.
    Empty,
    /// `c >= N_s`: every population satisfies the null.
    Unfalsifiable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PollingPValue {
    pub pvalue: f64,
    /// `(A_w, A_l)` achieving the maximum.
    pub maximizer: Option<(u64, u64)>,
    pub status: NullStatus,
}

/// Feasible `A_w` on the boundary `A_w - A_l = c`: `[max(0, c), floor((N + c) / 2)]`.
pub fn boundary_range(ballots: u64, c: i64) -> Option<(u64, u64)> {
    let n = ballots as i64;
    if c < -n || c > n {
        return None;
    }
    let lo = c.max(0) as u64;
    let hi = (n + c).div_euclid(2) as u64;
    (lo <= hi).then_some((lo, hi))
}

fn candidate_points(lo: u64, hi: u64, search: NullSearch) -> Vec<u64> {
    match search {
        NullSearch::Exhaustive => (lo..=hi).collect(),
        NullSearch::Endpoints => {
            let span = hi - lo;
            let mut pts = Vec::with_capacity(INTERIOR_GRID as usize + 2);
            pts.push(lo);
            for j in 1..=INTERIOR_GRID {
                pts.push(lo + ((span as u128 * j as u128) / (INTERIOR_GRID as u128 + 1)) as u64);
            }
            pts.push(hi);
            pts.dedup();
            pts
        }
    }
}

/// Tail probability of the observed sample under one simple null population.
pub fn simple_null_tail(
    sample: &PollingSample,
    a_w: u64,
    a_l: u64,
    ballots: u64,
    method: PollingMethod,
) -> Result<f64> {
    match method {
        PollingMethod::TriHypergeometric => {
            tri_hyper_tail(a_w, a_l, ballots, sample.size(), sample.margin_votes())
        }
        PollingMethod::ConditionalHypergeometric => {
            let m = sample.for_winner + sample.for_loser;
            if m > a_w + a_l {
                // this population cannot produce the observed pair count
                Ok(0.0)
            } else {
                cond_hyper_tail(a_w, a_l, m, sample.for_winner as i64)
            }
        }
    }
}

/// p-value of the composite null `A_w - A_l <= c` in a stratum of `ballots` ballots.
pub fn polling_pvalue(
    sample: &PollingSample,
    ballots: u64,
    c: i64,
    method: PollingMethod,
    search: NullSearch,
) -> Result<PollingPValue> {
    let n = sample.size();
    if n > ballots {
        return Err(invalid(format!("sample of {n} ballots from a stratum of {ballots}")));
    }
    if c >= ballots as i64 {
        return Ok(PollingPValue {
            pvalue: 1.0,
            maximizer: None,
            status: NullStatus::Unfalsifiable,
        });
    }
    if c < -(ballots as i64) {
        return Ok(PollingPValue {
            pvalue: 0.0,
            maximizer: None,
            status: NullStatus::Empty,
        });
    }
    let (lo, hi) = boundary_range(ballots, c).ok_or_else(|| invalid("empty boundary"))?;
    if n == 0 {
        return Ok(PollingPValue {
            pvalue: 1.0,
            maximizer: Some((lo, (lo as i64 - c) as u64)),
            status: NullStatus::Regular,
        });
    }
    let mut best = (-1.0f64, lo);
    for a_w in candidate_points(lo, hi, search) {
        let a_l = (a_w as i64 - c) as u64;
        let p = simple_null_tail(sample, a_w, a_l, ballots, method)?;
        if p > best.0 {
            best = (p, a_w);
        }
    }
    let (p, a_w) = best;
    Ok(PollingPValue {
        pvalue: p.clamp(0.0, 1.0),
        maximizer: Some((a_w, (a_w as i64 - c) as u64)),
        status: NullStatus::Regular,
    })
}

/// Threshold `c = V_{wl,s} - lambda * V_{wl}` for pair `pair` in stratum
/// `stratum`, rounded up so the tested null contains the exact one.
pub fn polling_null_threshold(margins: &MarginTable, pair: usize, stratum: usize, lambda: f64) -> i64 {
    let p = &margins.pairs()[pair];
    null_threshold(p.by_stratum[stratum], p.overall, lambda)
}

/// `ceil(stratum_margin - lambda * overall_margin)`, saturating at the `i64` range.
pub fn null_threshold(stratum_margin: i64, overall_margin: i64, lambda: f64) -> i64 {
    let c = ceil_snapped(stratum_margin as f64 - lambda * overall_margin as f64);
    if c >= i64::MAX as f64 {
        i64::MAX
    } else if c <= i64::MIN as f64 {
        i64::MIN
    } else {
        c as i64
    }
}
