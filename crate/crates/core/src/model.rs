//! Contest, stratum and batch data, plus reported-margin arithmetic.
//!
//! All margins are exact integers; ratios are only formed at the end.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::fmt;

use num_rational::Ratio;

use crate::error::{invalid, AuditError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StratumId(pub u32);

impl fmt::Display for StratumId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How a stratum is audited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AuditKind {
    /// Batch-level (or ballot-level) comparison against reported subtotals.
    Comparison,
    /// Ballot polling: ballots are drawn and tallied, no per-ballot report exists.
    Polling,
}

impl AuditKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuditKind::Comparison => "comparison",
            AuditKind::Polling => "polling",
        }
    }
}

/// Reported totals for one stratum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumTotals {
    pub id: StratumId,
    /// `N_s`, ballots cast in the stratum (the contest may not be on all of them).
    pub ballots: u64,
    /// Reported votes, indexed like `ContestSpec::candidates`.
    pub votes: Vec<u64>,
}

/// A plurality (vote-for-k) contest split across strata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContestSpec {
    candidates: Vec<String>,
    winners: Vec<usize>,
    losers: Vec<usize>,
    strata: Vec<StratumTotals>,
}

impl ContestSpec {
    pub fn new(
        candidates: Vec<String>,
        winners: &[&str],
        losers: &[&str],
        strata: Vec<StratumTotals>,
    ) -> Result<Self> {
        for (i, c) in candidates.iter().enumerate() {
            if c.is_empty() {
                return Err(invalid("empty candidate name"));
            }
            if candidates[..i].contains(c) {
                return Err(invalid(format!("duplicate candidate `{c}`")));
            }
        }
        let lookup = |name: &str| {
            candidates
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| invalid(format!("unknown candidate `{name}`")))
        };
        let winners = winners.iter().map(|w| lookup(w)).collect::<Result<Vec<_>>>()?;
        let losers = losers.iter().map(|l| lookup(l)).collect::<Result<Vec<_>>>()?;
        if winners.is_empty() || losers.is_empty() {
            return Err(invalid("contest needs at least one winner and one loser"));
        }
        if winners.iter().any(|w| losers.contains(w)) {
            return Err(invalid("winner and loser sets overlap"));
        }
        if strata.is_empty() {
            return Err(invalid("contest has no strata"));
        }
        let seats = winners.len() as u64;
        for (i, s) in strata.iter().enumerate() {
            if strata[..i].iter().any(|o| o.id == s.id) {
                return Err(invalid(format!("duplicate stratum {}", s.id)));
            }
            if s.votes.len() != candidates.len() {
                return Err(invalid(format!(
                    "stratum {} lists {} vote counts for {} candidates",
                    s.id,
                    s.votes.len(),
                    candidates.len()
                )));
            }
            let cast: u64 = s.votes.iter().sum();
            if cast > seats.saturating_mul(s.ballots) {
                return Err(invalid(format!(
                    "stratum {} reports {cast} votes on {} ballots",
                    s.id, s.ballots
                )));
            }
        }
        Ok(Self {
            candidates,
            winners,
            losers,
            strata,
        })
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }

    pub fn losers(&self) -> &[usize] {
        &self.losers
    }

    pub fn strata(&self) -> &[StratumTotals] {
        &self.strata
    }

    pub fn candidate_index(&self, name: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c == name)
    }

    pub fn stratum_index(&self, id: StratumId) -> Option<usize> {
        self.strata.iter().position(|s| s.id == id)
    }

    /// Same contest with one stratum's reported votes replaced (e.g. by a hand count).
    pub fn with_stratum_votes(&self, stratum: usize, votes: Vec<u64>) -> Result<Self> {
        let mut strata = self.strata.clone();
        let slot = strata
            .get_mut(stratum)
            .ok_or_else(|| invalid("stratum index out of range"))?;
        slot.votes = votes;
        let w: Vec<&str> = self.winners.iter().map(|&i| self.candidates[i].as_str()).collect();
        let l: Vec<&str> = self.losers.iter().map(|&i| self.candidates[i].as_str()).collect();
        Self::new(self.candidates.clone(), &w, &l, strata)
    }
}

/// Reported margin of one winner over one loser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairMargin {
    pub winner: usize,
    pub loser: usize,
    /// `V_{wl}` over the whole contest.
    pub overall: i64,
    /// `V_{wl,s}`, indexed like `ContestSpec::strata`; may be negative.
    pub by_stratum: Vec<i64>,
}

/// Every reported pairwise margin of a contest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarginTable {
    pairs: Vec<PairMargin>,
    min_margin: i64,
    strata: Vec<StratumId>,
    ballots: Vec<u64>,
}

impl MarginTable {
    pub fn pairs(&self) -> &[PairMargin] {
        &self.pairs
    }

    /// `V`, the smallest overall pairwise margin.
    pub fn min_margin(&self) -> i64 {
        self.min_margin
    }

    pub fn strata(&self) -> &[StratumId] {
        &self.strata
    }

    pub fn stratum_index(&self, id: StratumId) -> Option<usize> {
        self.strata.iter().position(|s| *s == id)
    }

    pub fn stratum_ballots(&self, stratum: usize) -> u64 {
        self.ballots[stratum]
    }

    /// `N`, total ballots over all strata.
    pub fn total_ballots(&self) -> u64 {
        self.ballots.iter().sum()
    }

    /// `V / N`.
    pub fn diluted_margin(&self) -> Ratio<i64> {
        Ratio::new(self.min_margin, self.total_ballots() as i64)
    }

    /// `omega_{wl,s} = V_{wl,s} - A_{wl,s}` for every pair, given actual
    /// (hand-counted) votes for stratum `stratum`.
    pub fn overstatements(&self, stratum: usize, actual_votes: &[u64]) -> Vec<i64> {
        self.pairs
            .iter()
            .map(|p| {
                let actual = actual_votes[p.winner] as i64 - actual_votes[p.loser] as i64;
                p.by_stratum[stratum] - actual
            })
            .collect()
    }
}

/// Computes every (winner, loser) margin, per stratum and overall.
///
/// Fails when some reported winner does not strictly beat some reported loser.
pub fn derive_margins(contest: &ContestSpec) -> Result<MarginTable> {
    let mut pairs = Vec::with_capacity(contest.winners.len() * contest.losers.len());
    for &w in &contest.winners {
        for &l in &contest.losers {
            let by_stratum: Vec<i64> = contest
                .strata
                .iter()
                .map(|s| s.votes[w] as i64 - s.votes[l] as i64)
                .collect();
            let overall = by_stratum.iter().sum();
            if overall <= 0 {
                return Err(AuditError::OutcomeNotWellFormed {
                    winner: contest.candidates[w].clone(),
                    loser: contest.candidates[l].clone(),
                    margin: overall,
                });
            }
            pairs.push(PairMargin {
                winner: w,
                loser: l,
                overall,
                by_stratum,
            });
        }
    }
    let min_margin = pairs.iter().map(|p| p.overall).min().unwrap_or(0);
    Ok(MarginTable {
        pairs,
        min_margin,
        strata: contest.strata.iter().map(|s| s.id).collect(),
        ballots: contest.strata.iter().map(|s| s.ballots).collect(),
    })
}

/// Diluted margin left for the CVR counties once the legacy counties have
/// been hand counted: `[(V_w - V_w') - (V_l - V_l')] / N_cvr`.
///
/// A non-positive result means the hand count alone has overturned the
/// reported outcome and every ballot must be counted.
pub fn diluted_margin_after_handcount(
    reported_winner: u64,
    reported_loser: u64,
    legacy_winner: u64,
    legacy_loser: u64,
    cvr_ballots: u64,
) -> Result<Ratio<i64>> {
    if cvr_ballots == 0 {
        return Err(invalid("CVR stratum has no ballots"));
    }
    let num = (reported_winner as i64 - legacy_winner as i64)
        - (reported_loser as i64 - legacy_loser as i64);
    Ok(Ratio::new(num, cvr_ballots as i64))
}

/// Largest margin reduction a legacy stratum of `ballots` ballots could
/// hide: every vote for the winner is really for the loser, and every other
/// ballot is really a vote for the loser. Equals `N + V_w' - V_l'`.
pub fn worst_case_legacy_reduction(ballots: u64, winner_votes: u64, loser_votes: u64) -> Result<u64> {
    if winner_votes
        .checked_add(loser_votes)
        .is_none_or(|total| total > ballots)
    {
        return Err(invalid(format!(
            "{winner_votes} + {loser_votes} votes exceed {ballots} legacy ballots"
        )));
    }
    Ok(ballots + winner_votes - loser_votes)
}

/// One batch of ballots with its reported vote subtotals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub id: u64,
    /// `n_p >= 1`.
    pub ballots: u64,
    /// `v_{p,i}` in `[0, n_p]`, indexed by candidate.
    pub reported: Vec<u64>,
}

impl Batch {
    pub fn new(id: u64, ballots: u64, reported: Vec<u64>) -> Result<Self> {
        let b = Self {
            id,
            ballots,
            reported,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ballots == 0 {
            return Err(invalid(format!("batch {} is empty", self.id)));
        }
        if let Some(v) = self.reported.iter().find(|&&v| v > self.ballots) {
            return Err(invalid(format!(
                "batch {} reports {v} votes for one candidate on {} ballots",
                self.id, self.ballots
            )));
        }
        Ok(())
    }
}

/// `count` consecutive batches (ids `first_id ..`) sharing size and reported votes.
///
/// A CVR stratum of a million ballots is a handful of runs of single-ballot
/// batches rather than a million rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRun {
    pub county: String,
    pub first_id: u64,
    pub count: u64,
    pub ballots: u64,
    pub reported: Vec<u64>,
}

impl BatchRun {
    pub fn last_id(&self) -> u64 {
        self.first_id + self.count - 1
    }

    pub fn contains(&self, id: u64) -> bool {
        id >= self.first_id && id <= self.last_id()
    }

    pub fn batch(&self, id: u64) -> Batch {
        debug_assert!(self.contains(id));
        Batch {
            id,
            ballots: self.ballots,
            reported: self.reported.clone(),
        }
    }
}

/// A contiguous range of ballot ids belonging to one county (polling strata).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BallotBlock {
    pub county: String,
    pub first_id: u64,
    pub count: u64,
}

/// The ballot manifest of one stratum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumManifest {
    pub id: StratumId,
    pub kind: AuditKind,
    pub ballots: u64,
    /// Comparison strata only; sorted by id, non-overlapping.
    pub batches: Vec<BatchRun>,
    /// Polling strata only; contiguous ids `1..=ballots`.
    pub blocks: Vec<BallotBlock>,
}

impl StratumManifest {
    pub fn comparison(id: StratumId, batches: Vec<BatchRun>, candidates: usize) -> Result<Self> {
        if batches.is_empty() {
            return Err(invalid(format!("comparison stratum {id} has no batches")));
        }
        let mut ballots = 0u64;
        let mut next_free = 1u64;
        for run in &batches {
            if run.count == 0 {
                return Err(invalid(format!("stratum {id}: empty batch run at id {}", run.first_id)));
            }
            if run.first_id < next_free {
                return Err(invalid(format!(
                    "stratum {id}: batch id {} repeated or out of order",
                    run.first_id
                )));
            }
            if run.reported.len() != candidates {
                return Err(invalid(format!(
                    "stratum {id}: batch {} lists {} candidates, expected {candidates}",
                    run.first_id,
                    run.reported.len()
                )));
            }
            Batch::new(run.first_id, run.ballots, run.reported.clone())?;
            next_free = run
                .first_id
                .checked_add(run.count)
                .ok_or(AuditError::Overflow("batch ids"))?;
            ballots = run
                .count
                .checked_mul(run.ballots)
                .and_then(|b| b.checked_add(ballots))
                .ok_or(AuditError::Overflow("ballot count"))?;
        }
        Ok(Self {
            id,
            kind: AuditKind::Comparison,
            ballots,
            batches,
            blocks: Vec::new(),
        })
    }

    /// A polling stratum; with no blocks the whole stratum is one unnamed county.
    pub fn polling(id: StratumId, ballots: u64, mut blocks: Vec<BallotBlock>) -> Result<Self> {
        if ballots == 0 {
            return Err(invalid(format!("polling stratum {id} has no ballots")));
        }
        if blocks.is_empty() {
            blocks = vec![BallotBlock {
                county: String::new(),
                first_id: 1,
                count: ballots,
            }];
        }
        let mut next = 1u64;
        for b in &blocks {
            if b.first_id != next || b.count == 0 {
                return Err(invalid(format!(
                    "stratum {id}: ballot block for `{}` must start at id {next}",
                    b.county
                )));
            }
            next += b.count;
        }
        if next - 1 != ballots {
            return Err(invalid(format!(
                "stratum {id}: blocks cover {} ballots, manifest says {ballots}",
                next - 1
            )));
        }
        Ok(Self {
            id,
            kind: AuditKind::Polling,
            ballots,
            batches: Vec::new(),
            blocks,
        })
    }

    /// Number of batches `P` (comparison) or ballots (polling).
    pub fn unit_count(&self) -> u64 {
        match self.kind {
            AuditKind::Comparison => self.batches.iter().map(|r| r.count).sum(),
            AuditKind::Polling => self.ballots,
        }
    }

    fn run_of(&self, id: u64) -> Option<&BatchRun> {
        let i = self.batches.partition_point(|r| r.last_id() < id);
        self.batches.get(i).filter(|r| r.contains(id))
    }

    pub fn batch(&self, id: u64) -> Option<Batch> {
        self.run_of(id).map(|r| r.batch(id))
    }

    pub fn county_of(&self, id: u64) -> Option<&str> {
        match self.kind {
            AuditKind::Comparison => self.run_of(id).map(|r| r.county.as_str()),
            AuditKind::Polling => {
                let i = self.blocks.partition_point(|b| b.first_id + b.count <= id);
                self.blocks
                    .get(i)
                    .filter(|b| id >= b.first_id)
                    .map(|b| b.county.as_str())
            }
        }
    }

    /// Reported vote totals over all batches (comparison strata).
    pub fn reported_totals(&self, candidates: usize) -> Vec<u64> {
        let mut totals = vec![0u64; candidates];
        for run in &self.batches {
            for (t, v) in totals.iter_mut().zip(&run.reported) {
                *t += v * run.count;
            }
        }
        totals
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn contest(strata: &[(u64, &[u64])]) -> ContestSpec {
        ContestSpec::new(
            vec!["w".to_string(), "l".to_string()],
            &["w"],
            &["l"],
            strata
                .iter()
                .enumerate()
                .map(|(i, (n, v))| StratumTotals {
                    id: StratumId(i as u32 + 1),
                    ballots: *n,
                    votes: v.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_stratum_margins() {
        let m = derive_margins(&contest(&[(10, &[6, 4])])).unwrap();
        assert_eq!(m.pairs()[0].overall, 2);
        assert_eq!(m.min_margin(), 2);
        assert_eq!(m.diluted_margin(), Ratio::new(1, 5));
    }

    #[test]
    fn tied_contest_is_rejected() {
        let err = derive_margins(&contest(&[(10, &[5, 5])])).unwrap_err();
        assert!(matches!(err, AuditError::OutcomeNotWellFormed { margin: 0, .. }));
    }

    #[test]
    fn two_strata_margins() {
        let m = derive_margins(&contest(&[(100_000, &[55_000, 45_000]), (10_000, &[5_000, 4_000])]))
            .unwrap();
        let p = &m.pairs()[0];
        assert_eq!(p.overall, 11_000);
        assert_eq!(p.by_stratum, vec![10_000, 1_000]);
    }

    #[test]
    fn handcount_dilution() {
        assert_eq!(
            diluted_margin_after_handcount(55_000, 45_000, 5_000, 4_000, 90_000).unwrap(),
            Ratio::new(1, 10)
        );
        assert_eq!(
            diluted_margin_after_handcount(10, 5, 10, 5, 7).unwrap(),
            Ratio::from_integer(0)
        );
        assert_eq!(
            diluted_margin_after_handcount(100, 90, 60, 10, 40).unwrap(),
            Ratio::from_integer(-1)
        );
        assert!(diluted_margin_after_handcount(1, 0, 0, 0, 0).is_err());
    }

    #[test]
    fn legacy_reduction() {
        assert_eq!(worst_case_legacy_reduction(10_000, 3_000, 4_000).unwrap(), 9_000);
        assert_eq!(worst_case_legacy_reduction(500, 0, 500).unwrap(), 0);
        assert_eq!(worst_case_legacy_reduction(1_000, 1_000, 0).unwrap(), 2_000);
        assert!(worst_case_legacy_reduction(10, 6, 5).is_err());
    }

    #[test]
    fn contest_validation() {
        let names = vec!["a".to_string(), "b".to_string()];
        let s = vec![StratumTotals {
            id: StratumId(1),
            ballots: 5,
            votes: vec![3, 1],
        }];
        assert!(ContestSpec::new(names.clone(), &["a"], &["a"], s.clone()).is_err());
        assert!(ContestSpec::new(names.clone(), &["a"], &["c"], s.clone()).is_err());
        assert!(ContestSpec::new(names.clone(), &[], &["b"], s.clone()).is_err());
        let over = vec![StratumTotals {
            id: StratumId(1),
            ballots: 3,
            votes: vec![3, 1],
        }];
        assert!(ContestSpec::new(names, &["a"], &["b"], over).is_err());
    }

    #[test]
    fn manifest_lookup_and_validation() {
        let runs = vec![
            BatchRun {
                county: "A".into(),
                first_id: 1,
                count: 3,
                ballots: 1,
                reported: vec![1, 0],
            },
            BatchRun {
                county: "B".into(),
                first_id: 4,
                count: 1,
                ballots: 50,
                reported: vec![30, 15],
            },
        ];
        let m = StratumManifest::comparison(StratumId(1), runs.clone(), 2).unwrap();
        assert_eq!(m.ballots, 53);
        assert_eq!(m.unit_count(), 4);
        assert_eq!(m.batch(4).unwrap().ballots, 50);
        assert_eq!(m.county_of(2), Some("A"));
        assert!(m.batch(5).is_none());
        assert_eq!(m.reported_totals(2), vec![33, 15]);

        let mut overlapping = runs.clone();
        overlapping[1].first_id = 3;
        assert!(StratumManifest::comparison(StratumId(1), overlapping, 2).is_err());
        let mut too_many = runs;
        too_many[1].reported = vec![51, 0];
        assert!(StratumManifest::comparison(StratumId(1), too_many, 2).is_err());

        let p = StratumManifest::polling(
            StratumId(2),
            10,
            vec![
                BallotBlock {
                    county: "X".into(),
                    first_id: 1,
                    count: 4,
                },
                BallotBlock {
                    county: "Y".into(),
                    first_id: 5,
                    count: 6,
                },
            ],
        )
        .unwrap();
        assert_eq!(p.county_of(4), Some("X"));
        assert_eq!(p.county_of(5), Some("Y"));
        assert_eq!(p.county_of(11), None);
        assert!(StratumManifest::polling(StratumId(2), 9, p.blocks.clone()).is_err());
    }
}
