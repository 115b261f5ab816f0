//! Monte-Carlo workload estimates for the two stratum tests.
//!
//! Trial `i` of a run with master seed `m` draws its sample with seed
//! `"{m}-trial-{i}"`, so any single trial can be replayed on its own and
//! the aggregate does not depend on the order trials are executed in.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::comparison::{clean_sample_size, exact_to_f64, ComparisonTest, Exact, SequentialPValue};
use crate::error::{bad_param, invalid, Result};
use crate::polling::{polling_pvalue, NullSearch, PollingMethod, PollingSample};
use crate::sampling::{PpebSampler, SrsSampler, WeightedRun};

pub fn trial_seed(master: &str, trial: u64) -> String {
    format!("{master}-trial-{trial}")
}

/// Stopping sizes over a set of trials. A trial that never stops counts as a
/// full hand count of `full_size` ballots.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSummary {
    pub trials: u64,
    pub full_size: u64,
    pub q50: u64,
    pub q90: u64,
    pub q99: u64,
    pub mean: f64,
    pub mean_se: f64,
    pub full_count_freq: f64,
    pub full_count_se: f64,
    sorted: Vec<u64>,
}

impl WorkloadSummary {
    pub fn from_stops(stops: &[Option<u64>], full_size: u64) -> Result<Self> {
        if stops.is_empty() {
            return Err(invalid("no trials to summarize"));
        }
        let mut sorted: Vec<u64> = stops.iter().map(|s| s.unwrap_or(full_size)).collect();
        sorted.sort_unstable();
        let t = sorted.len() as f64;
        let mean = sorted.iter().map(|&s| s as f64).sum::<f64>() / t;
        let var = sorted.iter().map(|&s| (s as f64 - mean) * (s as f64 - mean)).sum::<f64>()
            / (t - 1.0).max(1.0);
        let full = stops.iter().filter(|s| s.is_none()).count() as f64 / t;
        let mut out = Self {
            trials: sorted.len() as u64,
            full_size,
            q50: 0,
            q90: 0,
            q99: 0,
            mean,
            mean_se: libm::sqrt(var / t),
            full_count_freq: full,
            full_count_se: libm::sqrt(full * (1.0 - full) / t),
            sorted,
        };
        out.q50 = out.quantile(0.5);
        out.q90 = out.quantile(0.9);
        out.q99 = out.quantile(0.99);
        Ok(out)
    }

    /// Smallest observed size whose cumulative stopping frequency reaches `level`.
    pub fn quantile(&self, level: f64) -> u64 {
        let t = self.sorted.len();
        let rank = libm::ceil(level * t as f64 - 1e-9).max(1.0) as usize;
        self.sorted[rank.min(t) - 1]
    }

    /// Fraction of trials that stopped at or before `size`.
    pub fn coverage(&self, size: u64) -> f64 {
        self.sorted.partition_point(|&s| s <= size) as f64 / self.sorted.len() as f64
    }
}

/// True composition of a polling stratum. Ballot positions
/// `1..=for_winner` carry a vote for the winner, the next `for_loser`
/// positions a vote for the loser, the rest neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PollingPopulation {
    pub ballots: u64,
    pub for_winner: u64,
    pub for_loser: u64,
}

impl PollingPopulation {
    pub fn new(ballots: u64, for_winner: u64, for_loser: u64) -> Result<Self> {
        if for_winner + for_loser > ballots {
            return Err(invalid(format!(
                "{for_winner} + {for_loser} votes exceed {ballots} ballots"
            )));
        }
        Ok(Self {
            ballots,
            for_winner,
            for_loser,
        })
    }

    pub fn tally(&self, sample: &mut PollingSample, position: u64) {
        if position <= self.for_winner {
            sample.for_winner += 1;
        } else if position <= self.for_winner + self.for_loser {
            sample.for_loser += 1;
        } else {
            sample.other += 1;
        }
    }
}

/// Memo of polling p-values keyed by `(n, B_w, B_l)`.
#[derive(Debug, Clone, Default)]
pub struct PollingCache {
    map: BTreeMap<(u64, u64, u64), f64>,
}

impl PollingCache {
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Sequential polling audit of one stratum against `A_w - A_l <= c`,
/// assessed at each scheduled sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct PollingWorkload {
    pub truth: PollingPopulation,
    pub threshold: i64,
    pub alpha: f64,
    pub schedule: Vec<u64>,
    pub method: PollingMethod,
    pub search: NullSearch,
}

impl PollingWorkload {
    pub fn new(truth: PollingPopulation, threshold: i64, alpha: f64, schedule: Vec<u64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(bad_param("alpha", format!("{alpha} not in (0, 1)")));
        }
        if schedule.is_empty() || schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad_param("schedule", "must be non-empty and strictly increasing"));
        }
        if schedule[schedule.len() - 1] > truth.ballots {
            return Err(bad_param("schedule", "exceeds the stratum size"));
        }
        Ok(Self {
            truth,
            threshold,
            alpha,
            schedule,
            method: PollingMethod::default(),
            search: NullSearch::default(),
        })
    }

    pub fn pvalue(&self, sample: &PollingSample, cache: &mut PollingCache) -> Result<f64> {
        let key = (sample.size(), sample.for_winner, sample.for_loser);
        if let Some(&p) = cache.map.get(&key) {
            return Ok(p);
        }
        let p = polling_pvalue(sample, self.truth.ballots, self.threshold, self.method, self.search)?.pvalue;
        cache.map.insert(key, p);
        Ok(p)
    }

    /// First scheduled size at which the p-value reaches `alpha`, or `None`.
    pub fn run_trial(&self, seed: &str, cache: &mut PollingCache) -> Result<Option<u64>> {
        let mut sampler = SrsSampler::new(seed, self.truth.ballots);
        let mut sample = PollingSample::default();
        for &n in &self.schedule {
            for d in sampler.take(n - sample.size())? {
                self.truth.tally(&mut sample, d.selected);
            }
            if self.pvalue(&sample, cache)? <= self.alpha {
                return Ok(Some(n));
            }
        }
        Ok(None)
    }

    pub fn run(&self, master: &str, trials: u64, cache: &mut PollingCache) -> Result<WorkloadSummary> {
        let stops = (0..trials)
            .map(|i| self.run_trial(&trial_seed(master, i), cache))
            .collect::<Result<Vec<_>>>()?;
        WorkloadSummary::from_stops(&stops, self.truth.ballots)
    }
}

/// Ballots whose CVR overstates (positive) or understates (negative) the
/// margin by one or two votes. Positions are assigned in that order, starting at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InjectedErrors {
    pub two_vote_over: u64,
    pub one_vote_over: u64,
    pub one_vote_under: u64,
    pub two_vote_under: u64,
}

impl InjectedErrors {
    fn total(&self) -> u64 {
        self.two_vote_over + self.one_vote_over + self.one_vote_under + self.two_vote_under
    }

    /// Overstatement in votes of the ballot at `position`.
    pub fn votes_at(&self, position: u64) -> i64 {
        let mut edge = self.two_vote_over;
        if position <= edge {
            return 2;
        }
        edge += self.one_vote_over;
        if position <= edge {
            return 1;
        }
        edge += self.one_vote_under;
        if position <= edge {
            return -1;
        }
        edge += self.two_vote_under;
        if position <= edge {
            return -2;
        }
        0
    }
}

/// Ballot-level comparison audit in which every ballot has the same error
/// bound `bound` (margin units), so PPEB reduces to uniform sampling with
/// replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonWorkload {
    pub ballots: u64,
    pub margin: i64,
    pub bound: Exact,
    pub lambda: f64,
    pub alpha: f64,
    pub test: ComparisonTest,
    pub errors: InjectedErrors,
    /// Draws after which the trial is declared a full hand count.
    pub max_draws: u64,
}

impl ComparisonWorkload {
    /// Bounds `inflation * 2 / V` per ballot.
    pub fn with_simple_bounds(ballots: u64, margin: i64, inflation: Exact, lambda: f64, alpha: f64) -> Result<Self> {
        if margin <= 0 {
            return Err(bad_param("margin", "must be positive"));
        }
        Ok(Self {
            ballots,
            margin,
            bound: inflation * Exact::new(2, margin as i128),
            lambda,
            alpha,
            test: ComparisonTest::KaplanMarkov,
            errors: InjectedErrors::default(),
            max_draws: ballots,
        })
    }

    pub fn total_bound(&self) -> f64 {
        exact_to_f64(&(self.bound * Exact::from_integer(self.ballots as i128)))
    }

    /// `t = lambda / U`.
    pub fn threshold(&self) -> f64 {
        self.lambda / self.total_bound()
    }

    pub fn taint(&self, overstatement_votes: i64) -> f64 {
        exact_to_f64(&(Exact::new(overstatement_votes as i128, self.margin as i128) / self.bound))
    }

    pub fn clean_size(&self) -> Result<u64> {
        clean_sample_size(self.threshold(), self.alpha)
    }

    /// Closed-form `ln(alpha) / E[ln per-draw factor]` under the injected error
    /// rates (Kaplan-Markov); `None` when the expected drift does not favour stopping.
    pub fn expected_size(&self) -> Option<f64> {
        let t = self.threshold();
        let n = self.ballots as f64;
        let mut drift = libm::log1p(-t);
        for (votes, count) in [
            (2, self.errors.two_vote_over),
            (1, self.errors.one_vote_over),
            (-1, self.errors.one_vote_under),
            (-2, self.errors.two_vote_under),
        ] {
            if count > 0 {
                let slack = 1.0 - self.taint(votes);
                if slack <= 0.0 {
                    return None;
                }
                drift -= count as f64 / n * libm::log(slack);
            }
        }
        (drift < 0.0).then(|| libm::log(self.alpha) / drift)
    }

    pub fn run_trial(&self, seed: &str) -> Result<Option<u64>> {
        if self.errors.total() > self.ballots {
            return Err(invalid("more injected errors than ballots"));
        }
        let mut seq = SequentialPValue::new(self.threshold(), self.test)?;
        let run = WeightedRun {
            first_id: 1,
            count: self.ballots,
            bound: self.bound,
        };
        let mut sampler = PpebSampler::new(seed, &[run])?;
        let taints = [self.taint(2), self.taint(1), 0.0, self.taint(-1), self.taint(-2)];
        for k in 1..=self.max_draws {
            let d = sampler.next_draw();
            let votes = self.errors.votes_at(d.selected);
            if seq.push(taints[(2 - votes) as usize])? <= self.alpha {
                return Ok(Some(k));
            }
            if seq.is_exhausted() {
                return Ok(None);
            }
        }
        Ok(None)
    }

    pub fn run(&self, master: &str, trials: u64) -> Result<WorkloadSummary> {
        let stops = (0..trials)
            .map(|i| self.run_trial(&trial_seed(master, i)))
            .collect::<Result<Vec<_>>>()?;
        WorkloadSummary::from_stops(&stops, self.ballots)
    }
}

/// Smallest `n` at which a sample whose composition exactly matches the
/// population shares is significant: the nominal polling sample size.
pub fn nominal_polling_size(truth: PollingPopulation, threshold: i64, alpha: f64, method: PollingMethod) -> Result<Option<u64>> {
    let share_w = truth.for_winner as f64 / truth.ballots as f64;
    let share_l = truth.for_loser as f64 / truth.ballots as f64;
    let nominal = |n: u64| {
        let bw = libm::round(n as f64 * share_w) as u64;
        let bl = (libm::round(n as f64 * share_l) as u64).min(n - bw);
        PollingSample::new(bw, bl, n - bw - bl)
    };
    let rejects = |n: u64| -> Result<bool> {
        let p = polling_pvalue(&nominal(n), truth.ballots, threshold, method, NullSearch::Endpoints)?;
        Ok(p.pvalue <= alpha)
    };
    let mut hi = 1u64;
    while !rejects(hi)? {
        if hi == truth.ballots {
            return Ok(None);
        }
        hi = (hi * 2).min(truth.ballots);
    }
    let mut lo = hi / 2;
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if rejects(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Least-squares slope of `ln y` on `ln x`; workload `~ lambda^-k` gives `-k`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(invalid("need at least two positive points"));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| libm::log(p.0)).collect();
    let ly: Vec<f64> = points.iter().map(|p| libm::log(p.1)).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(invalid("x values are all equal"));
    }
    Ok(sxy / sxx)
}

/// Two-stratum contest with a reported outcome that is correct.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridScenario {
    pub name: String,
    /// `(ballots, winner votes, loser votes)` in the CVR stratum.
    pub cvr: (u64, u64, u64),
    /// `(ballots, winner votes, loser votes)` in the no-CVR stratum.
    pub no_cvr: (u64, u64, u64),
    pub alpha: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub lambda1: f64,
    /// Multiplier on the per-ballot comparison bounds.
    pub inflation: Exact,
    pub schedule: Vec<u64>,
}

impl HybridScenario {
    pub fn margins(&self) -> (i64, i64, i64) {
        let v1 = self.cvr.1 as i64 - self.cvr.2 as i64;
        let v2 = self.no_cvr.1 as i64 - self.no_cvr.2 as i64;
        (v1 + v2, v1, v2)
    }

    pub fn total_ballots(&self) -> u64 {
        self.cvr.0 + self.no_cvr.0
    }

    pub fn comparison_stratum(&self) -> Result<ComparisonWorkload> {
        let (v, _, _) = self.margins();
        ComparisonWorkload::with_simple_bounds(self.cvr.0, v, self.inflation, self.lambda1, self.alpha1)
    }

    pub fn polling_stratum(&self) -> Result<PollingWorkload> {
        let (v, _, v2) = self.margins();
        let c = crate::polling::null_threshold(v2, v, 1.0 - self.lambda1);
        let truth = PollingPopulation::new(self.no_cvr.0, self.no_cvr.1, self.no_cvr.2)?;
        PollingWorkload::new(truth, c, self.alpha2, self.schedule.clone())
    }

    /// Ballot-level comparison audit of the whole contest as if every ballot had a CVR.
    pub fn unstratified(&self) -> Result<ComparisonWorkload> {
        let (v, _, _) = self.margins();
        ComparisonWorkload::with_simple_bounds(self.total_ballots(), v, self.inflation, 1.0, self.alpha)
    }
}

/// `start, start + step, ...` up to `max` (inclusive when it lands on a step).
pub fn stepped_schedule(start: u64, step: u64, max: u64) -> Vec<u64> {
    let mut s = Vec::new();
    let mut n = start;
    while n <= max {
        s.push(n);
        n += step;
    }
    s
}

/// Medium-sized election: 110,000 ballots, 9.1% without CVRs, margin 2,000 votes.
pub fn example_one() -> HybridScenario {
    HybridScenario {
        name: String::from("example-1"),
        cvr: (100_000, 45_500, 49_500),
        no_cvr: (10_000, 7_500, 1_500),
        alpha: 0.1,
        alpha1: 0.03,
        alpha2: 0.07,
        lambda1: 0.3,
        inflation: Exact::new(103_905, 100_000),
        schedule: stepped_schedule(25, 25, 1_000),
    }
}

/// Large election: 2,000,000 ballots, diluted margin 24.5%.
pub fn example_two() -> HybridScenario {
    HybridScenario {
        name: String::from("example-2"),
        cvr: (345_000, 320_000, 20_000),
        no_cvr: (1_655_000, 620_000, 430_000),
        alpha: 0.05,
        alpha1: 0.03,
        alpha2: 0.02,
        lambda1: 0.1,
        inflation: Exact::new(103_905, 100_000),
        schedule: stepped_schedule(25, 25, 1_000),
    }
}

/// Whole-contest comparison audit in which every ballot without a CVR is
/// treated as a two-vote overstatement.
pub fn two_vote_variant() -> Result<ComparisonWorkload> {
    let ballots = 110_000u64;
    let mut w = ComparisonWorkload::with_simple_bounds(ballots, 10_000, Exact::new(103_905, 100_000), 1.0, 0.1)?;
    w.errors.two_vote_over = ballots * 12 / 1_000;
    Ok(w)
}

/// One line of a scenario report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub strategy: &'static str,
    pub stratum: &'static str,
    pub summary: WorkloadSummary,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub text: String,
    pub csv: String,
}

/// Plain-text table and CSV of the rows; no rows gives an empty report.
pub fn scenario_report(rows: &[ReportRow]) -> Report {
    if rows.is_empty() {
        return Report::default();
    }
    let mut text = format!(
        "{:<14} {:<13} {:<7} {:>8} {:>8} {:>8} {:>10} {:>9}\n",
        "scenario", "strategy", "stratum", "q50", "q90", "q99", "mean", "full"
    );
    let mut csv = String::from("scenario,strategy,stratum,trials,q50,q90,q99,mean,mean_se,full_count_freq\n");
    for r in rows {
        let s = &r.summary;
        text.push_str(&format!(
            "{:<14} {:<13} {:<7} {:>8} {:>8} {:>8} {:>10.1} {:>9.4}\n",
            r.scenario, r.strategy, r.stratum, s.q50, s.q90, s.q99, s.mean, s.full_count_freq
        ));
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3},{:.3},{:.6}\n",
            r.scenario, r.strategy, r.stratum, s.trials, s.q50, s.q90, s.q99, s.mean, s.mean_se, s.full_count_freq
        ));
    }
    Report { text, csv }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn summary_quantiles() {
        let stops: Vec<Option<u64>> = (1..=100).map(|i| if i <= 95 { Some(i) } else { None }).collect();
        let s = WorkloadSummary::from_stops(&stops, 1_000).unwrap();
        assert_eq!((s.q50, s.q90, s.q99), (50, 90, 1_000));
        assert!((s.full_count_freq - 0.05).abs() < 1e-12);
        assert!((s.coverage(90) - 0.9).abs() < 1e-12);
        assert!(WorkloadSummary::from_stops(&[], 1).is_err());
    }

    #[test]
    fn overwhelming_evidence_stops_at_first_look() {
        let truth = PollingPopulation::new(5_000, 5_000, 0).unwrap();
        let w = PollingWorkload::new(truth, -4_000, 0.05, vec![20, 40, 60]).unwrap();
        let s = w.run("all-w", 50, &mut PollingCache::default()).unwrap();
        assert_eq!((s.q50, s.q90, s.q99), (20, 20, 20));
    }

    #[test]
    fn clean_comparison_is_deterministic() {
        let w = example_one().comparison_stratum().unwrap();
        let clean = w.clean_size().unwrap();
        assert_eq!(clean, 1_213);
        for i in 0..3 {
            assert_eq!(w.run_trial(&trial_seed("clean", i)).unwrap(), Some(clean));
        }
    }

    #[test]
    fn unstratified_example_one() {
        let w = example_one().unstratified().unwrap();
        assert_eq!(w.clean_size().unwrap(), 263);
    }

    #[test]
    fn two_vote_closed_form() {
        let w = two_vote_variant().unwrap();
        let e = w.expected_size().unwrap();
        assert!((e - 430.0).abs() < 5.0, "{e}");
    }

    #[test]
    fn injected_error_positions() {
        let e = InjectedErrors {
            two_vote_over: 1,
            one_vote_over: 2,
            one_vote_under: 1,
            two_vote_under: 1,
        };
        let got: Vec<i64> = (1..=7).map(|p| e.votes_at(p)).collect();
        assert_eq!(got, vec![2, 1, 1, -1, -2, 0, 0]);
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<(f64, f64)> = [0.2, 0.3, 0.4].iter().map(|&x| (x, 3.0 / (x * x))).collect();
        assert!((log_log_slope(&pts).unwrap() + 2.0).abs() < 1e-12);
        assert!(log_log_slope(&pts[..1]).is_err());
    }

    #[test]
    fn empty_report() {
        assert_eq!(scenario_report(&[]), Report::default());
    }

    #[test]
    fn schedule_steps() {
        assert_eq!(stepped_schedule(25, 25, 100), vec![25, 50, 75, 100]);
    }
}
