//! Parallel Monte-Carlo runners and the built-in scenario report.
//!
//! Trials are independent and seeded by index, so the summaries do not
//! depend on how rayon schedules them.

use rayon::prelude::*;

use hybrid_rla_core::simulation::{
    example_one, example_two, scenario_report, trial_seed, two_vote_variant, ComparisonWorkload,
    HybridScenario, PollingCache, PollingWorkload, Report, ReportRow, WorkloadSummary,
};
use hybrid_rla_core::Result;

/// Stopping sizes of `trials` polling audits; each worker keeps its own p-value cache.
pub fn polling_summary(w: &PollingWorkload, master: &str, trials: u64) -> Result<WorkloadSummary> {
    let stops = (0..trials)
        .into_par_iter()
        .map_init(PollingCache::default, |cache, i| w.run_trial(&trial_seed(master, i), cache))
        .collect::<Result<Vec<_>>>()?;
    WorkloadSummary::from_stops(&stops, w.truth.ballots)
}

pub fn comparison_summary(w: &ComparisonWorkload, master: &str, trials: u64) -> Result<WorkloadSummary> {
    let stops = (0..trials)
        .into_par_iter()
        .map(|i| w.run_trial(&trial_seed(master, i)))
        .collect::<Result<Vec<_>>>()?;
    WorkloadSummary::from_stops(&stops, w.ballots)
}

/// `start, ceil(start * ratio), ...`, strictly increasing, ending at `max`.
pub fn geometric_schedule(start: u64, ratio: f64, max: u64) -> Vec<u64> {
    let mut s = Vec::new();
    let mut n = start.clamp(1, max.max(1));
    while n < max {
        s.push(n);
        n = ((n as f64 * ratio).ceil() as u64).max(n + 1);
    }
    s.push(max);
    s
}

fn hybrid_rows(s: &HybridScenario, master: &str, trials: u64) -> Result<Vec<ReportRow>> {
    let row = |strategy, stratum, summary| ReportRow {
        scenario: s.name.clone(),
        strategy,
        stratum,
        summary,
    };
    Ok(vec![
        row("hybrid", "cvr", comparison_summary(&s.comparison_stratum()?, &format!("{master}-cvr"), trials)?),
        row("hybrid", "no-cvr", polling_summary(&s.polling_stratum()?, &format!("{master}-no-cvr"), trials)?),
        row("unstratified", "all", comparison_summary(&s.unstratified()?, &format!("{master}-all"), trials)?),
    ])
}

/// Workloads of the two built-in elections and of the policy that treats
/// every ballot without a CVR as a two-vote overstatement.
pub fn builtin_report(master: &str, trials: u64) -> Result<Report> {
    let mut rows = hybrid_rows(&example_one(), &format!("{master}-example-1"), trials)?;
    rows.push(ReportRow {
        scenario: "example-1".into(),
        strategy: "two-vote",
        stratum: "all",
        summary: comparison_summary(&two_vote_variant()?, &format!("{master}-two-vote"), trials)?,
    });
    rows.extend(hybrid_rows(&example_two(), &format!("{master}-example-2"), trials)?);
    Ok(scenario_report(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hybrid_rla_core::simulation::PollingPopulation;

    #[test]
    fn schedule_shape() {
        assert_eq!(geometric_schedule(10, 1.5, 40), vec![10, 15, 23, 35, 40]);
        assert_eq!(geometric_schedule(10, 1.5, 5), vec![5]);
        assert_eq!(geometric_schedule(1, 1.01, 3), vec![1, 2, 3]);
    }

    #[test]
    fn parallel_matches_sequential() {
        let truth = PollingPopulation::new(2_000, 1_200, 700).unwrap();
        let w = PollingWorkload::new(truth, 0, 0.1, vec![50, 100, 200, 400]).unwrap();
        let par = polling_summary(&w, "m", 40).unwrap();
        let seq = w.run("m", 40, &mut PollingCache::default()).unwrap();
        assert_eq!(par, seq);
    }
}
