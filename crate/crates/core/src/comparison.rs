//! Comparison audits with batches of arbitrary size.
//!
//! Each batch `p` gets an a-priori bound `u_p` on its possible overstatement
//! (in units of the pairwise margins). Batches are drawn with replacement
//! with probability `u_p / U`; the observed taint `t_p = e_p / u_p <= 1` of
//! each draw feeds a sequential test of `E[T] >= lambda / U`, which is
//! equivalent to the null "stratum overstatement `>= lambda * V_{wl}`".

use alloc::format;
use alloc::vec::Vec;

use num_rational::Ratio;
use num_traits::Zero;

use crate::error::{bad_param, invalid, AuditError, Result};
use crate::model::{Batch, MarginTable};

/// Exact rational in margin-fraction units.
pub type Exact = Ratio<i128>;

/// Nearest `f64` (up to the two roundings of numerator and denominator).
pub fn exact_to_f64(x: &Exact) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundMode {
    /// `max_{w,l} (v_w - v_l + n_p) / V_{wl}`.
    Sharp,
    /// `2 n_p / V`; needs no reported subtotals.
    Simple,
}

impl BoundMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundMode::Sharp => "sharp",
            BoundMode::Simple => "simple",
        }
    }
}

/// How batch bounds are formed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundOptions {
    pub mode: BoundMode,
    /// Multiplier `>= 1` applied to every bound. Inflating bounds keeps the
    /// test conservative and stops a single worst-case error from zeroing
    /// the test statistic; `1` gives the bounds exactly.
    pub inflation: Exact,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            mode: BoundMode::Sharp,
            inflation: Exact::from_integer(1),
        }
    }
}

impl BoundOptions {
    pub fn new(mode: BoundMode, inflation: Exact) -> Result<Self> {
        if inflation < Exact::from_integer(1) {
            return Err(bad_param("inflation", format!("{inflation} < 1")));
        }
        Ok(Self { mode, inflation })
    }
}

/// A-priori bound `u_p` for one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchErrorBound {
    pub batch_id: u64,
    pub bound: Exact,
    pub mode: BoundMode,
}

/// Observed error `e_p` and taint `t_p = e_p / u_p` for an audited batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaintObservation {
    pub batch_id: u64,
    pub error: Exact,
    pub taint: Exact,
}

impl TaintObservation {
    pub fn taint_f64(&self) -> f64 {
        exact_to_f64(&self.taint)
    }
}

fn frac(num: i64, den: i64) -> Exact {
    Ratio::new(num as i128, den as i128)
}

pub fn batch_upper_bound(
    batch: &Batch,
    margins: &MarginTable,
    options: &BoundOptions,
) -> Result<BatchErrorBound> {
    batch.validate()?;
    let n = batch.ballots as i64;
    let raw = match options.mode {
        BoundMode::Simple => frac(2 * n, margins.min_margin()),
        BoundMode::Sharp => {
            let mut best: Option<Exact> = None;
            for pair in margins.pairs() {
                let vw = *batch
                    .reported
                    .get(pair.winner)
                    .ok_or_else(|| invalid("batch has fewer candidates than contest"))?
                    as i64;
                let vl = *batch
                    .reported
                    .get(pair.loser)
                    .ok_or_else(|| invalid("batch has fewer candidates than contest"))?
                    as i64;
                let u = frac(vw - vl + n, pair.overall);
                best = Some(best.map_or(u, |b| b.max(u)));
            }
            best.ok_or_else(|| invalid("no winner/loser pairs"))?
        }
    };
    Ok(BatchErrorBound {
        batch_id: batch.id,
        bound: raw * options.inflation,
        mode: options.mode,
    })
}

/// `e_p = max_{w,l} (v_w - a_w - v_l + a_l) / V_{wl}` and its taint.
pub fn observed_taint(
    batch: &Batch,
    audited: &[u64],
    margins: &MarginTable,
    bound: &BatchErrorBound,
) -> Result<TaintObservation> {
    if bound.batch_id != batch.id {
        return Err(invalid(format!(
            "bound for batch {} applied to batch {}",
            bound.batch_id, batch.id
        )));
    }
    if audited.len() != batch.reported.len() {
        return Err(invalid(format!(
            "batch {}: {} audited counts for {} candidates",
            batch.id,
            audited.len(),
            batch.reported.len()
        )));
    }
    if let Some(a) = audited.iter().find(|&&a| a > batch.ballots) {
        return Err(invalid(format!(
            "batch {}: audited count {a} exceeds its {} ballots",
            batch.id, batch.ballots
        )));
    }
    if bound.bound <= Exact::zero() {
        return Err(invalid(format!(
            "batch {} has a zero error bound and cannot be sampled",
            batch.id
        )));
    }
    let mut error: Option<Exact> = None;
    for pair in margins.pairs() {
        let (w, l) = (pair.winner, pair.loser);
        let diff = batch.reported[w] as i64 - audited[w] as i64 - batch.reported[l] as i64
            + audited[l] as i64;
        let e = frac(diff, pair.overall);
        error = Some(error.map_or(e, |b| b.max(e)));
    }
    let error = error.ok_or_else(|| invalid("no winner/loser pairs"))?;
    let taint = error / bound.bound;
    Ok(TaintObservation {
        batch_id: batch.id,
        error,
        taint,
    })
}

/// Sum of bounds `U`.
pub fn total_bound<'a>(bounds: impl IntoIterator<Item = &'a Exact>) -> Exact {
    bounds.into_iter().fold(Exact::zero(), |acc, u| acc + u)
}

/// Sequential test used on comparison strata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComparisonTest {
    KaplanMarkov,
    /// Kaplan-Wald with mixing weight `gamma` in `(0, 1]`; `gamma = 1` is Kaplan-Markov.
    KaplanWald { gamma: f64 },
}

impl ComparisonTest {
    pub fn validate(&self) -> Result<()> {
        if let ComparisonTest::KaplanWald { gamma } = *self {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(bad_param("gamma", format!("{gamma} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Running p-value of a comparison stratum: `min(1, min_k prod_{j<=k} 1/g_j)`,
/// where `g_j` is the per-draw likelihood-ratio factor of the chosen test.
///
/// The product is kept in log space. Once a factor degenerates (a taint of 1
/// under Kaplan-Markov) the running product stays infinite, so later draws
/// can never lower the p-value below what earlier prefixes achieved.
#[derive(Debug, Clone)]
pub struct SequentialPValue {
    threshold: f64,
    test: ComparisonTest,
    ln_one_minus_t: f64,
    ln_running: f64,
    min_p: f64,
    exhausted: bool,
    draws: u64,
}

impl SequentialPValue {
    /// `threshold` is `t = lambda / U` and must lie in `(0, 1)`.
    pub fn new(threshold: f64, test: ComparisonTest) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(bad_param("t", format!("{threshold} not in (0, 1)")));
        }
        test.validate()?;
        Ok(Self {
            threshold,
            test,
            ln_one_minus_t: libm::log1p(-threshold),
            ln_running: 0.0,
            min_p: 1.0,
            exhausted: false,
            draws: 0,
        })
    }

    /// Adds one draw's taint and returns the updated p-value.
    pub fn push(&mut self, taint: f64) -> Result<f64> {
        if taint.is_nan() || taint > 1.0 + 1e-12 {
            return Err(invalid(format!("taint {taint} exceeds 1")));
        }
        self.draws += 1;
        if self.exhausted {
            return Ok(self.min_p);
        }
        let slack = 1.0 - taint.min(1.0);
        let ln_factor = match self.test {
            // gamma = 1 is Kaplan-Markov; sharing the arm keeps the two bit-identical
            ComparisonTest::KaplanMarkov | ComparisonTest::KaplanWald { gamma: 1.0 } => {
                if slack <= f64::MIN_POSITIVE {
                    self.exhausted = true;
                    return Ok(self.min_p);
                }
                self.ln_one_minus_t - libm::log(slack)
            }
            ComparisonTest::KaplanWald { gamma } => {
                let g = gamma * slack / (1.0 - self.threshold) + (1.0 - gamma);
                if g <= f64::MIN_POSITIVE {
                    self.exhausted = true;
                    return Ok(self.min_p);
                }
                -libm::log(g)
            }
        };
        self.ln_running += ln_factor;
        let p = libm::exp(self.ln_running);
        if p < self.min_p {
            self.min_p = p;
        }
        Ok(self.min_p)
    }

    pub fn pvalue(&self) -> f64 {
        self.min_p
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// True once a degenerate factor has frozen the statistic.
    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }
}

/// p-value after every draw (non-increasing).
pub fn pvalue_trail(taints: &[f64], threshold: f64, test: ComparisonTest) -> Result<Vec<f64>> {
    let mut seq = SequentialPValue::new(threshold, test)?;
    taints.iter().map(|&t| seq.push(t)).collect()
}

pub fn km_pvalue(taints: &[f64], threshold: f64) -> Result<f64> {
    sequential_pvalue(taints, threshold, ComparisonTest::KaplanMarkov)
}

pub fn kw_pvalue(taints: &[f64], threshold: f64, gamma: f64) -> Result<f64> {
    sequential_pvalue(taints, threshold, ComparisonTest::KaplanWald { gamma })
}

pub fn sequential_pvalue(taints: &[f64], threshold: f64, test: ComparisonTest) -> Result<f64> {
    let mut seq = SequentialPValue::new(threshold, test)?;
    for &t in taints {
        seq.push(t)?;
    }
    Ok(seq.pvalue())
}

/// Smallest `n` with `(1 - t)^n <= alpha`: the Kaplan-Markov sample size
/// when every draw shows no error.
pub fn clean_sample_size(threshold: f64, alpha: f64) -> Result<u64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(bad_param("t", format!("{threshold} not in (0, 1)")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(bad_param("alpha", format!("{alpha} not in (0, 1]")));
    }
    if alpha >= 1.0 {
        return Ok(0);
    }
    let step = libm::log1p(-threshold);
    let target = libm::log(alpha);
    let mut n = libm::ceil(target / step);
    if !n.is_finite() || n > 9.0e15 {
        return Err(AuditError::Overflow("clean sample size"));
    }
    while n > 0.0 && (n - 1.0) * step <= target {
        n -= 1.0;
    }
    while n * step > target {
        n += 1.0;
    }
    Ok(n as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_margins, ContestSpec, StratumId, StratumTotals};
    use alloc::string::ToString;
    use alloc::vec;

    fn margins(w: u64, l: u64, ballots: u64) -> MarginTable {
        let c = ContestSpec::new(
            vec!["w".to_string(), "l".to_string()],
            &["w"],
            &["l"],
            vec![StratumTotals {
                id: StratumId(1),
                ballots,
                votes: vec![w, l],
            }],
        )
        .unwrap();
        derive_margins(&c).unwrap()
    }

    fn opts(mode: BoundMode) -> BoundOptions {
        BoundOptions::new(mode, Exact::from_integer(1)).unwrap()
    }

    #[test]
    fn bounds_for_reported_batch() {
        let m = margins(1500, 500, 3000);
        let b = Batch::new(7, 100, vec![60, 40]).unwrap();
        let sharp = batch_upper_bound(&b, &m, &opts(BoundMode::Sharp)).unwrap();
        assert_eq!(sharp.bound, Ratio::new(12, 100));
        let simple = batch_upper_bound(&b, &m, &opts(BoundMode::Simple)).unwrap();
        assert_eq!(simple.bound, Ratio::new(2, 10));
        assert!(sharp.bound <= simple.bound);

        let single = Batch::new(8, 1, vec![1, 0]).unwrap();
        let u = batch_upper_bound(&single, &m, &opts(BoundMode::Simple)).unwrap();
        assert_eq!(u.bound, Ratio::new(2, 1000));
    }

    #[test]
    fn inflation_scales_bound() {
        let m = margins(1500, 500, 3000);
        let b = Batch::new(1, 1, vec![1, 0]).unwrap();
        let o = BoundOptions::new(BoundMode::Simple, Ratio::new(103_905, 100_000)).unwrap();
        let u = batch_upper_bound(&b, &m, &o).unwrap();
        assert_eq!(u.bound, Ratio::new(2, 1000) * Ratio::new(103_905, 100_000));
        assert!(BoundOptions::new(BoundMode::Simple, Ratio::new(1, 2)).is_err());
    }

    #[test]
    fn taints() {
        let m = margins(1500, 500, 3000);
        let single = Batch::new(3, 1, vec![1, 0]).unwrap();
        let u = batch_upper_bound(&single, &m, &opts(BoundMode::Simple)).unwrap();
        let exact = observed_taint(&single, &[1, 0], &m, &u).unwrap();
        assert_eq!(exact.error, Exact::zero());
        assert_eq!(exact.taint, Exact::zero());
        // two-vote overstatement
        let flipped = observed_taint(&single, &[0, 1], &m, &u).unwrap();
        assert_eq!(flipped.error, Ratio::new(2, 1000));
        assert_eq!(flipped.taint, Exact::from_integer(1));

        let m100 = margins(100, 0, 200);
        let b = Batch::new(9, 10, vec![10, 0]).unwrap();
        let u = batch_upper_bound(&b, &m100, &opts(BoundMode::Sharp)).unwrap();
        assert_eq!(u.bound, Ratio::new(2, 10));
        let t = observed_taint(&b, &[9, 1], &m100, &u).unwrap();
        assert_eq!(t.error, Ratio::new(2, 100));
        assert_eq!(t.taint, Ratio::new(1, 10));

        assert!(observed_taint(&b, &[11, 0], &m100, &u).is_err());
    }

    #[test]
    fn km_examples() {
        assert_eq!(km_pvalue(&[], 0.01).unwrap(), 1.0);
        let zeros = vec![0.0; 229];
        let p = km_pvalue(&zeros, 0.01).unwrap();
        let direct = (0..229).fold(1.0f64, |acc, _| acc * 0.99);
        assert!((p - direct).abs() < 1e-12);
        assert!((p - 0.1001).abs() < 1e-4);
        assert_eq!(km_pvalue(&[1.0, 0.0, 0.0], 0.2).unwrap(), 1.0);
        assert!(km_pvalue(&[0.0], 1.0).is_err());
        assert!(km_pvalue(&[0.0], 0.0).is_err());
        assert!(km_pvalue(&[1.5], 0.1).is_err());
    }

    #[test]
    fn worst_case_taint_freezes_statistic() {
        let mut s = SequentialPValue::new(0.1, ComparisonTest::KaplanMarkov).unwrap();
        s.push(0.0).unwrap();
        let before = s.pvalue();
        s.push(1.0).unwrap();
        assert!(s.is_exhausted());
        for _ in 0..100 {
            s.push(0.0).unwrap();
        }
        assert_eq!(s.pvalue(), before);
    }

    #[test]
    fn kw_examples() {
        assert_eq!(kw_pvalue(&[], 0.01, 0.5).unwrap(), 1.0);
        let zeros = vec![0.0; 229];
        let p = kw_pvalue(&zeros, 0.01, 0.5).unwrap();
        // prefix-product oracle
        let g = 0.5 / 0.99 + 0.5;
        let mut prod = 1.0f64;
        let mut best = 1.0f64;
        for _ in 0..229 {
            prod /= g;
            best = best.min(prod);
        }
        assert!((p - best).abs() < 1e-12);
        assert!((p - 0.315_482).abs() < 1e-6);
        let taints = [0.0, 0.5, -0.25, 0.0, 0.9];
        let km = km_pvalue(&taints, 0.05).unwrap();
        let kw = kw_pvalue(&taints, 0.05, 1.0).unwrap();
        assert!((km - kw).abs() < 1e-12);
        assert!(kw_pvalue(&[], 0.1, 0.0).is_err());
        assert!(kw_pvalue(&[], 0.1, 1.5).is_err());
    }

    #[test]
    fn clean_sizes() {
        assert_eq!(clean_sample_size(0.1, 0.05).unwrap(), 29);
        assert_eq!(clean_sample_size(0.3, 1.0).unwrap(), 0);
        assert_eq!(clean_sample_size(0.01, 0.1).unwrap(), 230);
        assert!(clean_sample_size(0.0, 0.1).is_err());
        assert!(clean_sample_size(0.1, 0.0).is_err());
    }
}
