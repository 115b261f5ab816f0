//! Log-space combinatorics and hypergeometric tail sums.
//!
//! Binomial coefficients are evaluated through `lgamma`; hypergeometric
//! masses are obtained from one anchor term in log space and then walked outward
//! with exact term ratios, so sums over populations of millions of ballots
//! neither overflow nor lose the small tails a p-value lives in.

/// Terms smaller than this fraction of the running sum are treated as negligible.
const TAIL_EPS: f64 = 1e-20;

/// `ln(n!)`.
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        libm::lgamma(n as f64 + 1.0)
    }
}

/// `ln C(n, k)`, with `C(n, k) = 0` (so `-inf`) when `k > n`.
#[inline]
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        f64::NEG_INFINITY
    } else if k == 0 || k == n {
        0.0
    } else {
        ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
    }
}

/// `ln(n!) - [(n + 1/2) ln n - n + ln sqrt(2 pi)]`.
fn stirling_error(n: u64) -> f64 {
    const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        let x = n as f64;
        return ln_factorial(n) - (x + 0.5) * libm::log(x) + x - LN_SQRT_2PI;
    }
    let x = n as f64;
    let xx = x * x;
    if n > 500 {
        (S0 - S1 / xx) / x
    } else if n > 80 {
        (S0 - (S1 - S2 / xx) / xx) / x
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / xx) / xx) / xx) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / xx) / xx) / xx) / xx) / x
    }
}

/// Deviance term `x ln(x / m) + m - x`, summed as a series when `x` is near `m`.
fn deviance(x: f64, m: f64) -> f64 {
    if libm::fabs(x - m) < 0.1 * (x + m) {
        let mut v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        let mut j = 1.0;
        loop {
            ej *= v;
            let s1 = s + ej / (2.0 * j + 1.0);
            if s1 == s {
                return s;
            }
            s = s1;
            j += 1.0;
        }
    }
    x * libm::log(x / m) + m - x
}

/// `ln` of the binomial mass `C(n, x) p^x q^(n - x)`, with `q = 1 - p` passed separately.
fn ln_binom_raw(x: u64, n: u64, p: f64, q: f64) -> f64 {
    if p == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if x == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let nf = n as f64;
    if x == 0 {
        if n == 0 {
            return 0.0;
        }
        return if p < 0.1 { -deviance(nf, nf * q) - nf * p } else { nf * libm::log(q) };
    }
    if x == n {
        return if q < 0.1 { -deviance(nf, nf * p) - nf * q } else { nf * libm::log(p) };
    }
    let xf = x as f64;
    let lc = stirling_error(n) - stirling_error(x) - stirling_error(n - x) - deviance(xf, nf * p)
        - deviance(nf - xf, nf * q);
    let lf = core::f64::consts::LN_2 + libm::log(core::f64::consts::PI) + libm::log(xf) + libm::log1p(-xf / nf);
    lc - 0.5 * lf
}

/// Number of "successes" in `draws` draws without replacement from a
/// population of `population` items of which `successes` are successes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hypergeometric {
    population: u64,
    successes: u64,
    draws: u64,
}

impl Hypergeometric {
    /// Returns `None` when `successes > population` or `draws > population`.
    pub fn new(population: u64, successes: u64, draws: u64) -> Option<Self> {
        (successes <= population && draws <= population).then_some(Self {
            population,
            successes,
            draws,
        })
    }

    pub fn min_value(&self) -> u64 {
        self.draws
            .saturating_sub(self.population - self.successes)
    }

    pub fn max_value(&self) -> u64 {
        self.draws.min(self.successes)
    }

    pub fn mode(&self) -> u64 {
        let m = (self.draws as u128 + 1) * (self.successes as u128 + 1)
            / (self.population as u128 + 2);
        (m as u64).clamp(self.min_value(), self.max_value())
    }

    /// Evaluated as a ratio of binomial masses at `p = draws / population`
    /// with Stirling-error and deviance terms, which avoids the cancellation
    /// between `lgamma` values of order `N ln N`.
    pub fn ln_pmf(&self, k: u64) -> f64 {
        if k < self.min_value() || k > self.max_value() {
            return f64::NEG_INFINITY;
        }
        let n = self.population as f64;
        let p = self.draws as f64 / n;
        let q = (self.population - self.draws) as f64 / n;
        ln_binom_raw(k, self.successes, p, q)
            + ln_binom_raw(self.draws - k, self.population - self.successes, p, q)
            - ln_binom_raw(self.draws, self.population, p, q)
    }

    pub fn pmf(&self, k: u64) -> f64 {
        libm::exp(self.ln_pmf(k))
    }

    /// `pmf(k + 1) / pmf(k)`, valid for `min_value() <= k < max_value()`.
    #[inline]
    fn ratio_up(&self, k: u64) -> f64 {
        let failures = self.population - self.successes;
        let num = (self.successes - k) as f64 * (self.draws - k) as f64;
        let den = (k + 1) as f64 * (failures + k + 1 - self.draws) as f64;
        num / den
    }

    /// `pmf(k - 1) / pmf(k)`, valid for `min_value() < k <= max_value()`.
    #[inline]
    fn ratio_down(&self, k: u64) -> f64 {
        let failures = self.population - self.successes;
        let num = k as f64 * (failures + k - self.draws) as f64;
        let den = (self.successes - k + 1) as f64 * (self.draws - k + 1) as f64;
        num / den
    }

    /// Upper tail `P(X >= x)`.
    pub fn sf(&self, x: u64) -> f64 {
        let (lo, hi) = (self.min_value(), self.max_value());
        if x <= lo {
            return 1.0;
        }
        if x > hi {
            return 0.0;
        }
        let start = x.max(self.mode());
        let anchor = self.pmf(start);
        if anchor == 0.0 {
            return 0.0;
        }
        let mut acc = anchor;
        let mut term = anchor;
        let mut k = start;
        while k < hi {
            term *= self.ratio_up(k);
            k += 1;
            acc += term;
            if term < acc * TAIL_EPS {
                break;
            }
        }
        term = anchor;
        k = start;
        while k > x {
            term *= self.ratio_down(k);
            k -= 1;
            acc += term;
            if term < acc * TAIL_EPS {
                break;
            }
        }
        acc.min(1.0)
    }

    /// Visits every support point carrying non-negligible mass, starting at
    /// the mode and walking outward; `visit(k, pmf(k))`.
    pub fn for_each_mass(&self, mut visit: impl FnMut(u64, f64)) {
        let (lo, hi) = (self.min_value(), self.max_value());
        let mode = self.mode();
        let peak = self.pmf(mode);
        visit(mode, peak);
        let floor = peak * TAIL_EPS;
        let mut term = peak;
        let mut k = mode;
        while k < hi {
            term *= self.ratio_up(k);
            k += 1;
            if term < floor {
                break;
            }
            visit(k, term);
        }
        term = peak;
        k = mode;
        while k > lo {
            term *= self.ratio_down(k);
            k -= 1;
            if term < floor {
                break;
            }
            visit(k, term);
        }
    }
}

/// Smallest integer `>= x`, treating values within a relative `1e-9` of an
/// integer as that integer (absorbs representation noise such as
/// `0.7 * 2000 = 1400.0000000000002`).
pub fn ceil_snapped(x: f64) -> f64 {
    let r = libm::round(x);
    if libm::fabs(x - r) <= 1e-9 * libm::fmax(1.0, libm::fabs(x)) {
        r
    } else {
        libm::ceil(x)
    }
}
