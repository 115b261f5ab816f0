//! Seed-reproducible selection of ballots and batches.
//!
//! Draw `k` (counting from 1) is driven by `SHA-256("{seed},{k}")`; the
//! first eight digest bytes, read big-endian, give `x_k` and the uniform
//! variate `u_k = x_k / 2^64`. Every selection is computed with integers
//! only, so another implementation of the same recipe reproduces the
//! transcripts exactly.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_integer::Integer;
use num_traits::{Signed, Zero};
use sha2::{Digest, Sha256};

use crate::comparison::Exact;
use crate::error::{invalid, AuditError, Result};
use crate::model::StratumId;

pub fn draw_digest(seed: &str, k: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.as_bytes());
    h.update(b",");
    let mut buf = [0u8; 20];
    h.update(decimal(k, &mut buf));
    h.finalize().into()
}

fn decimal(mut v: u64, buf: &mut [u8; 20]) -> &[u8] {
    let mut i = buf.len();
    loop {
        i -= 1;
        buf[i] = b'0' + (v % 10) as u8;
        v /= 10;
        if v == 0 {
            return &buf[i..];
        }
    }
}

/// `x_k`: the first eight digest bytes as a big-endian integer.
pub fn draw_word(digest: &[u8; 32]) -> u64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(b)
}

/// `u_k` in `[0, 1)`.
pub fn draw_unit(seed: &str, k: u64) -> f64 {
    draw_word(&draw_digest(seed, k)) as f64 / 18_446_744_073_709_551_616.0
}

pub fn hex_digest(digest: &[u8; 32]) -> String {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(64);
    for &b in digest {
        s.push(HEX[(b >> 4) as usize] as char);
        s.push(HEX[(b & 15) as usize] as char);
    }
    s
}

/// One accepted draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draw {
    /// Counter `k` fed to the digest.
    pub index: u64,
    pub digest: [u8; 32],
    /// 1-based ballot position (polling) or batch id (comparison).
    pub selected: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleMethod {
    Srs,
    Ppeb,
}

impl SampleMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SampleMethod::Srs => "srs",
            SampleMethod::Ppeb => "ppeb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePlan {
    pub seed: String,
    pub stratum: StratumId,
    pub method: SampleMethod,
    pub draws: Vec<Draw>,
}

impl SamplePlan {
    pub fn selected(&self) -> Vec<u64> {
        self.draws.iter().map(|d| d.selected).collect()
    }

    /// `draw_index,digest_hex,selected_id` rows, header first.
    pub fn transcript_rows(&self) -> Vec<String> {
        let mut rows = Vec::with_capacity(self.draws.len() + 1);
        rows.push(String::from("draw_index,digest_hex,selected_id"));
        for d in &self.draws {
            rows.push(format!("{},{},{}", d.index, hex_digest(&d.digest), d.selected));
        }
        rows
    }
}

/// Simple random sample without replacement from positions `1..=population`,
/// resumable across rounds.
#[derive(Debug, Clone)]
pub struct SrsSampler {
    seed: String,
    population: u64,
    next_k: u64,
    seen: BTreeSet<u64>,
}

impl SrsSampler {
    pub fn new(seed: &str, population: u64) -> Self {
        Self {
            seed: String::from(seed),
            population,
            next_k: 1,
            seen: BTreeSet::new(),
        }
    }

    pub fn drawn(&self) -> u64 {
        self.seen.len() as u64
    }

    /// Next distinct position, or `None` once the population is exhausted.
    pub fn next_draw(&mut self) -> Option<Draw> {
        if self.drawn() >= self.population {
            return None;
        }
        loop {
            let k = self.next_k;
            self.next_k += 1;
            let digest = draw_digest(&self.seed, k);
            let x = draw_word(&digest);
            let selected = ((x as u128 * self.population as u128) >> 64) as u64 + 1;
            if self.seen.insert(selected) {
                return Some(Draw {
                    index: k,
                    digest,
                    selected,
                });
            }
        }
    }

    pub fn take(&mut self, n: u64) -> Result<Vec<Draw>> {
        if self.drawn() + n > self.population {
            return Err(invalid(format!(
                "cannot draw {n} more of {} ballots ({} already drawn)",
                self.population,
                self.drawn()
            )));
        }
        Ok((0..n).filter_map(|_| self.next_draw()).collect())
    }
}

/// `n` distinct positions in `1..=population`, in draw order.
pub fn draw_srs(seed: &str, population: u64, n: u64) -> Result<Vec<u64>> {
    Ok(SrsSampler::new(seed, population)
        .take(n)?
        .into_iter()
        .map(|d| d.selected)
        .collect())
}

pub fn srs_plan(seed: &str, stratum: StratumId, population: u64, n: u64) -> Result<SamplePlan> {
    Ok(SamplePlan {
        seed: String::from(seed),
        stratum,
        method: SampleMethod::Srs,
        draws: SrsSampler::new(seed, population).take(n)?,
    })
}

/// `count` consecutive batches starting at `first_id`, all with bound `bound`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedRun {
    pub first_id: u64,
    pub count: u64,
    pub bound: Exact,
}

/// Draws batches with replacement, batch `p` with probability `u_p / U`.
///
/// Bounds are scaled by the lcm of their denominators, so each draw selects
/// the first batch whose cumulative integer weight reaches
/// `ceil(x_k * U_int / 2^64)`, which is the first batch with cumulative
/// bound `>= u_k U`.
#[derive(Debug, Clone)]
pub struct PpebSampler {
    seed: String,
    runs: Vec<(u64, u64, u128)>,
    cumulative: Vec<u128>,
    total: u128,
    next_k: u64,
}

impl PpebSampler {
    /// Runs with a zero bound are dropped; they can never be selected.
    pub fn new(seed: &str, runs: &[WeightedRun]) -> Result<Self> {
        if let Some(r) = runs.iter().find(|r| r.bound.is_negative()) {
            return Err(invalid(format!("negative bound for batch {}", r.first_id)));
        }
        let live: Vec<&WeightedRun> = runs
            .iter()
            .filter(|r| r.count > 0 && !r.bound.is_zero())
            .collect();
        if live.is_empty() {
            return Err(invalid("no batch with a positive error bound"));
        }
        let mut scale: i128 = 1;
        for r in &live {
            scale = scale.lcm(r.bound.denom());
            if scale > (1i128 << 100) {
                return Err(AuditError::Overflow("bound denominators"));
            }
        }
        let mut out = Vec::with_capacity(live.len());
        let mut cumulative = Vec::with_capacity(live.len());
        let mut total: u128 = 0;
        for r in live {
            let w = (r.bound * Exact::from_integer(scale)).to_integer();
            let w = u128::try_from(w).map_err(|_| AuditError::Overflow("batch weight"))?;
            total = w
                .checked_mul(r.count as u128)
                .and_then(|x| x.checked_add(total))
                .ok_or(AuditError::Overflow("total weight"))?;
            out.push((r.first_id, r.count, w));
            cumulative.push(total);
        }
        if total > u64::MAX as u128 {
            return Err(AuditError::Overflow("total weight exceeds 2^64"));
        }
        Ok(Self {
            seed: String::from(seed),
            runs: out,
            cumulative,
            total,
            next_k: 1,
        })
    }

    /// Resumes a sequence after `draws` earlier draws.
    pub fn skip_to(&mut self, draws: u64) {
        self.next_k = draws + 1;
    }

    pub fn next_draw(&mut self) -> Draw {
        let k = self.next_k;
        self.next_k += 1;
        let digest = draw_digest(&self.seed, k);
        let x = draw_word(&digest) as u128;
        let target = (x * self.total).div_ceil(1u128 << 64);
        let i = self.cumulative.partition_point(|&c| c < target);
        let (first_id, count, w) = self.runs[i];
        let before = if i == 0 { 0 } else { self.cumulative[i - 1] };
        let offset = (target - before).div_ceil(w).saturating_sub(1);
        Draw {
            index: k,
            digest,
            selected: first_id + (offset as u64).min(count - 1),
        }
    }

    pub fn take(&mut self, n: u64) -> Vec<Draw> {
        (0..n).map(|_| self.next_draw()).collect()
    }
}

/// `k` batch positions (1-based, with replacement) for bounds listed in manifest order.
pub fn draw_ppeb(seed: &str, bounds: &[Exact], k: u64) -> Result<Vec<u64>> {
    if bounds.is_empty() {
        return Err(invalid("empty bound list"));
    }
    if let Some(i) = bounds.iter().position(|b| !b.is_positive()) {
        return Err(invalid(format!("bound of batch {} is not positive", i + 1)));
    }
    let runs: Vec<WeightedRun> = bounds
        .iter()
        .enumerate()
        .map(|(i, b)| WeightedRun {
            first_id: i as u64 + 1,
            count: 1,
            bound: *b,
        })
        .collect();
    let mut s = PpebSampler::new(seed, &runs)?;
    Ok(s.take(k).into_iter().map(|d| d.selected).collect())
}

pub fn ppeb_plan(seed: &str, stratum: StratumId, runs: &[WeightedRun], k: u64) -> Result<SamplePlan> {
    Ok(SamplePlan {
        seed: String::from(seed),
        stratum,
        method: SampleMethod::Ppeb,
        draws: PpebSampler::new(seed, runs)?.take(k),
    })
}
