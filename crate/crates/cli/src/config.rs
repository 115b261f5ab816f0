//! Audit configuration: a flat `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Paths are relative
//! to the directory holding the configuration file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hybrid_rla_core::combination::{validate_allocation, EscalationRule, RiskAllocation};
use hybrid_rla_core::comparison::{BoundMode, BoundOptions, ComparisonTest, Exact};
use hybrid_rla_core::polling::PollingMethod;

use crate::error::{CliError, Result};

/// How the two stratum p-values are turned into a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMethod {
    /// Fixed `lambda_1`, stratum risk limits and the escalation rule.
    Partition,
    /// Fisher's combining function maximized over `lambda_1`.
    Fisher,
}

impl CombineMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CombineMethod::Partition => "partition",
            CombineMethod::Fisher => "fisher",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub contest: PathBuf,
    pub comparison_manifest: PathBuf,
    pub polling_manifest: PathBuf,
    pub allocation: RiskAllocation,
    pub seed: String,
    pub comparison_test: ComparisonTest,
    pub polling_test: PollingMethod,
    pub bounds: BoundOptions,
    /// Points of the `lambda_1` grid for the combined p-value.
    pub grid: usize,
    pub method: CombineMethod,
}

pub const DEFAULT_KW_GAMMA: f64 = 0.95;
pub const DEFAULT_GRID: usize = 1000;

const KEYS: [&str; 16] = [
    "contest",
    "comparison_manifest",
    "polling_manifest",
    "alpha",
    "alpha1",
    "alpha2",
    "lambda1",
    "rule",
    "seed",
    "comparison_test",
    "kw_gamma",
    "polling_test",
    "bound_mode",
    "error_inflation",
    "grid",
    "method",
];

struct Entry {
    line: u64,
    column: u64,
    value: String,
}

fn parse_exact(s: &str) -> Option<Exact> {
    if let Some((n, d)) = s.split_once('/') {
        let (n, d): (i128, i128) = (n.trim().parse().ok()?, d.trim().parse().ok()?);
        return (d != 0).then(|| Exact::new(n, d));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 30 {
        return None;
    }
    let whole: i128 = if int.is_empty() { 0 } else { int.parse().ok()? };
    if int.starts_with('-') {
        return None;
    }
    let scale = 10i128.checked_pow(frac.len() as u32)?;
    let f: i128 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    Some(Exact::new(whole.checked_mul(scale)?.checked_add(f)?, scale))
}

fn format_exact(x: &Exact) -> String {
    if *x.denom() == 1 {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

impl AuditConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn parse(file: &str, text: &str) -> Result<Self> {
        let mut entries: Vec<(String, Entry)> = Vec::new();
        let err = |line: u64, column: u64, message: String| CliError::Parse {
            file: file.to_string(),
            line,
            column,
            message,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i as u64 + 1;
            let trimmed = raw.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let indent = (raw.len() - trimmed.len()) as u64;
            let (key, _) = trimmed
                .split_once('=')
                .ok_or_else(|| err(line, indent + 1, "expected `key = value`".into()))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(err(line, indent + 1, format!("unknown key `{key}`")));
            }
            if entries.iter().any(|(k, _)| k == key) {
                return Err(err(line, indent + 1, format!("duplicate key `{key}`")));
            }
            let eq = raw.find('=').unwrap_or(0);
            let after = &raw[eq + 1..];
            let column = (eq + 2 + after.len() - after.trim_start().len()) as u64;
            entries.push((
                key.to_string(),
                Entry {
                    line,
                    column,
                    value: after.trim().to_string(),
                },
            ));
        }
        let find = |key: &str| entries.iter().find(|(k, _)| k == key).map(|(_, e)| e);
        let missing = |key: &str| CliError::Validation(format!("{file}: missing required key `{key}`"));
        let required = |key: &str| find(key).ok_or_else(|| missing(key));
        let bad = |e: &Entry, what: &str| err(e.line, e.column, format!("expected {what}, found `{}`", e.value));
        let float = |key: &str| -> Result<Option<f64>> {
            find(key)
                .map(|e| e.value.parse::<f64>().map_err(|_| bad(e, "a number")))
                .transpose()
        };
        let path = |key: &str| -> Result<PathBuf> {
            let e = required(key)?;
            if e.value.is_empty() {
                return Err(bad(e, "a file name"));
            }
            Ok(PathBuf::from(&e.value))
        };

        let alpha = float("alpha")?.ok_or_else(|| missing("alpha"))?;
        let lambda1 = float("lambda1")?.ok_or_else(|| missing("lambda1"))?;
        let mut allocation = RiskAllocation::with_defaults(alpha, lambda1);
        if let Some(a1) = float("alpha1")? {
            allocation.alpha1 = a1;
            allocation.alpha2 = hybrid_rla_core::combination::largest_partner_alpha(alpha, a1);
        }
        if let Some(a2) = float("alpha2")? {
            allocation.alpha2 = a2;
        }
        if let Some(e) = find("rule") {
            allocation.rule = match e.value.as_str() {
                "adjust-threshold" => EscalationRule::AdjustThreshold,
                "auto-full-count" => EscalationRule::AutoFullCount,
                _ => return Err(bad(e, "adjust-threshold or auto-full-count")),
            };
        }
        validate_allocation(&allocation).map_err(|v| CliError::Validation(format!("risk allocation: {v}")))?;

        let seed = required("seed")?;
        if seed.value.is_empty() {
            return Err(bad(seed, "a non-empty seed"));
        }
        let gamma = float("kw_gamma")?.unwrap_or(DEFAULT_KW_GAMMA);
        let comparison_test = match find("comparison_test").map(|e| (e, e.value.as_str())) {
            None | Some((_, "km")) => ComparisonTest::KaplanMarkov,
            Some((_, "kw")) => ComparisonTest::KaplanWald { gamma },
            Some((e, _)) => return Err(bad(e, "km or kw")),
        };
        comparison_test.validate()?;
        let polling_test = match find("polling_test").map(|e| (e, e.value.as_str())) {
            None | Some((_, "tri")) => PollingMethod::TriHypergeometric,
            Some((_, "cond-hyper")) => PollingMethod::ConditionalHypergeometric,
            Some((e, _)) => return Err(bad(e, "tri or cond-hyper")),
        };
        let mode = match find("bound_mode").map(|e| (e, e.value.as_str())) {
            None | Some((_, "sharp")) => BoundMode::Sharp,
            Some((_, "simple")) => BoundMode::Simple,
            Some((e, _)) => return Err(bad(e, "sharp or simple")),
        };
        let inflation = match find("error_inflation") {
            None => Exact::from_integer(1),
            Some(e) => parse_exact(&e.value).ok_or_else(|| bad(e, "a decimal or n/d fraction"))?,
        };
        let bounds = BoundOptions::new(mode, inflation)?;
        let grid = match find("grid") {
            None => DEFAULT_GRID,
            Some(e) => match e.value.parse::<usize>() {
                Ok(g) if g >= 2 => g,
                _ => return Err(bad(e, "an integer of at least 2")),
            },
        };
        let method = match find("method").map(|e| (e, e.value.as_str())) {
            None | Some((_, "partition")) => CombineMethod::Partition,
            Some((_, "fisher")) => CombineMethod::Fisher,
            Some((e, _)) => return Err(bad(e, "partition or fisher")),
        };
        Ok(Self {
            contest: path("contest")?,
            comparison_manifest: path("comparison_manifest")?,
            polling_manifest: path("polling_manifest")?,
            allocation,
            seed: seed.value.clone(),
            comparison_test,
            polling_test,
            bounds,
            grid,
            method,
        })
    }

    /// Canonical text; `parse(emit())` gives back the same configuration.
    pub fn emit(&self) -> String {
        let a = &self.allocation;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("contest", self.contest.display().to_string());
        kv("comparison_manifest", self.comparison_manifest.display().to_string());
        kv("polling_manifest", self.polling_manifest.display().to_string());
        kv("alpha", a.alpha.to_string());
        kv("alpha1", a.alpha1.to_string());
        kv("alpha2", a.alpha2.to_string());
        kv("lambda1", a.lambda1.to_string());
        kv("rule", a.rule.as_str().to_string());
        kv("seed", self.seed.clone());
        match self.comparison_test {
            ComparisonTest::KaplanMarkov => kv("comparison_test", "km".into()),
            ComparisonTest::KaplanWald { gamma } => {
                kv("comparison_test", "kw".into());
                kv("kw_gamma", gamma.to_string());
            }
        }
        kv("polling_test", self.polling_test.as_str().to_string());
        kv("bound_mode", self.bounds.mode.as_str().to_string());
        kv("error_inflation", format_exact(&self.bounds.inflation));
        kv("grid", self.grid.to_string());
        kv("method", self.method.as_str().to_string());
        s
    }
}
