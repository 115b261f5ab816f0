//! The per-round audit workflow on an audit directory.
//!
//! The directory holds the configuration and the files it names, plus:
//!
//! - `decisions.log`: append-only, one `seq<TAB>event<TAB>note` line per event;
//! - `plan-<r>.csv`, `transcript-<r>-<s>.csv`, `parameters-<r>.csv`;
//! - `rounds/round-<r>-<s>.csv`: audited results as recorded;
//! - `tally-<s>.csv`: full hand-count totals;
//! - `margins.csv`, written by `init`;
//! - `audit.lock` while a command that writes is running.
//!
//! Stratum 1 is the comparison stratum and stratum 2 the polling stratum.
//! Assessment reads but never writes, so it is a pure function of the files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use hybrid_rla_core::combination::{
    audit_state_step, combined_pvalue_over_lambda, feasible_lambda_interval, AuditDecision, AuditEvent,
    AuditState, PollingThreshold, StratumStatus,
};
use hybrid_rla_core::comparison::{
    batch_upper_bound, exact_to_f64, observed_taint, sequential_pvalue, BatchErrorBound, Exact,
};
use hybrid_rla_core::model::{derive_margins, ContestSpec, MarginTable, StratumId, StratumManifest, StratumTotals};
use hybrid_rla_core::polling::{null_threshold, polling_pvalue, NullSearch, PollingSample};
use hybrid_rla_core::sampling::{PpebSampler, SrsSampler, WeightedRun};
use hybrid_rla_core::simulation::{PollingPopulation, PollingWorkload};
use hybrid_rla_core::AuditError;

use crate::config::{AuditConfig, CombineMethod};
use crate::error::{CliError, Result};
use crate::formats::{
    ComparisonAudit, ComparisonManifestFile, ComparisonRoundFile, ContestFile, ParameterFile, ParameterRow,
    PlanFile, PlanRow, PollingAudit, PollingManifestFile, PollingRoundFile, Role, TallyFile, TranscriptFile,
};
use crate::sim::{geometric_schedule, polling_summary};

pub const LOG_FILE: &str = "decisions.log";
pub const LOCK_FILE: &str = "audit.lock";

const COMPARISON: usize = 0;
const POLLING: usize = 1;

/// An event as stored in the decision log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogEvent {
    Audit(AuditEvent),
    /// Replaces the configured seed for every draw; only allowed before the first draw.
    SeedOverride(String),
    /// Free-form entry, ignored on replay.
    Info,
}

impl LogEvent {
    fn encode(&self) -> String {
        match self {
            LogEvent::Audit(AuditEvent::RoundRecorded { stratum, round }) => {
                format!("round-recorded {} {round}", stratum + 1)
            }
            LogEvent::Audit(AuditEvent::Rejected { stratum, round }) => format!("rejected {} {round}", stratum + 1),
            LogEvent::Audit(AuditEvent::EscalationStarted { stratum }) => {
                format!("escalation-started {}", stratum + 1)
            }
            LogEvent::Audit(AuditEvent::HandCountComplete { stratum, overstatements }) => {
                let om: Vec<String> = overstatements.iter().map(i64::to_string).collect();
                format!("hand-count-complete {} {}", stratum + 1, om.join(","))
            }
            LogEvent::SeedOverride(seed) => format!("seed-override {seed}"),
            LogEvent::Info => "info".into(),
        }
    }

    fn decode(s: &str) -> Option<Self> {
        let (kind, rest) = s.split_once(' ').unwrap_or((s, ""));
        let words: Vec<&str> = rest.split(' ').collect();
        let stratum = || -> Option<usize> {
            match words.first()?.parse::<usize>().ok()? {
                s @ 1..=2 => Some(s - 1),
                _ => None,
            }
        };
        Some(match (kind, words.len()) {
            ("round-recorded", 2) => LogEvent::Audit(AuditEvent::RoundRecorded {
                stratum: stratum()?,
                round: words[1].parse().ok()?,
            }),
            ("rejected", 2) => LogEvent::Audit(AuditEvent::Rejected {
                stratum: stratum()?,
                round: words[1].parse().ok()?,
            }),
            ("escalation-started", 1) => LogEvent::Audit(AuditEvent::EscalationStarted { stratum: stratum()? }),
            ("hand-count-complete", 2) => LogEvent::Audit(AuditEvent::HandCountComplete {
                stratum: stratum()?,
                overstatements: words[1]
                    .split(',')
                    .map(|w| w.parse().ok())
                    .collect::<Option<Vec<i64>>>()?,
            }),
            ("seed-override", _) if !rest.is_empty() => LogEvent::SeedOverride(rest.to_string()),
            ("info", _) if rest.is_empty() => LogEvent::Info,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub seq: u64,
    pub event: LogEvent,
    pub note: String,
}

/// Held while a writing command runs; the file is removed on drop.
#[derive(Debug)]
pub struct AuditLock {
    path: PathBuf,
}

impl AuditLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::State {
                message: format!(
                    "audit directory is locked by another command; remove {} if no command is running",
                    path.display()
                ),
                log: dir.join(LOG_FILE),
            }),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for AuditLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// P-value and status of one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumAssessment {
    pub stratum: u32,
    pub status: StratumStatus,
    pub draws: u64,
    /// Tolerable-overstatement share in force (smallest over pairs).
    pub lambda: f64,
    pub alpha: f64,
    pub pvalue: f64,
}

/// Fisher's combined p-value for one pair, maximized over `lambda_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCombination {
    pub winner: String,
    pub loser: String,
    pub pvalue: f64,
    pub argmax: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub round: u32,
    pub method: CombineMethod,
    pub strata: Vec<StratumAssessment>,
    pub combined: Option<Vec<PairCombination>>,
    pub decision: AuditDecision,
}

fn fmt_p(p: f64) -> String {
    if p == 0.0 || p >= 1e-4 {
        format!("{p:.6}")
    } else {
        format!("{p:.4e}")
    }
}

impl Assessment {
    pub fn combined_max(&self) -> Option<f64> {
        self.combined
            .as_ref()
            .map(|c| c.iter().map(|p| p.pvalue).fold(0.0, f64::max))
    }

    pub fn render(&self) -> String {
        let mut s = format!("assessment after round {} (method {})\n", self.round, self.method.as_str());
        for a in &self.strata {
            let _ = writeln!(
                s,
                "stratum {}: {} draws={} lambda={:.6} alpha={} p={}",
                a.stratum,
                a.status.as_str(),
                a.draws,
                a.lambda,
                a.alpha,
                fmt_p(a.pvalue)
            );
        }
        if let Some(c) = &self.combined {
            for p in c {
                let _ = writeln!(
                    s,
                    "combined {}>{}: p_max={} at lambda1={:.6}",
                    p.winner,
                    p.loser,
                    fmt_p(p.pvalue),
                    p.argmax
                );
            }
        }
        let decision = match self.decision {
            AuditDecision::Continue => "continue".to_string(),
            AuditDecision::Confirmed => "confirmed".to_string(),
            AuditDecision::FullHandCount => "full-hand-count".to_string(),
            AuditDecision::Decided {
                reported_outcome_correct: true,
            } => "decided: reported outcome correct".to_string(),
            AuditDecision::Decided {
                reported_outcome_correct: false,
            } => "decided: reported outcome wrong".to_string(),
        };
        let _ = writeln!(s, "decision: {decision}");
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AssessOptions {
    pub round: Option<u32>,
    pub paranoid: bool,
    pub grid: Option<usize>,
}

/// Everything needed to run commands against one audit directory.
#[derive(Debug)]
pub struct Audit {
    pub dir: PathBuf,
    pub config: AuditConfig,
    pub contest: ContestSpec,
    pub margins: MarginTable,
    pub comparison: StratumManifest,
    pub polling: StratumManifest,
    /// Error bound of each comparison batch run, in manifest order.
    pub bounds: Vec<Exact>,
    /// `U`, the sum of all batch bounds.
    pub total_bound: f64,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

impl Audit {
    pub fn open(config_path: &Path) -> Result<Self> {
        let config = AuditConfig::load(config_path)?;
        let dir = match config_path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let load = |rel: &Path| -> Result<(String, String)> {
            let p = dir.join(rel);
            Ok((p.display().to_string(), read(&p)?))
        };
        let (name, text) = load(&config.contest)?;
        let contest_file = ContestFile::parse(&name, &text)?;
        let (name, text) = load(&config.comparison_manifest)?;
        let cmf = ComparisonManifestFile::parse(&name, &text)?;
        let (name, text) = load(&config.polling_manifest)?;
        let pmf = PollingManifestFile::parse(&name, &text)?;

        let mut candidates: Vec<String> = Vec::new();
        let mut roles: Vec<Role> = Vec::new();
        for r in &contest_file.rows {
            match candidates.iter().position(|c| *c == r.candidate) {
                Some(i) if roles[i] != r.role => {
                    return Err(CliError::Validation(format!(
                        "candidate `{}` is both {} and {}",
                        r.candidate,
                        roles[i].as_str(),
                        r.role.as_str()
                    )))
                }
                Some(_) => {}
                None => {
                    if r.candidate.contains(';') {
                        return Err(CliError::Validation(format!(
                            "candidate name `{}` may not contain `;`",
                            r.candidate
                        )));
                    }
                    candidates.push(r.candidate.clone());
                    roles.push(r.role);
                }
            }
        }
        let mut votes = vec![vec![None; candidates.len()]; 2];
        for r in &contest_file.rows {
            if !(1..=2).contains(&r.stratum) {
                return Err(CliError::Validation(format!(
                    "contest: stratum {} (1 is the comparison stratum, 2 the polling stratum)",
                    r.stratum
                )));
            }
            let i = candidates.iter().position(|c| *c == r.candidate).expect("listed above");
            let slot = &mut votes[r.stratum as usize - 1][i];
            if slot.is_some() {
                return Err(CliError::Validation(format!(
                    "contest: `{}` listed twice in stratum {}",
                    r.candidate, r.stratum
                )));
            }
            *slot = Some(r.votes);
        }
        let votes: Vec<Vec<u64>> = votes
            .into_iter()
            .enumerate()
            .map(|(s, v)| {
                v.into_iter()
                    .zip(&candidates)
                    .map(|(x, c)| {
                        x.ok_or_else(|| CliError::Validation(format!("contest: no votes for `{c}` in stratum {}", s + 1)))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;

        if cmf.candidates != candidates {
            return Err(CliError::Validation(format!(
                "comparison manifest candidates `{}` differ from contest candidates `{}`",
                cmf.candidates.join(","),
                candidates.join(",")
            )));
        }
        let comparison = StratumManifest::comparison(StratumId(1), cmf.runs, candidates.len())?;
        let reported = comparison.reported_totals(candidates.len());
        if reported != votes[0] {
            return Err(CliError::Validation(format!(
                "comparison manifest totals {reported:?} differ from contest stratum 1 votes {:?}",
                votes[0]
            )));
        }
        let polling = StratumManifest::polling(StratumId(2), pmf.ballots(), pmf.blocks)?;

        let names = |role: Role| -> Vec<&str> {
            candidates
                .iter()
                .zip(&roles)
                .filter(|(_, r)| **r == role)
                .map(|(c, _)| c.as_str())
                .collect()
        };
        let contest = ContestSpec::new(
            candidates.clone(),
            &names(Role::Winner),
            &names(Role::Loser),
            vec![
                StratumTotals {
                    id: StratumId(1),
                    ballots: comparison.ballots,
                    votes: votes[0].clone(),
                },
                StratumTotals {
                    id: StratumId(2),
                    ballots: polling.ballots,
                    votes: votes[1].clone(),
                },
            ],
        )?;
        let margins = derive_margins(&contest)?;
        let mut bounds = Vec::with_capacity(comparison.batches.len());
        let mut total = Exact::from_integer(0);
        for run in &comparison.batches {
            let b = batch_upper_bound(&run.batch(run.first_id), &margins, &config.bounds)?.bound;
            total += b * Exact::from_integer(run.count as i128);
            bounds.push(b);
        }
        Ok(Self {
            dir,
            config,
            contest,
            margins,
            comparison,
            polling,
            bounds,
            total_bound: exact_to_f64(&total),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn log_path(&self) -> PathBuf {
        self.path(LOG_FILE)
    }

    fn state_error(&self, message: impl Into<String>) -> CliError {
        CliError::State {
            message: message.into(),
            log: self.log_path(),
        }
    }

    fn lift(&self, e: AuditError) -> CliError {
        match e {
            AuditError::State(m) => self.state_error(m),
            other => other.into(),
        }
    }

    pub fn transcript_path(&self, round: u32, stratum: u32) -> PathBuf {
        self.path(&format!("transcript-{round}-{stratum}.csv"))
    }

    pub fn round_path(&self, round: u32, stratum: u32) -> PathBuf {
        self.path(&format!("rounds/round-{round}-{stratum}.csv"))
    }

    pub fn plan_path(&self, round: u32) -> PathBuf {
        self.path(&format!("plan-{round}.csv"))
    }

    pub fn read_log(&self) -> Result<Vec<LogRecord>> {
        let path = self.log_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(self.state_error("audit not initialized; run `init` first"))
            }
            Err(e) => return Err(CliError::io(&path, e)),
        };
        let file = path.display().to_string();
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |column: u64, message: &str| CliError::Parse {
                file: file.clone(),
                line: i as u64 + 1,
                column,
                message: message.to_string(),
            };
            let mut parts = line.splitn(3, '\t');
            let seq: u64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(1, "expected a sequence number"))?;
            if seq != i as u64 + 1 {
                return Err(bad(1, "sequence numbers must count up from 1"));
            }
            let event_col = line.find('\t').map_or(1, |p| p as u64 + 2);
            let event = parts
                .next()
                .and_then(LogEvent::decode)
                .ok_or_else(|| bad(event_col, "unrecognized event"))?;
            out.push(LogRecord {
                seq,
                event,
                note: parts.next().unwrap_or("").to_string(),
            });
        }
        Ok(out)
    }

    fn append_log(&self, event: LogEvent, note: &str) -> Result<()> {
        let seq = self.read_log()?.len() as u64 + 1;
        let note: String = note.chars().map(|c| if c == '\t' || c == '\n' { ' ' } else { c }).collect();
        let path = self.log_path();
        let mut f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        writeln!(f, "{seq}\t{}\t{note}", event.encode()).map_err(|e| CliError::io(&path, e))
    }

    /// Replays the log up to (and excluding) the first round after `upto`.
    pub fn replay(&self, upto: Option<u32>) -> Result<AuditState> {
        let mut state = AuditState::new(&self.margins, &self.config.allocation)?;
        for rec in self.read_log()? {
            if let LogEvent::Audit(ev) = rec.event {
                if let (AuditEvent::RoundRecorded { round, .. }, Some(limit)) = (&ev, upto) {
                    if *round > limit {
                        break;
                    }
                }
                state = audit_state_step(&state, ev).map_err(|e| {
                    self.state_error(format!("decision log entry {} cannot be replayed: {e}", rec.seq))
                })?;
            }
        }
        Ok(state)
    }

    fn recorded_rounds(&self, state: &AuditState, stratum: usize) -> Vec<u32> {
        state
            .log()
            .iter()
            .filter_map(|e| match e.event {
                AuditEvent::RoundRecorded { stratum: s, round } if s == stratum => Some(round),
                _ => None,
            })
            .collect()
    }

    fn seed_base(&self) -> Result<String> {
        Ok(self
            .read_log()?
            .into_iter()
            .filter_map(|r| match r.event {
                LogEvent::SeedOverride(s) => Some(s),
                _ => None,
            })
            .last()
            .unwrap_or_else(|| self.config.seed.clone()))
    }

    /// Seed of the draw sequence of stratum `stratum` (1 or 2).
    pub fn stratum_seed(&self, stratum: u32) -> Result<String> {
        Ok(format!("{}/stratum-{stratum}", self.seed_base()?))
    }

    fn existing_transcripts(&self) -> Result<Vec<(u32, u32)>> {
        let mut found = Vec::new();
        let entries = fs::read_dir(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        for e in entries {
            let e = e.map_err(|err| CliError::io(&self.dir, err))?;
            let name = e.file_name().to_string_lossy().to_string();
            if let Some(rest) = name.strip_prefix("transcript-").and_then(|r| r.strip_suffix(".csv")) {
                if let Some((r, s)) = rest.split_once('-') {
                    if let (Ok(r), Ok(s)) = (r.parse(), s.parse()) {
                        found.push((r, s));
                    }
                }
            }
        }
        found.sort_unstable();
        Ok(found)
    }

    fn read_transcript(&self, round: u32, stratum: u32) -> Result<Option<TranscriptFile>> {
        let p = self.transcript_path(round, stratum);
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(TranscriptFile::parse(&p.display().to_string(), &read(&p)?)?))
    }

    /// Draws made in `stratum` (1 or 2) in rounds before `round`.
    fn draws_before(&self, round: u32, stratum: u32) -> Result<u64> {
        let mut n = 0;
        for r in 1..round {
            if let Some(t) = self.read_transcript(r, stratum)? {
                n += t.rows.len() as u64;
            }
        }
        Ok(n)
    }

    fn comparison_rows(&self, rounds: &[u32]) -> Result<Vec<ComparisonAudit>> {
        let mut rows = Vec::new();
        for &r in rounds {
            let p = self.round_path(r, 1);
            rows.extend(ComparisonRoundFile::parse(&p.display().to_string(), &read(&p)?)?.rows);
        }
        Ok(rows)
    }

    fn polling_rows(&self, rounds: &[u32]) -> Result<Vec<PollingAudit>> {
        let mut rows = Vec::new();
        for &r in rounds {
            let p = self.round_path(r, 2);
            rows.extend(PollingRoundFile::parse(&p.display().to_string(), &read(&p)?)?.rows);
        }
        Ok(rows)
    }

    fn bound_of(&self, batch_id: u64) -> Option<BatchErrorBound> {
        let i = self.comparison.batches.iter().position(|r| r.contains(batch_id))?;
        Some(BatchErrorBound {
            batch_id,
            bound: self.bounds[i],
            mode: self.config.bounds.mode,
        })
    }

    /// Taints of the audited batches, in draw order.
    pub fn taints(&self, rows: &[ComparisonAudit]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let batch = self
                    .comparison
                    .batch(r.batch_id)
                    .ok_or_else(|| CliError::Validation(format!("no batch {} in the manifest", r.batch_id)))?;
                let bound = self.bound_of(r.batch_id).expect("batch exists");
                Ok(observed_taint(&batch, &r.votes, &self.margins, &bound)?.taint_f64())
            })
            .collect()
    }

    /// Samples of the polling stratum, one per (winner, loser) pair.
    pub fn polling_samples(&self, rows: &[PollingAudit]) -> Vec<PollingSample> {
        self.margins
            .pairs()
            .iter()
            .map(|pair| {
                let (w, l) = (&self.contest.candidates()[pair.winner], &self.contest.candidates()[pair.loser]);
                let mut s = PollingSample::default();
                for r in rows {
                    match (r.votes.contains(w), r.votes.contains(l)) {
                        (true, false) => s.for_winner += 1,
                        (false, true) => s.for_loser += 1,
                        _ => s.other += 1,
                    }
                }
                s
            })
            .collect()
    }

    /// Comparison p-value for the null "overstatement at least `lambda` of the margin".
    pub fn comparison_pvalue(&self, taints: &[f64], lambda: f64) -> Result<f64> {
        if lambda <= 0.0 {
            return Ok(1.0);
        }
        let t = lambda / self.total_bound;
        if t >= 1.0 {
            return Ok(0.0);
        }
        Ok(sequential_pvalue(taints, t, self.config.comparison_test)?)
    }

    fn polling_pvalue_at(&self, sample: &PollingSample, c: i64, search: NullSearch) -> Result<f64> {
        Ok(polling_pvalue(sample, self.polling.ballots, c, self.config.polling_test, search)?.pvalue)
    }

    fn polling_thresholds(&self, lambdas: &[f64]) -> Vec<i64> {
        self.margins
            .pairs()
            .iter()
            .zip(lambdas)
            .map(|(p, &lam)| null_threshold(p.by_stratum[POLLING], p.overall, lam))
            .collect()
    }

    /// p-value of a hand-counted stratum: 0 when its overstatement is below
    /// the tolerable share for every pair, else 1.
    fn counted_pvalue(&self, overstatements: &[i64], lambdas: &[f64]) -> f64 {
        let ok = self
            .margins
            .pairs()
            .iter()
            .zip(overstatements.iter().zip(lambdas))
            .all(|(p, (&o, &lam))| (o as f64) < lam * p.overall as f64);
        if ok {
            0.0
        } else {
            1.0
        }
    }

    fn stratum_pvalue(
        &self,
        state: &AuditState,
        s: usize,
        taints: &[f64],
        samples: &[PollingSample],
        search: NullSearch,
    ) -> Result<f64> {
        let lambdas = state.thresholds(s);
        if let Some(om) = state.hand_count_overstatements(s) {
            return Ok(self.counted_pvalue(om, lambdas));
        }
        if s == COMPARISON {
            self.comparison_pvalue(taints, state.min_threshold(s))
        } else {
            let mut p: f64 = 0.0;
            for (sample, c) in samples.iter().zip(self.polling_thresholds(lambdas)) {
                p = p.max(self.polling_pvalue_at(sample, c, search)?);
            }
            Ok(p)
        }
    }

    fn combine(
        &self,
        state: &AuditState,
        taints: &[f64],
        samples: &[PollingSample],
        search: NullSearch,
        grid: usize,
    ) -> Result<Vec<PairCombination>> {
        let ballots = (self.comparison.ballots, self.polling.ballots);
        let mut out = Vec::new();
        for (i, pair) in self.margins.pairs().iter().enumerate() {
            let winner = self.contest.candidates()[pair.winner].clone();
            let loser = self.contest.candidates()[pair.loser].clone();
            let Some(interval) = feasible_lambda_interval(pair, (COMPARISON, POLLING), ballots) else {
                out.push(PairCombination {
                    winner,
                    loser,
                    pvalue: 0.0,
                    argmax: f64::NAN,
                });
                continue;
            };
            let v = pair.overall as f64;
            let counted1 = state.hand_count_overstatements(COMPARISON).map(|o| o[i]);
            let counted2 = state.hand_count_overstatements(POLLING).map(|o| o[i]);
            let mut failure: Option<CliError> = None;
            let mut comparison = |lambda: f64| match counted1 {
                Some(o) => f64::from((o as f64) >= lambda * v),
                None => self.comparison_pvalue(taints, lambda).unwrap_or_else(|e| {
                    failure.get_or_insert(e);
                    1.0
                }),
            };
            let mut polling_failure: Option<CliError> = None;
            let polling_at_c = |c: i64| match counted2 {
                Some(o) => f64::from(pair.by_stratum[POLLING] - o <= c),
                None => self.polling_pvalue_at(&samples[i], c, search).unwrap_or_else(|e| {
                    polling_failure.get_or_insert(e);
                    1.0
                }),
            };
            let threshold = PollingThreshold {
                stratum_margin: pair.by_stratum[POLLING],
                overall_margin: pair.overall,
            };
            let scan = combined_pvalue_over_lambda(interval, grid, threshold, &mut comparison, polling_at_c)?;
            if let Some(e) = failure.or(polling_failure) {
                return Err(e);
            }
            out.push(PairCombination {
                winner,
                loser,
                pvalue: scan.pvalue,
                argmax: scan.argmax,
            });
        }
        Ok(out)
    }

    /// Current p-values, combined p-value and decision. Reads files only.
    pub fn assess(&self, opts: AssessOptions) -> Result<Assessment> {
        let mut state = self.replay(opts.round)?;
        let last = state.last_round(COMPARISON).max(state.last_round(POLLING));
        if let Some(r) = opts.round {
            if r > last {
                return Err(self.state_error(format!("round {r} has not been recorded; latest is {last}")));
            }
        }
        let search = if opts.paranoid {
            NullSearch::Exhaustive
        } else {
            NullSearch::Endpoints
        };
        let taints = self.taints(&self.comparison_rows(&self.recorded_rounds(&state, COMPARISON))?)?;
        let samples = self.polling_samples(&self.polling_rows(&self.recorded_rounds(&state, POLLING))?);
        let alloc = self.config.allocation;
        let method = self.config.method;

        let mut pvalues = [1.0; 2];
        for s in [COMPARISON, POLLING] {
            pvalues[s] = self.stratum_pvalue(&state, s, &taints, &samples, search)?;
        }
        if method == CombineMethod::Partition {
            for s in [COMPARISON, POLLING] {
                let round = state.last_round(s);
                if state.status(s) == StratumStatus::Sampling && round > 0 && pvalues[s] <= alloc.stratum_alpha(s) {
                    state = audit_state_step(&state, AuditEvent::Rejected { stratum: s, round })
                        .map_err(|e| self.lift(e))?;
                }
            }
        }
        let combined = if method == CombineMethod::Fisher || opts.grid.is_some() {
            Some(self.combine(&state, &taints, &samples, search, opts.grid.unwrap_or(self.config.grid))?)
        } else {
            None
        };
        let mut decision = state.decision();
        if method == CombineMethod::Fisher && decision == AuditDecision::Continue {
            let p = combined.as_ref().map_or(1.0, |c| c.iter().map(|p| p.pvalue).fold(0.0, f64::max));
            if p <= alloc.alpha {
                decision = AuditDecision::Confirmed;
            }
        }
        let draws = [taints.len() as u64, samples.first().map_or(0, |s| s.size())];
        Ok(Assessment {
            round: opts.round.unwrap_or(last),
            method,
            strata: [COMPARISON, POLLING]
                .iter()
                .map(|&s| StratumAssessment {
                    stratum: s as u32 + 1,
                    status: state.status(s),
                    draws: draws[s],
                    lambda: state.min_threshold(s),
                    alpha: alloc.stratum_alpha(s),
                    pvalue: pvalues[s],
                })
                .collect(),
            combined,
            decision,
        })
    }

    /// Validates the audit and writes `margins.csv` and an empty decision log.
    pub fn init(&self) -> Result<String> {
        let _lock = AuditLock::acquire(&self.dir)?;
        let log = self.log_path();
        if log.exists() && self.read_log()?.iter().any(|r| r.event != LogEvent::Info) {
            return Err(self.state_error("audit already under way; init refused"));
        }
        let mut rows = Vec::new();
        let mut text = String::new();
        let n = self.margins.total_ballots();
        for p in self.margins.pairs() {
            let (w, l) = (&self.contest.candidates()[p.winner], &self.contest.candidates()[p.loser]);
            for (s, m) in p.by_stratum.iter().enumerate() {
                rows.push(vec![w.clone(), l.clone(), (s + 1).to_string(), m.to_string()]);
            }
            rows.push(vec![w.clone(), l.clone(), "all".into(), p.overall.to_string()]);
            let _ = writeln!(
                text,
                "{w} over {l}: margin {} (stratum 1 {}, stratum 2 {}), diluted {:.6}",
                p.overall,
                p.by_stratum[0],
                p.by_stratum[1],
                p.overall as f64 / n as f64
            );
        }
        let header: Vec<String> = ["winner", "loser", "stratum", "margin"].iter().map(|s| s.to_string()).collect();
        write(&self.path("margins.csv"), &crate::formats::write_table("margins", &header, &rows))?;
        if !log.exists() {
            write(&log, "")?;
            self.append_log(LogEvent::Info, "audit initialized")?;
        }
        let _ = writeln!(
            text,
            "ballots: stratum 1 {}, stratum 2 {}; total error bound U = {:.6}",
            self.comparison.ballots, self.polling.ballots, self.total_bound
        );
        Ok(text)
    }

    fn next_round(&self) -> Result<u32> {
        Ok(self.existing_transcripts()?.iter().map(|t| t.0).max().unwrap_or(0) + 1)
    }

    /// Writes `plan-<round>.csv` with the draws each stratum needs next.
    pub fn plan(&self, round: u32, trials: u64) -> Result<PlanFile> {
        let _lock = AuditLock::acquire(&self.dir)?;
        let expected = self.next_round()?;
        if round != expected {
            return Err(self.state_error(format!("the next round to plan is {expected}, not {round}")));
        }
        let state = self.replay(None)?;
        for s in [1u32, 2] {
            if round > 1
                && self.transcript_path(round - 1, s).exists()
                && state.last_round(s as usize - 1) != round - 1
            {
                return Err(self.state_error(format!("round {} of stratum {s} has not been recorded", round - 1)));
            }
        }
        let assessment = self.assess(AssessOptions::default())?;
        let mut plan = PlanFile::default();
        for a in &assessment.strata {
            if assessment.method == CombineMethod::Partition && a.status != StratumStatus::Sampling
                || matches!(a.status, StratumStatus::FullHandCount | StratumStatus::HandCounted)
            {
                continue;
            }
            let s = a.stratum as usize - 1;
            let drawn = self.draws_before(round, a.stratum)?;
            let new_draws = if s == COMPARISON {
                self.comparison_draws(a)?
            } else {
                self.polling_draws(&state, drawn, trials, round)?
            };
            plan.rows.push(PlanRow {
                round,
                stratum: a.stratum,
                kind: if s == COMPARISON {
                    hybrid_rla_core::model::AuditKind::Comparison
                } else {
                    hybrid_rla_core::model::AuditKind::Polling
                },
                drawn,
                new_draws,
            });
        }
        write(&self.plan_path(round), &plan.emit())?;
        Ok(plan)
    }

    /// Further error-free draws that would bring the comparison p-value to its limit.
    fn comparison_draws(&self, a: &StratumAssessment) -> Result<u64> {
        if a.pvalue <= a.alpha {
            return Ok(0);
        }
        let t = a.lambda / self.total_bound;
        if !(t > 0.0) {
            return Ok(0);
        }
        if t >= 1.0 {
            return Ok(1);
        }
        Ok(((a.alpha / a.pvalue).ln() / (1.0 - t).ln()).ceil().max(1.0) as u64)
    }

    /// 90th percentile of the polling stopping size when the reported
    /// shares are true, less what has been drawn already.
    fn polling_draws(&self, state: &AuditState, drawn: u64, trials: u64, round: u32) -> Result<u64> {
        let n = self.polling.ballots;
        let remaining = n - drawn.min(n);
        let votes = &self.contest.strata()[POLLING].votes;
        let mut target = 0u64;
        for (pair, c) in self.margins.pairs().iter().zip(self.polling_thresholds(state.thresholds(POLLING))) {
            let truth = PollingPopulation::new(n, votes[pair.winner], votes[pair.loser])?;
            let mut w = PollingWorkload::new(
                truth,
                c,
                self.config.allocation.alpha2,
                geometric_schedule(10.min(n), 1.1, n),
            )?;
            w.method = self.config.polling_test;
            let summary = polling_summary(&w, &format!("{}-plan-{round}", self.seed_base()?), trials.max(1))?;
            target = target.max(summary.q90);
        }
        let extra = target.saturating_sub(drawn).max(drawn.div_ceil(2)).max(1);
        Ok(extra.min(remaining))
    }

    fn read_plan(&self, round: u32) -> Result<PlanFile> {
        let p = self.plan_path(round);
        if !p.exists() {
            return Err(self.state_error(format!("no plan for round {round}; run `plan` first")));
        }
        PlanFile::parse(&p.display().to_string(), &read(&p)?)
    }

    /// Draws the planned sample, writing transcripts and the parameter file.
    pub fn draw(&self, round: u32, seed_override: Option<&str>) -> Result<Vec<TranscriptFile>> {
        let _lock = AuditLock::acquire(&self.dir)?;
        if let Some(seed) = seed_override {
            if !self.existing_transcripts()?.is_empty() {
                return Err(self.state_error("seed override refused: draws have already been made"));
            }
            if seed.is_empty() || seed.contains(['\t', '\n', '\r']) {
                return Err(CliError::Validation("seed must be non-empty and on one line".into()));
            }
            self.append_log(LogEvent::SeedOverride(seed.to_string()), "seed replaced before the first draw")?;
        }
        let plan = self.read_plan(round)?;
        let mut transcripts = Vec::new();
        let mut params = ParameterFile::default();
        for row in &plan.rows {
            if row.round != round {
                return Err(self.state_error(format!("plan-{round}.csv lists round {}", row.round)));
            }
            if self.transcript_path(round, row.stratum).exists() {
                return Err(self.state_error(format!("round {round} of stratum {} was already drawn", row.stratum)));
            }
            let drawn = self.draws_before(round, row.stratum)?;
            if drawn != row.drawn {
                return Err(self.state_error(format!(
                    "plan says {} earlier draws in stratum {}, transcripts hold {drawn}",
                    row.drawn, row.stratum
                )));
            }
            if row.new_draws == 0 {
                continue;
            }
            let seed = self.stratum_seed(row.stratum)?;
            let (manifest, draws) = match row.stratum {
                1 => {
                    let runs: Vec<WeightedRun> = self
                        .comparison
                        .batches
                        .iter()
                        .zip(&self.bounds)
                        .map(|(r, b)| WeightedRun {
                            first_id: r.first_id,
                            count: r.count,
                            bound: *b,
                        })
                        .collect();
                    let mut sampler = PpebSampler::new(&seed, &runs)?;
                    sampler.skip_to(drawn);
                    (&self.comparison, sampler.take(row.new_draws))
                }
                2 => {
                    if drawn + row.new_draws > self.polling.ballots {
                        return Err(CliError::Validation(format!(
                            "plan asks for {} more ballots; only {} remain undrawn",
                            row.new_draws,
                            self.polling.ballots - drawn
                        )));
                    }
                    let mut sampler = SrsSampler::new(&seed, self.polling.ballots);
                    sampler.take(drawn)?;
                    (&self.polling, sampler.take(row.new_draws)?)
                }
                s => return Err(CliError::Validation(format!("plan names stratum {s}"))),
            };
            let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
            let counties: Vec<&str> = match row.stratum {
                1 => manifest.batches.iter().map(|r| r.county.as_str()).collect(),
                _ => manifest.blocks.iter().map(|b| b.county.as_str()).collect(),
            };
            for d in &draws {
                let county = manifest.county_of(d.selected).unwrap_or("");
                let i = counties.iter().position(|c| *c == county).unwrap_or(0);
                *counts.entry(i).or_default() += 1;
            }
            let mut seen: Vec<&str> = Vec::new();
            let mut merged: Vec<(String, u64)> = Vec::new();
            for (i, n) in counts {
                let name = counties[i];
                match seen.iter().position(|c| *c == name) {
                    Some(j) => merged[j].1 += n,
                    None => {
                        seen.push(name);
                        merged.push((name.to_string(), n));
                    }
                }
            }
            params.rows.extend(merged.into_iter().map(|(county, count)| ParameterRow {
                round,
                stratum: row.stratum,
                county,
                count,
            }));
            let t = TranscriptFile {
                rows: draws
                    .iter()
                    .map(|d| crate::formats::TranscriptRow {
                        draw_index: d.index,
                        digest_hex: hybrid_rla_core::sampling::hex_digest(&d.digest),
                        selected_id: d.selected,
                    })
                    .collect(),
            };
            write(&self.transcript_path(round, row.stratum), &t.emit())?;
            transcripts.push(t);
        }
        write(&self.path(&format!("parameters-{round}.csv")), &params.emit())?;
        Ok(transcripts)
    }

    /// Checks audited results against the transcript and logs the round.
    pub fn record(&self, round: u32, stratum: u32, file: &Path) -> Result<()> {
        let _lock = AuditLock::acquire(&self.dir)?;
        let transcript = self
            .read_transcript(round, stratum)?
            .ok_or_else(|| self.state_error(format!("no draws for round {round} of stratum {stratum}")))?;
        let dest = self.round_path(round, stratum);
        if dest.exists() {
            return Err(self.state_error(format!("round {round} of stratum {stratum} is already recorded")));
        }
        let name = file.display().to_string();
        let text = read(file)?;
        let by_index: BTreeMap<u64, u64> = transcript.rows.iter().map(|r| (r.draw_index, r.selected_id)).collect();
        let mut seen = BTreeMap::new();
        let mut check = |row_round: u32, draw_index: u64, id: u64, line: usize| -> Result<()> {
            if row_round != round {
                return Err(CliError::Validation(format!("{name}: row {line} is for round {row_round}, not {round}")));
            }
            match by_index.get(&draw_index) {
                None => Err(CliError::Validation(format!(
                    "{name}: row {line}: draw {draw_index} is not in the round {round} transcript"
                ))),
                Some(&sel) if sel != id => Err(CliError::Validation(format!(
                    "{name}: row {line}: draw {draw_index} selected {sel}, file says {id}"
                ))),
                Some(_) if seen.insert(draw_index, ()).is_some() => {
                    Err(CliError::Validation(format!("{name}: row {line}: draw {draw_index} listed twice")))
                }
                Some(_) => Ok(()),
            }
        };
        let seats = self.contest.winners().len();
        let normalized = match stratum {
            1 => {
                let mut f = ComparisonRoundFile::parse(&name, &text)?;
                if f.candidates != self.contest.candidates() {
                    return Err(CliError::Validation(format!(
                        "{name}: candidate columns must be `{}`",
                        self.contest.candidates().join(",")
                    )));
                }
                for (i, r) in f.rows.iter().enumerate() {
                    check(r.round, r.draw_index, r.batch_id, i + 1)?;
                    let batch = self.comparison.batch(r.batch_id).expect("drawn from the manifest");
                    let total: u64 = r.votes.iter().sum();
                    if r.votes.iter().any(|&v| v > batch.ballots) || total > seats as u64 * batch.ballots {
                        return Err(CliError::Validation(format!(
                            "{name}: row {}: votes exceed the {} ballots of batch {}",
                            i + 1,
                            batch.ballots,
                            r.batch_id
                        )));
                    }
                }
                f.rows.sort_by_key(|r| r.draw_index);
                f.emit()
            }
            2 => {
                let mut f = PollingRoundFile::parse(&name, &text)?;
                for (i, r) in f.rows.iter().enumerate() {
                    check(r.round, r.draw_index, r.ballot_id, i + 1)?;
                    for (j, v) in r.votes.iter().enumerate() {
                        if self.contest.candidate_index(v).is_none() {
                            return Err(CliError::Validation(format!("{name}: row {}: unknown candidate `{v}`", i + 1)));
                        }
                        if r.votes[..j].contains(v) {
                            return Err(CliError::Validation(format!("{name}: row {}: `{v}` marked twice", i + 1)));
                        }
                    }
                    if r.votes.len() > seats {
                        return Err(CliError::Validation(format!(
                            "{name}: row {}: {} marks in a vote-for-{seats} contest",
                            i + 1,
                            r.votes.len()
                        )));
                    }
                }
                f.rows.sort_by_key(|r| r.draw_index);
                f.emit()
            }
            s => return Err(CliError::Validation(format!("no stratum {s}; use 1 or 2"))),
        };
        if seen.len() != by_index.len() {
            return Err(CliError::Validation(format!(
                "{name}: {} of {} drawn units recorded",
                seen.len(),
                by_index.len()
            )));
        }
        let event = AuditEvent::RoundRecorded {
            stratum: stratum as usize - 1,
            round,
        };
        let next = audit_state_step(&self.replay(None)?, event.clone()).map_err(|e| self.lift(e))?;
        let dir = self.path("rounds");
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        write(&dest, &normalized)?;
        let note = next.log().last().map(|e| e.note.clone()).unwrap_or_default();
        self.append_log(LogEvent::Audit(event), &note)
    }

    /// Starts a full hand count of `stratum`, or records its result.
    pub fn escalate(&self, stratum: u32, tally: Option<&Path>) -> Result<String> {
        let _lock = AuditLock::acquire(&self.dir)?;
        if !(1..=2).contains(&stratum) {
            return Err(CliError::Validation(format!("no stratum {stratum}; use 1 or 2")));
        }
        let s = stratum as usize - 1;
        let event = match tally {
            None => AuditEvent::EscalationStarted { stratum: s },
            Some(file) => {
                let name = file.display().to_string();
                let text = read(file)?;
                let t = TallyFile::parse(&name, &text)?;
                let cands = self.contest.candidates();
                let mut actual = vec![None; cands.len()];
                for (c, v) in &t.rows {
                    let i = self
                        .contest
                        .candidate_index(c)
                        .ok_or_else(|| CliError::Validation(format!("{name}: unknown candidate `{c}`")))?;
                    if actual[i].replace(*v).is_some() {
                        return Err(CliError::Validation(format!("{name}: `{c}` listed twice")));
                    }
                }
                let actual: Vec<u64> = actual
                    .into_iter()
                    .zip(cands)
                    .map(|(v, c)| v.ok_or_else(|| CliError::Validation(format!("{name}: no count for `{c}`"))))
                    .collect::<Result<_>>()?;
                let ballots = self.margins.stratum_ballots(s);
                let seats = self.contest.winners().len() as u64;
                if actual.iter().sum::<u64>() > seats * ballots {
                    return Err(CliError::Validation(format!(
                        "{name}: counts exceed the {ballots} ballots of stratum {stratum}"
                    )));
                }
                write(&self.path(&format!("tally-{stratum}.csv")), &t.emit())?;
                AuditEvent::HandCountComplete {
                    stratum: s,
                    overstatements: self.margins.overstatements(s, &actual),
                }
            }
        };
        let next = audit_state_step(&self.replay(None)?, event.clone()).map_err(|e| self.lift(e))?;
        let note = next.log().last().map(|e| e.note.clone()).unwrap_or_default();
        self.append_log(LogEvent::Audit(event), &note)?;
        Ok(note)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_events_round_trip() {
        let events = [
            LogEvent::Audit(AuditEvent::RoundRecorded { stratum: 0, round: 3 }),
            LogEvent::Audit(AuditEvent::Rejected { stratum: 1, round: 2 }),
            LogEvent::Audit(AuditEvent::EscalationStarted { stratum: 1 }),
            LogEvent::Audit(AuditEvent::HandCountComplete {
                stratum: 0,
                overstatements: vec![18_000, -3],
            }),
            LogEvent::SeedOverride("new seed 42".into()),
            LogEvent::Info,
        ];
        for e in events {
            assert_eq!(LogEvent::decode(&e.encode()), Some(e));
        }
        assert_eq!(LogEvent::decode("round-recorded 3 1"), None);
        assert_eq!(LogEvent::decode("hand-count-complete 1 x"), None);
        assert_eq!(LogEvent::decode("seed-override"), None);
    }

    #[test]
    fn p_value_formatting() {
        assert_eq!(fmt_p(1.0), "1.000000");
        assert_eq!(fmt_p(0.0), "0.000000");
        assert_eq!(fmt_p(1.5e-7), "1.5000e-7");
    }
}
