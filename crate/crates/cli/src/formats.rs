//! CSV file formats.
//!
//! Every file starts with a schema tag line `#schema <kind> v<version>`,
//! followed by a one-line header and the records. Numbers are plain
//! decimal strings. Parse errors carry the line and column of the
//! offending field.

use std::str::FromStr;

use hybrid_rla_core::model::{AuditKind, BallotBlock, BatchRun};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// A parsed CSV body with positions kept for diagnostics.
#[derive(Debug)]
pub struct Table {
    file: String,
    header: Vec<String>,
    rows: Vec<Row>,
}

#[derive(Debug)]
pub struct Row {
    file: String,
    line: u64,
    fields: Vec<String>,
    columns: Vec<u64>,
}

impl Row {
    pub fn line(&self) -> u64 {
        self.line
    }

    pub fn error(&self, col: usize, message: impl Into<String>) -> CliError {
        CliError::Parse {
            file: self.file.clone(),
            line: self.line,
            column: self.columns.get(col).copied().unwrap_or(1),
            message: message.into(),
        }
    }

    pub fn str(&self, col: usize) -> &str {
        &self.fields[col]
    }

    pub fn parse<T: FromStr>(&self, col: usize, what: &str) -> Result<T> {
        let raw = self.str(col);
        raw.parse()
            .map_err(|_| self.error(col, format!("expected {what}, found `{raw}`")))
    }
}

impl Table {
    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    fn header_error(&self, message: impl Into<String>) -> CliError {
        CliError::Parse {
            file: self.file.clone(),
            line: 2,
            column: 1,
            message: message.into(),
        }
    }

    /// Requires the header to start with `fixed`; returns the remaining names.
    pub fn expect_header(&self, fixed: &[&str]) -> Result<Vec<String>> {
        let ok = self.header.len() >= fixed.len()
            && self.header.iter().zip(fixed).all(|(h, f)| h == f);
        if !ok {
            return Err(self.header_error(format!(
                "header must begin with `{}`, found `{}`",
                fixed.join(","),
                self.header.join(",")
            )));
        }
        Ok(self.header[fixed.len()..].to_vec())
    }

    pub fn expect_exact_header(&self, fixed: &[&str]) -> Result<()> {
        let extra = self.expect_header(fixed)?;
        if !extra.is_empty() {
            return Err(self.header_error(format!("unexpected columns `{}`", extra.join(","))));
        }
        Ok(())
    }
}

fn schema_line(kind: &str) -> String {
    format!("#schema {kind} v{SCHEMA_VERSION}")
}

/// Checks the schema tag and splits the body into rows.
pub fn read_table(file: &str, text: &str, kind: &str) -> Result<Table> {
    let (first, rest) = match text.find('\n') {
        Some(i) => (&text[..i], &text[i + 1..]),
        None => (text, ""),
    };
    let expected = schema_line(kind);
    if first.trim_end_matches('\r') != expected {
        return Err(CliError::Parse {
            file: file.to_string(),
            line: 1,
            column: 1,
            message: format!("expected schema tag `{expected}`"),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(rest.as_bytes());
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line()) + 1;
            CliError::Parse {
                file: file.to_string(),
                line,
                column: 1,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line()) + 1;
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        match &header {
            None => {
                if fields.iter().any(|f| f.is_empty()) {
                    return Err(CliError::Parse {
                        file: file.to_string(),
                        line,
                        column: 1,
                        message: "empty column name in header".into(),
                    });
                }
                header = Some(fields);
            }
            Some(h) => {
                let columns: Vec<u64> = (0..fields.len())
                    .map(|i| rec.range(i).map_or(1, |r| (r.start + i + 1) as u64))
                    .collect();
                let row = Row {
                    file: file.to_string(),
                    line,
                    fields,
                    columns,
                };
                if row.fields.len() != h.len() {
                    return Err(row.error(
                        row.fields.len().min(h.len()),
                        format!("expected {} fields, found {}", h.len(), row.fields.len()),
                    ));
                }
                rows.push(row);
            }
        }
    }
    let header = header.ok_or_else(|| CliError::Parse {
        file: file.to_string(),
        line: 2,
        column: 1,
        message: "missing header line".into(),
    })?;
    Ok(Table {
        file: file.to_string(),
        header,
        rows,
    })
}

/// Schema tag, header and records.
pub fn write_table(kind: &str, header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input");
    format!("{}\n{body}", schema_line(kind))
}

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn with_candidates(fixed: &[&str], candidates: &[String]) -> Vec<String> {
    let mut h = strings(fixed);
    h.extend(candidates.iter().cloned());
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Winner,
    Loser,
    Other,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Winner => "winner",
            Role::Loser => "loser",
            Role::Other => "other",
        }
    }
}

impl FromStr for Role {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "winner" => Ok(Role::Winner),
            "loser" => Ok(Role::Loser),
            "other" => Ok(Role::Other),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContestRow {
    pub stratum: u32,
    pub candidate: String,
    pub role: Role,
    pub votes: u64,
}

/// Reported results: one row per stratum and candidate.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContestFile {
    pub rows: Vec<ContestRow>,
}

impl ContestFile {
    pub const KIND: &'static str = "contest";
    const HEADER: [&'static str; 4] = ["stratum", "candidate", "role", "votes"];

    pub fn parse(file: &str, text: &str) -> Result<Self> {
        let t = read_table(file, text, Self::KIND)?;
        t.expect_exact_header(&Self::HEADER)?;
        let mut rows = Vec::with_capacity(t.rows().len());
        for r in t.rows() {
            rows.push(ContestRow {
                stratum: r.parse(0, "a stratum number")?,
                candidate: r.str(1).to_string(),
                role: r.parse(2, "winner, loser or other")?,
                votes: r.parse(3, "a vote count")?,
            });
        }
        Ok(Self { rows })
    }

    pub fn emit(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.stratum.to_string(),
                    r.candidate.clone(),
                    r.role.as_str().to_string(),
                    r.votes.to_string(),
                ]
            })
            .collect();
        write_table(Self::KIND, &strings(&Self::HEADER), &rows)
    }
}

/// Batches of a comparison stratum, as runs of identical batches.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ComparisonManifestFile {
    pub candidates: Vec<String>,
    pub runs: Vec<BatchRun>,
}

impl ComparisonManifestFile {
    pub const KIND: &'static str = "comparison-manifest";
    const FIXED: [&'static str; 4] = ["county", "first_id", "count", "ballots"];

    pub fn parse(file: &str, text: &str) -> Result<Self> {
        let t = read_table(file, text, Self::KIND)?;
        let candidates = t.expect_header(&Self::FIXED)?;
        let mut runs = Vec::with_capacity(t.rows().len());
        for r in t.rows() {
            let reported = (0..candidates.len())
                .map(|i| r.parse(4 + i, "a vote count"))
                .collect::<Result<Vec<u64>>>()?;
            runs.push(BatchRun {
                county: r.str(0).to_string(),
                first_id: r.parse(1, "a batch id")?,
                count: r.parse(2, "a batch count")?,
                ballots: r.parse(3, "a ballot count")?,
                reported,
            });
        }
        Ok(Self { candidates, runs })
    }

    pub fn emit(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|r| {
                let mut v = vec![
                    r.county.clone(),
                    r.first_id.to_string(),
                    r.count.to_string(),
                    r.ballots.to_string(),
                ];
                v.extend(r.reported.iter().map(u64::to_string));
                v
            })
            .collect();
        write_table(Self::KIND, &with_candidates(&Self::FIXED, &self.candidates), &rows)
    }
}

/// Ballot ranges per county of a polling stratum.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PollingManifestFile {
    pub blocks: Vec<BallotBlock>,
}

impl PollingManifestFile {
    pub const KIND: &'static str = "polling-manifest";
    const HEADER: [&'static str; 3] = ["county", "first_id", "count"];

    pub fn parse(file: &str, text: &str) -> Result<Self> {
        let t = read_table(file, text, Self::KIND)?;
        t.expect_exact_header(&Self::HEADER)?;
        let mut blocks = Vec::with_capacity(t.rows().len());
        for r in t.rows() {
            blocks.push(BallotBlock {
                county: r.str(0).to_string(),
                first_id: r.parse(1, "a ballot id")?,
                count: r.parse(2, "a ballot count")?,
            });
        }
        Ok(Self { blocks })
    }

    pub fn ballots(&self) -> u64 {
        self.blocks.iter().map(|b| b.count).sum()
    }

    pub fn emit(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .blocks
            .iter()
            .map(|b| vec![b.county.clone(), b.first_id.to_string(), b.count.to_string()])
            .collect();
        write_table(Self::KIND, &strings(&Self::HEADER), &rows)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonAudit {
    pub round: u32,
    pub draw_index: u64,
    pub batch_id: u64,
    /// Hand-counted votes per candidate.
    pub votes: Vec<u64>,
}

/// Audited batches of one round in a comparison stratum.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ComparisonRoundFile {
    pub candidates: Vec<String>,
    pub rows: Vec<ComparisonAudit>,
}

impl ComparisonRoundFile {
    pub const KIND: &'static str = "comparison-round";
    const FIXED: [&'static str; 3] = ["round", "draw_index", "batch_id"];

    pub fn parse(file: &str, text: &str) -> Result<Self> {
        let t = read_table(file, text, Self::KIND)?;
        let candidates = t.expect_header(&Self::FIXED)?;
        let mut rows = Vec::with_capacity(t.rows().len());
        for r in t.rows() {
            rows.push(ComparisonAudit {
                round: r.parse(0, "a round number")?,
                draw_index: r.parse(1, "a draw index")?,
                batch_id: r.parse(2, "a batch id")?,
                votes: (0..candidates.len())
                    .map(|i| r.parse(3 + i, "a vote count"))
                    .collect::<Result<_>>()?,
            });
        }
        Ok(Self { candidates, rows })
    }

    pub fn emit(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut v = vec![r.round.to_string(), r.draw_index.to_string(), r.batch_id.to_string()];
                v.extend(r.votes.iter().map(u64::to_string));
                v
            })
            .collect();
        write_table(Self::KIND, &with_candidates(&Self::FIXED, &self.candidates), &rows)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PollingAudit {
    pub round: u32,
    pub draw_index: u64,
    pub ballot_id: u64,
    /// Candidates marked on the ballot; empty for none.
    pub votes: Vec<String>,
}

/// Audited ballots of one round in a polling stratum. Votes are
/// `;`-separated candidate names.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PollingRoundFile {
    pub rows: Vec<PollingAudit>,
}

impl PollingRoundFile {
    pub const KIND: &'static str = "polling-round";
    const HEADER: [&'static str; 4] = ["round", "draw_index", "ballot_id", "votes"];

    pub fn parse(file: &str, text: &str) -> Result<Self> {
        let t = read_table(file, text, Self::KIND)?;
        t.expect_exact_header(&Self::HEADER)?;
        let mut rows = Vec::with_capacity(t.rows().len());
        for r in t.rows() {
            let raw = r.str(3);
            let votes = if raw.is_empty() {
                Vec::new()
            } else {
                raw.split(';').map(str::to_string).collect()
            };
            rows.push(PollingAudit {
                round: r.parse(0, "a round number")?,
                draw_index: r.parse(1, "a draw index")?,
                ballot_id: r.parse(2, "a ballot id")?,
                votes,
            });
        }
        Ok(Self { rows })
    }

    pub fn emit(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.round.to_string(),
                    r.draw_index.to_string(),
                    r.ballot_id.to_string(),
                    r.votes.join(";"),
                ]
            })
            .collect();
        write_table(Self::KIND, &strings(&Self::HEADER), &rows)
    }
}

/// Full hand-count totals of one stratum.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TallyFile {
    pub rows: Vec<(String, u64)>,
}

impl TallyFile {
    pub const KIND: &'static str = "tally";
    const HEADER: [&'static str; 2] = ["candidate", "votes"];

    pub fn parse(file: &str, text: &str) -> Result<Self> {
        let t = read_table(file, text, Self::KIND)?;
        t.expect_exact_header(&Self::HEADER)?;
        let rows = t
            .rows()
            .iter()
            .map(|r| Ok((r.str(0).to_string(), r.parse(1, "a vote count")?)))
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn emit(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(c, v)| vec![c.clone(), v.to_string()])
            .collect();
        write_table(Self::KIND, &strings(&Self::HEADER), &rows)
    }
}

fn kind_str(kind: AuditKind) -> &'static str {
    kind.as_str()
}

fn parse_kind(r: &Row, col: usize) -> Result<AuditKind> {
    match r.str(col) {
        "comparison" => Ok(AuditKind::Comparison),
        "polling" => Ok(AuditKind::Polling),
        other => Err(r.error(col, format!("expected comparison or polling, found `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanRow {
    pub round: u32,
    pub stratum: u32,
    pub kind: AuditKind,
    /// Draws made before this round.
    pub drawn: u64,
    /// Draws to make in this round.
    pub new_draws: u64,
}

/// Sample sizes for one round.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PlanFile {
    pub rows: Vec<PlanRow>,
}

impl PlanFile {
    pub const KIND: &'static str = "plan";
    const HEADER: [&'static str; 5] = ["round", "stratum", "kind", "drawn", "new_draws"];

    pub fn parse(file: &str, text: &str) -> Result<Self> {
        let t = read_table(file, text, Self::KIND)?;
        t.expect_exact_header(&Self::HEADER)?;
        let rows = t
            .rows()
            .iter()
            .map(|r| {
                Ok(PlanRow {
                    round: r.parse(0, "a round number")?,
                    stratum: r.parse(1, "a stratum number")?,
                    kind: parse_kind(r, 2)?,
                    drawn: r.parse(3, "a draw count")?,
                    new_draws: r.parse(4, "a draw count")?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn emit(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.round.to_string(),
                    r.stratum.to_string(),
                    kind_str(r.kind).to_string(),
                    r.drawn.to_string(),
                    r.new_draws.to_string(),
                ]
            })
            .collect();
        write_table(Self::KIND, &strings(&Self::HEADER), &rows)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterRow {
    pub round: u32,
    pub stratum: u32,
    pub county: String,
    pub count: u64,
}

/// Per-county sample counts of a round, for upload to external audit software.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParameterFile {
    pub rows: Vec<ParameterRow>,
}

impl ParameterFile {
    pub const KIND: &'static str = "parameters";
    const HEADER: [&'static str; 4] = ["round", "stratum", "county", "count"];

    pub fn parse(file: &str, text: &str) -> Result<Self> {
        let t = read_table(file, text, Self::KIND)?;
        t.expect_exact_header(&Self::HEADER)?;
        let rows = t
            .rows()
            .iter()
            .map(|r| {
                Ok(ParameterRow {
                    round: r.parse(0, "a round number")?,
                    stratum: r.parse(1, "a stratum number")?,
                    county: r.str(2).to_string(),
                    count: r.parse(3, "a ballot count")?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn emit(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![r.round.to_string(), r.stratum.to_string(), r.county.clone(), r.count.to_string()])
            .collect();
        write_table(Self::KIND, &strings(&Self::HEADER), &rows)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptRow {
    pub draw_index: u64,
    pub digest_hex: String,
    pub selected_id: u64,
}

/// Draws of one round in one stratum.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TranscriptFile {
    pub rows: Vec<TranscriptRow>,
}

impl TranscriptFile {
    pub const KIND: &'static str = "transcript";
    const HEADER: [&'static str; 3] = ["draw_index", "digest_hex", "selected_id"];

    pub fn from_plan(plan: &hybrid_rla_core::sampling::SamplePlan) -> Self {
        Self {
            rows: plan
                .draws
                .iter()
                .map(|d| TranscriptRow {
                    draw_index: d.index,
                    digest_hex: hybrid_rla_core::sampling::hex_digest(&d.digest),
                    selected_id: d.selected,
                })
                .collect(),
        }
    }

    pub fn parse(file: &str, text: &str) -> Result<Self> {
        let t = read_table(file, text, Self::KIND)?;
        t.expect_exact_header(&Self::HEADER)?;
        let rows = t
            .rows()
            .iter()
            .map(|r| {
                let digest_hex = r.str(1).to_string();
                if digest_hex.len() != 64 || !digest_hex.bytes().all(|b| b.is_ascii_hexdigit()) {
                    return Err(r.error(1, "expected a 64-digit hex digest"));
                }
                Ok(TranscriptRow {
                    draw_index: r.parse(0, "a draw index")?,
                    digest_hex,
                    selected_id: r.parse(2, "a selected id")?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn emit(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![r.draw_index.to_string(), r.digest_hex.clone(), r.selected_id.to_string()])
            .collect();
        write_table(Self::KIND, &strings(&Self::HEADER), &rows)
    }
}

/// Actual votes of ballots or batches whose audit result differs from the
/// reported one; used to drive replays and simulations.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ComparisonTruthFile {
    pub candidates: Vec<String>,
    /// Runs of batches sharing the same actual votes.
    pub runs: Vec<(u64, u64, Vec<u64>)>,
}

impl ComparisonTruthFile {
    pub const KIND: &'static str = "comparison-truth";
    const FIXED: [&'static str; 2] = ["first_id", "count"];

    pub fn parse(file: &str, text: &str) -> Result<Self> {
        let t = read_table(file, text, Self::KIND)?;
        let candidates = t.expect_header(&Self::FIXED)?;
        let runs = t
            .rows()
            .iter()
            .map(|r| {
                Ok((
                    r.parse(0, "a batch id")?,
                    r.parse(1, "a batch count")?,
                    (0..candidates.len())
                        .map(|i| r.parse(2 + i, "a vote count"))
                        .collect::<Result<Vec<u64>>>()?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self { candidates, runs })
    }

    pub fn emit(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|(first, count, votes)| {
                let mut v = vec![first.to_string(), count.to_string()];
                v.extend(votes.iter().map(u64::to_string));
                v
            })
            .collect();
        write_table(Self::KIND, &with_candidates(&Self::FIXED, &self.candidates), &rows)
    }

    pub fn actual(&self, id: u64) -> Option<&[u64]> {
        self.runs
            .iter()
            .find(|(first, count, _)| id >= *first && id < first + count)
            .map(|(_, _, v)| v.as_slice())
    }
}

/// Actual marks on every ballot of a polling stratum, as runs of ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PollingTruthFile {
    pub runs: Vec<(u64, u64, Vec<String>)>,
}

impl PollingTruthFile {
    pub const KIND: &'static str = "polling-truth";
    const HEADER: [&'static str; 3] = ["first_id", "count", "votes"];

    pub fn parse(file: &str, text: &str) -> Result<Self> {
        let t = read_table(file, text, Self::KIND)?;
        t.expect_exact_header(&Self::HEADER)?;
        let runs = t
            .rows()
            .iter()
            .map(|r| {
                let raw = r.str(2);
                let votes = if raw.is_empty() {
                    Vec::new()
                } else {
                    raw.split(';').map(str::to_string).collect()
                };
                Ok((r.parse(0, "a ballot id")?, r.parse(1, "a ballot count")?, votes))
            })
            .collect::<Result<_>>()?;
        Ok(Self { runs })
    }

    pub fn emit(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|(first, count, votes)| vec![first.to_string(), count.to_string(), votes.join(";")])
            .collect();
        write_table(Self::KIND, &strings(&Self::HEADER), &rows)
    }

    pub fn actual(&self, id: u64) -> Option<&[String]> {
        self.runs
            .iter()
            .find(|(first, count, _)| id >= *first && id < first + count)
            .map(|(_, _, v)| v.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_tag_is_checked() {
        let err = ContestFile::parse("c.csv", "stratum,candidate,role,votes\n").unwrap_err();
        assert_eq!(err.to_string(), "c.csv:1:1: expected schema tag `#schema contest v1`");
    }

    #[test]
    fn field_errors_point_at_line_and_column() {
        let text = "#schema contest v1\nstratum,candidate,role,votes\n1,alice,winner,10\n1,bob,lose,5\n";
        let err = ContestFile::parse("c.csv", text).unwrap_err();
        assert_eq!(err.to_string(), "c.csv:4:7: expected winner, loser or other, found `lose`");
        let text = "#schema contest v1\nstratum,candidate,role,votes\n1,alice,winner,x\n";
        let err = ContestFile::parse("c.csv", text).unwrap_err();
        assert_eq!(err.to_string(), "c.csv:3:16: expected a vote count, found `x`");
    }

    #[test]
    fn short_rows_and_bad_headers() {
        let text = "#schema polling-manifest v1\ncounty,first_id,count\nA,1\n";
        let err = PollingManifestFile::parse("p.csv", text).unwrap_err();
        assert!(err.to_string().starts_with("p.csv:3:"), "{err}");
        let text = "#schema polling-manifest v1\ncounty,first,count\n";
        let err = PollingManifestFile::parse("p.csv", text).unwrap_err();
        assert!(err.to_string().starts_with("p.csv:2:1: header must begin"), "{err}");
    }

    #[test]
    fn quoted_county_names_survive() {
        let f = PollingManifestFile {
            blocks: vec![BallotBlock {
                county: "Lake, North".into(),
                first_id: 1,
                count: 10,
            }],
        };
        let text = f.emit();
        assert!(text.contains("\"Lake, North\""));
        assert_eq!(PollingManifestFile::parse("p", &text).unwrap(), f);
    }

    #[test]
    fn empty_votes_field() {
        let f = PollingRoundFile {
            rows: vec![PollingAudit {
                round: 1,
                draw_index: 3,
                ballot_id: 9,
                votes: vec![],
            }],
        };
        assert_eq!(PollingRoundFile::parse("r", &f.emit()).unwrap(), f);
    }
}
