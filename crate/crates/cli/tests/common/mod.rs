//! Drives the command-line workflow on a copy of a fixture audit, answering
//! every draw from truth files.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use hybrid_rla::cli::run;
use hybrid_rla::formats::{
    ComparisonAudit, ComparisonManifestFile, ComparisonRoundFile, ComparisonTruthFile, PlanFile, PlanRow,
    PollingAudit, PollingRoundFile, PollingTruthFile, TallyFile, TranscriptFile,
};
use hybrid_rla_core::model::AuditKind;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

/// Runs the CLI in-process; returns (exit code, stdout, stderr).
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("hybrid-rla").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub struct Replay {
    _tmp: tempfile::TempDir,
    pub dir: PathBuf,
    pub cfg: String,
    manifest: ComparisonManifestFile,
    cmp_truth: ComparisonTruthFile,
    poll_truth: PollingTruthFile,
    drawn: [u64; 2],
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

impl Replay {
    /// Copies fixture directory `name` and runs `init`.
    pub fn new(name: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("audit");
        copy_dir(&fixture(name), &dir);
        let manifest = ComparisonManifestFile::parse("m", &read(&dir.join("comparison-manifest.csv"))).unwrap();
        let cmp_truth = ComparisonTruthFile::parse("t", &read(&dir.join("comparison-truth.csv"))).unwrap();
        let poll_truth = PollingTruthFile::parse("t", &read(&dir.join("polling-truth.csv"))).unwrap();
        let cfg = dir.join("audit.cfg").display().to_string();
        let r = Self {
            _tmp: tmp,
            dir,
            cfg,
            manifest,
            cmp_truth,
            poll_truth,
            drawn: [0, 0],
        };
        let (code, out, err) = r.cli(&["init"]);
        assert_eq!(code, 0, "init failed: {out}{err}");
        r
    }

    pub fn cli(&self, args: &[&str]) -> (i32, String, String) {
        let mut full = vec!["--config", self.cfg.as_str()];
        full.extend_from_slice(args);
        cli(&full)
    }

    fn actual_comparison(&self, id: u64) -> Vec<u64> {
        if let Some(v) = self.cmp_truth.actual(id) {
            return v.to_vec();
        }
        let run = self.manifest.runs.iter().find(|r| r.contains(id)).expect("id in manifest");
        run.reported.clone()
    }

    /// Writes the plan for `round`, draws it, records audited results from
    /// the truth files, and returns the `assess` output.
    pub fn round(&mut self, round: u32, new_draws: [u64; 2]) -> String {
        let mut plan = PlanFile::default();
        for s in 0..2 {
            if new_draws[s] > 0 {
                plan.rows.push(PlanRow {
                    round,
                    stratum: s as u32 + 1,
                    kind: if s == 0 { AuditKind::Comparison } else { AuditKind::Polling },
                    drawn: self.drawn[s],
                    new_draws: new_draws[s],
                });
            }
        }
        fs::write(self.dir.join(format!("plan-{round}.csv")), plan.emit()).unwrap();
        let r = round.to_string();
        let (code, out, err) = self.cli(&["draw", "--round", &r]);
        assert_eq!(code, 0, "draw failed: {out}{err}");
        for s in 0..2usize {
            if new_draws[s] == 0 {
                continue;
            }
            self.drawn[s] += new_draws[s];
            let stratum = s as u32 + 1;
            let t = TranscriptFile::parse("t", &read(&self.dir.join(format!("transcript-{round}-{stratum}.csv")))).unwrap();
            let text = if s == 0 {
                ComparisonRoundFile {
                    candidates: self.manifest.candidates.clone(),
                    rows: t
                        .rows
                        .iter()
                        .map(|d| ComparisonAudit {
                            round,
                            draw_index: d.draw_index,
                            batch_id: d.selected_id,
                            votes: self.actual_comparison(d.selected_id),
                        })
                        .collect(),
                }
                .emit()
            } else {
                PollingRoundFile {
                    rows: t
                        .rows
                        .iter()
                        .map(|d| PollingAudit {
                            round,
                            draw_index: d.draw_index,
                            ballot_id: d.selected_id,
                            votes: self.poll_truth.actual(d.selected_id).expect("ballot in truth").to_vec(),
                        })
                        .collect(),
                }
                .emit()
            };
            let file = self.dir.join(format!("audited-{round}-{stratum}.csv"));
            fs::write(&file, text).unwrap();
            let f = file.display().to_string();
            let (code, out, err) = self.cli(&["record", "--round", &r, "--stratum", &stratum.to_string(), "--file", &f]);
            assert_eq!(code, 0, "record failed: {out}{err}");
        }
        self.assess()
    }

    pub fn assess(&self) -> String {
        let (code, out, err) = self.cli(&["assess"]);
        assert_eq!(code, 0, "assess failed: {out}{err}");
        out
    }

    /// Actual totals of a stratum, from the truth files.
    pub fn true_tally(&self, stratum: u32) -> TallyFile {
        let cands = &self.manifest.candidates;
        let mut totals = vec![0u64; cands.len()];
        if stratum == 1 {
            for run in &self.manifest.runs {
                for (t, v) in totals.iter_mut().zip(&run.reported) {
                    *t += v * run.count;
                }
            }
            for (first, count, actual) in &self.cmp_truth.runs {
                for id in *first..first + count {
                    let reported = &self.manifest.runs.iter().find(|r| r.contains(id)).unwrap().reported;
                    for (i, t) in totals.iter_mut().enumerate() {
                        *t = *t + actual[i] - reported[i];
                    }
                }
            }
        } else {
            for (_, count, votes) in &self.poll_truth.runs {
                for v in votes {
                    let i = cands.iter().position(|c| c == v).unwrap();
                    totals[i] += count;
                }
            }
        }
        TallyFile {
            rows: cands.iter().cloned().zip(totals).collect(),
        }
    }

    /// Escalates `stratum` and records its full hand count; returns the escalate output.
    pub fn hand_count(&self, stratum: u32) -> String {
        let s = stratum.to_string();
        let (code, out, err) = self.cli(&["escalate", "--stratum", &s]);
        assert_eq!(code, 0, "escalate failed: {out}{err}");
        self.record_count(stratum)
    }

    /// Records the full hand count of a stratum already under escalation.
    pub fn record_count(&self, stratum: u32) -> String {
        let s = stratum.to_string();
        let file = self.dir.join(format!("count-{stratum}.csv"));
        fs::write(&file, self.true_tally(stratum).emit()).unwrap();
        let f = file.display().to_string();
        let (code, out, err) = self.cli(&["escalate", "--stratum", &s, "--tally", &f]);
        assert_eq!(code, 0, "tally failed: {out}{err}");
        out
    }
}

/// Status word and p-value of `stratum` in an `assess` report.
pub fn stratum_line(report: &str, stratum: u32) -> (String, f64, f64) {
    let line = report
        .lines()
        .find(|l| l.starts_with(&format!("stratum {stratum}:")))
        .unwrap_or_else(|| panic!("no stratum {stratum} in {report}"));
    let status = line.split_whitespace().nth(2).unwrap().to_string();
    let field = |key: &str| -> f64 {
        line.split_whitespace()
            .find_map(|w| w.strip_prefix(key))
            .unwrap()
            .parse()
            .unwrap()
    };
    (status, field("lambda="), field("p="))
}

pub fn decision(report: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix("decision: "))
        .unwrap()
        .to_string()
}
