//! Command-line surface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use hybrid_rla_core::polling::NullSearch;

use crate::config::AuditConfig;
use crate::error::{CliError, Result};
use crate::sim::{builtin_report, geometric_schedule, polling_summary};
use crate::workflow::{AssessOptions, Audit};

#[derive(Debug, Parser)]
#[command(name = "hybrid-rla", version, about = "Stratified hybrid risk-limiting audits")]
pub struct Cli {
    /// Audit configuration; the audit directory is the directory holding it.
    #[arg(long, global = true, default_value = "audit.cfg")]
    pub config: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the configuration and write the margin table.
    Init,
    /// Compute next-round sample sizes.
    Plan {
        #[arg(long)]
        round: u32,
        /// Simulations behind the polling estimate.
        #[arg(long, default_value_t = 200)]
        trials: u64,
    },
    /// Draw the planned sample.
    Draw {
        #[arg(long)]
        round: u32,
        /// Replace the configured seed; refused once draws exist.
        #[arg(long)]
        seed_override: Option<String>,
    },
    /// Ingest audited results for one stratum.
    Record {
        #[arg(long)]
        round: u32,
        #[arg(long)]
        stratum: u32,
        #[arg(long)]
        file: PathBuf,
    },
    /// Print p-values and the decision.
    Assess {
        #[arg(long)]
        round: Option<u32>,
        /// Scan every population on the null boundary.
        #[arg(long)]
        paranoid: bool,
        /// Points of the lambda grid; also turns on the combined p-value.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Start a full hand count of a stratum, or record its result.
    Escalate {
        #[arg(long)]
        stratum: u32,
        #[arg(long)]
        tally: Option<PathBuf>,
    },
    /// Estimate polling workload for the configured audit if the reported results are right.
    Simulate {
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long)]
        paranoid: bool,
    },
    /// Workloads of the built-in example elections.
    Report {
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Directory for report.txt and report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn io_out(e: std::io::Error) -> CliError {
    CliError::io(Path::new("<stdout>"), e)
}

fn simulate(config: &Path, trials: u64, paranoid: bool) -> Result<String> {
    let audit = Audit::open(config)?;
    let alloc = audit.config.allocation;
    let lambda = alloc.lambda1;
    let clean = hybrid_rla_core::comparison::clean_sample_size(lambda / audit.total_bound, alloc.alpha1)?;
    let mut text = format!(
        "stratum 1: error-free comparison audit stops after {clean} draws (U = {:.6})\n",
        audit.total_bound
    );
    let n = audit.polling.ballots;
    let votes = &audit.contest.strata()[1].votes;
    for p in audit.margins.pairs() {
        let c = hybrid_rla_core::polling::null_threshold(p.by_stratum[1], p.overall, 1.0 - lambda);
        let truth = hybrid_rla_core::simulation::PollingPopulation::new(n, votes[p.winner], votes[p.loser])?;
        let mut w = hybrid_rla_core::simulation::PollingWorkload::new(
            truth,
            c,
            alloc.alpha2,
            geometric_schedule(10.min(n), 1.1, n),
        )?;
        w.method = audit.config.polling_test;
        if paranoid {
            w.search = NullSearch::Exhaustive;
        }
        let s = polling_summary(&w, &format!("{}-simulate", audit.config.seed), trials)?;
        text.push_str(&format!(
            "stratum 2, {} over {}: q50 {} q90 {} q99 {} mean {:.1} (se {:.1}) full-count {:.4}\n",
            audit.contest.candidates()[p.winner],
            audit.contest.candidates()[p.loser],
            s.q50,
            s.q90,
            s.q99,
            s.mean,
            s.mean_se,
            s.full_count_freq
        ));
    }
    Ok(text)
}

fn execute(cli: Cli) -> Result<(String, i32)> {
    let cfg = cli.config.as_path();
    let text = match cli.command {
        Command::Init => Audit::open(cfg)?.init()?,
        Command::Plan { round, trials } => {
            let plan = Audit::open(cfg)?.plan(round, trials)?;
            let mut s = String::new();
            for r in &plan.rows {
                s.push_str(&format!(
                    "round {} stratum {} ({}): {} drawn, {} new\n",
                    r.round,
                    r.stratum,
                    r.kind.as_str(),
                    r.drawn,
                    r.new_draws
                ));
            }
            if plan.rows.is_empty() {
                s.push_str("no stratum needs more draws\n");
            }
            s
        }
        Command::Draw { round, seed_override } => {
            let t = Audit::open(cfg)?.draw(round, seed_override.as_deref())?;
            format!(
                "round {round}: {} draws written\n",
                t.iter().map(|t| t.rows.len()).sum::<usize>()
            )
        }
        Command::Record { round, stratum, file } => {
            Audit::open(cfg)?.record(round, stratum, &file)?;
            format!("round {round} of stratum {stratum} recorded\n")
        }
        Command::Assess { round, paranoid, grid } => {
            if grid.is_some_and(|g| g < 2) {
                return Err(CliError::Validation("--grid needs at least 2 points".into()));
            }
            let a = Audit::open(cfg)?.assess(AssessOptions { round, paranoid, grid })?;
            a.render()
        }
        Command::Escalate { stratum, tally } => Audit::open(cfg)?.escalate(stratum, tally.as_deref())? + "\n",
        Command::Simulate { trials, paranoid } => simulate(cfg, trials, paranoid)?,
        Command::Report { trials, out } => {
            let master = match AuditConfig::load(cfg) {
                Ok(c) => c.seed,
                Err(_) => "report".to_string(),
            };
            let r = builtin_report(&master, trials)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
                for (name, body) in [("report.txt", &r.text), ("report.csv", &r.csv)] {
                    let p = dir.join(name);
                    std::fs::write(&p, body).map_err(|e| CliError::io(&p, e))?;
                }
            }
            r.text
        }
    };
    Ok((text, 0))
}

/// Runs one command; returns the exit status (0 done, 2 invalid input, 3 audit state).
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match execute(cli).and_then(|(text, code)| out.write_all(text.as_bytes()).map_err(io_out).map(|_| code)) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
