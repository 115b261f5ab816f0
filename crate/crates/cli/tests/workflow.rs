mod common;

use std::fs;

use common::*;

fn clean_factor() -> f64 {
    // Sharp bounds: Adams batches (140 - 100 + 250) / 2300, Baker (250 - 230 + 500) / 2300.
    let u = (40.0 * 290.0 + 20.0 * 520.0) / 2300.0;
    1.0 - 0.5 / u
}

#[test]
fn nothing_recorded_means_p_one_and_continue() {
    let r = Replay::new("small");
    let out = r.assess();
    assert_eq!(stratum_line(&out, 1).2, 1.0);
    assert_eq!(stratum_line(&out, 2).2, 1.0);
    assert_eq!(decision(&out), "continue");
}

#[test]
fn clean_comparison_round_multiplies_p_by_one_minus_t() {
    let mut r = Replay::new("small");
    let out = r.round(1, [7, 0]);
    let (status, lambda, p) = stratum_line(&out, 1);
    assert_eq!(status, "sampling");
    assert_eq!(lambda, 0.5);
    let expected = clean_factor().powi(7);
    assert!((p - expected).abs() < 5e-7, "{p} vs {expected}");
    assert_eq!(decision(&out), "continue");
}

#[test]
fn clean_audit_confirms_both_strata() {
    let mut r = Replay::new("small");
    let t = 1.0 - clean_factor();
    let alpha1 = 0.04;
    let clean = ((alpha1 as f64).ln() / (1.0 - t).ln()).ceil() as u64;
    let out = r.round(1, [clean, 300]);
    let (s1, _, p1) = stratum_line(&out, 1);
    assert_eq!(s1, "confirmed", "{out}");
    assert!(p1 <= alpha1);
    assert_eq!(stratum_line(&out, 2).0, "confirmed", "{out}");
    assert_eq!(decision(&out), "confirmed");
}

#[test]
fn assess_is_repeatable_byte_for_byte() {
    let mut r = Replay::new("small");
    r.round(1, [20, 100]);
    let a = r.cli(&["assess", "--grid", "50"]);
    let b = r.cli(&["assess", "--grid", "50"]);
    assert_eq!(a.0, 0, "{}", a.2);
    assert_eq!(a, b);
    assert!(a.1.contains("combined w>l: p_max="), "{}", a.1);
    assert!(a.1.contains("combined w>o: p_max="), "{}", a.1);
    let early = r.cli(&["assess", "--round", "2"]);
    assert_eq!(early.0, 3);
}

#[test]
fn plan_then_draw_then_record() {
    let r = Replay::new("small");
    let (code, out, err) = r.cli(&["plan", "--round", "1", "--trials", "50"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("stratum 1 (comparison): 0 drawn"), "{out}");
    assert!(out.contains("stratum 2 (polling): 0 drawn"), "{out}");
    let (code, _, err) = r.cli(&["draw", "--round", "1"]);
    assert_eq!(code, 0, "{err}");
    let params = fs::read_to_string(r.dir.join("parameters-1.csv")).unwrap();
    assert!(params.starts_with("#schema parameters v1\nround,stratum,county,count\n"));
    assert!(params.contains(",2,Cedar,") && params.contains(",2,Delta,"), "{params}");
    // a second draw of the same round is refused
    let (code, _, err) = r.cli(&["draw", "--round", "1"]);
    assert_eq!(code, 3, "{err}");
    // planning round 1 again is refused too
    let (code, _, _) = r.cli(&["plan", "--round", "1"]);
    assert_eq!(code, 3);
}

#[test]
fn seed_override_only_before_draws() {
    let r = Replay::new("small");
    fs::write(
        r.dir.join("plan-1.csv"),
        "#schema plan v1\nround,stratum,kind,drawn,new_draws\n1,2,polling,0,5\n",
    )
    .unwrap();
    let (code, _, err) = r.cli(&["draw", "--round", "1", "--seed-override", "another seed"]);
    assert_eq!(code, 0, "{err}");
    let log = fs::read_to_string(r.dir.join("decisions.log")).unwrap();
    assert!(log.contains("\tseed-override another seed\t"), "{log}");
    let first = fs::read_to_string(r.dir.join("transcript-1-2.csv")).unwrap();
    let expected: Vec<u64> = hybrid_rla_core::draw_srs("another seed/stratum-2", 2000, 5).unwrap();
    let got: Vec<u64> = first
        .lines()
        .skip(2)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(got, expected);
    let (code, _, err) = r.cli(&["draw", "--round", "2", "--seed-override", "x"]);
    assert_eq!(code, 3);
    assert!(err.contains("seed override refused"), "{err}");
}

#[test]
fn records_are_checked_against_the_transcript() {
    let r = Replay::new("small");
    fs::write(
        r.dir.join("plan-1.csv"),
        "#schema plan v1\nround,stratum,kind,drawn,new_draws\n1,1,comparison,0,2\n",
    )
    .unwrap();
    assert_eq!(r.cli(&["draw", "--round", "1"]).0, 0);
    let t = fs::read_to_string(r.dir.join("transcript-1-1.csv")).unwrap();
    let rows: Vec<(u64, u64)> = t
        .lines()
        .skip(2)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    let f = r.dir.join("bad.csv");
    let fs_ = f.display().to_string();
    let args = ["record", "--round", "1", "--stratum", "1", "--file", fs_.as_str()];

    fs::write(&f, format!("#schema comparison-round v1\nround,draw_index,batch_id,w,l,o\n1,{},{},1x,0,0\n", rows[0].0, rows[0].1)).unwrap();
    let (code, _, err) = r.cli(&args);
    assert_eq!(code, 2);
    assert!(err.contains("bad.csv:3:"), "{err}");

    let wrong = rows[0].1 % 60 + 1;
    fs::write(&f, format!("#schema comparison-round v1\nround,draw_index,batch_id,w,l,o\n1,{},{wrong},1,0,0\n", rows[0].0)).unwrap();
    let (code, _, err) = r.cli(&args);
    assert_eq!(code, 2, "{err}");

    fs::write(&f, format!("#schema comparison-round v1\nround,draw_index,batch_id,w,l,o\n1,{},{},1,0,0\n", rows[0].0, rows[0].1)).unwrap();
    let (code, _, err) = r.cli(&args);
    assert_eq!(code, 2);
    assert!(err.contains("1 of 2 drawn units"), "{err}");
    assert!(!r.dir.join("rounds/round-1-1.csv").exists());
}

#[test]
fn lock_blocks_writers() {
    let r = Replay::new("small");
    fs::write(r.dir.join("audit.lock"), "1").unwrap();
    let (code, _, err) = r.cli(&["escalate", "--stratum", "2"]);
    assert_eq!(code, 3);
    assert!(err.contains("locked"), "{err}");
    // readers are not blocked
    assert_eq!(r.cli(&["assess"]).0, 0);
}

#[test]
fn escalation_state_errors() {
    let r = Replay::new("small");
    let (code, out, err) = r.cli(&["escalate", "--stratum", "2"]);
    assert_eq!(code, 0, "{out}{err}");
    let (code, _, err) = r.cli(&["escalate", "--stratum", "2"]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("decisions.log"), "{err}");
    let out = r.assess();
    assert_eq!(decision(&out), "full-hand-count");
    r.record_count(2);
    let out = r.assess();
    assert_eq!(stratum_line(&out, 2).0, "hand-counted");
    // a correct hand count: stratum 2 needed only its share of the margin
    assert_eq!(stratum_line(&out, 2).2, 0.0);
}

#[test]
fn bad_config_is_a_validation_error() {
    let r = Replay::new("small");
    let cfg = r.dir.join("audit.cfg");
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&cfg, text.replace("lambda1 = 0.5", "lambda1 = half")).unwrap();
    let (code, _, err) = r.cli(&["assess"]);
    assert_eq!(code, 2);
    assert!(err.contains("audit.cfg:5:11: expected a number, found `half`"), "{err}");
    let (code, _, _) = cli(&["--config", "/nonexistent/audit.cfg", "assess"]);
    assert_eq!(code, 2);
    let (code, _, _) = cli(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn manifest_totals_must_match_the_contest() {
    let r = Replay::new("small");
    let p = r.dir.join("contest.csv");
    let text = fs::read_to_string(&p).unwrap();
    fs::write(&p, text.replace("1,w,winner,10600", "1,w,winner,10601")).unwrap();
    let (code, _, err) = r.cli(&["assess"]);
    assert_eq!(code, 2);
    assert!(err.contains("differ from contest"), "{err}");
}

#[test]
fn fisher_method_decides_on_the_combined_p_value() {
    let mut r = Replay::new("small");
    let cfg = r.dir.join("audit.cfg");
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&cfg, format!("{text}method = fisher\ngrid = 40\n")).unwrap();
    let out = r.round(1, [60, 300]);
    assert!(out.contains("(method fisher)"));
    let p = out
        .lines()
        .filter_map(|l| l.split("p_max=").nth(1))
        .map(|s| s.split_whitespace().next().unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert_eq!(decision(&out) == "confirmed", p <= 0.1, "{out}");
}

#[test]
fn simulate_and_report_commands() {
    let r = Replay::new("small");
    let (code, out, err) = r.cli(&["simulate", "--trials", "30"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("stratum 2, w over l: q50"), "{out}");
    let dir = r.dir.join("report");
    let d = dir.display().to_string();
    let (code, out, err) = r.cli(&["report", "--trials", "4", "--out", &d]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("two-vote"), "{out}");
    let csv = fs::read_to_string(dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
}
