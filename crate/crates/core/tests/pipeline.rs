use std::fs;

use mithril_core::experiment::{run, simulate, ExperimentConfig, Mode, Setting};

fn config(mode: Mode, pairs: &[(&str, &str)]) -> ExperimentConfig {
    let s: Vec<Setting> = pairs.iter().map(|(k, v)| Setting::new(*k, *v, "test")).collect();
    ExperimentConfig::from_settings(mode, &s).unwrap()
}

#[test]
fn mithril_plus_skips_rfm_on_benign_traffic() {
    let base = [
        ("timing", "synthetic"),
        ("rfm_th", "16"),
        ("ad_th", "50"),
        ("n_entry", "32"),
        ("flip_th", "50000"),
        ("workload", "uniform_random"),
        ("lo", "0"),
        ("hi", "4096"),
        ("length", "40000"),
        ("rows_per_bank", "4096"),
    ];
    let (plain, _) = simulate(&config(Mode::Simulate, &base), false, false).unwrap();
    let mut plus = base.to_vec();
    plus.push(("scheme", "mithril_plus"));
    let (plus, _) = simulate(&config(Mode::Simulate, &plus), false, false).unwrap();

    assert_eq!(plain.total.rfm_skipped, 0);
    assert!(plus.total.rfm_skipped > 0);
    assert_eq!(plus.total.rfm_issued + plus.total.rfm_skipped, plain.total.rfm_issued);
    // Skipped RFMs cost no bus time.
    assert!(plus.time_overhead < plain.time_overhead);
    assert_eq!(plus.total.preventive_refresh_count, 0);
}

#[test]
fn parfm_refreshes_on_every_rfm() {
    let cfg = config(
        Mode::Simulate,
        &[
            ("timing", "synthetic"),
            ("scheme", "parfm"),
            ("rfm_th", "8"),
            ("flip_th", "5000"),
            ("workload", "single_row"),
            ("length", "8000"),
            ("seed", "3"),
        ],
    );
    let (a, n) = simulate(&cfg, false, false).unwrap();
    assert_eq!(n, 8_000);
    assert_eq!(a.total.rfm_issued, 1_000);
    assert_eq!(a.total.preventive_refresh_count, a.total.rfm_issued);
    assert!(a.verdict.clean);
    let (b, _) = simulate(&cfg, false, false).unwrap();
    assert_eq!(a.total, b.total);
}

#[test]
fn multi_bank_trace_is_split_and_audited() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("two_banks.csv");
    let mut body = String::from("# bank,row\n");
    for i in 0..6_000u32 {
        body.push_str(&format!("{},{}\n", i % 2, 200 + 2 * (i / 2 % 3)));
    }
    fs::write(&trace, body).unwrap();
    let out = dir.path().join("report.json");
    let cfg = config(
        Mode::Verify,
        &[
            ("timing", "synthetic"),
            ("rfm_th", "8"),
            ("flip_th", "5000"),
            ("workload", "trace_file"),
            ("path", trace.to_str().unwrap()),
            ("output", out.to_str().unwrap()),
        ],
    );
    let (rep, n) = simulate(&cfg, true, false).unwrap();
    assert_eq!(n, 6_000);
    assert_eq!(rep.banks.len(), 2);
    for b in &rep.banks {
        assert_eq!(b.energy.act_count, 3_000);
        assert!(b.max_window_growth.is_some());
    }
    assert!(rep.verdict.clean);

    let outcome = run(&cfg).unwrap();
    assert!(outcome.is_clean());
    assert_eq!(outcome.files[0], out);
    let json = fs::read_to_string(&out).unwrap();
    assert!(json.contains("\"bank\": 1"));
}

#[test]
fn verify_flags_an_unsafe_table() {
    let cfg = config(
        Mode::Verify,
        &[
            ("timing", "synthetic"),
            ("rfm_th", "16"),
            ("n_entry", "2"),
            ("flip_th", "100"),
            ("workload", "round_robin_k"),
            ("rows", "100,102,104,106"),
            ("length", "20000"),
        ],
    );
    let outcome = run(&cfg).unwrap();
    assert!(!outcome.is_clean());
    assert!(outcome.report.contains("FLIP_TH_REACHED"));
}
