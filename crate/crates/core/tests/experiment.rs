use chrono::{Duration, NaiveDate};
use emos_core::experiment::{
    read_predictions_csv, read_score_table, verify, prepare, Metric, MetricKind,
};
use emos_core::{
    emit_reports, generate, run_experiment, ConfigurationId, Dataset, ExperimentConfig, Method,
    Mixture, ScopeMode, SynthConfig,
};

fn dataset(n_stations: usize, n_days: usize) -> Dataset {
    let cfg = SynthConfig {
        n_stations,
        n_days,
        lead_times: vec![1, 5],
        seed: 7,
        ..SynthConfig::default()
    };
    generate(&cfg).unwrap().into_dataset().unwrap().orographically_corrected()
}

fn config(start: NaiveDate, days: i64, mixtures: &str, training: &str) -> ExperimentConfig {
    let end = start + Duration::days(days - 1);
    ExperimentConfig::from_toml_str(&format!(
        r#"
seed = 3
[scenario]
high_group = "H"
low_group = "L"
mixtures = {mixtures}
[verification]
start = "{start}"
end = "{end}"
[bootstrap]
replicates = 200
{training}
"#
    ))
    .unwrap()
}

const DATA_START: (i32, u32, u32) = (2016, 5, 1);

fn data_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(DATA_START.0, DATA_START.1, DATA_START.2).unwrap()
}

const LOCAL_AND_REGIONAL: &str = r#"
[[training]]
mode = "regional"
n_days = 20
[[training]]
mode = "local"
n_days = 20
[[training]]
mode = "semi-local"
n_days = 20
k_clusters = 3
"#;

#[test]
fn pipeline_end_to_end() {
    let ds = dataset(12, 45);
    let start = data_start() + Duration::days(20);
    let cfg = config(start, 20, "[[0, 50], [40, 40], [200, 0]]", LOCAL_AND_REGIONAL);
    let t = std::time::Instant::now();
    let out = run_experiment(&cfg, ds).unwrap();
    eprintln!("run took {:?}", t.elapsed());

    let reference = Mixture::new(0, 50);
    let crps = Metric { kind: MetricKind::Crps, level: None };
    for method in cfg.methods() {
        for lead in [1, 5] {
            let c = ConfigurationId { mixture: reference, method };
            let r = out.table.row(c, lead, crps).unwrap();
            assert_eq!(r.skill, 0.0);
            assert_eq!(r.diff, 0.0);
            assert_eq!(r.dm_p_value, Some(1.0));
            assert_eq!(r.n_days, 20);
            assert_eq!(r.n_cases, 20 * 12);
            assert!(r.ci_lower <= r.mean && r.mean <= r.ci_upper);
        }
    }
    // post-processing improves on the raw ensemble
    for m in [Mixture::new(0, 50), Mixture::new(40, 40), Mixture::new(200, 0)] {
        let raw = out.table.crps(ConfigurationId { mixture: m, method: Method::Raw }, 1).unwrap();
        let reg = Method::Emos { mode: ScopeMode::Regional, n_days: 20, k_clusters: None };
        let emos = out.table.crps(ConfigurationId { mixture: m, method: reg }, 1).unwrap();
        assert!(emos < raw, "{m}: {emos} vs raw {raw}");
    }
    // headline mean is the count-weighted mean of daily means
    for r in &out.table.summary {
        if r.metric.kind == MetricKind::Rmse {
            continue;
        }
        let (mut s, mut n) = (0.0, 0usize);
        for d in out.table.daily.iter().filter(|d| {
            d.configuration == r.configuration && d.lead_days == r.lead_days && d.metric == r.metric
        }) {
            s += d.value * d.n_cases as f64;
            n += d.n_cases;
        }
        assert_eq!(n, r.n_cases);
        assert!((s / n as f64 - r.mean).abs() < 1e-12 * r.mean.abs().max(1.0));
    }
    // verification never sees its own training window
    for p in &out.calibration.parameters {
        assert!(p.target_date >= start);
    }
    assert_eq!(out.significance.len(), 2);
    let sig = &out.significance[&1];
    assert_eq!(sig.configurations.len(), 3 * 4);
    for i in 0..sig.configurations.len() {
        assert_eq!(sig.proportions[i][i], 0.0);
    }

    let dir = tempfile::tempdir().unwrap();
    emit_reports(&out, dir.path()).unwrap();
    assert_eq!(read_score_table(dir.path()).unwrap(), out.table);
    assert_eq!(read_predictions_csv(&dir.path().join("predictions.csv")).unwrap(), out.calibration.predictions);
    for f in [
        "table2.csv",
        "crps_vs_lead.csv",
        "crps_diff_vs_lead.csv",
        "significance_matrix_lead1.csv",
        "significance_matrix_lead5.csv",
        "bss.csv",
        "qss.csv",
        "rmse_diff.csv",
        "parameters.jsonl",
        "clusters_lead1_20d_k3.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }

    // verifying stored predictions reproduces the table
    let ds = dataset(12, 45);
    let prepared = prepare(&cfg, ds).unwrap();
    let (table, _) = verify(&cfg, &prepared, &out.calibration).unwrap();
    assert_eq!(table, out.table);
}

#[test]
fn self_reference_only() {
    let ds = dataset(6, 30);
    let start = data_start() + Duration::days(15);
    let cfg = config(start, 12, "[[0, 50]]", "[[training]]\nmode = \"regional\"\nn_days = 15\n");
    let out = run_experiment(&cfg, ds).unwrap();
    for r in &out.table.summary {
        assert_eq!(r.skill, 0.0, "{r:?}");
        assert_eq!(r.dm_p_value, Some(1.0));
        assert_eq!((r.skill_lower, r.skill_upper), (0.0, 0.0));
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let ds = dataset(8, 35);
    let start = data_start() + Duration::days(20);
    let mut cfg = config(start, 12, "[[0, 50], [120, 20]]", LOCAL_AND_REGIONAL);
    cfg.jobs = 1;
    let a = run_experiment(&cfg, ds.clone()).unwrap();
    cfg.jobs = 3;
    let b = run_experiment(&cfg, ds).unwrap();
    assert_eq!(a.table, b.table);
    assert_eq!(a.calibration.predictions, b.calibration.predictions);
    assert_eq!(a.calibration.parameters, b.calibration.parameters);
}

#[test]
fn rejects_verification_before_training_data() {
    let ds = dataset(4, 30);
    let cfg = config(data_start() + Duration::days(5), 10, "[[0, 50]]", LOCAL_AND_REGIONAL);
    assert!(run_experiment(&cfg, ds).is_err());
}
