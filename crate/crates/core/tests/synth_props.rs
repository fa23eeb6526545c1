use emos_core::experiment::station_diagnostics;
use emos_core::synth::sweep;
use emos_core::{generate, SynthConfig};
use proptest::prelude::*;

proptest! {
    #[test]
    fn sweep_respects_budget(
        cost_high in 1u32..20, cost_low in 1u32..5, budget_units in 1u32..400, cap in 1usize..300,
    ) {
        let (ch, cl) = (f64::from(cost_high.max(cost_low)), f64::from(cost_low));
        let budget = f64::from(budget_units);
        if let Ok(mixtures) = sweep(ch, cl, budget, cap) {
            for m in mixtures {
                prop_assert!(m.m_high as f64 * ch + m.m_low as f64 * cl <= budget);
                prop_assert!(m.m_low <= cap);
                prop_assert!(m.m_low + m.m_high > 0);
            }
        }
    }
}

#[test]
fn high_resolution_is_sharper_and_more_spread() {
    let cfg = SynthConfig { n_stations: 30, n_days: 60, ..SynthConfig::default() };
    let ds = generate(&cfg).unwrap().into_dataset().unwrap().orographically_corrected();
    let rows = station_diagnostics(&ds, ("H", "L"), 50, None).unwrap();
    assert_eq!(rows.len(), 30);
    let n = rows.len() as f64;
    let var: f64 = rows.iter().map(|r| r.variance_diff).sum::<f64>() / n;
    let rmse: f64 = rows.iter().map(|r| r.rmse_diff).sum::<f64>() / n;
    assert!(var > 0.0, "variance diff {var}");
    assert!(rmse < 0.0, "rmse diff {rmse}");
}

#[test]
fn identical_and_shifted_groups() {
    let cfg = SynthConfig { n_stations: 4, n_days: 10, ..SynthConfig::default() };
    let ds = generate(&cfg).unwrap().into_dataset().unwrap();
    for r in station_diagnostics(&ds, ("H", "H"), 50, None).unwrap() {
        assert_eq!((r.mean_diff, r.variance_diff, r.rmse_diff), (0.0, 0.0, 0.0));
    }
    let shifted = ds
        .map_forecasts(|f| {
            let mut f = f.clone();
            let h = f.group("H").unwrap().members.clone();
            let l = f.groups.iter_mut().find(|g| g.label == "L").unwrap();
            l.members = h.iter().map(|m| m + 1.0).collect();
            Ok(f)
        })
        .unwrap();
    for r in station_diagnostics(&shifted, ("H", "L"), 50, Some(5)).unwrap() {
        assert!((r.mean_diff + 1.0).abs() < 1e-9);
        assert!(r.variance_diff.abs() < 1e-9);
    }
    assert!(station_diagnostics(&ds, ("H", "L"), 51, None).is_err());
}
