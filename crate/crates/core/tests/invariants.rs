use proptest::prelude::*;

use permafrost_core::domain::{LocationKey, ScenarioId};
use permafrost_core::learners::LinearModel;
use permafrost_core::risk::{
    classify_risk, latitudinal_profile, risk_score, FactorRange, RiskAssessment, RiskClass, RiskNorms, RiskWeights,
};
use permafrost_core::scenario::{physical_delta, physical_sensitivity_weight, HybridConfig};
use permafrost_core::stacking::{assign_spatial_folds, UncertainEstimate};
use permafrost_core::stats;
use permafrost_core::validation::{compute_metrics, random_split_indices};

fn meta() -> impl Strategy<Value = LinearModel> {
    (prop::collection::vec(-1.0f64..2.0, 3), -20.0f64..20.0).prop_map(|(c, b)| LinearModel::from_coefficients(c, b))
}

fn distinct_scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(0u32..1_000_000, 1..max)
        .prop_map(|s| s.into_iter().map(|v| f64::from(v) / 1e6).collect::<Vec<_>>())
        .prop_shuffle()
}

fn assessment(lat: f64, class: RiskClass) -> RiskAssessment {
    RiskAssessment {
        location: LocationKey::new(lat, 100.0),
        scenario: ScenarioId::Rcp45,
        score: 0.0,
        class,
        decline: 0.0,
        projected_pf: 50.0,
        sigma: 0.0,
        flag_pf50: false,
        flag_tm2: false,
        flag_d20: false,
    }
}

proptest! {
    #[test]
    fn sigma_ignores_base_order(m in meta(), a in 0.0f64..100.0, b in 0.0f64..100.0, c in 0.0f64..100.0) {
        let s = [
            UncertainEstimate::from_bases(&m, [a, b, c]).sigma,
            UncertainEstimate::from_bases(&m, [c, a, b]).sigma,
            UncertainEstimate::from_bases(&m, [b, c, a]).sigma,
            UncertainEstimate::from_bases(&m, [a, c, b]).sigma,
        ];
        prop_assert!(s.iter().all(|&v| v >= 0.0));
        for v in &s[1..] {
            prop_assert!((v - s[0]).abs() <= 1e-12 * s[0].max(1.0));
        }
    }

    #[test]
    fn ensemble_mean_stays_in_range(m in meta(), base in prop::array::uniform3(-50.0f64..150.0)) {
        let e = UncertainEstimate::from_bases(&m, base);
        prop_assert!((0.0..=100.0).contains(&e.mean));
        let sd = stats::population_sd(&base);
        prop_assert!((e.sigma - sd).abs() <= 1e-12 * sd.max(1.0));
    }

    #[test]
    fn classes_survive_monotone_transforms(scores in distinct_scores(400)) {
        let base = classify_risk(&scores).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|s| 3.0 * s + 7.0).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        prop_assert_eq!(&classify_risk(&shifted).unwrap().classes, &base.classes);
        prop_assert_eq!(&classify_risk(&squashed).unwrap().classes, &base.classes);
    }

    #[test]
    fn class_shares_track_cut_quantiles(scores in distinct_scores(2000)) {
        let n = scores.len() as f64;
        let [low, medium, high] = classify_risk(&scores).unwrap().counts();
        prop_assert_eq!(low + medium + high, scores.len());
        prop_assert!((low as f64 - 0.60 * n).abs() <= 1.0);
        prop_assert!((high as f64 - 0.15 * n).abs() <= 1.0);
    }

    #[test]
    fn higher_score_never_gets_lower_class(scores in distinct_scores(300)) {
        let c = classify_risk(&scores).unwrap();
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] < scores[j] {
                    prop_assert!(c.classes[i] <= c.classes[j]);
                }
            }
        }
    }

    #[test]
    fn score_is_monotone_in_each_factor(
        d in 0.0f64..60.0, dd in 0.0f64..10.0,
        pf in 0.0f64..100.0, dpf in 0.0f64..20.0,
        s in 0.0f64..10.0, ds in 0.0f64..3.0,
    ) {
        let norms = RiskNorms {
            decline: FactorRange { min: 0.0, max: 50.0 },
            sigma: FactorRange { min: 0.0, max: 8.0 },
        };
        let w = RiskWeights::default();
        let base = risk_score(d, pf, s, &norms, &w);
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!(risk_score(d + dd, pf, s, &norms, &w) >= base);
        prop_assert!(risk_score(d, (pf + dpf).min(100.0), s, &norms, &w) <= base);
        prop_assert!(risk_score(d, pf, s + ds, &norms, &w) >= base);
    }

    #[test]
    fn rmse_bounds_mae(pairs in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..300)) {
        let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = compute_metrics(&t, &p).unwrap();
        prop_assert!(m.rmse + 1e-12 >= m.mae);
        prop_assert!(m.r2 <= 1.0);
        prop_assert_eq!(m.n, t.len());
    }

    #[test]
    fn warming_never_gains_by_default(ml in -40.0f64..40.0, t in -25.0f64..5.0, dt in 0.01f64..6.0) {
        let cfg = HybridConfig::default();
        let phys = cfg.physical_delta(t, dt);
        prop_assert!(phys <= 0.0);
        prop_assert!(cfg.combine(ml, phys, dt) <= 0.0);
        let open = HybridConfig { allow_gain: true, ..HybridConfig::default() };
        prop_assert_eq!(open.combine(ml, phys, dt), 0.6 * ml + 0.4 * phys);
    }

    #[test]
    fn physical_response_grows_with_warming(t in -25.0f64..5.0, dt in 0.0f64..5.0, extra in 0.0f64..3.0) {
        prop_assert!(physical_delta(t, dt + extra) <= physical_delta(t, dt));
        prop_assert_eq!(physical_delta(t, dt), -10.0 * dt * physical_sensitivity_weight(t));
    }

    #[test]
    fn random_split_partitions_rows(n in 5usize..2000, frac in 0.05f64..0.95, seed: u64) {
        let (train, test) = random_split_indices(n, frac, seed).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(test.len(), (n as f64 * frac).round() as usize);
    }

    #[test]
    fn spatial_folds_are_contiguous_longitude_blocks(
        cells in prop::collection::btree_set((0u32..80, 0u32..300), 10..400),
        k in 2usize..8,
    ) {
        let keys: Vec<LocationKey> = cells
            .iter()
            .map(|&(a, o)| LocationKey::new(60.0 + f64::from(a) * 0.25, 30.0 + f64::from(o) * 0.5))
            .collect();
        prop_assume!(keys.len() >= k);
        let folds = assign_spatial_folds(&keys, k).unwrap();
        let sizes = folds.fold_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), keys.len());
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut ordered = keys.clone();
        ordered.sort_by(|a, b| a.cmp_lon_lat(b));
        let assigned: Vec<usize> = ordered.iter().map(|key| folds.fold_of(key).unwrap()).collect();
        prop_assert!(assigned.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn profile_bins_partition_locations(points in prop::collection::vec((60.0f64..=82.0, any::<bool>()), 1..300)) {
        let rows: Vec<RiskAssessment> = points
            .iter()
            .map(|&(lat, high)| assessment(lat, if high { RiskClass::High } else { RiskClass::Low }))
            .collect();
        let bins = latitudinal_profile(&rows, 0.5).unwrap();
        prop_assert_eq!(bins.len(), 44);
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), rows.len());
        let highs = points.iter().filter(|p| p.1).count();
        prop_assert_eq!(bins.iter().map(|b| b.high_count).sum::<usize>(), highs);
        for b in &bins {
            prop_assert_eq!(b.empty, b.count == 0);
            prop_assert!((0.0..=1.0).contains(&b.high_risk_proportion));
        }
    }

    #[test]
    fn quantiles_are_ordered(xs in prop::collection::vec(-100.0f64..100.0, 1..200), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(stats::quantile(&xs, lo) <= stats::quantile(&xs, hi));
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(stats::quantile(&xs, 0.0), min);
    }
}
