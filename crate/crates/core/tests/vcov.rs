mod common;

use common::*;
use rand::Rng;
use robinf_core::vcov::{
    compute_vcov, effective_clusters, vcov_bm, vcov_cluster, vcov_cluster_with, vcov_conventional,
    vcov_hc, vcov_multiway, vcov_multiway_with, ClusterAdjustment,
};
use robinf_core::{fit_ols, ClusterMap, Dataset, HcVariant, ModelSpec, VcovKind};

#[test]
fn hc_variants_match_row_loop_oracles() {
    let mut r = rng(21);
    let data = random_dataset(&mut r, 150, 4);
    let fit = fit_ols(&data, &ModelSpec::default()).unwrap();
    let x = with_intercept(&data);
    let e = residuals(&x, data.outcome());
    let h = hat_diagonal(&x);
    let (n, k) = (150.0, 5.0);
    let cases: [(HcVariant, Vec<f64>); 4] = [
        (HcVariant::Hc0, e.iter().map(|v| v * v).collect()),
        (HcVariant::Hc1, e.iter().map(|v| v * v * n / (n - k)).collect()),
        (HcVariant::Hc2, e.iter().zip(&h).map(|(v, h)| v * v / (1.0 - h)).collect()),
        (HcVariant::Hc3, e.iter().zip(&h).map(|(v, h)| v * v / (1.0 - h).powi(2)).collect()),
    ];
    for (variant, w) in cases {
        let est = vcov_hc(&fit, variant).unwrap();
        assert!(rel_diff(est.matrix(), &loop_sandwich(&x, &w)) < 1e-10, "{variant:?}");
        assert_eq!(est.kind(), variant.kind());
        assert_eq!(est.dof(), &[145.0; 5]);
    }
    let conv = vcov_conventional(&fit);
    let s2 = e.iter().map(|v| v * v).sum::<f64>() / (n - k);
    assert!(rel_diff(conv.matrix(), &(xtx_inverse(&x) * s2)) < 1e-10);
}

#[test]
fn hc_ladder_on_random_designs() {
    let mut r = rng(8);
    for _ in 0..100 {
        let n = r.random_range(10..120);
        let p = r.random_range(1..5);
        let fit = fit_ols(&random_dataset(&mut r, n, p), &ModelSpec::default()).unwrap();
        let d = |v: HcVariant| vcov_hc(&fit, v).unwrap().matrix().diagonal();
        let (h0, h1, h2, h3) = (d(HcVariant::Hc0), d(HcVariant::Hc1), d(HcVariant::Hc2), d(HcVariant::Hc3));
        for j in 0..fit.k() {
            assert!(h3[j] >= h2[j] && h2[j] >= h0[j] && h1[j] >= h0[j]);
        }
    }
}

#[test]
fn hc1_equals_hc2_under_balanced_leverage() {
    let mut r = rng(2);
    let data = two_sample(&mut r, 20, 20, 1.0, 3.0, 0.0);
    let fit = fit_ols(&data, &ModelSpec::default()).unwrap();
    let a = vcov_hc(&fit, HcVariant::Hc1).unwrap();
    let b = vcov_hc(&fit, HcVariant::Hc2).unwrap();
    assert!(rel_diff(a.matrix(), b.matrix()) < 1e-12);
}

#[test]
fn cluster_matches_score_loop_with_fifty_clusters() {
    let mut r = rng(31);
    let data = random_dataset(&mut r, 400, 2);
    let map = random_labels(&mut r, 400, 50);
    let fit = fit_ols(&data, &ModelSpec::default()).unwrap();
    let x = with_intercept(&data);
    let e = residuals(&x, data.outcome());
    let adjust = 50.0 / 49.0 * 399.0 / 397.0;
    let est = vcov_cluster(&fit, &map).unwrap();
    assert!(rel_diff(est.matrix(), &loop_cluster(&x, &e, map.labels(), adjust)) < 1e-10);
    assert_eq!(est.dof(), &[49.0; 3]);
    assert_eq!(est.cluster_counts()[0].clusters, 50);
}

#[test]
fn singleton_clusters_without_adjustment_equal_hc0() {
    let mut r = rng(4);
    let data = random_dataset(&mut r, 90, 3);
    let fit = fit_ols(&data, &ModelSpec::default()).unwrap();
    let single = vcov_cluster_with(&fit, &ClusterMap::singletons("id", 90), ClusterAdjustment::None).unwrap();
    let hc0 = vcov_hc(&fit, HcVariant::Hc0).unwrap();
    assert!(max_abs_diff(single.matrix(), hc0.matrix()) < 1e-12);
}

#[test]
fn multiway_matches_three_one_way_oracles_on_a_panel() {
    let mut r = rng(41);
    let (firms, years) = (50, 10);
    let n = firms * years;
    let firm: Vec<usize> = (0..n).map(|i| i / years).collect();
    let year: Vec<usize> = (0..n).map(|i| i % years).collect();
    let fe_f: Vec<f64> = (0..firms).map(|_| normal(&mut r)).collect();
    let fe_y: Vec<f64> = (0..years).map(|_| normal(&mut r)).collect();
    let x: Vec<f64> = (0..n).map(|i| fe_f[firm[i]] * 0.5 + normal(&mut r)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 1.0 + x[i] + fe_f[firm[i]] + fe_y[year[i]] + normal(&mut r))
        .collect();
    let data = Dataset::new("y", y, vec![("x".into(), x)]).unwrap();
    let a = ClusterMap::from_labels("firm", firm.iter().copied());
    let b = ClusterMap::from_labels("year", year.iter().copied());
    let fit = fit_ols(&data, &ModelSpec::default()).unwrap();
    let xm = with_intercept(&data);
    let e = residuals(&xm, data.outcome());
    let inter: Vec<usize> = (0..n).map(|i| firm[i] * years + year[i]).collect();
    let adj = |c: f64| c / (c - 1.0) * (n as f64 - 1.0) / (n as f64 - 2.0);
    let oracle = loop_cluster(&xm, &e, &firm, adj(50.0)) + loop_cluster(&xm, &e, &year, adj(10.0))
        - loop_cluster(&xm, &e, &inter, adj(500.0));
    let est = vcov_multiway(&fit, &a, &b).unwrap();
    assert!(!est.psd_repaired());
    assert!(rel_diff(est.matrix(), &oracle) < 1e-10);
    assert_eq!(est.dof(), &[9.0, 9.0]);
    assert_eq!(est.kind(), VcovKind::Multiway);
    assert!(est.notes().iter().any(|n| n.contains("min")));
}

#[test]
fn multiway_with_identical_dimensions_is_one_way() {
    let mut r = rng(6);
    let data = random_dataset(&mut r, 120, 2);
    let map = random_labels(&mut r, 120, 15);
    let fit = fit_ols(&data, &ModelSpec::default()).unwrap();
    for adj in [ClusterAdjustment::Standard, ClusterAdjustment::None] {
        let one = vcov_cluster_with(&fit, &map, adj).unwrap();
        let two = vcov_multiway_with(&fit, &map, &map, adj).unwrap();
        assert!(max_abs_diff(one.matrix(), two.matrix()) < 1e-10);
    }
}

#[test]
fn cluster_vcov_is_invariant_to_row_order() {
    let mut r = rng(9);
    let data = random_dataset(&mut r, 100, 2);
    let map = random_labels(&mut r, 100, 12);
    let fit = fit_ols(&data, &ModelSpec::default()).unwrap();
    let v = vcov_cluster(&fit, &map).unwrap();
    let mut perm: Vec<usize> = (0..100).collect();
    for i in (1..100).rev() {
        perm.swap(i, r.random_range(0..=i));
    }
    let pd = data.select_rows(&perm);
    let pm = map.select_rows(&perm);
    let pv = vcov_cluster(&fit_ols(&pd, &ModelSpec::default()).unwrap(), &pm).unwrap();
    assert!(rel_diff(pv.matrix(), v.matrix()) < 1e-10);
}

#[test]
fn bm_dof_equals_welch_on_two_sample_designs() {
    let mut r = rng(12);
    for &(n0, n1, s0, s1) in &[(5, 5, 1.0, 1.0), (3, 27, 1.0, 4.0), (10, 40, 3.0, 0.5), (30, 8, 2.0, 2.0)] {
        let data = two_sample(&mut r, n0, n1, s0, s1, 0.3);
        let fit = fit_ols(&data, &ModelSpec::default()).unwrap();
        let y = data.outcome();
        let oracle = welch_dof(&y[..n0], &y[n0..]);
        let bm = vcov_bm(&fit).unwrap();
        assert!((bm.dof()[1] - oracle).abs() < 1e-6, "{n0} {n1}: {} vs {oracle}", bm.dof()[1]);
        // The BM variance of the difference is the Welch variance.
        let (_, v0) = mean_var(&y[..n0]);
        let (_, v1) = mean_var(&y[n0..]);
        let welch_var = v0 / n0 as f64 + v1 / n1 as f64;
        assert!((bm.matrix()[(1, 1)] - welch_var).abs() < 1e-10 * welch_var);
        if (n0, n1) == (3, 27) {
            assert!(bm.dof()[1] < (n0 + n1 - 2) as f64);
        }
    }
}

#[test]
fn compute_vcov_dispatch() {
    let mut r = rng(13);
    let data = random_dataset(&mut r, 60, 1);
    let map = random_labels(&mut r, 60, 6);
    let fit = fit_ols(&data, &ModelSpec::default()).unwrap();
    for kind in [VcovKind::Conventional, VcovKind::Hc0, VcovKind::Hc3, VcovKind::Hc2Bm, VcovKind::MaxSe] {
        assert_eq!(compute_vcov(&fit, kind, &[]).unwrap().kind(), kind);
    }
    assert!(compute_vcov(&fit, VcovKind::ClusterLz, &[]).is_err());
    assert_eq!(compute_vcov(&fit, VcovKind::ClusterLz, &[&map]).unwrap().dof(), &[5.0, 5.0]);
}

fn intercept_fit(sizes: &[usize]) -> (robinf_core::FitResult, ClusterMap) {
    let n: usize = sizes.iter().sum();
    let y: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
    let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
    let fit = fit_ols(&Dataset::new("y", y, vec![]).unwrap(), &ModelSpec::default()).unwrap();
    (fit, ClusterMap::from_labels("g", labels))
}

#[test]
fn effective_clusters_shrink_as_one_cluster_grows() {
    let mut last = f64::INFINITY;
    for big in [10, 20, 50, 100, 400, 2000] {
        let mut sizes = vec![10; 19];
        sizes.push(big);
        let (fit, map) = intercept_fit(&sizes);
        let g = effective_clusters(&fit, &map, 0).unwrap();
        assert!(g <= 20.0 + 1e-9 && g < last + 1e-12);
        last = g;
    }
    assert!(last < 3.0);
}

#[test]
fn effective_clusters_double_with_replicated_structure() {
    let sizes = [5, 8, 30, 2, 11, 60];
    let (fit, map) = intercept_fit(&sizes);
    let doubled: Vec<usize> = sizes.iter().chain(sizes.iter()).copied().collect();
    let (fit2, map2) = intercept_fit(&doubled);
    let g = effective_clusters(&fit, &map, 0).unwrap();
    let g2 = effective_clusters(&fit2, &map2, 0).unwrap();
    assert!((g2 - 2.0 * g).abs() < 1e-9);
}

#[test]
fn multiway_repair_leaves_a_psd_matrix() {
    // Few, crossed clusters with opposing correlation make V_A + V_B - V_AB indefinite often.
    let mut r = rng(77);
    let mut repaired = 0;
    for _ in 0..200 {
        let n = 40;
        let a: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
        let b: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
        let data = random_dataset(&mut r, n, 2);
        let fit = fit_ols(&data, &ModelSpec::default()).unwrap();
        let Ok(est) = vcov_multiway(
            &fit,
            &ClusterMap::from_labels("a", a.iter().copied()),
            &ClusterMap::from_labels("b", b.iter().copied()),
        ) else {
            continue;
        };
        let eig = est.matrix().clone().symmetric_eigen().eigenvalues;
        assert!(eig.min() >= -1e-10 * eig.amax().max(1e-300));
        if est.psd_repaired() {
            repaired += 1;
        }
    }
    assert!(repaired > 0);
}
