//! Frozen reference values from scipy / statsmodels.

use prevcast::eval::{cohens_dz, paired_compare, paired_t_test, shapiro_wilk, wilcoxon_signed_rank};
use prevcast::series::{adf_test, AdfOptions};
use serde::Deserialize;

#[derive(Deserialize)]
struct StatsCase {
    kind: String,
    a: Vec<f64>,
    b: Vec<f64>,
    shapiro_w: f64,
    shapiro_p: f64,
    t: f64,
    t_p: f64,
    wilcoxon_p: f64,
    cohens_d: f64,
}

#[derive(Deserialize)]
struct StatsFile {
    cases: Vec<StatsCase>,
}

#[derive(Deserialize)]
struct AdfCase {
    kind: String,
    x: Vec<f64>,
    statistic: f64,
    p_value: f64,
    lags_used: usize,
}

#[derive(Deserialize)]
struct AdfFile {
    cases: Vec<AdfCase>,
}

fn stats_cases() -> Vec<StatsCase> {
    let text = include_str!("data/stats_reference.json");
    serde_json::from_str::<StatsFile>(text).unwrap().cases
}

fn diffs(c: &StatsCase) -> Vec<f64> {
    c.a.iter().zip(&c.b).map(|(x, y)| x - y).collect()
}

#[test]
fn shapiro_wilk_matches_scipy() {
    for (i, c) in stats_cases().iter().enumerate() {
        let r = shapiro_wilk(&diffs(c)).unwrap();
        assert!((r.w - c.shapiro_w).abs() < 1e-6, "case {i} ({}): W {} vs {}", c.kind, r.w, c.shapiro_w);
        assert!((r.p_value - c.shapiro_p).abs() < 1e-6, "case {i} ({}): p {} vs {}", c.kind, r.p_value, c.shapiro_p);
    }
}

#[test]
fn paired_t_matches_scipy() {
    for (i, c) in stats_cases().iter().enumerate() {
        let r = paired_t_test(&diffs(c)).unwrap();
        assert!((r.t - c.t).abs() < 1e-9 * c.t.abs().max(1.0), "case {i}: t {} vs {}", r.t, c.t);
        assert!((r.p_value - c.t_p).abs() < 1e-6, "case {i}: p {} vs {}", r.p_value, c.t_p);
    }
}

#[test]
fn wilcoxon_matches_scipy() {
    for (i, c) in stats_cases().iter().enumerate() {
        let r = wilcoxon_signed_rank(&diffs(c)).unwrap();
        assert!((r.p_value - c.wilcoxon_p).abs() < 1e-6, "case {i} (n={}): p {} vs {}", r.n, r.p_value, c.wilcoxon_p);
    }
}

#[test]
fn cohens_d_and_protocol() {
    for c in stats_cases() {
        let d = diffs(&c);
        assert!((cohens_dz(&d) - c.cohens_d).abs() < 1e-12);
        let r = paired_compare(&c.a, &c.b).unwrap();
        let want = if c.shapiro_p < 0.05 { c.wilcoxon_p } else { c.t_p };
        assert!((r.p_value - want).abs() < 1e-6);
        assert_eq!(r.significant, r.p_value < 0.01);
    }
}

#[test]
fn adf_matches_statsmodels() {
    let file: AdfFile = serde_json::from_str(include_str!("data/adf_reference.json")).unwrap();
    for c in file.cases {
        let r = adf_test(&c.x, &AdfOptions::default()).unwrap();
        let n = c.x.len();
        assert_eq!(r.lags_used, c.lags_used, "{} n={n}", c.kind);
        assert!((r.statistic - c.statistic).abs() < 1e-8, "{} n={n}: {} vs {}", c.kind, r.statistic, c.statistic);
        assert!((r.p_value - c.p_value).abs() < 1e-8, "{} n={n}: {} vs {}", c.kind, r.p_value, c.p_value);
    }
}
