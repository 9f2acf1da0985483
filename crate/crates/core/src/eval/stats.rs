//! Shapiro–Wilk, Wilcoxon signed-rank, paired t-test and the paired
//! comparison protocol built on them.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::series::{mean, std_dev};

/// Normality p-value below which the Wilcoxon test replaces the t-test.
pub const NORMALITY_GATE: f64 = 0.05;
/// Comparison significance level.
pub const SIGNIFICANCE: f64 = 0.01;
const EXACT_MAX_N: usize = 25;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Shapiro–Wilk W and p-value (Royston's AS R94 with exact normal
/// quantiles for the expected order statistics), 3 ≤ n ≤ 5000.
pub fn shapiro_wilk(sample: &[f64]) -> Result<ShapiroWilk> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let n = sample.len();
    if n < 3 {
        return Err(Error::too_short("normality_test", 3, n));
    }
    if n > 5000 {
        return Err(Error::TooLong {
            op: "normality_test",
            max: 5000,
            got: n,
        });
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("normality_test", "non-finite value in sample"));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    if x[n - 1] - x[0] < 1e-19 {
        return Err(Error::invalid("normality_test", "all values identical"));
    }

    let an = n as f64;
    let nn2 = n / 2;
    // a[i] for i = 1..=nn2, antisymmetric weights of the upper half
    let mut a = vec![0.0; nn2 + 1];
    if n == 3 {
        a[1] = 0.5f64.sqrt();
    } else {
        let an25 = an + 0.25;
        let z = std_normal();
        let m: Vec<f64> = (0..=nn2)
            .map(|i| if i == 0 { 0.0 } else { z.inverse_cdf((i as f64 - 0.375) / an25) })
            .collect();
        let summ2 = 2.0 * m[1..].iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[1] / ssumm2;
        let (i1, fac) = if n > 5 {
            let a2 = -m[2] / ssumm2 + poly(&C2, rsn);
            a[2] = a2;
            let fac = ((summ2 - 2.0 * m[1] * m[1] - 2.0 * m[2] * m[2])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            (3, fac)
        } else {
            (2, ((summ2 - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        a[1] = a1;
        for i in i1..=nn2 {
            a[i] = -m[i] / fac;
        }
    }

    let xbar = mean(&x);
    let ss: f64 = x.iter().map(|v| (v - xbar) * (v - xbar)).sum();
    let num: f64 = (1..=nn2).map(|i| a[i] * (x[n - i] - x[i - 1])).sum();
    let w = (num * num / ss).min(1.0);

    let p_value = if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::PI / 3.0;
        (pi6 * (w.sqrt().asin() - stqr)).max(0.0)
    } else {
        let w1 = (1.0 - w).ln();
        let (y, m, s) = if n <= 11 {
            let gamma = poly(&G, an);
            if w1 >= gamma {
                return Ok(ShapiroWilk { w, p_value: 1e-99 });
            }
            (-(gamma - w1).ln(), poly(&C3, an), poly(&C4, an).exp())
        } else {
            let xx = an.ln();
            (w1, poly(&C5, xx), poly(&C6, xx).exp())
        };
        std_normal().sf((y - m) / s)
    };
    Ok(ShapiroWilk {
        w,
        p_value: p_value.clamp(0.0, 1.0),
    })
}

/// Shapiro–Wilk p-value for 8 ≤ n ≤ 5000.
pub fn normality_test(sample: &[f64]) -> Result<f64> {
    if sample.len() < 8 {
        return Err(Error::too_short("normality_test", 8, sample.len()));
    }
    Ok(shapiro_wilk(sample)?.p_value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    pub p_value: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub exact: bool,
}

/// Average ranks of |d|, doubled so ties stay integral.
fn doubled_ranks(abs: &[f64]) -> (Vec<u64>, f64) {
    let n = abs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| abs[i].total_cmp(&abs[j]));
    let mut ranks = vec![0u64; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // positions i..=j share rank (i+1 + j+1)/2; doubled: i + j + 2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_term)
}

/// Exact two-sided p-value of the doubled positive-rank sum `t2` under the
/// sign-flip null, by dynamic programming over subset sums.
pub fn wilcoxon_exact_p(doubled: &[u64], t2: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all: f64 = counts.iter().sum();
    let lower: f64 = counts[..=t2 as usize].iter().sum();
    let upper: f64 = counts[t2 as usize..].iter().sum();
    (2.0 * lower.min(upper) / all).min(1.0)
}

/// Two-sided Wilcoxon signed-rank test on paired differences. Zero
/// differences are dropped; exact null distribution for n ≤ 25 (ties handled
/// exactly), otherwise the normal approximation with tie and continuity
/// corrections.
pub fn wilcoxon_signed_rank(d: &[f64]) -> Result<WilcoxonResult> {
    let nz: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
            exact: true,
        });
    }
    let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
    let (ranks, tie_term) = doubled_ranks(&abs);
    let t2: u64 = ranks.iter().zip(&nz).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let statistic = t2 as f64 / 2.0;
    if n <= EXACT_MAX_N {
        return Ok(WilcoxonResult {
            statistic,
            p_value: wilcoxon_exact_p(&ranks, t2),
            n,
            exact: true,
        });
    }
    let nf = n as f64;
    let mn = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let mut diff = statistic - mn;
    if diff != 0.0 {
        diff -= 0.5 * diff.signum();
    }
    let z = diff / var.sqrt();
    Ok(WilcoxonResult {
        statistic,
        p_value: (2.0 * std_normal().sf(z.abs())).min(1.0),
        n,
        exact: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub t: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Two-sided paired t-test on differences.
pub fn paired_t_test(d: &[f64]) -> Result<PairedTest> {
    let n = d.len();
    if n < 2 {
        return Err(Error::too_short("paired_t_test", 2, n));
    }
    let m = mean(d);
    let sd = std_dev(d, 1);
    let df = n - 1;
    if sd == 0.0 {
        let (t, p) = if m == 0.0 { (0.0, 1.0) } else { (m.signum() * f64::INFINITY, 0.0) };
        return Ok(PairedTest { t, df, p_value: p });
    }
    let t = m / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::invalid("t distribution", e.to_string()))?;
    Ok(PairedTest {
        t,
        df,
        p_value: (2.0 * dist.sf(t.abs())).min(1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    PairedT,
    Wilcoxon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareResult {
    pub test_used: TestKind,
    pub p_value: f64,
    /// d_z = mean(d) / std(d, ddof = 1) with d = a − b.
    pub cohens_d: f64,
    pub significant: bool,
    /// Shapiro–Wilk p-value of the differences; `None` when not computable
    /// (all differences equal).
    pub normality_p: Option<f64>,
    pub n: usize,
}

pub fn cohens_dz(d: &[f64]) -> f64 {
    let m = mean(d);
    let sd = std_dev(d, 1);
    if sd == 0.0 {
        if m == 0.0 {
            0.0
        } else {
            m.signum() * f64::INFINITY
        }
    } else {
        m / sd
    }
}

/// Paired comparison: t-test when the differences look normal
/// (Shapiro–Wilk p ≥ 0.05), Wilcoxon signed-rank otherwise.
pub fn paired_compare(a: &[f64], b: &[f64]) -> Result<CompareResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            op: "paired_compare",
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    if n < 8 {
        return Err(Error::too_short("paired_compare", 8, n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().all(|v| *v == 0.0) {
        return Ok(CompareResult {
            test_used: TestKind::Wilcoxon,
            p_value: 1.0,
            cohens_d: 0.0,
            significant: false,
            normality_p: None,
            n,
        });
    }
    let normality_p = normality_test(&d).ok();
    let (test_used, p_value) = match normality_p {
        Some(p) if p < NORMALITY_GATE => (TestKind::Wilcoxon, wilcoxon_signed_rank(&d)?.p_value),
        _ => (TestKind::PairedT, paired_t_test(&d)?.p_value),
    };
    Ok(CompareResult {
        test_used,
        p_value,
        cohens_d: cohens_dz(&d),
        significant: p_value < SIGNIFICANCE,
        normality_p,
        n,
    })
}
