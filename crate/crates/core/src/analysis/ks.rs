use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Asymptotic critical value at `alpha`.
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Two-sample Kolmogorov-Smirnov test at `alpha = 0.05`.
pub fn ks_shift(a: &[f64], b: &[f64]) -> KsResult {
    ks_test(a, b, 0.05)
}

pub fn ks_test(a: &[f64], b: &[f64], alpha: f64) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "ks test needs nonempty samples");
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (n, m) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let v = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] == v {
            i += 1;
        }
        while j < xb.len() && xb[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let scale = ((n + m) / (n * m)).sqrt();
    let c_alpha = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let critical_value = c_alpha * scale;
    let en = (n * m / (n + m)).sqrt();
    KsResult { statistic: d, critical_value, p_value: kolmogorov_sf((en + 0.12 + 0.11 / en) * d), reject: d > critical_value }
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_sf(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * x * x).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}
