//! Renyi-DP accounting for the subsampled Gaussian mechanism.
//!
//! For integer order `a`, sampling rate `q` and noise multiplier `sigma`:
//!
//! ```text
//! A_a = sum_{k=0..a} C(a,k) (1-q)^(a-k) q^k exp((k^2 - k) / (2 sigma^2))
//! rdp(a) = ln(A_a) / (a - 1)
//! eps = min_a  steps * rdp(a) + ln(1/delta) / (a - 1)
//! ```

use crate::error::{Error, Result};

const ORDERS: std::ops::RangeInclusive<u32> = 2..=256;
const SIGMA_MAX: f64 = 1e4;

fn ln_binomial(n: u32, k: u32) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// RDP of one step of the sampled Gaussian mechanism at integer order `alpha`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: u32) -> f64 {
    if sigma <= 0.0 {
        return f64::INFINITY;
    }
    if q >= 1.0 {
        return alpha as f64 / (2.0 * sigma * sigma);
    }
    if q <= 0.0 {
        return 0.0;
    }
    let a = alpha;
    let terms: Vec<f64> = (0..=a)
        .map(|k| {
            let kf = k as f64;
            ln_binomial(a, k) + (a - k) as f64 * (1.0 - q).ln() + kf * q.ln() + (kf * kf - kf) / (2.0 * sigma * sigma)
        })
        .collect();
    log_sum_exp(&terms) / (a as f64 - 1.0)
}

/// Smallest epsilon over the order grid after `steps` compositions.
pub fn compute_epsilon(q: f64, sigma: f64, steps: usize, delta: f64) -> f64 {
    ORDERS
        .map(|a| steps as f64 * rdp_subsampled_gaussian(q, sigma, a) + (1.0 / delta).ln() / (a as f64 - 1.0))
        .fold(f64::INFINITY, f64::min)
}

/// Binary search for the smallest noise multiplier reaching `(epsilon, delta)`.
pub fn noise_multiplier_for(epsilon: f64, delta: f64, q: f64, steps: usize) -> Result<f64> {
    if !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) || !(q > 0.0 && q <= 1.0) || steps == 0 {
        return Err(Error::AccountingError(format!(
            "cannot account epsilon={epsilon} delta={delta} q={q} steps={steps}"
        )));
    }
    if compute_epsilon(q, SIGMA_MAX, steps, delta) > epsilon {
        return Err(Error::AccountingError(format!(
            "no noise multiplier up to {SIGMA_MAX} reaches epsilon={epsilon} at delta={delta}"
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, SIGMA_MAX);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if compute_epsilon(q, mid, steps, delta) > epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 * hi {
            break;
        }
    }
    Ok(hi)
}
