//! Adversarial examples: white-box PGD and black-box Square, both untargeted
//! under an L-infinity budget. Both stop as soon as the predicted label moves
//! away from the original prediction.

use ndarray::{Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{feature_matrix, Sample};
use crate::models::{argmax, BlackBox, TrainedModel, WhiteBox};
use crate::seed::{derive_seed, rng_for, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvResult {
    pub adversarial: Vec<f64>,
    pub l2_distance: f64,
    pub flipped: bool,
    pub queries_or_iters: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdParams {
    pub epsilon: f64,
    pub step: f64,
    pub max_iters: usize,
}

impl Default for PgdParams {
    fn default() -> Self {
        Self { epsilon: 8.0 / 255.0, step: 2.0 / 255.0, max_iters: 50 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SquareParams {
    pub epsilon: f64,
    pub max_queries: usize,
    /// Initial fraction of pixels covered by a square.
    pub p_init: f64,
}

impl Default for SquareParams {
    fn default() -> Self {
        Self { epsilon: 8.0 / 255.0, max_queries: 1000, p_init: 0.3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AdvMode {
    Pgd(PgdParams),
    Square(SquareParams),
}

impl AdvMode {
    pub fn epsilon(&self) -> f64 {
        match self {
            AdvMode::Pgd(p) => p.epsilon,
            AdvMode::Square(p) => p.epsilon,
        }
    }

    /// Same attack with a different budget.
    pub fn with_epsilon(self, epsilon: f64) -> Self {
        match self {
            AdvMode::Pgd(p) => AdvMode::Pgd(PgdParams { epsilon, ..p }),
            AdvMode::Square(p) => AdvMode::Square(SquareParams { epsilon, ..p }),
        }
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn finish(x0: &[f64], adv: Vec<f64>, flipped: bool, count: usize) -> AdvResult {
    AdvResult { l2_distance: l2(x0, &adv), adversarial: adv, flipped, queries_or_iters: count }
}

/// PGD on a single sample.
pub fn pgd_attack(model: &impl WhiteBox, x: &[f64], params: PgdParams) -> AdvResult {
    pgd_batch(model, &Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row"), params).remove(0)
}

/// PGD on every row of `x`. Rows advance in lockstep; a row stops at its first
/// flip. The loss gradient is taken w.r.t. the original prediction.
pub fn pgd_batch(model: &impl WhiteBox, x: &Array2<f64>, params: PgdParams) -> Vec<AdvResult> {
    let n = x.nrows();
    let original = model.predict(x);
    let mut cur = x.clone();
    let mut done = vec![false; n];
    let mut iters = vec![0usize; n];
    for it in 1..=params.max_iters {
        let active: Vec<usize> = (0..n).filter(|&i| !done[i]).collect();
        if active.is_empty() || params.epsilon == 0.0 {
            break;
        }
        let xa = cur.select(Axis(0), &active);
        let labels: Vec<usize> = active.iter().map(|&i| original[i]).collect();
        let grad = model.input_gradient(&xa, &labels);
        let mut next = xa;
        for (r, &i) in active.iter().enumerate() {
            let mut row = next.row_mut(r);
            for (k, v) in row.iter_mut().enumerate() {
                let g = grad[[r, k]];
                let stepped = *v + params.step * if g > 0.0 { 1.0 } else if g < 0.0 { -1.0 } else { 0.0 };
                let lo = (x[[i, k]] - params.epsilon).max(0.0);
                let hi = (x[[i, k]] + params.epsilon).min(1.0);
                *v = stepped.clamp(lo, hi);
                debug_assert!((*v - x[[i, k]]).abs() <= params.epsilon + 1e-12 && (0.0..=1.0).contains(v));
            }
        }
        let pred = model.predict(&next);
        for (r, &i) in active.iter().enumerate() {
            cur.row_mut(i).assign(&next.row(r));
            iters[i] = it;
            if pred[r] != original[i] {
                done[i] = true;
            }
        }
    }
    (0..n)
        .map(|i| finish(x.row(i).as_slice().unwrap(), cur.row(i).to_vec(), done[i], iters[i]))
        .collect()
}

/// Margin of the original label in log-probability space; negative once the
/// prediction has moved.
fn margin(probs: &[f64], label: usize) -> f64 {
    let own = probs[label].max(f64::MIN_POSITIVE).ln();
    let other = probs
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != label)
        .map(|(_, p)| p.max(f64::MIN_POSITIVE).ln())
        .fold(f64::NEG_INFINITY, f64::max);
    own - other
}

/// Piecewise-constant decay of the square size, rescaled to a 10000-query run.
pub fn p_schedule(p_init: f64, iteration: usize, max_queries: usize) -> f64 {
    let it = (iteration * 10000).checked_div(max_queries).unwrap_or(0);
    let div = match it {
        0..=10 => 1.0,
        11..=50 => 2.0,
        51..=200 => 4.0,
        201..=500 => 8.0,
        501..=1000 => 16.0,
        1001..=2000 => 32.0,
        2001..=4000 => 64.0,
        4001..=6000 => 128.0,
        6001..=8000 => 256.0,
        _ => 512.0,
    };
    p_init / div
}

/// Image layout `(channels, height, width)` of a flat feature row.
pub type Shape = (usize, usize, usize);

/// Square attack on a single sample.
pub fn square_attack(model: &impl BlackBox, x: &[f64], shape: Shape, params: SquareParams, seed: u64) -> AdvResult {
    let m = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
    square_batch(model, &m, shape, params, &[seed]).remove(0)
}

/// Random search over square patches set to `x0 +- epsilon` per channel,
/// starting from the clean input. A candidate is kept when it does not
/// increase the margin of the original label. The first query scores the
/// clean input; `queries_or_iters` never exceeds `max_queries`. Row `i` uses
/// its own generator seeded by `seeds[i]`, so results do not depend on batching.
pub fn square_batch(model: &impl BlackBox, x: &Array2<f64>, shape: Shape, params: SquareParams, seeds: &[u64]) -> Vec<AdvResult> {
    let (c, h, w) = shape;
    assert_eq!(c * h * w, x.ncols(), "square attack shape");
    assert_eq!(seeds.len(), x.nrows());
    let n = x.nrows();
    if params.max_queries == 0 {
        return (0..n).map(|i| finish(x.row(i).as_slice().unwrap(), x.row(i).to_vec(), false, 0)).collect();
    }
    let probs = model.posteriors(x);
    let original: Vec<usize> = (0..n).map(|i| argmax(probs.row(i).as_slice().unwrap())).collect();
    let mut best: Vec<f64> = (0..n).map(|i| margin(probs.row(i).as_slice().unwrap(), original[i])).collect();
    let mut cur = x.clone();
    let mut queries = vec![1usize; n];
    let mut done: Vec<bool> = best.iter().map(|m| *m < 0.0).collect();
    let mut rngs: Vec<Rng> = seeds.iter().map(|&s| rng_for(s)).collect();
    // a zero budget can only re-query the clean input
    let rounds = if params.epsilon == 0.0 { 0 } else { params.max_queries - 1 };
    for iteration in 0..rounds {
        let active: Vec<usize> = (0..n).filter(|&i| !done[i]).collect();
        if active.is_empty() {
            break;
        }
        let p = p_schedule(params.p_init, iteration, params.max_queries);
        let side = ((p * (h * w) as f64).sqrt().round() as usize).clamp(1, h.min(w));
        let mut cand = cur.select(Axis(0), &active);
        for (r, &i) in active.iter().enumerate() {
            let rng = &mut rngs[i];
            let top = rng.random_range(0..=h - side);
            let left = rng.random_range(0..=w - side);
            let mut row = cand.row_mut(r);
            for ch in 0..c {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                for a in top..top + side {
                    for b in left..left + side {
                        let k = ch * h * w + a * w + b;
                        row[k] = (x[[i, k]] + sign * params.epsilon).clamp(0.0, 1.0);
                    }
                }
            }
        }
        let cand_probs = model.posteriors(&cand);
        for (r, &i) in active.iter().enumerate() {
            queries[i] += 1;
            let m = margin(cand_probs.row(r).as_slice().unwrap(), original[i]);
            if m <= best[i] {
                best[i] = m;
                cur.row_mut(i).assign(&cand.row(r));
            }
            if best[i] < 0.0 {
                done[i] = true;
            }
        }
    }
    (0..n)
        .map(|i| finish(x.row(i).as_slice().unwrap(), cur.row(i).to_vec(), done[i], queries[i]))
        .collect()
}

/// Per-sample L2 distance between each sample and its adversarial example.
/// Samples that never flip contribute their distance at budget exhaustion.
pub fn adv_l2_profile(model: &TrainedModel, samples: &[Sample], mode: &AdvMode, seed: u64) -> Vec<AdvResult> {
    adv_profile_with(model, (model.meta.channels, model.meta.height, model.meta.width), samples, mode, seed)
}

/// [`adv_l2_profile`] for any white-box model with an explicit input shape.
pub fn adv_profile_with(model: &impl WhiteBox, shape: Shape, samples: &[Sample], mode: &AdvMode, seed: u64) -> Vec<AdvResult> {
    if samples.is_empty() {
        return Vec::new();
    }
    let x = feature_matrix(samples);
    match mode {
        AdvMode::Pgd(p) => pgd_batch(model, &x, *p),
        AdvMode::Square(p) => {
            let seeds: Vec<u64> = samples.iter().map(|s| derive_seed(seed, "square", s.id)).collect();
            square_batch(model, &x, shape, *p, &seeds)
        }
    }
}

pub fn distances(results: &[AdvResult]) -> Vec<f64> {
    results.iter().map(|r| r.l2_distance).collect()
}
