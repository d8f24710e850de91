//! Likelihood-ratio membership inference with per-sample Gaussians fitted on
//! shadow models trained with and without each sample.

use std::collections::HashSet;

use rand::Rng as _;
use rayon::prelude::*;

use super::adv::{adv_l2_profile, AdvMode};
use super::AttackResult;
use crate::data::{feature_matrix, DatasetMeta, Sample};
use crate::error::{Error, Result};
use crate::models::{train_model, BlackBox, ModelConfig, TrainedModel};
use crate::seed::{derive_seed, rng_for};

const LOGIT_CLAMP: f64 = 20.0;
const COV_REG: f64 = 1e-6;

/// Multivariate Gaussian with a Cholesky-factored covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
    log_det: f64,
}

impl GaussianFit {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d || cov.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch(format!("covariance is not {d}x{d}")));
        }
        let mut l = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = cov[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::InvalidSpec("covariance is not positive definite".into()));
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        let log_det = 2.0 * (0..d).map(|i| l[i][i].ln()).sum::<f64>();
        Ok(Self { mean, cov, chol: l, log_det })
    }

    /// Maximum-likelihood fit plus `reg` on the diagonal.
    pub fn fit(observations: &[Vec<f64>], reg: f64) -> Result<Self> {
        let n = observations.len();
        if n == 0 {
            return Err(Error::InsufficientSamples("no observations to fit".into()));
        }
        let d = observations[0].len();
        let mut mean = vec![0.0; d];
        for o in observations {
            for (m, v) in mean.iter_mut().zip(o) {
                *m += v / n as f64;
            }
        }
        let mut cov = vec![vec![0.0; d]; d];
        for o in observations {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += (o[i] - mean[i]) * (o[j] - mean[j]) / n as f64;
                }
            }
        }
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] += reg;
        }
        Self::new(mean, cov)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        // forward substitution: L z = x - mean
        let mut z = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|k| self.chol[i][k] * z[k]).sum();
            z[i] = (x[i] - self.mean[i] - s) / self.chol[i][i];
        }
        let maha: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det + maha)
    }
}

/// `-log P(x | in) + log P(x | out)`; negative values favor membership.
pub fn likelihood_ratio_score(x: &[f64], fit_in: &GaussianFit, fit_out: &GaussianFit) -> f64 {
    -fit_in.log_density(x) + fit_out.log_density(x)
}

/// Shadow models where every pool sample is a member of exactly half.
#[derive(Clone, Debug)]
pub struct LiraFleet {
    pub models: Vec<TrainedModel>,
    pub members: Vec<HashSet<u64>>,
}

/// Train `n_models` shadow models on halves of `pool`. Each sample is placed
/// in the first `n_models / 2` models of its own random model ordering.
pub fn train_lira_fleet(
    config: &ModelConfig,
    meta: DatasetMeta,
    pool: &[Sample],
    test: &[Sample],
    n_models: usize,
    seed: u64,
) -> Result<LiraFleet> {
    if n_models < 4 || n_models % 2 == 1 {
        return Err(Error::InvalidSpec(format!("LiRA needs an even number of at least 4 shadow models, got {n_models}")));
    }
    let mut rng = rng_for(derive_seed(seed, "lira_assign", 0));
    let mut subsets: Vec<Vec<Sample>> = vec![Vec::new(); n_models];
    for s in pool {
        let mut keys: Vec<(f64, usize)> = (0..n_models).map(|m| (rng.random::<f64>(), m)).collect();
        keys.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(_, m) in &keys[..n_models / 2] {
            subsets[m].push(s.clone());
        }
    }
    let models = subsets
        .par_iter()
        .enumerate()
        .map(|(m, subset)| {
            let cfg = ModelConfig { seed: derive_seed(seed, "lira_model", m as u64), ..config.clone() };
            train_model(&cfg, meta, subset, test)
        })
        .collect::<Result<Vec<_>>>()?;
    let members = subsets.iter().map(|s| s.iter().map(|x| x.id).collect()).collect();
    Ok(LiraFleet { models, members })
}

/// Logit-scaled confidence in the true label, `ln p_y - ln(1 - p_y)`,
/// clamped to +-20.
pub fn logit_confidence(model: &impl BlackBox, samples: &[Sample]) -> Vec<f64> {
    let p = model.posteriors(&feature_matrix(samples));
    samples
        .iter()
        .zip(p.rows())
        .map(|(s, row)| {
            let py = row[s.task_label];
            let rest: f64 = row.iter().enumerate().filter(|(c, _)| *c != s.task_label).map(|(_, v)| v).sum();
            (py.ln() - rest.ln()).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
        })
        .collect()
}

/// Extra per-sample observations appended to the LiRA statistic: one value
/// per eval sample for the target and for every shadow model.
#[derive(Clone, Debug, PartialEq)]
pub struct LiraAux {
    pub target: Vec<f64>,
    pub shadows: Vec<Vec<f64>>,
}

impl LiraAux {
    /// Adversarial L2 distances under `mode`.
    pub fn from_adv(target: &TrainedModel, fleet: &LiraFleet, samples: &[Sample], mode: &AdvMode, seed: u64) -> Self {
        let profile = |m: &TrainedModel| adv_l2_profile(m, samples, mode, seed).iter().map(|r| r.l2_distance).collect();
        Self { target: profile(target), shadows: fleet.models.iter().map(profile).collect() }
    }
}

#[derive(Clone, Debug)]
pub struct LiraOutput {
    pub result: AttackResult,
    /// Likelihood-ratio scores; negative favors membership.
    pub raw_scores: Vec<f64>,
}

/// Score `samples` against `target`. Result scores are the negated
/// likelihood ratio so that larger means "member"; a sample is predicted a
/// member when the ratio is negative.
pub fn lira_attack(
    target: &TrainedModel,
    fleet: &LiraFleet,
    samples: &[Sample],
    truth: &[usize],
    aux: Option<&LiraAux>,
) -> Result<LiraOutput> {
    if truth.len() != samples.len() {
        return Err(Error::ShapeMismatch("truth and samples differ in length".into()));
    }
    if let Some(a) = aux {
        if a.target.len() != samples.len() || a.shadows.len() != fleet.models.len() || a.shadows.iter().any(|s| s.len() != samples.len()) {
            return Err(Error::ShapeMismatch("auxiliary observations do not match the fleet".into()));
        }
    }
    let target_obs = logit_confidence(target, samples);
    let shadow_obs: Vec<Vec<f64>> = fleet.models.iter().map(|m| logit_confidence(m, samples)).collect();
    let observe = |obs: f64, extra: Option<f64>| -> Vec<f64> { std::iter::once(obs).chain(extra).collect() };
    let mut raw = Vec::with_capacity(samples.len());
    for (j, s) in samples.iter().enumerate() {
        let mut ins = Vec::new();
        let mut outs = Vec::new();
        for (m, obs) in shadow_obs.iter().enumerate() {
            let o = observe(obs[j], aux.map(|a| a.shadows[m][j]));
            if fleet.members[m].contains(&s.id) {
                ins.push(o);
            } else {
                outs.push(o);
            }
        }
        if ins.len() < 2 || outs.len() < 2 {
            return Err(Error::MissingFleet(format!("sample {} has {} in and {} out models", s.id, ins.len(), outs.len())));
        }
        let fit_in = GaussianFit::fit(&ins, COV_REG)?;
        let fit_out = GaussianFit::fit(&outs, COV_REG)?;
        raw.push(likelihood_ratio_score(&observe(target_obs[j], aux.map(|a| a.target[j])), &fit_in, &fit_out));
    }
    let scores = raw.iter().map(|r| -r).collect();
    let predictions = raw.iter().map(|&r| usize::from(r < 0.0)).collect();
    let result = AttackResult::binary("lira_shadow", scores, predictions, truth.to_vec())?;
    Ok(LiraOutput { result, raw_scores: raw })
}
