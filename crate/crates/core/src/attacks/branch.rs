//! Multi-input binary classifier: each input group passes through its own
//! two-layer dense branch; the branch outputs are concatenated and fed to a
//! four-layer dense head with a single logit.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{gather_rows, shuffled_indices, sigmoid, Adam, Network};
use crate::seed::{derive_seed, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub branch_width: usize,
    pub seed: u64,
}

impl Default for AttackTrainConfig {
    fn default() -> Self {
        Self { epochs: 10, learning_rate: 1e-3, batch_size: 32, branch_width: 32, seed: 0 }
    }
}

/// Per-column z-scoring fitted on training inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    mean: Array1<f64>,
    inv_std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let var = x.var_axis(Axis(0), 0.0);
        let inv_std = var.mapv(|v| if v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 });
        Self { mean, inv_std }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) * &self.inv_std
    }
}

/// Replacement loss gradient: batch positions and logits in, d(loss)/d(logit) out.
pub(crate) type LogitGrad<'a> = &'a mut dyn FnMut(&[usize], &Array1<f64>) -> Array1<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct BranchNet {
    pub branches: Vec<Network>,
    pub head: Network,
    pub scalers: Vec<Standardizer>,
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

impl BranchNet {
    pub fn new(input_dims: &[usize], width: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed);
        let branches: Vec<Network> = input_dims.iter().map(|&d| Network::mlp(&[d, width, width], &mut rng)).collect();
        let fused = width * input_dims.len();
        let head = Network::mlp(&[fused, 2 * width, width, width / 2, 1], &mut rng);
        let scalers = input_dims
            .iter()
            .map(|&d| Standardizer { mean: Array1::zeros(d), inv_std: Array1::ones(d) })
            .collect();
        Self { branches, head, scalers }
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.input_dim).collect()
    }

    fn param_count(&self) -> usize {
        self.branches.iter().map(Network::param_count).sum::<usize>() + self.head.param_count()
    }

    fn apply_update(&mut self, delta: &[f64]) {
        let mut off = 0;
        for b in &mut self.branches {
            let n = b.param_count();
            b.apply_update(&delta[off..off + n]);
            off += n;
        }
        self.head.apply_update(&delta[off..]);
    }

    fn scaled(&self, inputs: &[Array2<f64>]) -> Vec<Array2<f64>> {
        inputs.iter().zip(&self.scalers).map(|(x, s)| s.apply(x)).collect()
    }

    /// Membership logits for raw (unstandardized) inputs.
    pub fn logits(&self, inputs: &[Array2<f64>]) -> Array1<f64> {
        self.logits_scaled(&self.scaled(inputs))
    }

    pub fn scores(&self, inputs: &[Array2<f64>]) -> Vec<f64> {
        self.logits(inputs).iter().map(|&z| sigmoid(z)).collect()
    }

    /// Gradient of `sum(dlogit_i * logit_i)` over the batch, with the input
    /// already standardized.
    fn gradient(&self, scaled: &[Array2<f64>], dlogit: &Array1<f64>) -> Vec<f64> {
        let mut traces = Vec::with_capacity(self.branches.len());
        let mut outs = Vec::with_capacity(self.branches.len());
        for (b, x) in self.branches.iter().zip(scaled) {
            let (o, t) = b.forward_trace(x);
            outs.push(o);
            traces.push(t);
        }
        let acts: Vec<Array2<f64>> = outs.iter().map(relu).collect();
        let views: Vec<_> = acts.iter().map(|o| o.view()).collect();
        let fused = concatenate(Axis(1), &views).expect("batch");
        let (_, head_trace) = self.head.forward_trace(&fused);
        let g_out = dlogit.clone().insert_axis(Axis(1));
        let (head_grad, g_fused) = self.head.backward(&head_trace, &g_out);
        let mut grads = Vec::with_capacity(self.param_count());
        let mut col = 0;
        for ((b, t), o) in self.branches.iter().zip(&traces).zip(&outs) {
            let w = b.output_dim();
            let mut g = g_fused.slice(s![.., col..col + w]).to_owned();
            g.zip_mut_with(o, |g, &v| {
                if v <= 0.0 {
                    *g = 0.0;
                }
            });
            grads.extend(b.backward(t, &g).0);
            col += w;
        }
        grads.extend(head_grad);
        grads
    }

    /// Fit to binary `labels` with Adam on the mean logistic loss, first
    /// fitting the per-branch standardizers on `inputs`.
    pub fn fit(inputs: &[Array2<f64>], labels: &[usize], config: &AttackTrainConfig) -> Result<Self> {
        check_binary(labels)?;
        let mut net = Self::init(inputs, config);
        net.train(inputs, labels, config, None)?;
        Ok(net)
    }

    /// Untrained network with standardizers fitted on `inputs`.
    pub(crate) fn init(inputs: &[Array2<f64>], config: &AttackTrainConfig) -> Self {
        let dims: Vec<usize> = inputs.iter().map(|x| x.ncols()).collect();
        let mut net = Self::new(&dims, config.branch_width, derive_seed(config.seed, "attack_init", 0));
        net.scalers = inputs.iter().map(Standardizer::fit).collect();
        net
    }

    /// Continue training. By default the loss is the logistic loss against
    /// `labels`; `dlogit_fn` replaces it with a caller-provided gradient
    /// w.r.t. the logits, given the batch positions and current logits.
    pub(crate) fn train(
        &mut self,
        inputs: &[Array2<f64>],
        labels: &[usize],
        config: &AttackTrainConfig,
        mut dlogit_fn: Option<LogitGrad<'_>>,
    ) -> Result<()> {
        let n = labels.len();
        if inputs.iter().any(|x| x.nrows() != n) {
            return Err(Error::ShapeMismatch("attack inputs and labels differ in length".into()));
        }
        let scaled = self.scaled(inputs);
        let mut adam = Adam::new(config.learning_rate, self.param_count());
        let mut rng = rng_for(derive_seed(config.seed, "attack_shuffle", 0));
        for _ in 0..config.epochs {
            let order = shuffled_indices(n, &mut rng);
            for batch in order.chunks(config.batch_size.max(1)) {
                let xb: Vec<Array2<f64>> = scaled.iter().map(|x| gather_rows(x, batch)).collect();
                let dlogit = match dlogit_fn.as_mut() {
                    Some(f) => f(batch, &self.logits_scaled(&xb)),
                    None => {
                        let z = self.logits_scaled(&xb);
                        Array1::from_iter(batch.iter().zip(z.iter()).map(|(&i, &z)| sigmoid(z) - labels[i] as f64))
                    }
                };
                let dlogit = dlogit / batch.len() as f64;
                let grad = self.gradient(&xb, &dlogit);
                let delta = adam.delta(&grad);
                self.apply_update(&delta);
            }
        }
        if self.head.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::DivergedTraining { epoch: config.epochs });
        }
        Ok(())
    }

    pub(crate) fn logits_scaled(&self, scaled: &[Array2<f64>]) -> Array1<f64> {
        let outs: Vec<Array2<f64>> = self.branches.iter().zip(scaled).map(|(b, x)| relu(&b.forward(x))).collect();
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        let fused = concatenate(Axis(1), &views).expect("batch");
        self.head.forward(&fused).column(0).to_owned()
    }
}

pub(crate) fn check_binary(labels: &[usize]) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::DegenerateLabels("membership labels must be 0 or 1".into()));
    }
    if pos == 0 || pos == labels.len() {
        return Err(Error::DegenerateLabels(format!("{pos} of {} records are members", labels.len())));
    }
    Ok(())
}
