use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnPlacement {
    /// affine -> rectifier -> batch norm
    #[default]
    AfterActivation,
    /// affine -> batch norm -> rectifier
    BeforeActivation,
}

impl BnPlacement {
    pub fn as_str(self) -> &'static str {
        match self {
            BnPlacement::AfterActivation => "after-activation",
            BnPlacement::BeforeActivation => "before-activation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    /// One flag per hidden layer.
    pub batch_norm: Vec<bool>,
    pub placement: BnPlacement,
}

impl RegressorSpec {
    /// Three rectified hidden layers (400, 300, 200), each batch-normalized.
    pub fn standard(input_dim: usize, output_dim: usize) -> Self {
        RegressorSpec::new(input_dim, vec![400, 300, 200], output_dim)
    }

    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        RegressorSpec {
            input_dim,
            batch_norm: vec![true; hidden.len()],
            hidden,
            output_dim,
            placement: BnPlacement::AfterActivation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("all layer dimensions must be >= 1".into()));
        }
        if self.batch_norm.len() != self.hidden.len() {
            return Err(Error::InvalidConfig(
                "need one batch-norm flag per hidden layer".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_out, fan_in)` of every affine layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    /// Number of stored scalars (weights, biases and four vectors per batch-norm layer).
    pub fn parameter_count(&self) -> usize {
        let affine: usize = self.layer_shapes().iter().map(|(o, i)| o * i + o).sum();
        let bn: usize = self
            .hidden
            .iter()
            .zip(&self.batch_norm)
            .filter(|(_, &b)| b)
            .map(|(h, _)| 4 * h)
            .sum();
        affine + bn
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// fan_out x fan_in
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
}

impl BatchNorm {
    fn new(n: usize) -> Self {
        BatchNorm {
            gamma: DVector::from_element(n, 1.0),
            beta: DVector::zeros(n),
            running_mean: DVector::zeros(n),
            running_var: DVector::from_element(n, 1.0),
        }
    }
}

/// Feed-forward regressor weights plus training metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorModel {
    pub spec: RegressorSpec,
    pub layers: Vec<Dense>,
    /// One entry per hidden layer.
    pub norms: Vec<Option<BatchNorm>>,
    pub seed: u64,
    pub epochs: usize,
    pub trained: bool,
    pub channel_spec_version: u32,
    pub metrics: Vec<(String, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics (running statistics for a batch of one).
    Train,
    Infer,
}

/// Per-layer values kept from a training-mode forward pass.
pub(crate) struct LayerCache {
    input: DMatrix<f64>,
    /// Input of the rectifier.
    relu_in: DMatrix<f64>,
    /// Normalized values (before scale/shift), if the layer has batch norm.
    xhat: Option<DMatrix<f64>>,
    inv_std: Option<DVector<f64>>,
    batch_stats: bool,
}

pub(crate) struct ForwardCache {
    layers: Vec<LayerCache>,
    output_input: DMatrix<f64>,
    /// Per-layer `(mean, biased variance)` of the batch, for running-stat updates.
    pub batch_moments: Vec<Option<(DVector<f64>, DVector<f64>)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub gammas: Vec<Option<DVector<f64>>>,
    pub betas: Vec<Option<DVector<f64>>>,
}

impl Gradients {
    /// Flattened in the same order as [`RegressorModel::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        for (g, b) in self.gammas.iter().zip(&self.betas) {
            if let (Some(g), Some(b)) = (g, b) {
                out.extend(g.iter());
                out.extend(b.iter());
            }
        }
        out
    }
}

fn relu(m: &mut DMatrix<f64>) {
    m.apply(|x| *x = x.max(0.0));
}

fn add_bias(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += b;
    }
}

impl RegressorModel {
    /// Fan-in scaled uniform weights, zero biases, identity batch norm. Parameters are
    /// rounded to single precision, the precision they are stored at.
    pub fn init(spec: RegressorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(out, inp)| {
                let bound = (3.0 / inp as f64).sqrt();
                Dense {
                    weight: DMatrix::from_fn(out, inp, |_, _| {
                        rng.random_range(-bound..bound) as f32 as f64
                    }),
                    bias: DVector::zeros(out),
                }
            })
            .collect();
        let norms = spec
            .hidden
            .iter()
            .zip(&spec.batch_norm)
            .map(|(&h, &bn)| bn.then(|| BatchNorm::new(h)))
            .collect();
        Ok(RegressorModel {
            spec,
            layers,
            norms,
            seed,
            epochs: 0,
            trained: false,
            channel_spec_version: crate::features::CHANNEL_SPEC_VERSION,
            metrics: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Single-sample forward pass with running statistics. The arithmetic is a fixed
    /// sequence of matrix-vector products, so results do not depend on batching.
    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        let mut a = DVector::from_column_slice(x);
        let hidden = self.layers.len() - 1;
        for l in 0..hidden {
            let layer = &self.layers[l];
            let mut z = &layer.weight * &a + &layer.bias;
            let norm = |z: &mut DVector<f64>| {
                if let Some(bn) = &self.norms[l] {
                    for i in 0..z.len() {
                        let xhat = (z[i] - bn.running_mean[i]) / (bn.running_var[i] + BN_EPS).sqrt();
                        z[i] = bn.gamma[i] * xhat + bn.beta[i];
                    }
                }
            };
            match self.spec.placement {
                BnPlacement::AfterActivation => {
                    z.apply(|v| *v = v.max(0.0));
                    norm(&mut z);
                }
                BnPlacement::BeforeActivation => {
                    norm(&mut z);
                    z.apply(|v| *v = v.max(0.0));
                }
            }
            a = z;
        }
        let out = &self.layers[hidden];
        Ok((&out.weight * &a + &out.bias).as_slice().to_vec())
    }

    /// Forward pass for one sample. A single sample has no batch statistics, so both
    /// modes use the running statistics.
    pub fn forward(&self, x: &[f64], _mode: Mode) -> Result<Vec<f64>> {
        self.predict_one(x)
    }

    /// Batched forward pass; `x` holds one sample per column.
    pub(crate) fn forward_batch(&self, x: &DMatrix<f64>, mode: Mode) -> (DMatrix<f64>, ForwardCache) {
        let batch = x.ncols();
        let use_batch = mode == Mode::Train && batch > 1;
        let mut a = x.clone();
        let hidden = self.layers.len() - 1;
        let mut caches = Vec::with_capacity(hidden);
        let mut moments = Vec::with_capacity(hidden);
        for l in 0..hidden {
            let layer = &self.layers[l];
            let mut z = &layer.weight * &a;
            add_bias(&mut z, &layer.bias);
            let mut cache = LayerCache {
                input: a,
                relu_in: DMatrix::zeros(0, 0),
                xhat: None,
                inv_std: None,
                batch_stats: use_batch,
            };
            let mut h = z;
            if self.spec.placement == BnPlacement::AfterActivation {
                cache.relu_in = h.clone();
                relu(&mut h);
            }
            let mut moment = None;
            if let Some(bn) = &self.norms[l] {
                let (mean, var) = if use_batch {
                    let mean = h.column_mean();
                    let mut var = DVector::zeros(h.nrows());
                    for c in h.column_iter() {
                        let d = c - &mean;
                        var += d.component_mul(&d);
                    }
                    var /= batch as f64;
                    (mean, var)
                } else {
                    (bn.running_mean.clone(), bn.running_var.clone())
                };
                let inv_std = var.map(|v| 1.0 / (v + BN_EPS).sqrt());
                let mut xhat = h.clone();
                for mut col in xhat.column_iter_mut() {
                    col -= &mean;
                    col.component_mul_assign(&inv_std);
                }
                let mut y = xhat.clone();
                for mut col in y.column_iter_mut() {
                    col.component_mul_assign(&bn.gamma);
                    col += &bn.beta;
                }
                cache.xhat = Some(xhat);
                cache.inv_std = Some(inv_std);
                if use_batch {
                    moment = Some((mean, var));
                }
                h = y;
            }
            if self.spec.placement == BnPlacement::BeforeActivation {
                cache.relu_in = h.clone();
                relu(&mut h);
            }
            caches.push(cache);
            moments.push(moment);
            a = h;
        }
        let out = &self.layers[hidden];
        let mut y = &out.weight * &a;
        add_bias(&mut y, &out.bias);
        (
            y,
            ForwardCache {
                layers: caches,
                output_input: a,
                batch_moments: moments,
            },
        )
    }

    /// Mean squared error over all entries of the batch, and its gradients.
    pub(crate) fn loss_and_gradients(
        &self,
        x: &DMatrix<f64>,
        target: &DMatrix<f64>,
        mode: Mode,
    ) -> (f64, Gradients, ForwardCache) {
        let (pred, cache) = self.forward_batch(x, mode);
        let diff = &pred - target;
        let count = diff.len() as f64;
        let loss = diff.norm_squared() / count;
        let mut delta = diff * (2.0 / count);

        let n_layers = self.layers.len();
        let mut weights = vec![DMatrix::zeros(0, 0); n_layers];
        let mut biases = vec![DVector::zeros(0); n_layers];
        let mut gammas = vec![None; n_layers - 1];
        let mut betas = vec![None; n_layers - 1];

        let out = &self.layers[n_layers - 1];
        weights[n_layers - 1] = &delta * cache.output_input.transpose();
        biases[n_layers - 1] = row_sums(&delta);
        delta = out.weight.transpose() * &delta;

        for l in (0..n_layers - 1).rev() {
            let c = &cache.layers[l];
            // delta is now d(loss)/d(layer output)
            if self.spec.placement == BnPlacement::BeforeActivation {
                relu_backward(&mut delta, &c.relu_in);
            }
            if let (Some(bn), Some(xhat), Some(inv_std)) = (&self.norms[l], &c.xhat, &c.inv_std) {
                gammas[l] = Some(row_sums(&delta.component_mul(xhat)));
                betas[l] = Some(row_sums(&delta));
                let mut dxhat = delta.clone();
                for mut col in dxhat.column_iter_mut() {
                    col.component_mul_assign(&bn.gamma);
                }
                if c.batch_stats {
                    let b = dxhat.ncols() as f64;
                    let sum_dxhat = row_sums(&dxhat);
                    let sum_dxhat_xhat = row_sums(&dxhat.component_mul(xhat));
                    let mut d = dxhat * b;
                    for (j, mut col) in d.column_iter_mut().enumerate() {
                        col -= &sum_dxhat;
                        col -= xhat.column(j).component_mul(&sum_dxhat_xhat);
                        col.component_mul_assign(inv_std);
                        col /= b;
                    }
                    delta = d;
                } else {
                    for mut col in dxhat.column_iter_mut() {
                        col.component_mul_assign(inv_std);
                    }
                    delta = dxhat;
                }
            }
            if self.spec.placement == BnPlacement::AfterActivation {
                relu_backward(&mut delta, &c.relu_in);
            }
            weights[l] = &delta * c.input.transpose();
            biases[l] = row_sums(&delta);
            if l > 0 {
                delta = self.layers[l].weight.transpose() * &delta;
            }
        }
        (
            loss,
            Gradients {
                weights,
                biases,
                gammas,
                betas,
            },
            cache,
        )
    }

    /// Learnable parameters (weights, biases, then batch-norm scale and shift) flattened.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for d in &self.layers {
            out.extend(d.weight.iter());
            out.extend(d.bias.iter());
        }
        for bn in self.norms.iter().flatten() {
            out.extend(bn.gamma.iter());
            out.extend(bn.beta.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for d in &mut self.layers {
            d.weight.iter_mut().for_each(|w| *w = it.next().expect("param count"));
            d.bias.iter_mut().for_each(|w| *w = it.next().expect("param count"));
        }
        for bn in self.norms.iter_mut().flatten() {
            bn.gamma.iter_mut().for_each(|w| *w = it.next().expect("param count"));
            bn.beta.iter_mut().for_each(|w| *w = it.next().expect("param count"));
        }
        assert!(it.next().is_none(), "too many parameters");
    }

    /// Mean squared error of a batch (samples as columns) with batch statistics, and
    /// the flattened gradient of every learnable parameter.
    pub fn batch_loss_gradient(&self, x: &DMatrix<f64>, target: &DMatrix<f64>) -> (f64, Vec<f64>) {
        let (loss, grads, _) = self.loss_and_gradients(x, target, Mode::Train);
        (loss, grads.flatten())
    }

    /// Training-mode mean squared error of a batch.
    pub fn batch_loss(&self, x: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
        let (pred, _) = self.forward_batch(x, Mode::Train);
        (&pred - target).norm_squared() / pred.len() as f64
    }

    pub(crate) fn round_to_f32(&mut self) {
        let r = |x: &mut f64| *x = *x as f32 as f64;
        for d in &mut self.layers {
            d.weight.iter_mut().for_each(r);
            d.bias.iter_mut().for_each(r);
        }
        for bn in self.norms.iter_mut().flatten() {
            bn.gamma.iter_mut().for_each(r);
            bn.beta.iter_mut().for_each(r);
            bn.running_mean.iter_mut().for_each(r);
            bn.running_var.iter_mut().for_each(|v| {
                *v = (*v as f32).max(f32::MIN_POSITIVE) as f64;
            });
        }
    }
}

fn relu_backward(delta: &mut DMatrix<f64>, relu_in: &DMatrix<f64>) {
    delta.zip_apply(relu_in, |d, x| {
        if x <= 0.0 {
            *d = 0.0
        }
    });
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    for c in m.column_iter() {
        out += c;
    }
    out
}
