use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Gradients, Mode, RegressorModel};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub seed: u64,
    /// Weight of the previous running statistic in each batch-norm update.
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 512,
            epochs: 100,
            momentum: 0.0,
            seed: 0,
            bn_momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "training needs lr >= 0, batch size >= 1 and epochs >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidConfig("momentum values out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: RegressorModel,
    pub history: Vec<EpochStats>,
}

/// Feature rows paired with target rows by id.
#[derive(Clone, Debug)]
pub struct Samples {
    /// input_dim x n
    pub x: DMatrix<f64>,
    /// output_dim x n
    pub y: DMatrix<f64>,
}

impl Samples {
    pub fn align(features: &EmbeddingTable, targets: &EmbeddingTable) -> Result<Self> {
        let n = features.len();
        let mut missing = Vec::new();
        let mut y = DMatrix::zeros(targets.dim(), n);
        for (j, &id) in features.ids().iter().enumerate() {
            match targets.get(id) {
                Some(t) => y.column_mut(j).copy_from_slice(t),
                None => missing.push(format!("no target embedding for {id}")),
            }
        }
        if !missing.is_empty() {
            missing.truncate(10);
            return Err(Error::Validation(missing));
        }
        Ok(Samples {
            x: DMatrix::from_column_slice(features.dim(), n, features.as_flat()),
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }
}

/// Mean squared error with running statistics over all samples.
pub fn evaluate_mse(model: &RegressorModel, samples: &Samples) -> f64 {
    let (pred, _) = model.forward_batch(&samples.x, Mode::Infer);
    (&pred - &samples.y).norm_squared() / pred.len().max(1) as f64
}

/// Mini-batch SGD on mean squared error. Shuffles every epoch from `cfg.seed`; the last
/// short batch is kept. Master weights stay in double precision during training and
/// the returned model is rounded to single precision.
pub fn train(
    model: RegressorModel,
    train_set: &Samples,
    validation: Option<&Samples>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("no training samples".into()));
    }
    if train_set.x.nrows() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: train_set.x.nrows(),
        });
    }
    if train_set.y.nrows() != model.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.output_dim(),
            got: train_set.y.nrows(),
        });
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut velocity: Option<Gradients> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = gather(&train_set.x, batch);
            let y = gather(&train_set.y, batch);
            let (loss, grads, cache) = model.loss_and_gradients(&x, &y, Mode::Train);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, loss });
            }
            sum += loss * batch.len() as f64;
            let step = match velocity.as_mut() {
                Some(v) if cfg.momentum > 0.0 => {
                    accumulate(v, &grads, cfg.momentum);
                    v.clone()
                }
                _ => {
                    if cfg.momentum > 0.0 {
                        velocity = Some(grads.clone());
                    }
                    grads
                }
            };
            apply(&mut model, &step, cfg.learning_rate);
            for (bn, moment) in model.norms.iter_mut().zip(&cache.batch_moments) {
                if let (Some(bn), Some((mean, var))) = (bn, moment) {
                    bn.running_mean = &bn.running_mean * cfg.bn_momentum + mean * (1.0 - cfg.bn_momentum);
                    bn.running_var = &bn.running_var * cfg.bn_momentum + var * (1.0 - cfg.bn_momentum);
                }
            }
        }
        let train_mse = sum / train_set.len() as f64;
        if !train_mse.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                loss: train_mse,
            });
        }
        let val_mse = validation.filter(|v| !v.is_empty()).map(|v| evaluate_mse(&model, v));
        log::debug!("epoch {epoch}: train {train_mse:.6} val {val_mse:?}");
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
        });
    }
    model.round_to_f32();
    model.epochs += cfg.epochs;
    model.trained = true;
    model.seed = cfg.seed;
    model.metrics = vec![(
        "final_train_mse".into(),
        history.last().map_or(f64::NAN, |h| h.train_mse),
    )];
    if let Some(v) = history.last().and_then(|h| h.val_mse) {
        model.metrics.push(("final_val_mse".into(), v));
    }
    Ok(TrainOutcome { model, history })
}

fn gather(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

fn accumulate(v: &mut Gradients, g: &Gradients, momentum: f64) {
    for (a, b) in v.weights.iter_mut().zip(&g.weights) {
        *a = &*a * momentum + b;
    }
    for (a, b) in v.biases.iter_mut().zip(&g.biases) {
        *a = &*a * momentum + b;
    }
    for (a, b) in v.gammas.iter_mut().zip(&g.gammas) {
        if let (Some(a), Some(b)) = (a, b) {
            *a = &*a * momentum + b;
        }
    }
    for (a, b) in v.betas.iter_mut().zip(&g.betas) {
        if let (Some(a), Some(b)) = (a, b) {
            *a = &*a * momentum + b;
        }
    }
}

fn apply(model: &mut RegressorModel, g: &Gradients, lr: f64) {
    for (layer, (gw, gb)) in model.layers.iter_mut().zip(g.weights.iter().zip(&g.biases)) {
        layer.weight -= gw * lr;
        layer.bias -= gb * lr;
    }
    for (bn, (gg, gbeta)) in model.norms.iter_mut().zip(g.gammas.iter().zip(&g.betas)) {
        if let (Some(bn), Some(gg), Some(gbeta)) = (bn, gg, gbeta) {
            bn.gamma -= gg * lr;
            bn.beta -= gbeta * lr;
        }
    }
}

/// Predicted vectors for every row of `features`, keyed by the same ids.
pub fn predict_embeddings(model: &RegressorModel, features: &EmbeddingTable) -> Result<EmbeddingTable> {
    if !model.trained {
        return Err(Error::UntrainedModel);
    }
    if features.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: features.dim(),
        });
    }
    let rows = par::map_range(features.len(), |i| model.predict_one(features.row(i)));
    let mut data = Vec::with_capacity(features.len() * model.output_dim());
    for r in rows {
        data.extend(r?);
    }
    EmbeddingTable::from_flat(model.output_dim(), features.ids().to_vec(), data)
}
