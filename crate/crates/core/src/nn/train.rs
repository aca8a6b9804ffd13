use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::encoder::{encoder_forward, mlp_backward, mlp_forward, DenseLayer, EncoderConfig, MlpParams};
use super::optim::{adam_step, lr_at, OptimState, Schedule, TrainConfig};
use crate::analysis::{compute_metrics, track_logits, Metrics};
use crate::batch::{group_by_label, LabeledBatch, QuantizationRule};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::loss::{supremix_loss, LossConfig};
use crate::mixgen::{build_contrast_sets, MixNegConfig, MixPosConfig};
use crate::rng;

/// Mixture generation settings for pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSettings {
    pub neg: MixNegConfig,
    pub pos: MixPosConfig,
    pub quantization: QuantizationRule,
    /// Mix only within the dataset's categorical groups, if it has any.
    pub group_constrained: bool,
}

impl Default for MixSettings {
    fn default() -> Self {
        Self {
            neg: MixNegConfig::default(),
            pos: MixPosConfig::default(),
            quantization: QuantizationRule::exact(),
            group_constrained: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-anchor loss over the epoch's batches.
    pub loss: f64,
    pub lr: f64,
    /// Batch mean of the average real positive-pair inner product.
    pub avg_pos_logit: Option<f64>,
    /// Batch mean of the mean of the 1000 largest real negative inner products.
    pub mean_top1k_neg_logit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutput {
    pub params: MlpParams,
    pub epochs: Vec<EpochLog>,
}

fn check_training_set(labels: &[f64]) -> Result<()> {
    let first = labels.first().copied();
    if labels.len() < 2 || labels.iter().all(|&l| Some(l) == first) {
        return Err(Error::invalid("training split needs at least 2 distinct labels"));
    }
    Ok(())
}

/// Shuffled minibatches of `rows`; a trailing batch with fewer than 2 rows is dropped.
fn minibatches(rows: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = rows.to_vec();
    order.shuffle(&mut rng::substream(seed, &[0, epoch as u64]));
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Contrastive pretraining of the encoder on the training split.
///
/// The optimized objective is the loss divided by the batch size, so the
/// step size does not depend on how many anchors a batch holds.
pub fn pretrain(
    dataset: &Dataset,
    encoder: &EncoderConfig,
    train: &TrainConfig,
    mix: &MixSettings,
    loss: &LossConfig,
) -> Result<PretrainOutput> {
    train.validate()?;
    loss.validate()?;
    if encoder.input_dim != dataset.input_dim() {
        return Err(Error::invalid(format!(
            "encoder input_dim {} but dataset has {} features",
            encoder.input_dim,
            dataset.input_dim()
        )));
    }
    let rows = dataset.split_indices(Split::Train);
    let labels: Vec<f64> = rows.iter().map(|&i| dataset.labels[i]).collect();
    check_training_set(&labels)?;

    let mut params = MlpParams::encoder(encoder, train.seed)?;
    let mut state = OptimState::new(&params);
    let schedule = train.pretrain_schedule();
    let mut epochs = Vec::with_capacity(train.pretrain_epochs);
    for epoch in 0..train.pretrain_epochs {
        let lr = lr_at(epoch, &schedule);
        let mut losses = Vec::new();
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (b, batch_rows) in minibatches(&rows, train.batch_size, train.seed, epoch)
            .iter()
            .enumerate()
        {
            let x = dataset.inputs.select(Axis(0), batch_rows);
            let y: Vec<f64> = batch_rows.iter().map(|&i| dataset.labels[i]).collect();
            let (cache, z) = encoder_forward(&params, &x)?;
            let unit = LabeledBatch::from_unit_rows(z, y.clone())?;
            let groups = group_by_label(&y, mix.quantization)?;
            let constraint: Option<Vec<usize>> = match (&dataset.groups, mix.group_constrained) {
                (Some(g), true) => Some(batch_rows.iter().map(|&i| g[i]).collect()),
                _ => None,
            };
            let sets = build_contrast_sets(
                &unit,
                &groups,
                loss.use_mix_neg.then_some(&mix.neg),
                loss.use_mix_pos.then_some(&mix.pos),
                constraint.as_deref(),
                rng::derive_seed(train.seed, &[1, epoch as u64, b as u64]),
            )?;
            let raw = LabeledBatch::new(cache.output().clone(), y)?;
            let out = supremix_loss(&raw, &sets, loss)?;
            let n = batch_rows.len() as f64;
            let grads = mlp_backward(&params, &cache, &(out.grad / n))?;
            adam_step(&mut params, &grads, &mut state, lr, train)?;

            let stats = track_logits(&unit, &groups, 1000)?;
            losses.push(out.loss / n);
            pos.push(stats.avg_pos_logit);
            neg.push(stats.mean_top_k_neg_logit);
        }
        let log = EpochLog {
            epoch,
            loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            lr,
            avg_pos_logit: mean_of(&pos),
            mean_top1k_neg_logit: mean_of(&neg),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} lr {:.2e} pos {:?} neg {:?}",
            log.loss,
            log.lr,
            log.avg_pos_logit,
            log.mean_top1k_neg_logit
        );
        epochs.push(log);
    }
    Ok(PretrainOutput { params, epochs })
}

/// Unit-norm embeddings of every row of `x`.
pub fn embed(params: &MlpParams, x: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(encoder_forward(params, x)?.1)
}

/// Linear regressor `y = x·w + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    pub weight: Array1<f64>,
    pub bias: f64,
}

impl ProbeParams {
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.weight.len() {
            return Err(Error::invalid(format!(
                "probe expects {} features, got {}",
                self.weight.len(),
                x.ncols()
            )));
        }
        Ok((x.dot(&self.weight) + self.bias).to_vec())
    }
}

/// Per-column mean and scale (1 for constant columns).
fn column_moments(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let scale = x
        .axis_iter(Axis(1))
        .zip(&mean)
        .map(|(c, m)| {
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c.len() as f64).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn target_moments(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

/// Least-squares fit on standardized data (tiny ridge for rank deficiency).
fn least_squares(x: &Array2<f64>, y: &Array1<f64>) -> Array1<f64> {
    let (n, d) = x.dim();
    let a = DMatrix::from_fn(n, d, |i, j| x[[i, j]]);
    let b = DVector::from_iterator(n, y.iter().copied());
    let gram = a.transpose() * &a + DMatrix::identity(d, d) * 1e-8;
    let rhs = a.transpose() * b;
    let w = gram
        .cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(d));
    Array1::from_iter(w.iter().copied())
}

/// Mean absolute error and its gradient with respect to the predictions.
fn l1_loss(pred: &Array2<f64>, target: &Array1<f64>) -> (f64, Array2<f64>) {
    let n = pred.nrows() as f64;
    let mut grad = Array2::zeros(pred.dim());
    let mut loss = 0.0;
    for i in 0..pred.nrows() {
        let e = pred[[i, 0]] - target[i];
        loss += e.abs();
        grad[[i, 0]] = e.signum() / n;
    }
    (loss / n, grad)
}

/// Minibatch Adam on the mean absolute error of `net` over standardized targets.
fn fit_l1(
    net: &mut MlpParams,
    x: &Array2<f64>,
    y: &Array1<f64>,
    schedule: &Schedule,
    train: &TrainConfig,
    stream: u64,
) -> Result<()> {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let mut state = OptimState::new(net);
    let seed = rng::derive_seed(train.seed, &[stream]);
    for epoch in 0..schedule.total_epochs {
        let lr = lr_at(epoch, schedule);
        for batch in minibatches(&rows, train.batch_size, seed, epoch) {
            let xb = x.select(Axis(0), &batch);
            let yb = y.select(Axis(0), &batch);
            let cache = mlp_forward(net, &xb)?;
            let (_, g) = l1_loss(cache.output(), &yb);
            let grads = mlp_backward(net, &cache, &g)?;
            adam_step(net, &grads, &mut state, lr, train)?;
        }
    }
    Ok(())
}

/// Train a linear regressor on fixed features with an L1 objective.
///
/// Features and targets are standardized, the head is initialized at the
/// least-squares solution and refined by Adam, then folded back to the
/// original units. Returns the probe and its metrics on the test features.
pub fn linear_probe(
    train_x: &Array2<f64>,
    train_y: &[f64],
    test_x: &Array2<f64>,
    test_y: &[f64],
    train: &TrainConfig,
) -> Result<(ProbeParams, Metrics)> {
    if train_x.nrows() != train_y.len() || test_x.nrows() != test_y.len() || train_x.nrows() < 2 {
        return Err(Error::invalid("probe features and targets differ in length"));
    }
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::invalid("train and test features differ in width"));
    }
    if train_y.iter().all(|&y| y == train_y[0]) {
        // Nothing to regress: the best L1 fit is the constant itself.
        let probe = ProbeParams {
            weight: Array1::zeros(train_x.ncols()),
            bias: train_y[0],
        };
        let metrics = compute_metrics(&probe.predict(test_x)?, test_y)?;
        return Ok((probe, metrics));
    }
    let (mu, sd) = column_moments(train_x);
    let (ym, ys) = target_moments(train_y);
    let xs = (train_x - &mu) / &sd;
    let yt: Array1<f64> = train_y.iter().map(|v| (v - ym) / ys).collect();

    let mut head = MlpParams {
        layers: vec![DenseLayer {
            weight: least_squares(&xs, &yt).insert_axis(Axis(1)),
            bias: Array1::zeros(1),
        }],
    };
    fit_l1(&mut head, &xs, &yt, &train.probe_schedule(), train, 2)?;

    let w = head.layers[0].weight.column(0).to_owned();
    let weight = &w / &sd * ys;
    let bias = ym + ys * (head.layers[0].bias[0] - (&mu / &sd).dot(&w));
    let probe = ProbeParams { weight, bias };
    let metrics = compute_metrics(&probe.predict(test_x)?, test_y)?;
    Ok((probe, metrics))
}

/// Encoder with a regression head trained end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanillaModel {
    /// Layers `input → hidden… → embed_dim → 1`.
    pub net: MlpParams,
    pub input_mean: Array1<f64>,
    pub input_scale: Array1<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

impl VanillaModel {
    fn standardize(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.input_mean) / &self.input_scale
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        let cache = mlp_forward(&self.net, &self.standardize(x))?;
        Ok(cache
            .output()
            .column(0)
            .iter()
            .map(|v| v * self.target_scale + self.target_mean)
            .collect())
    }

    /// The penultimate (rectified `embed_dim`) activations.
    pub fn representation(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let cache = mlp_forward(&self.net, &self.standardize(x))?;
        Ok(cache.layer_output(self.net.layers.len() - 2).clone())
    }
}

/// End-to-end L1 regression with the encoder architecture plus a linear head,
/// using the pretraining epoch budget and schedule.
pub fn vanilla_train(dataset: &Dataset, encoder: &EncoderConfig, train: &TrainConfig) -> Result<VanillaModel> {
    train.validate()?;
    encoder.validate()?;
    if encoder.input_dim != dataset.input_dim() {
        return Err(Error::invalid("encoder input_dim does not match the dataset"));
    }
    let split = dataset.split(Split::Train);
    check_training_set(&split.labels)?;
    let (input_mean, input_scale) = column_moments(&split.inputs);
    let (target_mean, target_scale) = target_moments(&split.labels);
    let mut widths = encoder.widths();
    widths.push(1);
    let mut model = VanillaModel {
        net: MlpParams::init(&widths, train.seed)?,
        input_mean,
        input_scale,
        target_mean,
        target_scale,
    };
    let x = model.standardize(&split.inputs);
    let y: Array1<f64> = split.labels.iter().map(|v| (v - target_mean) / target_scale).collect();
    fit_l1(&mut model.net, &x, &y, &train.pretrain_schedule(), train, 3)?;
    Ok(model)
}
