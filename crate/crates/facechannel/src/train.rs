//! Training loop: losses, SGD with momentum, learning-rate plateau decay,
//! evaluation, and the fine-tuning routine that freezes the convolutional
//! stack and retrains only the head.

use crate::data::{epoch_batches, Dataset, TargetData};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::metrics::{argmax, ccc, EvalReport};
use crate::model::{HeadSpec, Model, ModelGrads};
use crate::rng::SeededRng;
use crate::tensor::{elem, Element, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Cross-entropy over softmax probabilities. The returned gradient is
    /// w.r.t. the logits, matching the pass-through softmax backward.
    CrossEntropy,
    /// Mean squared error; gradient is w.r.t. the model output.
    Mse,
}

/// The three ways to arrive at a deployed model: train end to end on the
/// target data, train on a source task and reuse the frozen features
/// zero-shot, or additionally retrain the head on the target data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routine {
    Scratch,
    PretrainOnly,
    PretrainThenFinetune,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub loss: Loss,
    /// Epochs without improvement before the learning rate is halved.
    pub plateau_patience: usize,
}

impl TrainSpec {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64, loss: Loss) -> Self {
        Self {
            epochs,
            batch_size,
            learning_rate,
            momentum: 0.9,
            seed,
            loss,
            plateau_patience: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0,1)".into()));
        }
        if self.plateau_patience == 0 {
            return Err(Error::Config("plateau_patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean cross-entropy of `probs` against target rows (one-hot or soft),
/// plus the gradient w.r.t. the logits: (p - t) / N.
pub fn cross_entropy<E: Element>(
    probs: &Tensor<E>,
    target: &Tensor<E>,
) -> Result<(f64, Tensor<E>)> {
    if probs.shape() != target.shape() || probs.rank() != 2 {
        return Err(Error::Shape(format!(
            "cross_entropy expects matching [N,K], got {:?} vs {:?}",
            probs.shape(),
            target.shape()
        )));
    }
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    for row in 0..n {
        let sum: f64 = (0..k).map(|j| target.data()[row * k + j].to_f64()).sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(Error::Data(format!(
                "target row {row} sums to {sum}, not 1"
            )));
        }
    }
    let mut loss = 0.0;
    for (&p, &t) in probs.data().iter().zip(target.data()) {
        let t = t.to_f64();
        if t > 0.0 {
            loss -= t * p.to_f64().max(1e-12).ln();
        }
    }
    loss /= n as f64;
    let inv_n = elem::<E>(1.0 / n as f64);
    let d_logits = probs.zip_map(target, |p, t| (p - t) * inv_n)?;
    Ok((loss, d_logits))
}

/// Mean squared error over all elements, plus its gradient w.r.t. the
/// predictions: 2(p - t) / (N*M).
pub fn mse<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<(f64, Tensor<E>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "mse expects matching shapes, got {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let count = pred.len() as f64;
    let mut loss = 0.0;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p.to_f64() - t.to_f64();
        loss += d * d;
    }
    loss /= count;
    let scale = elem::<E>(2.0 / count);
    let grad = pred.zip_map(target, |p, t| (p - t) * scale)?;
    Ok((loss, grad))
}

/// SGD with classical momentum: v <- mu*v - lr*g; p <- p + v.
/// Velocities for layers that become frozen stay allocated but unused.
pub struct SgdMomentum<E: Element> {
    pub momentum: f64,
    pub velocities: Option<ModelGrads<E>>,
}

impl<E: Element> SgdMomentum<E> {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocities: None,
        }
    }

    pub fn step(&mut self, model: &mut Model<E>, grads: &ModelGrads<E>, lr: f64) -> Result<()> {
        if grads.len() != model.layers.len() {
            return Err(Error::Param("gradient list does not match layers".into()));
        }
        let velocities = self.velocities.get_or_insert_with(|| {
            model
                .layers
                .iter()
                .map(|l| {
                    l.op.param_tensors()
                        .iter()
                        .map(|(_, t)| Tensor::zeros_like(t))
                        .collect()
                })
                .collect()
        });
        let mu = elem::<E>(self.momentum);
        let neg_lr = elem::<E>(-lr);
        for (li, layer) in model.layers.iter_mut().enumerate() {
            if !layer.trainable || grads[li].is_empty() {
                continue;
            }
            let params = layer.op.param_tensors_mut();
            if grads[li].len() != params.len() || velocities[li].len() != params.len() {
                return Err(Error::Param(format!(
                    "gradient arity mismatch at layer {li}"
                )));
            }
            for ((param, g), v) in params.into_iter().zip(&grads[li]).zip(&mut velocities[li]) {
                let (_, param) = param;
                if g.shape() != param.shape() {
                    return Err(Error::Shape(format!(
                        "gradient shape mismatch at layer {li}"
                    )));
                }
                for ((vv, &gv), pv) in v
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(param.data_mut().iter_mut())
                {
                    *vv = mu * *vv + neg_lr * gv;
                    *pv = *pv + *vv;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_metric: f64,
    pub val_loss: Option<f64>,
    pub val_metric: Option<f64>,
    pub learning_rate: f64,
}

fn check_compatibility<E: Element>(model: &Model<E>, data: &Dataset<E>, loss: Loss) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    let arity = model.config.head.arity();
    if data.targets.arity() > arity {
        return Err(Error::Config(format!(
            "targets need arity {}, model head has {arity}",
            data.targets.arity()
        )));
    }
    match (loss, &model.config.head) {
        (Loss::CrossEntropy, HeadSpec::Categorical { .. }) => Ok(()),
        (Loss::Mse, HeadSpec::Dimensional) => Ok(()),
        (Loss::Mse, HeadSpec::Categorical { .. }) => Err(Error::Config(
            "mse loss is for the dimensional head; use cross_entropy".into(),
        )),
        (Loss::CrossEntropy, HeadSpec::Dimensional) => Err(Error::Config(
            "cross_entropy loss requires a categorical head".into(),
        )),
    }
}

fn rows_f64<E: Element>(t: &Tensor<E>) -> Vec<Vec<f64>> {
    let k = t.shape()[1];
    t.data()
        .chunks(k)
        .map(|row| row.iter().map(|&v| v.to_f64()).collect())
        .collect()
}

/// Fraction of rows whose prediction argmax matches the target argmax.
fn batch_correct(pred: &[Vec<f64>], target: &[Vec<f64>]) -> usize {
    pred.iter()
        .zip(target)
        .filter(|(p, t)| argmax(p) == argmax(t))
        .count()
}

struct MetricAccumulator {
    categorical: bool,
    correct: usize,
    total: usize,
    pred_a: Vec<f64>,
    pred_v: Vec<f64>,
    true_a: Vec<f64>,
    true_v: Vec<f64>,
}

impl MetricAccumulator {
    fn new(categorical: bool) -> Self {
        Self {
            categorical,
            correct: 0,
            total: 0,
            pred_a: Vec::new(),
            pred_v: Vec::new(),
            true_a: Vec::new(),
            true_v: Vec::new(),
        }
    }

    fn push(&mut self, pred: &[Vec<f64>], target: &[Vec<f64>]) {
        self.total += pred.len();
        if self.categorical {
            self.correct += batch_correct(pred, target);
        } else {
            for (p, t) in pred.iter().zip(target) {
                self.pred_a.push(p[0]);
                self.pred_v.push(p[1]);
                self.true_a.push(t[0]);
                self.true_v.push(t[1]);
            }
        }
    }

    /// Accuracy, or the mean of the two concordance coefficients.
    fn value(&self) -> Result<f64> {
        if self.categorical {
            Ok(self.correct as f64 / self.total.max(1) as f64)
        } else {
            let a = ccc(&self.pred_a, &self.true_a)?;
            let v = ccc(&self.pred_v, &self.true_v)?;
            Ok((a + v) / 2.0)
        }
    }
}

/// Train in place. Fully deterministic for a given seed: shuffling and
/// dropout masks come from fixed sub-streams of `spec.seed`. Returns
/// per-epoch statistics.
pub fn train<E: Element>(
    model: &mut Model<E>,
    data: &Dataset<E>,
    val: Option<&Dataset<E>>,
    spec: &TrainSpec,
) -> Result<Vec<EpochStats>> {
    spec.validate()?;
    check_compatibility(model, data, spec.loss)?;
    if let Some(v) = val {
        check_compatibility(model, v, spec.loss)?;
    }

    let mut shuffle_rng = SeededRng::from_seed_stream(spec.seed, 1);
    let mut dropout_rng = SeededRng::from_seed_stream(spec.seed, 2);
    let mut optimizer = SgdMomentum::new(spec.momentum);
    let mut lr = spec.learning_rate;
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;
    let mut history = Vec::with_capacity(spec.epochs);
    let categorical = data.targets.is_categorical();

    for epoch in 0..spec.epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut metric = MetricAccumulator::new(categorical);
        for batch in epoch_batches(data.len(), spec.batch_size, &mut shuffle_rng) {
            let x = data.image_batch(&batch)?;
            let t = data.target_batch(&batch)?;
            let (y, caches) = model.forward(&x, Mode::Train, Some(&mut dropout_rng), true)?;
            let caches = caches.expect("keep_caches was requested");
            let (loss, d_out) = match spec.loss {
                Loss::CrossEntropy => cross_entropy(&y, &t)?,
                Loss::Mse => mse(&y, &t)?,
            };
            if !loss.is_finite() {
                return Err(Error::Param(format!(
                    "non-finite loss at epoch {epoch}; try a lower learning rate"
                )));
            }
            let back = model.backward(&caches, d_out, None)?;
            optimizer.step(model, &back.grads, lr)?;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            metric.push(&rows_f64(&y), &rows_f64(&t));
        }
        let train_loss = loss_sum / seen as f64;
        let train_metric = metric.value()?;

        let (val_loss, val_metric) = match val {
            Some(vset) => {
                let (l, m) = eval_loss_metric(model, vset, spec.loss)?;
                (Some(l), Some(m))
            }
            None => (None, None),
        };

        history.push(EpochStats {
            epoch,
            train_loss,
            train_metric,
            val_loss,
            val_metric,
            learning_rate: lr,
        });

        // Plateau decay keyed on validation loss when available.
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best_loss - 1e-12 {
            best_loss = monitored;
            stale = 0;
        } else {
            stale += 1;
            if stale >= spec.plateau_patience {
                lr *= 0.5;
                stale = 0;
            }
        }
    }
    Ok(history)
}

/// Freeze the convolutional stack, then train (which now updates only the
/// dense layers and head).
pub fn fine_tune<E: Element>(
    model: &mut Model<E>,
    data: &Dataset<E>,
    val: Option<&Dataset<E>>,
    spec: &TrainSpec,
) -> Result<Vec<EpochStats>> {
    model.freeze_convolutional_stack();
    train(model, data, val, spec)
}

const EVAL_BATCH: usize = 64;

fn eval_loss_metric<E: Element>(
    model: &mut Model<E>,
    data: &Dataset<E>,
    loss: Loss,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut metric = MetricAccumulator::new(data.targets.is_categorical());
    let indices: Vec<usize> = (0..data.len()).collect();
    for batch in indices.chunks(EVAL_BATCH) {
        let x = data.image_batch(batch)?;
        let t = data.target_batch(batch)?;
        let (y, _) = model.forward(&x, Mode::Infer, None, false)?;
        let (l, _) = match loss {
            Loss::CrossEntropy => cross_entropy(&y, &t)?,
            Loss::Mse => mse(&y, &t)?,
        };
        loss_sum += l * batch.len() as f64;
        metric.push(&rows_f64(&y), &rows_f64(&t));
    }
    Ok((loss_sum / data.len() as f64, metric.value()?))
}

/// Run the model over a dataset in inference mode and summarize: accuracy
/// with a per-class breakdown for categorical targets, concordance per
/// dimension otherwise.
pub fn evaluate<E: Element>(model: &mut Model<E>, data: &Dataset<E>) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut preds: Vec<Vec<f64>> = Vec::with_capacity(data.len());
    for batch in indices.chunks(EVAL_BATCH) {
        let x = data.image_batch(batch)?;
        let (y, _) = model.forward(&x, Mode::Infer, None, false)?;
        preds.extend(rows_f64(&y));
    }
    match &data.targets {
        TargetData::Dimensional(rows) => {
            let pa: Vec<f64> = preds.iter().map(|p| p[0]).collect();
            let pv: Vec<f64> = preds.iter().map(|p| p[1]).collect();
            let ta: Vec<f64> = rows.iter().map(|r| r[0]).collect();
            let tv: Vec<f64> = rows.iter().map(|r| r[1]).collect();
            Ok(EvalReport {
                accuracy: None,
                ccc_arousal: Some(ccc(&pa, &ta)?),
                ccc_valence: Some(ccc(&pv, &tv)?),
                per_class: None,
            })
        }
        targets => {
            let truth: Vec<usize> = match targets {
                TargetData::Labels { labels, .. } => labels.clone(),
                TargetData::Distributions(rows) => rows.iter().map(|r| argmax(r)).collect(),
                TargetData::Dimensional(_) => unreachable!(),
            };
            let arity = model.config.head.arity();
            let class_name = |k: usize| {
                data.class_names
                    .get(k)
                    .cloned()
                    .unwrap_or_else(|| format!("class{k}"))
            };
            let mut correct = 0usize;
            let mut per_class_hits = vec![0usize; arity];
            let mut per_class_total = vec![0usize; arity];
            for (p, &t) in preds.iter().zip(&truth) {
                per_class_total[t] += 1;
                if argmax(p) == t {
                    correct += 1;
                    per_class_hits[t] += 1;
                }
            }
            let mut per_class = BTreeMap::new();
            for k in 0..arity {
                if per_class_total[k] > 0 {
                    per_class.insert(
                        class_name(k),
                        per_class_hits[k] as f64 / per_class_total[k] as f64,
                    );
                }
            }
            Ok(EvalReport {
                accuracy: Some(correct as f64 / truth.len() as f64),
                ccc_arousal: None,
                ccc_valence: None,
                per_class: Some(per_class),
            })
        }
    }
}

/// Columns: epoch, train_loss, train_metric, val_loss, val_metric,
/// learning_rate. Validation columns are empty when no validation set was
/// supplied.
pub fn write_history_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "epoch,train_loss,train_metric,val_loss,val_metric,learning_rate"
    )?;
    for s in history {
        let vl = s.val_loss.map_or(String::new(), |v| v.to_string());
        let vm = s.val_metric.map_or(String::new(), |v| v.to_string());
        writeln!(
            f,
            "{},{},{},{},{},{}",
            s.epoch, s.train_loss, s.train_metric, vl, vm, s.learning_rate
        )?;
    }
    Ok(())
}
