use std::collections::BTreeMap;

use serde::Serialize;

use crate::encoders::Patches;
use crate::error::{Error, Result};
use crate::objectives::{one_hot, total_contrastive, tuning_loss, FeatureBatch, LossForm, LossWeights};
use crate::param::Module;
use crate::tensor::Tensor;
use crate::train::model::Model;
use crate::train::optim::AdamW;

/// One pre-training batch. Image and caption features come from the frozen
/// encoders, so they are constants here.
#[derive(Debug, Clone)]
pub struct PretrainBatch {
    pub patches: Vec<Patches>,
    pub image_features: Tensor,
    pub text_features: Tensor,
}

/// Contrastive loss of a pre-training batch, graph attached to `f_P`.
pub fn pretrain_loss(model: &Model, batch: &PretrainBatch, weights: &LossWeights, tau: f64) -> Result<Tensor> {
    let h = model.point_features(&batch.patches)?;
    let points = model.backbone.point.project(&h)?;
    let features = FeatureBatch {
        image: Some(batch.image_features.clone()),
        text: Some(batch.text_features.clone()),
        point: Some(points),
    };
    total_contrastive(&features, weights, tau)
}

/// Forward, backward and one optimizer update on the point encoder.
pub fn pretrain_step(
    model: &mut Model,
    batch: &PretrainBatch,
    opt: &mut AdamW,
    weights: &LossWeights,
    tau: f64,
) -> Result<f64> {
    model.check_pretraining_freeze()?;
    let loss = pretrain_loss(model, batch, weights, tau)?;
    let value = loss.item()?;
    let grads = loss.backward()?;
    drop(loss);
    model.backbone.point.accumulate_grads(&grads);
    opt.step(&mut model.backbone.point)?;
    Ok(value)
}

/// Pooled frozen point features with labels.
#[derive(Debug, Clone)]
pub struct TuneBatch {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

/// `[B, S]` class probabilities for a batch of frozen point features.
pub fn class_probabilities(model: &Model, features: &Tensor) -> Result<Tensor> {
    let text = model.prompt_text_features()?;
    model.logits(features, &text)?.softmax()
}

pub fn tune_loss(model: &Model, batch: &TuneBatch, form: LossForm) -> Result<Tensor> {
    let probs = class_probabilities(model, &batch.features)?;
    let targets = one_hot(&batch.labels, probs.cols())?;
    tuning_loss(&probs, &targets, form)
}

/// Forward, backward and one update of the prompt contexts and adapter.
pub fn tune_step(model: &mut Model, batch: &TuneBatch, opt: &mut AdamW, form: LossForm) -> Result<f64> {
    model.check_tuning_freeze()?;
    let loss = tune_loss(model, batch, form)?;
    let value = loss.item()?;
    let grads = loss.backward()?;
    drop(loss);
    model.accumulate_grads(&grads);
    opt.step(model)?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub overall_accuracy: f64,
    /// `None` for classes absent from the evaluated set.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub mean_class_accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

pub fn metrics_from_predictions(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Metrics> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= classes || p >= classes {
            return Err(Error::Data(format!("label {l} or prediction {p} out of range for {classes} classes")));
        }
        confusion[l][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(Metrics {
        overall_accuracy: correct as f64 / labels.len() as f64,
        mean_class_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        per_class_accuracy: per_class,
        confusion,
        total: labels.len(),
    })
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let c = t.cols();
    t.values()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Accuracy of `model` on frozen features against the given text features.
pub fn evaluate(model: &Model, features: &Tensor, labels: &[usize], text: &Tensor) -> Result<Metrics> {
    let logits = model.logits(features, text)?;
    metrics_from_predictions(&argmax_rows(&logits), labels, text.rows())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LearnableCount {
    pub total: usize,
    /// Keyed by the name prefix before the first `.`.
    pub groups: BTreeMap<String, usize>,
}

pub fn count_learnable<M: Module + ?Sized>(model: &M) -> LearnableCount {
    let mut groups = BTreeMap::new();
    let mut total = 0;
    model.visit(&mut |p| {
        if p.trainable() {
            let group = p.name().split('.').next().unwrap_or("").to_string();
            *groups.entry(group).or_insert(0) += p.numel();
            total += p.numel();
        }
    });
    LearnableCount { total, groups }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_predictions() {
        let labels = [0, 1, 2, 2, 1];
        let m = metrics_from_predictions(&labels, &labels, 3).unwrap();
        assert_eq!(m.overall_accuracy, 1.0);
        assert_eq!(m.mean_class_accuracy, 1.0);
        assert_eq!(m.confusion.iter().flatten().sum::<usize>(), 5);
    }

    #[test]
    fn confusion_accounting() {
        let m = metrics_from_predictions(&[0, 0, 1, 2], &[0, 1, 1, 1], 4).unwrap();
        assert_eq!(m.overall_accuracy, 0.5);
        assert_eq!(m.per_class_accuracy, vec![Some(1.0), Some(1.0 / 3.0), None, None]);
        assert!((m.mean_class_accuracy - 2.0 / 3.0).abs() < 1e-15);
        let rows: Vec<usize> = m.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(rows, vec![1, 3, 0, 0]);
        assert!(metrics_from_predictions(&[0], &[4], 4).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let t = Tensor::matrix(2, 3, vec![1.0, 3.0, 3.0, 0.0, -1.0, 0.5]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 2]);
    }
}
