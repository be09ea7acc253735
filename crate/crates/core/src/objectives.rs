//! Contrastive pre-training losses and the prompt-tuning classifier loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cosine_matrix, Tensor};

pub const LOG_FLOOR: f64 = 1e-12;
pub const DEFAULT_TAU_CONTRASTIVE: f64 = 0.07;
pub const DEFAULT_TAU_CLS: f64 = 1.0;
const NORMALIZATION_TOL: f64 = 1e-6;

fn check_temperature(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("temperature must be > 0, got {tau}")))
    }
}

/// Symmetric InfoNCE over cosine similarities; row `i` of `a` and `b` form
/// the positive pair.
pub fn pairwise_contrastive(a: &Tensor, b: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    if a.ndim() != 2 || a.shape() != b.shape() || a.rows() == 0 {
        return Err(Error::shape("pairwise_contrastive", a.shape(), b.shape()));
    }
    let s = cosine_matrix(a, b)?.scale(1.0 / temperature)?;
    let rows = s.log_softmax()?.diagonal()?.mean()?;
    let cols = s.transpose()?.log_softmax()?.diagonal()?.mean()?;
    rows.add(&cols)?.scale(-0.5)
}

/// Row-aligned features of one batch of triplets.
#[derive(Debug, Clone, Default)]
pub struct FeatureBatch {
    pub image: Option<Tensor>,
    pub text: Option<Tensor>,
    pub point: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            theta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.theta];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("alpha/beta/theta", "weights must be finite and non-negative"));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::config("alpha/beta/theta", "at least one weight must be positive"));
        }
        Ok(())
    }
}

/// `α·L(I,T) + β·L(I,P) + θ·L(P,T)`.
pub fn total_contrastive(batch: &FeatureBatch, w: &LossWeights, temperature: f64) -> Result<Tensor> {
    w.validate()?;
    let get = |t: &Option<Tensor>, name: &str| {
        t.clone()
            .ok_or_else(|| Error::Argument(format!("feature batch is missing the {name} modality")))
    };
    let (i, t, p) = (get(&batch.image, "image")?, get(&batch.text, "text")?, get(&batch.point, "point")?);
    if i.rows() != t.rows() || i.rows() != p.rows() {
        return Err(Error::shape("total_contrastive", i.shape(), p.shape()));
    }
    let terms = [
        (w.alpha, &i, &t),
        (w.beta, &i, &p),
        (w.theta, &p, &t),
    ];
    let mut total: Option<Tensor> = None;
    for (weight, a, b) in terms {
        if weight == 0.0 {
            continue;
        }
        let term = pairwise_contrastive(a, b, temperature)?.scale(weight)?;
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("validated weights leave one term"))
}

/// `[B, S]` cosine logits divided by `τ`.
pub fn class_logits(points: &Tensor, text: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    if text.ndim() != 2 || text.rows() < 2 {
        return Err(Error::Argument(format!(
            "classification needs at least two classes, got text features {:?}",
            text.shape()
        )));
    }
    let points = if points.ndim() == 1 {
        points.reshape(&[1, points.numel()])?
    } else {
        points.clone()
    };
    cosine_matrix(&points, text)?.scale(1.0 / temperature)
}

/// Softmax over classes of the cosine logits, one row per point feature.
pub fn class_distribution(points: &Tensor, text: &Tensor, temperature: f64) -> Result<Tensor> {
    class_logits(points, text, temperature)?.softmax()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    #[default]
    Categorical,
    Bce,
}

impl LossForm {
    pub fn as_str(self) -> &'static str {
        match self {
            LossForm::Categorical => "categorical",
            LossForm::Bce => "bce",
        }
    }
}

/// `[B, S]` one-hot targets.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Argument(format!("label {l} out of range for {classes} classes")));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::matrix(labels.len(), classes, data)
}

/// Batch-mean cross-entropy between predicted distributions and targets.
pub fn tuning_loss(probs: &Tensor, targets: &Tensor, form: LossForm) -> Result<Tensor> {
    if probs.ndim() != 2 || probs.shape() != targets.shape() || probs.rows() == 0 {
        return Err(Error::shape("tuning_loss", probs.shape(), targets.shape()));
    }
    let s = probs.cols();
    for (r, row) in probs.values().chunks(s).enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL || row.iter().any(|p| *p < 0.0) {
            return Err(Error::Contract(format!(
                "prediction row {r} is not a distribution (sum {total})"
            )));
        }
    }
    let b = probs.rows() as f64;
    let pos = targets.mul(&probs.log_clamped(LOG_FLOOR)?)?;
    let summed = match form {
        LossForm::Categorical => pos.sum()?,
        LossForm::Bce => {
            let neg_t = targets.scale(-1.0)?.add_scalar(1.0)?;
            let neg_p = probs.scale(-1.0)?.add_scalar(1.0)?.log_clamped(LOG_FLOOR)?;
            pos.add(&neg_t.mul(&neg_p)?)?.sum()?
        }
    };
    summed.scale(-1.0 / b)
}
