//! End-to-end loops: feature caching, pre-training, tuning and baselines.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::synthetic::{pretraining_captions, render_depth, Augment, View};
use crate::data::{synthetic_dataset, Dataset, Split};
use crate::encoders::{DepthImage, Patches, PointCloud};
use crate::error::{Error, Result};
use crate::objectives::class_logits;
use crate::tensor::Tensor;
use crate::train::config::RunConfig;
use crate::train::model::Model;
use crate::train::optim::AdamW;
use crate::train::steps::{
    argmax_rows, count_learnable, evaluate, metrics_from_predictions, pretrain_step, tune_step,
    LearnableCount, Metrics, PretrainBatch, TuneBatch,
};

const ENCODE_CHUNK: usize = 64;

/// Dataset named by the config: the OFF directory if given, else the
/// synthetic suite.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data_root {
        Some(root) => Dataset::load_off_dir(root, cfg.points, cfg.data_seed),
        None => synthetic_dataset(&cfg.synthetic()),
    }
}

/// Train subset selected by `shots` or `fraction`.
pub fn select_train(cfg: &RunConfig, ds: &Dataset) -> Result<Dataset> {
    if cfg.shots > 0 {
        ds.few_shot(cfg.shots, cfg.data_seed)
    } else if cfg.fraction < 1.0 {
        ds.fraction(cfg.fraction, cfg.data_seed)
    } else {
        Ok(ds.clone())
    }
}

/// Seeded epoch-wise shuffling over `0..n`.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// `min(size, n)` distinct indices.
    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let i = self.order[self.pos];
            self.pos += 1;
            if !out.contains(&i) {
                out.push(i);
            }
        }
        out
    }
}

/// Patches and labels of one split.
pub fn patchify_split(model: &Model, ds: &Dataset, split: Split) -> Result<(Vec<Patches>, Vec<usize>)> {
    let mut patches = Vec::new();
    let mut labels = Vec::new();
    for s in ds.split(split) {
        patches.push(model.backbone.point.patchify(&s.cloud)?);
        labels.push(s.label);
    }
    if patches.is_empty() {
        return Err(Error::Data(format!("{} split is empty", split.as_str())));
    }
    Ok((patches, labels))
}

fn stack_rows(chunks: Vec<Tensor>, cols: usize) -> Result<Tensor> {
    let rows: usize = chunks.iter().map(Tensor::rows).sum();
    let data = chunks.iter().flat_map(|t| t.values().iter().copied()).collect();
    Tensor::matrix(rows, cols, data)
}

/// `h^P` of every cloud as a constant `[N, D_point]` matrix.
pub fn frozen_point_features(model: &Model, patches: &[Patches]) -> Result<Tensor> {
    let chunks = patches
        .chunks(ENCODE_CHUNK)
        .map(|c| model.point_features(c))
        .collect::<Result<Vec<_>>>()?;
    stack_rows(chunks, model.backbone.point.width())
}

/// Cached frozen features of one split.
#[derive(Debug, Clone)]
pub struct FeatureSplit {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl FeatureSplit {
    pub fn build(model: &Model, ds: &Dataset, split: Split) -> Result<Self> {
        let (patches, labels) = patchify_split(model, ds, split)?;
        Ok(Self {
            features: frozen_point_features(model, &patches)?,
            labels,
        })
    }

    pub fn batch(&self, idx: &[usize]) -> Result<TuneBatch> {
        Ok(TuneBatch {
            features: self.features.gather_rows(idx)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Train triplets with frozen image and caption features precomputed.
#[derive(Debug, Clone)]
pub struct TripletBank {
    pub clouds: Vec<PointCloud>,
    pub patches: Vec<Patches>,
    pub labels: Vec<usize>,
    /// `[N, D]`.
    pub image_features: Vec<f64>,
    /// Per class, one `D`-row per caption.
    pub caption_features: Vec<Vec<f64>>,
    pub captions: Vec<Vec<String>>,
    pub dim: usize,
}

pub fn render_views(ds: &Dataset, split: Split, size: usize) -> Result<Vec<DepthImage>> {
    ds.split(split).map(|s| render_depth(&s.cloud, View::DEFAULT, size, size)).collect()
}

impl TripletBank {
    /// `captions[c]` lists the captions available for class `c`.
    pub fn build(model: &Model, ds: &Dataset, captions: Vec<Vec<String>>) -> Result<Self> {
        if captions.len() != ds.num_classes() || captions.iter().any(Vec::is_empty) {
            return Err(Error::Argument("need at least one caption per class".into()));
        }
        let (patches, labels) = patchify_split(model, ds, Split::Train)?;
        let images = render_views(ds, Split::Train, model.backbone.config.image.image_size)?;
        let d = model.backbone.embed_dim();
        let chunks = images
            .chunks(ENCODE_CHUNK)
            .map(|c| model.backbone.image.encode_batch(c))
            .collect::<Result<Vec<_>>>()?;
        let image_features = stack_rows(chunks, d)?.to_vec();
        let text = &model.backbone.text;
        let caption_features = captions
            .iter()
            .map(|list| {
                let seqs = list
                    .iter()
                    .map(|c| text.embed_text(&model.backbone.vocab, c))
                    .collect::<Result<Vec<_>>>()?;
                Ok(text.encode_batch(&seqs)?.to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            clouds: ds.split(Split::Train).map(|s| s.cloud.clone()).collect(),
            patches,
            labels,
            image_features,
            caption_features,
            captions,
            dim: d,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Triplets `idx`; triplet `i` takes caption `choice[i]` (mod the class's
    /// caption count).
    pub fn batch(&self, idx: &[usize], choice: &[usize]) -> Result<PretrainBatch> {
        let d = self.dim;
        let mut img = Vec::with_capacity(idx.len() * d);
        let mut txt = Vec::with_capacity(idx.len() * d);
        for (&i, &k) in idx.iter().zip(choice) {
            img.extend_from_slice(&self.image_features[i * d..(i + 1) * d]);
            let rows = &self.caption_features[self.labels[i]];
            let row = k % (rows.len() / d);
            txt.extend_from_slice(&rows[row * d..(row + 1) * d]);
        }
        Ok(PretrainBatch {
            patches: idx.iter().map(|&i| self.patches[i].clone()).collect(),
            image_features: Tensor::matrix(idx.len(), d, img)?,
            text_features: Tensor::matrix(idx.len(), d, txt)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub optimizer: AdamW,
    pub losses: Vec<f64>,
}

/// Contrastive pre-training of the point encoder for `cfg.steps` steps.
pub fn pretrain(
    cfg: &RunConfig,
    model: &mut Model,
    ds: &Dataset,
    on_step: &mut dyn FnMut(usize, f64),
) -> Result<PretrainReport> {
    cfg.validate()?;
    model.prepare_pretraining();
    let bank = TripletBank::build(model, ds, pretraining_captions(&ds.class_names, cfg.caption_aliases))?;
    let mut opt = AdamW::new(cfg.optim())?;
    let mut sampler = BatchSampler::new(bank.len(), cfg.seed, 21);
    let weights = cfg.loss_weights();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sampler.next_batch(cfg.batch_size);
        let choice: Vec<usize> = idx.iter().map(|_| sampler.rng().random_range(0..usize::MAX)).collect();
        let mut batch = bank.batch(&idx, &choice)?;
        if cfg.pretrain_augment {
            batch.patches = idx
                .iter()
                .map(|&i| {
                    let mut aug = Augment::random(sampler.rng(), cfg.scale_jitter);
                    if !cfg.random_yaw {
                        aug.yaw = 0.0;
                    }
                    model.backbone.point.patchify(&aug.apply(&bank.clouds[i])?)
                })
                .collect::<Result<_>>()?;
        }
        let loss = pretrain_step(model, &batch, &mut opt, &weights, cfg.tau_contrastive)?;
        on_step(step, loss);
        losses.push(loss);
    }
    Ok(PretrainReport { optimizer: opt, losses })
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneReport {
    #[serde(skip)]
    pub optimizer: AdamW,
    pub losses: Vec<f64>,
    pub metrics: Metrics,
    pub learnable: LearnableCount,
    pub train_samples: usize,
}

/// Attaches prompts and an adapter to a (pre-trained) backbone and tunes
/// them on the selected train subset; evaluates on the full test split.
pub fn tune(
    cfg: &RunConfig,
    model: &mut Model,
    ds: &Dataset,
    on_step: &mut dyn FnMut(usize, f64),
) -> Result<TuneReport> {
    cfg.validate()?;
    let subset = select_train(cfg, ds)?;
    model.attach_tuning(cfg, &subset.class_names)?;
    let train = FeatureSplit::build(model, &subset, Split::Train)?;
    let test = FeatureSplit::build(model, &subset, Split::Test)?;
    tune_features(cfg, model, &train, &test, on_step)
}

/// Tuning loop on cached features; the model must already carry its prompt.
pub fn tune_features(
    cfg: &RunConfig,
    model: &mut Model,
    train: &FeatureSplit,
    test: &FeatureSplit,
    on_step: &mut dyn FnMut(usize, f64),
) -> Result<TuneReport> {
    model.check_tuning_freeze()?;
    let mut opt = AdamW::new(cfg.optim())?;
    let mut sampler = BatchSampler::new(train.len(), cfg.seed, 22);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = train.batch(&sampler.next_batch(cfg.batch_size))?;
        let loss = tune_step(model, &batch, &mut opt, cfg.loss_form)?;
        on_step(step, loss);
        losses.push(loss);
    }
    let text = model.prompt_text_features()?;
    let metrics = evaluate(model, &test.features, &test.labels, &text)?;
    Ok(TuneReport {
        optimizer: opt,
        losses,
        metrics,
        learnable: count_learnable(model),
        train_samples: train.len(),
    })
}

/// Frozen-backbone classification with a hand-written template and no
/// adapter.
pub fn zero_shot(model: &Model, test: &FeatureSplit, template: &str, class_names: &[String]) -> Result<Metrics> {
    let text = model.manual_text_features(template, class_names)?;
    let projected = model.backbone.point.project(&test.features)?;
    let logits = class_logits(&projected, &text, model.tau_cls)?;
    metrics_from_predictions(&argmax_rows(&logits), &test.labels, class_names.len())
}

/// Means of consecutive non-overlapping windows.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks(window.max(1))
        .filter(|c| c.len() == window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}
