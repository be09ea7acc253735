#![allow(dead_code)]

pub mod grad;

use std::path::PathBuf;

use ppt::adapter::AdapterKind;
use ppt::objectives::LossForm;
use ppt::train::{Mode, RunConfig};
use ppt::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn randn<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, normals(rng, rows * cols, 1.0)).unwrap()
}

/// Widths small enough for finite-difference checks and CLI round trips.
pub fn tiny_config(mode: Mode, adapter: AdapterKind, context_length: usize) -> RunConfig {
    let mut cfg = RunConfig::new(mode, adapter, context_length, LossForm::Categorical);
    cfg.embed_dim = 8;
    cfg.text_heads = 2;
    cfg.text_depth = 1;
    cfg.text_context = 16;
    cfg.image_size = 16;
    cfg.image_width = 8;
    cfg.image_heads = 2;
    cfg.image_depth = 1;
    cfg.point_width = 8;
    cfg.point_heads = 2;
    cfg.point_depth = 1;
    cfg.patch_hidden = 8;
    cfg.num_patches = 4;
    cfg.patch_size = 8;
    cfg.adapter_heads = 2;
    cfg.points = 64;
    cfg.train_per_class = 4;
    cfg.test_per_class = 2;
    cfg.steps = 10;
    cfg.batch_size = 8;
    cfg
}

pub fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

pub fn reference_configs() -> (RunConfig, RunConfig) {
    let dir = config_dir();
    (
        RunConfig::load(dir.join("reference-pretrain.toml")).unwrap(),
        RunConfig::load(dir.join("reference-tune.toml")).unwrap(),
    )
}
