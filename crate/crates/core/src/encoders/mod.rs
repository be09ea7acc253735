//! Frozen backbones `f_T`, `f_I`, `f_P`, all projecting into one shared width.

pub mod image;
pub mod point;
pub mod text;
pub mod vocab;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use image::{DepthImage, ImageEncoder, ImageEncoderConfig};
pub use point::{fps, knn_group, Patches, Point, PointCloud, PointEncoder, PointEncoderConfig};
pub use text::{TextEncoder, TextEncoderConfig, TokenSequence};
pub use vocab::Vocabulary;

use crate::error::{Error, Result};
use crate::param::{Module, Parameter};
use crate::tensor::GeluMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub text: TextEncoderConfig,
    pub image: ImageEncoderConfig,
    pub point: PointEncoderConfig,
    pub gelu: GeluMode,
}

impl EncoderConfig {
    /// Shared embedding dimension D (the text width).
    pub fn embed_dim(&self) -> usize {
        self.text.width
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            text: TextEncoderConfig {
                width: 512,
                heads: 8,
                depth: 2,
                context_len: 77,
                mlp_ratio: 4,
            },
            image: ImageEncoderConfig {
                image_size: 32,
                patch_size: 8,
                width: 256,
                heads: 4,
                depth: 2,
                mlp_ratio: 4,
            },
            point: PointEncoderConfig {
                width: 384,
                heads: 6,
                depth: 2,
                num_patches: 16,
                patch_size: 8,
                patch_hidden: 128,
                mlp_ratio: 4,
            },
            gelu: GeluMode::Tanh,
        }
    }
}

/// The three encoders plus the vocabulary the text side reads.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub text: TextEncoder,
    pub image: ImageEncoder,
    pub point: PointEncoder,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl EncoderStack {
    pub fn new(config: EncoderConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let d = config.embed_dim();
        if d == 0 {
            return Err(Error::config("text_width", "must be positive"));
        }
        let text = TextEncoder::new(config.text, vocab.len(), config.gelu, &mut stream(seed, 1))?;
        let image = ImageEncoder::new(config.image, d, config.gelu, &mut stream(seed, 2))?;
        let point = PointEncoder::new(config.point, d, config.gelu, &mut stream(seed, 3))?;
        Ok(Self {
            config,
            vocab,
            text,
            image,
            point,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim()
    }
}

impl Module for EncoderStack {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.text.visit(f);
        self.image.visit(f);
        self.point.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.text.visit_mut(f);
        self.image.visit_mut(f);
        self.point.visit_mut(f);
    }
}
