use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Block, BlockInit, LayerNorm, Linear};
use crate::param::{Module, Parameter};
use crate::tensor::{GeluMode, Tensor};

/// Single-channel `H×W` image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl DepthImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEncoderConfig {
    /// Square input side H = W.
    pub image_size: usize,
    /// Square patch side.
    pub patch_size: usize,
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    pub mlp_ratio: usize,
}

impl ImageEncoderConfig {
    pub fn num_patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }
}

/// Patch-embedding transformer over depth images, mean-pooled.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    pub config: ImageEncoderConfig,
    pub patch_embed: Linear,
    pub pos_embedding: Parameter,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub proj: Linear,
    pub gelu: GeluMode,
}

impl ImageEncoder {
    pub fn new<R: Rng + ?Sized>(
        config: ImageEncoderConfig,
        out_dim: usize,
        gelu: GeluMode,
        rng: &mut R,
    ) -> Result<Self> {
        if config.patch_size == 0 || !config.image_size.is_multiple_of(config.patch_size) {
            return Err(Error::config(
                "image_patch_size",
                format!(
                    "patch size {} must divide image size {}",
                    config.patch_size, config.image_size
                ),
            ));
        }
        let p2 = config.patch_size * config.patch_size;
        let blocks = (0..config.depth)
            .map(|i| {
                Block::new(
                    &format!("image_encoder.blocks.{i}"),
                    config.width,
                    config.heads,
                    config.mlp_ratio,
                    BlockInit::FanIn,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            patch_embed: Linear::fan_in("image_encoder.patch_embed", p2, config.width, true, rng)?,
            pos_embedding: Parameter::gaussian(
                "image_encoder.pos_embedding",
                &[config.num_patches(), config.width],
                0.02,
                rng,
            )?,
            blocks,
            norm: LayerNorm::new("image_encoder.norm", config.width)?,
            proj: Linear::fan_in("image_encoder.proj", config.width, out_dim, false, rng)?,
            gelu,
        })
    }

    fn patch_rows(&self, img: &DepthImage, out: &mut Vec<f64>) -> Result<()> {
        let s = self.config.image_size;
        if img.height != s || img.width != s || img.pixels.len() != s * s {
            return Err(Error::shape("image_encode", &[img.height, img.width], &[s, s]));
        }
        let p = self.config.patch_size;
        for pr in 0..s / p {
            for pc in 0..s / p {
                for r in 0..p {
                    let row = pr * p + r;
                    out.extend_from_slice(&img.pixels[row * s + pc * p..row * s + pc * p + p]);
                }
            }
        }
        Ok(())
    }

    /// `[B, D]` embeddings.
    pub fn encode_batch(&self, images: &[DepthImage]) -> Result<Tensor> {
        if images.is_empty() {
            return Err(Error::Argument("image batch is empty".into()));
        }
        let np = self.config.num_patches();
        let p2 = self.config.patch_size * self.config.patch_size;
        let mut rows = Vec::with_capacity(images.len() * np * p2);
        for img in images {
            self.patch_rows(img, &mut rows)?;
        }
        let b = images.len();
        let x = self.patch_embed.forward(&Tensor::matrix(b * np, p2, rows)?)?;
        let pos_idx: Vec<usize> = (0..b).flat_map(|_| 0..np).collect();
        let mut x = x.add(&self.pos_embedding.tensor().gather_rows(&pos_idx)?)?;
        let segments = vec![np; b];
        for block in &self.blocks {
            x = block.forward(&x, &segments, self.gelu)?;
        }
        let pooled = self.norm.forward(&x)?.segment_mean(np)?;
        self.proj.forward(&pooled)
    }

    pub fn encode(&self, image: &DepthImage) -> Result<Tensor> {
        let h = self.encode_batch(std::slice::from_ref(image))?;
        let d = h.cols();
        h.reshape(&[d])
    }
}

impl Module for ImageEncoder {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.patch_embed.visit(f);
        f(&self.pos_embedding);
        self.blocks.visit(f);
        self.norm.visit(f);
        self.proj.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.patch_embed.visit_mut(f);
        f(&mut self.pos_embedding);
        self.blocks.visit_mut(f);
        self.norm.visit_mut(f);
        self.proj.visit_mut(f);
    }
}
