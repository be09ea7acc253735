//! Residual adapters over the pooled point feature `h^P`, applied before the
//! frozen projection into the shared space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Block, BlockInit, LayerNorm, Linear, Mlp};
use crate::param::{Module, Parameter};
use crate::tensor::{GeluMode, Tensor};

pub const ADAPTER_INIT_STD: f64 = 0.02;
pub const ADAPTER_MLP_RATIO: usize = 4;
pub const DEFAULT_ADAPTER_HEADS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    None,
    Ffn,
    Ptb,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 3] = [AdapterKind::None, AdapterKind::Ffn, AdapterKind::Ptb];

    pub fn as_str(self) -> &'static str {
        match self {
            AdapterKind::None => "none",
            AdapterKind::Ffn => "ffn",
            AdapterKind::Ptb => "ptb",
        }
    }
}

/// `h + fc2(gelu(fc1(LN(h))))`.
#[derive(Debug, Clone)]
pub struct FfnAdapter {
    pub ln: LayerNorm,
    pub mlp: Mlp,
    pub gelu: GeluMode,
}

impl FfnAdapter {
    pub fn new<R: Rng + ?Sized>(dim: usize, gelu: GeluMode, rng: &mut R) -> Result<Self> {
        let hidden = dim * ADAPTER_MLP_RATIO;
        Ok(Self {
            ln: LayerNorm::new("adapter.ln", dim)?,
            mlp: Mlp {
                fc1: Linear::new("adapter.fc1", dim, hidden, true, ADAPTER_INIT_STD, rng)?,
                fc2: Linear::new("adapter.fc2", hidden, dim, true, ADAPTER_INIT_STD, rng)?,
            },
            gelu,
        })
    }

    pub fn dim(&self) -> usize {
        self.mlp.fc2.output_dim()
    }

    /// `h: [B, D_point]`.
    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        check_width("ffn_adapter", h, self.dim())?;
        h.add(&self.mlp.forward(&self.ln.forward(h)?, self.gelu)?)
    }
}

impl Module for FfnAdapter {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.ln.visit(f);
        self.mlp.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.ln.visit_mut(f);
        self.mlp.visit_mut(f);
    }
}

/// One pre-norm transformer block; each feature row is its own length-1
/// sequence.
#[derive(Debug, Clone)]
pub struct PtbAdapter {
    pub block: Block,
    pub gelu: GeluMode,
}

impl PtbAdapter {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, gelu: GeluMode, rng: &mut R) -> Result<Self> {
        let block = Block::new(
            "adapter.block",
            dim,
            heads,
            ADAPTER_MLP_RATIO,
            BlockInit::Gaussian(ADAPTER_INIT_STD),
            rng,
        )
        .map_err(|e| match e {
            Error::Config { message, .. } => Error::config("adapter_heads", message),
            other => other,
        })?;
        Ok(Self { block, gelu })
    }

    pub fn dim(&self) -> usize {
        self.block.attn.width()
    }

    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        check_width("ptb_adapter", h, self.dim())?;
        self.block.forward(h, &vec![1; h.rows()], self.gelu)
    }

    /// Attention probabilities, one `[1, 1]` matrix per row and head.
    pub fn attention_weights(&self, h: &Tensor) -> Result<Vec<Vec<Tensor>>> {
        check_width("ptb_adapter", h, self.dim())?;
        let x = self.block.ln1.forward(h)?;
        self.block.attn.weights(&x, &vec![1; h.rows()])
    }
}

impl Module for PtbAdapter {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.block.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.block.visit_mut(f);
    }
}

fn check_width(op: &'static str, h: &Tensor, dim: usize) -> Result<()> {
    if h.ndim() != 2 || h.cols() != dim {
        return Err(Error::shape(op, h.shape(), &[h.rows(), dim]));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum PointAdapter {
    None,
    Ffn(FfnAdapter),
    Ptb(PtbAdapter),
}

impl PointAdapter {
    pub fn new<R: Rng + ?Sized>(
        kind: AdapterKind,
        dim: usize,
        heads: usize,
        gelu: GeluMode,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            AdapterKind::None => PointAdapter::None,
            AdapterKind::Ffn => PointAdapter::Ffn(FfnAdapter::new(dim, gelu, rng)?),
            AdapterKind::Ptb => PointAdapter::Ptb(PtbAdapter::new(dim, heads, gelu, rng)?),
        })
    }

    pub fn kind(&self) -> AdapterKind {
        match self {
            PointAdapter::None => AdapterKind::None,
            PointAdapter::Ffn(_) => AdapterKind::Ffn,
            PointAdapter::Ptb(_) => AdapterKind::Ptb,
        }
    }

    /// `[B, D_point] -> [B, D_point]`; identity when there is no adapter.
    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        match self {
            PointAdapter::None => Ok(h.clone()),
            PointAdapter::Ffn(a) => a.forward(h),
            PointAdapter::Ptb(a) => a.forward(h),
        }
    }
}

impl Module for PointAdapter {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        match self {
            PointAdapter::None => {}
            PointAdapter::Ffn(a) => a.visit(f),
            PointAdapter::Ptb(a) => a.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        match self {
            PointAdapter::None => {}
            PointAdapter::Ffn(a) => a.visit_mut(f),
            PointAdapter::Ptb(a) => a.visit_mut(f),
        }
    }
}

/// Closed-form count of adapter scalars, biases and layer-norm affines
/// included.
pub fn adapter_param_count(kind: AdapterKind, dim: usize, heads: usize) -> Result<usize> {
    let d = dim;
    let r = ADAPTER_MLP_RATIO;
    let ln = 2 * d;
    let mlp = (d * r * d + r * d) + (r * d * d + d);
    Ok(match kind {
        AdapterKind::None => 0,
        AdapterKind::Ffn => ln + mlp,
        AdapterKind::Ptb => {
            if heads == 0 || !d.is_multiple_of(heads) {
                return Err(Error::config(
                    "adapter_heads",
                    format!("width {d} is not divisible by {heads} heads"),
                ));
            }
            let qkv = d * 3 * d + 3 * d;
            let out = d * d + d;
            qkv + out + mlp + 2 * ln
        }
    })
}
