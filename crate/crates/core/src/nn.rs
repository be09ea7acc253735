//! Transformer building blocks shared by the encoders and adapters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::param::{Module, Parameter};
use crate::tensor::{GeluMode, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Option<Parameter>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = Parameter::gaussian(format!("{name}.weight"), &[input, output], std, rng)?;
        let bias = if bias {
            Some(Parameter::zeros(format!("{name}.bias"), &[output])?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    /// Fan-in scaled init, `std = 1/sqrt(in)`.
    pub fn fan_in<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(name, input, output, bias, (input as f64).powf(-0.5), rng)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(self.weight.tensor())?;
        match &self.bias {
            Some(b) => y.add_row(b.tensor()),
            None => Ok(y),
        }
    }
}

impl Module for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: Parameter::filled(format!("{name}.gamma"), &[dim], 1.0)?,
            beta: Parameter::zeros(format!("{name}.beta"), &[dim])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(self.gamma.tensor(), self.beta.tensor(), LN_EPS)
    }
}

impl Module for LayerNorm {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.gamma);
        f(&self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// Two linear layers with GELU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn forward(&self, x: &Tensor, gelu: GeluMode) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu(gelu)?)
    }
}

impl Module for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.fc1.visit(f);
        self.fc2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

/// Multi-head self-attention over independent sequences stacked by rows.
#[derive(Debug, Clone)]
pub struct Attention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn width(&self) -> usize {
        self.proj.output_dim()
    }

    fn head_dim(&self) -> usize {
        self.width() / self.heads
    }

    /// Per-segment, per-head attention probabilities (`[len, len]` each).
    pub fn weights(&self, x: &Tensor, segments: &[usize]) -> Result<Vec<Vec<Tensor>>> {
        let d = self.width();
        let qkv = self.qkv.forward(x)?;
        let q = qkv.slice_cols(0, d)?;
        let k = qkv.slice_cols(d, d)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Vec::with_capacity(segments.len());
        let mut offset = 0;
        for &len in segments {
            let qs = q.slice_rows(offset, len)?;
            let ks = k.slice_rows(offset, len)?;
            let mut per_head = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = qs.slice_cols(h * dh, dh)?;
                let kh = ks.slice_cols(h * dh, dh)?;
                per_head.push(qh.matmul(&kh.transpose()?)?.scale(scale)?.softmax()?);
            }
            out.push(per_head);
            offset += len;
        }
        Ok(out)
    }

    /// `x` holds `segments.iter().sum()` rows; attention never crosses a
    /// segment boundary.
    pub fn forward(&self, x: &Tensor, segments: &[usize]) -> Result<Tensor> {
        let d = self.width();
        if x.cols() != d || segments.iter().sum::<usize>() != x.rows() {
            return Err(Error::shape("attention", x.shape(), &[segments.iter().sum(), d]));
        }
        let qkv = self.qkv.forward(x)?;
        let q = qkv.slice_cols(0, d)?;
        let k = qkv.slice_cols(d, d)?;
        let v = qkv.slice_cols(2 * d, d)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut rows = Vec::with_capacity(segments.len());
        let mut offset = 0;
        for &len in segments {
            let (qs, ks, vs) = (
                q.slice_rows(offset, len)?,
                k.slice_rows(offset, len)?,
                v.slice_rows(offset, len)?,
            );
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = qs.slice_cols(h * dh, dh)?;
                let kh = ks.slice_cols(h * dh, dh)?;
                let vh = vs.slice_cols(h * dh, dh)?;
                let attn = qh.matmul(&kh.transpose()?)?.scale(scale)?.softmax()?;
                heads.push(attn.matmul(&vh)?);
            }
            rows.push(if heads.len() == 1 {
                heads.pop().expect("one head")
            } else {
                Tensor::concat_cols(&heads)?
            });
            offset += len;
        }
        let merged = if rows.len() == 1 {
            rows.pop().expect("one segment")
        } else {
            Tensor::concat_rows(&rows)?
        };
        self.proj.forward(&merged)
    }
}

impl Module for Attention {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.qkv.visit(f);
        self.proj.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.qkv.visit_mut(f);
        self.proj.visit_mut(f);
    }
}

/// Pre-norm transformer block: `x + MSA(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

/// How block weights are drawn.
#[derive(Debug, Clone, Copy)]
pub enum BlockInit {
    /// `std = 1/sqrt(fan_in)` for every weight matrix.
    FanIn,
    /// One fixed standard deviation for every weight matrix.
    Gaussian(f64),
}

impl BlockInit {
    fn std(self, fan_in: usize) -> f64 {
        match self {
            BlockInit::FanIn => (fan_in as f64).powf(-0.5),
            BlockInit::Gaussian(s) => s,
        }
    }
}

impl Block {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        width: usize,
        heads: usize,
        mlp_ratio: usize,
        init: BlockInit,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::config(
                format!("{name}.heads"),
                format!("width {width} is not divisible by {heads} heads"),
            ));
        }
        let hidden = width * mlp_ratio;
        Ok(Self {
            ln1: LayerNorm::new(&format!("{name}.ln1"), width)?,
            attn: Attention {
                qkv: Linear::new(&format!("{name}.attn.qkv"), width, 3 * width, true, init.std(width), rng)?,
                proj: Linear::new(&format!("{name}.attn.proj"), width, width, true, init.std(width), rng)?,
                heads,
            },
            ln2: LayerNorm::new(&format!("{name}.ln2"), width)?,
            mlp: Mlp {
                fc1: Linear::new(&format!("{name}.mlp.fc1"), width, hidden, true, init.std(width), rng)?,
                fc2: Linear::new(&format!("{name}.mlp.fc2"), hidden, width, true, init.std(hidden), rng)?,
            },
        })
    }

    pub fn forward(&self, x: &Tensor, segments: &[usize], gelu: GeluMode) -> Result<Tensor> {
        let x = x.add(&self.attn.forward(&self.ln1.forward(x)?, segments)?)?;
        x.add(&self.mlp.forward(&self.ln2.forward(&x)?, gelu)?)
    }
}

impl Module for Block {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.ln1.visit(f);
        self.attn.visit(f);
        self.ln2.visit(f);
        self.mlp.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.ln1.visit_mut(f);
        self.attn.visit_mut(f);
        self.ln2.visit_mut(f);
        self.mlp.visit_mut(f);
    }
}

impl<T: Module> Module for Vec<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.iter().for_each(|m| m.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.iter_mut().for_each(|m| m.visit_mut(f));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn segments_do_not_leak_into_each_other() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let block = Block::new("b", 8, 2, 4, BlockInit::FanIn, &mut rng).unwrap();
        let a = crate::param::gaussian_values(3 * 8, 1.0, &mut rng).unwrap();
        let b = crate::param::gaussian_values(2 * 8, 1.0, &mut rng).unwrap();
        let b2 = crate::param::gaussian_values(2 * 8, 1.0, &mut rng).unwrap();
        let x1 = Tensor::matrix(5, 8, [a.clone(), b].concat()).unwrap();
        let x2 = Tensor::matrix(5, 8, [a, b2].concat()).unwrap();
        let y1 = block.forward(&x1, &[3, 2], GeluMode::Tanh).unwrap();
        let y2 = block.forward(&x2, &[3, 2], GeluMode::Tanh).unwrap();
        assert_eq!(&y1.values()[..24], &y2.values()[..24]);
        assert_ne!(&y1.values()[24..], &y2.values()[24..]);
    }

    #[test]
    fn indivisible_heads_is_a_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = Block::new("b", 10, 3, 4, BlockInit::FanIn, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }
}
