use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, END, PAD};
use crate::error::{Error, Result};
use crate::nn::{Block, BlockInit, LayerNorm, Linear};
use crate::param::{Module, Parameter};
use crate::tensor::{GeluMode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    /// Token width; also the shared embedding dimension.
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    /// Fixed sequence length (positions).
    pub context_len: usize,
    pub mlp_ratio: usize,
}

/// Token embeddings ready for the text transformer.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    /// `[L, D]`.
    pub embeddings: Tensor,
    /// `true` for `<start>`, content and `<end>`; `false` for padding.
    pub content_mask: Vec<bool>,
    /// Position of the `<end>` token, where the sequence is pooled.
    pub end_index: usize,
    /// Position of the category-name embedding, when the sequence was
    /// composed from a prompt.
    pub class_index: Option<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.content_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content_mask.is_empty()
    }
}

/// Transformer over word embeddings, pooled at `<end>` and projected.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
    pub token_embedding: Parameter,
    pub pos_embedding: Parameter,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNorm,
    pub proj: Linear,
    pub gelu: GeluMode,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(
        config: TextEncoderConfig,
        vocab_size: usize,
        gelu: GeluMode,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.width;
        let blocks = (0..config.depth)
            .map(|i| {
                Block::new(
                    &format!("text_encoder.blocks.{i}"),
                    d,
                    config.heads,
                    config.mlp_ratio,
                    BlockInit::FanIn,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            token_embedding: Parameter::gaussian(
                "text_encoder.token_embedding",
                &[vocab_size, d],
                0.02,
                rng,
            )?,
            pos_embedding: Parameter::gaussian(
                "text_encoder.pos_embedding",
                &[config.context_len, d],
                0.01,
                rng,
            )?,
            blocks,
            ln_final: LayerNorm::new("text_encoder.ln_final", d)?,
            proj: Linear::fan_in("text_encoder.proj", d, d, false, rng)?,
            gelu,
        })
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    /// Embedding row of one vocabulary entry, `[1, D]`, frozen copy.
    pub fn word_embedding(&self, id: usize) -> Result<Tensor> {
        self.token_embedding.tensor().gather_rows(&[id]).map(|t| t.detach())
    }

    /// Mean of the embeddings of the words in `name` as a `[D]` vector.
    pub fn phrase_embedding(&self, vocab: &Vocabulary, name: &str) -> Result<Vec<f64>> {
        let words = Vocabulary::normalize_words(name);
        if words.is_empty() {
            return Err(Error::Data(format!("class name `{name}` has no words")));
        }
        let d = self.width();
        let table = self.token_embedding.values();
        let mut acc = vec![0.0; d];
        for w in &words {
            let id = vocab.id_or_unk(w);
            acc.iter_mut()
                .zip(&table[id * d..(id + 1) * d])
                .for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|v| *v /= words.len() as f64);
        Ok(acc)
    }

    /// Looks token ids up in the embedding table.
    pub fn embed_ids(&self, ids: &[usize]) -> Result<TokenSequence> {
        if ids.len() != self.config.context_len {
            return Err(Error::shape("embed_ids", &[ids.len()], &[self.config.context_len]));
        }
        let end_index = ids
            .iter()
            .position(|&i| i == END)
            .ok_or_else(|| Error::Argument("token sequence has no <end>".into()))?;
        let content_mask = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| i <= end_index && id != PAD)
            .collect();
        Ok(TokenSequence {
            embeddings: self.token_embedding.tensor().gather_rows(ids)?,
            content_mask,
            end_index,
            class_index: None,
        })
    }

    pub fn embed_text(&self, vocab: &Vocabulary, text: &str) -> Result<TokenSequence> {
        self.embed_ids(&vocab.tokenize(text, self.config.context_len)?)
    }

    /// One `[D]` feature.
    pub fn encode(&self, seq: &TokenSequence) -> Result<Tensor> {
        let d = self.width();
        self.encode_batch(std::slice::from_ref(seq))?.reshape(&[d])
    }

    /// `[n, D]` features for `n` sequences.
    ///
    /// Rows after `<end>` are masked out of attention; because they can never
    /// reach the pooled `<end>` row they are dropped before the blocks.
    pub fn encode_batch(&self, seqs: &[TokenSequence]) -> Result<Tensor> {
        if seqs.is_empty() {
            return Err(Error::Argument("encode_batch of no sequences".into()));
        }
        let (l, d) = (self.config.context_len, self.width());
        let mut rows = Vec::with_capacity(seqs.len());
        let mut segments = Vec::with_capacity(seqs.len());
        for seq in seqs {
            if seq.embeddings.shape() != [l, d] || seq.len() != l {
                return Err(Error::shape("text_encode", seq.embeddings.shape(), &[l, d]));
            }
            let keep = seq.end_index + 1;
            let pos = self.pos_embedding.tensor().slice_rows(0, keep)?;
            rows.push(seq.embeddings.slice_rows(0, keep)?.add(&pos)?);
            segments.push(keep);
        }
        let mut x = if rows.len() == 1 {
            rows.pop().expect("one row block")
        } else {
            Tensor::concat_rows(&rows)?
        };
        for block in &self.blocks {
            x = block.forward(&x, &segments, self.gelu)?;
        }
        let mut ends = Vec::with_capacity(segments.len());
        let mut offset = 0;
        for len in &segments {
            ends.push(offset + len - 1);
            offset += len;
        }
        let pooled = self.ln_final.forward(&x.gather_rows(&ends)?)?;
        self.proj.forward(&pooled)
    }
}

impl Module for TextEncoder {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.token_embedding);
        f(&self.pos_embedding);
        self.blocks.visit(f);
        self.ln_final.visit(f);
        self.proj.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.token_embedding);
        f(&mut self.pos_embedding);
        self.blocks.visit_mut(f);
        self.ln_final.visit_mut(f);
        self.proj.visit_mut(f);
    }
}
