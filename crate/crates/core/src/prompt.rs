//! Learnable prompt contexts shared across categories.
//!
//! A prompt for category `j` is `M` context vectors with the category-name
//! embedding `c_j` inserted at the front, the middle (`floor(M/2)`) or the end.
//! The contexts are the only trainable tensor here; category embeddings are
//! frozen lookups from the vocabulary table (multi-word names mean-pooled).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::vocab::{self, Vocabulary, SPECIAL_TOKENS};
use crate::encoders::{TextEncoder, TokenSequence};
use crate::error::{Error, Result};
use crate::param::{gaussian_values, Module, Parameter};
use crate::tensor::Tensor;

pub const CONTEXT_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertPosition {
    Front,
    Middle,
    End,
}

impl InsertPosition {
    pub const ALL: [InsertPosition; 3] = [InsertPosition::Front, InsertPosition::Middle, InsertPosition::End];

    /// Index of the category slot among the `M + 1` prompt positions.
    pub fn slot(self, context_len: usize) -> usize {
        match self {
            InsertPosition::Front => 0,
            InsertPosition::Middle => context_len / 2,
            InsertPosition::End => context_len,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InsertPosition::Front => "front",
            InsertPosition::Middle => "middle",
            InsertPosition::End => "end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Random,
    Template,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::Random => "random",
            InitMode::Template => "template",
        }
    }
}

/// Initial `M×D` context values.
///
/// `Random` draws i.i.d. `N(0, 0.02²)`. `Template` copies the word embeddings
/// of `template` into the first rows and draws the rest as in `Random`.
pub fn init_context<R: Rng + ?Sized>(
    context_len: usize,
    mode: InitMode,
    template: Option<&str>,
    vocab: &Vocabulary,
    text: &TextEncoder,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = text.width();
    if context_len == 0 {
        return Err(Error::Argument("context length must be at least 1".into()));
    }
    let mut values = gaussian_values(context_len * d, CONTEXT_INIT_STD, rng)?;
    if mode == InitMode::Template {
        let template =
            template.ok_or_else(|| Error::Argument("template init needs a template".into()))?;
        let words = Vocabulary::normalize_words(template);
        if words.len() > context_len {
            return Err(Error::Argument(format!(
                "template `{template}` has {} tokens but M = {context_len}",
                words.len()
            )));
        }
        let table = text.token_embedding.values();
        for (row, w) in words.iter().enumerate() {
            let id = vocab.id_or_unk(w);
            values[row * d..(row + 1) * d].copy_from_slice(&table[id * d..(id + 1) * d]);
        }
    }
    Ok(values)
}

#[derive(Debug, Clone)]
pub struct PromptLearner {
    /// `E`, `[M, D]`, trainable.
    pub context: Parameter,
    /// `c_j` rows, `[S, D]`, frozen.
    pub class_embeddings: Parameter,
    pub position: InsertPosition,
    pub class_names: Vec<String>,
}

impl PromptLearner {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        text: &TextEncoder,
        vocab: &Vocabulary,
        class_names: &[String],
        context_len: usize,
        position: InsertPosition,
        init: InitMode,
        template: Option<&str>,
        rng: &mut R,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Argument("prompt learner needs at least one class".into()));
        }
        if context_len + 3 > text.config.context_len {
            return Err(Error::config(
                "context_length",
                format!(
                    "M = {context_len} plus <start>, class and <end> exceeds the text length {}",
                    text.config.context_len
                ),
            ));
        }
        let d = text.width();
        let ctx = init_context(context_len, init, template, vocab, text, rng)?;
        let mut cls = Vec::with_capacity(class_names.len() * d);
        for name in class_names {
            cls.extend(text.phrase_embedding(vocab, name)?);
        }
        let mut class_embeddings =
            Parameter::new("prompt.class_embeddings", &[class_names.len(), d], cls)?;
        class_embeddings.set_trainable(false);
        Ok(Self {
            context: Parameter::new("prompt.E", &[context_len, d], ctx)?,
            class_embeddings,
            position,
            class_names: class_names.to_vec(),
        })
    }

    pub fn context_len(&self) -> usize {
        self.context.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Category slot among the `M + 1` prompt rows.
    pub fn class_slot(&self) -> usize {
        self.position.slot(self.context_len())
    }

    /// `T_j = [E, c_j]` arranged per the insert position, wrapped in
    /// `<start>`/`<end>` and padded to the text length.
    pub fn compose(&self, text: &TextEncoder, class: usize) -> Result<TokenSequence> {
        let s = self.num_classes();
        if class >= s {
            return Err(Error::Argument(format!("class index {class} >= {s}")));
        }
        let m = self.context_len();
        let slot = self.class_slot();
        let ctx = self.context.tensor();
        let class_row = self.class_embeddings.tensor().gather_rows(&[class])?;
        let mut parts = vec![text.word_embedding(vocab::START)?];
        if slot > 0 {
            parts.push(ctx.slice_rows(0, slot)?);
        }
        parts.push(class_row);
        if slot < m {
            parts.push(ctx.slice_rows(slot, m - slot)?);
        }
        parts.push(text.word_embedding(vocab::END)?);
        let used = m + 3;
        let total = text.config.context_len;
        if total > used {
            let pad = text.word_embedding(vocab::PAD)?;
            parts.push(pad.gather_rows(&vec![0; total - used])?);
        }
        let embeddings = Tensor::concat_rows(&parts)?;
        let end_index = m + 2;
        Ok(TokenSequence {
            embeddings,
            content_mask: (0..total).map(|i| i <= end_index).collect(),
            end_index,
            class_index: Some(slot + 1),
        })
    }

    /// `[S, D]`: row `j` is `f_T(T_j)`.
    pub fn class_text_features(&self, text: &TextEncoder) -> Result<Tensor> {
        let seqs = (0..self.num_classes())
            .map(|j| self.compose(text, j))
            .collect::<Result<Vec<_>>>()?;
        text.encode_batch(&seqs)
    }
}

impl Module for PromptLearner {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.context);
        f(&self.class_embeddings);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.context);
        f(&mut self.class_embeddings);
    }
}

/// One row of a prompt interpretation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearestWord {
    pub index: usize,
    pub word: String,
    pub distance: f64,
}

/// Closest non-special vocabulary word (Euclidean) for every row of `context`.
pub fn nearest_words(
    context: &[f64],
    dim: usize,
    vocab: &Vocabulary,
    table: &[f64],
) -> Result<Vec<NearestWord>> {
    if dim == 0 || !context.len().is_multiple_of(dim) || table.len() != vocab.len() * dim {
        return Err(Error::shape(
            "nearest_words",
            &[context.len(), dim],
            &[vocab.len(), dim],
        ));
    }
    if vocab.len() <= SPECIAL_TOKENS.len() {
        return Err(Error::Data("vocabulary has no regular words".into()));
    }
    Ok(context
        .chunks(dim)
        .enumerate()
        .map(|(index, row)| {
            let mut best = (f64::INFINITY, SPECIAL_TOKENS.len());
            for w in SPECIAL_TOKENS.len()..vocab.len() {
                let d2: f64 = row
                    .iter()
                    .zip(&table[w * dim..(w + 1) * dim])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d2 < best.0 {
                    best = (d2, w);
                }
            }
            NearestWord {
                index,
                word: vocab.word(best.1).unwrap_or_default().to_string(),
                distance: best.0.sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::TextEncoderConfig;
    use crate::tensor::GeluMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn text(width: usize, len: usize) -> (TextEncoder, Vocabulary) {
        let vocab = Vocabulary::default();
        let cfg = TextEncoderConfig {
            width,
            heads: 2,
            depth: 1,
            context_len: len,
            mlp_ratio: 2,
        };
        let enc = TextEncoder::new(cfg, vocab.len(), GeluMode::Tanh, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        (enc, vocab)
    }

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn random_init_statistics() {
        let (enc, vocab) = text(512, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let v = init_context(32, InitMode::Random, None, &vocab, &enc, &mut rng).unwrap();
        assert_eq!(v.len(), 16384);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        assert!(mean.abs() <= 0.002, "{mean}");
        assert!((0.018..=0.022).contains(&std), "{std}");
        let again = init_context(32, InitMode::Random, None, &vocab, &enc, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn template_init_copies_embeddings() {
        let (enc, vocab) = text(8, 12);
        let template = "a point cloud model of a";
        let v = init_context(6, InitMode::Template, Some(template), &vocab, &enc, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let table = enc.token_embedding.values();
        for (row, w) in Vocabulary::normalize_words(template).iter().enumerate() {
            let id = vocab.get(w).unwrap();
            assert_eq!(&v[row * 8..(row + 1) * 8], &table[id * 8..(id + 1) * 8]);
        }
        let err = init_context(5, InitMode::Template, Some(template), &vocab, &enc, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn class_slots() {
        assert_eq!(InsertPosition::End.slot(6), 6);
        assert_eq!(InsertPosition::Front.slot(6), 0);
        assert_eq!(InsertPosition::Middle.slot(32), 16);
    }

    #[test]
    fn compose_places_class_row() {
        let (enc, vocab) = text(8, 12);
        for pos in InsertPosition::ALL {
            let p = PromptLearner::new(&enc, &vocab, &names(&["chair", "night stand"]), 6, pos, InitMode::Random, None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            for j in 0..2 {
                let seq = p.compose(&enc, j).unwrap();
                assert_eq!(seq.len(), 12);
                assert_eq!(seq.end_index, 8);
                assert_eq!(seq.content_mask.iter().filter(|&&b| b).count(), 6 + 1 + 2);
                let ci = seq.class_index.unwrap();
                assert_eq!(ci, pos.slot(6) + 1);
                assert_eq!(seq.embeddings.row(ci), p.class_embeddings.tensor().row(j));
                // context rows keep their order around the class slot
                let ctx_rows: Vec<usize> = (1..=7).filter(|&r| r != ci).collect();
                for (k, r) in ctx_rows.iter().enumerate() {
                    assert_eq!(seq.embeddings.row(*r), p.context.tensor().row(k));
                }
            }
        }
    }

    #[test]
    fn multi_word_names_are_mean_pooled() {
        let (enc, vocab) = text(8, 12);
        let p = PromptLearner::new(&enc, &vocab, &names(&["night stand"]), 4, InsertPosition::End, InitMode::Random, None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let t = enc.token_embedding.values();
        let (a, b) = (vocab.get("night").unwrap(), vocab.get("stand").unwrap());
        for k in 0..8 {
            let expect = (t[a * 8 + k] + t[b * 8 + k]) / 2.0;
            assert!((p.class_embeddings.values()[k] - expect).abs() < 1e-15);
        }
        assert!(!p.class_embeddings.trainable());
        assert!(p.context.trainable());
    }

    #[test]
    fn too_long_context_is_rejected() {
        let (enc, vocab) = text(8, 12);
        let err = PromptLearner::new(&enc, &vocab, &names(&["chair"]), 10, InsertPosition::End, InitMode::Random, None, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(matches!(err, Err(Error::Config { .. })));
    }

    #[test]
    fn shared_context_moves_every_class() {
        let (enc, vocab) = text(8, 12);
        let mut p = PromptLearner::new(&enc, &vocab, &names(&["chair", "table", "cone"]), 4, InsertPosition::End, InitMode::Random, None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let before = p.class_text_features(&enc).unwrap();
        let mut v = p.context.values().to_vec();
        v[0] += 0.05;
        p.context.set_values(v).unwrap();
        let after = p.class_text_features(&enc).unwrap();
        for j in 0..3 {
            let change = before.row(j).iter().zip(after.row(j)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(change > 0.0);
        }
    }

    #[test]
    fn single_class_matches_direct_encode() {
        let (enc, vocab) = text(8, 12);
        let p = PromptLearner::new(&enc, &vocab, &names(&["chair"]), 4, InsertPosition::Middle, InitMode::Random, None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let feats = p.class_text_features(&enc).unwrap();
        assert_eq!(feats.shape(), [1, 8]);
        let direct = enc.encode(&p.compose(&enc, 0).unwrap()).unwrap();
        assert_eq!(feats.values(), direct.values());
    }

    #[test]
    fn full_template_reproduces_manual_prompt() {
        let (enc, vocab) = text(8, 12);
        let template = "a point cloud model of a";
        let classes = names(&["chair", "cone"]);
        let p = PromptLearner::new(&enc, &vocab, &classes, 6, InsertPosition::End, InitMode::Template, Some(template), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let learned = p.class_text_features(&enc).unwrap();
        for (j, c) in classes.iter().enumerate() {
            let manual = enc.encode(&enc.embed_text(&vocab, &format!("{template} {c}")).unwrap()).unwrap();
            for (a, b) in learned.row(j).iter().zip(manual.values()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn nearest_word_examples() {
        let (enc, vocab) = text(8, 12);
        let table = enc.token_embedding.values();
        let id = vocab.get("chair").unwrap();
        let row = table[id * 8..(id + 1) * 8].to_vec();
        let out = nearest_words(&row, 8, &vocab, table).unwrap();
        assert_eq!(out[0].word, "chair");
        assert_eq!(out[0].distance, 0.0);

        let two = Vocabulary::from_words(["first", "second"]).unwrap();
        let mut t = vec![9.0; 4 * 3];
        t.extend([0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let got = nearest_words(&[0.4, 0.0, 0.0], 3, &two, &t).unwrap();
        assert_eq!(got[0].word, "first");
        assert!((got[0].distance - 0.4).abs() < 1e-15);
    }
}
