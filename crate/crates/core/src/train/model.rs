use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::PointAdapter;
use crate::data::synthetic::fill_template;
use crate::encoders::{EncoderStack, Patches, Vocabulary};
use crate::error::{Error, Result};
use crate::objectives::class_logits;
use crate::param::{Module, Parameter};
use crate::prompt::PromptLearner;
use crate::tensor::Tensor;
use crate::train::config::RunConfig;

/// Frozen-or-not backbone plus the optional tuning heads.
#[derive(Debug, Clone)]
pub struct Model {
    pub backbone: EncoderStack,
    pub prompt: Option<PromptLearner>,
    pub adapter: PointAdapter,
    pub tau_cls: f64,
}

/// Parameters allowed to train during prompt tuning.
pub fn is_tuning_parameter(name: &str) -> bool {
    name == "prompt.E" || name.starts_with("adapter.")
}

impl Model {
    /// Fresh backbone from `cfg.seed`; no prompt, no adapter.
    pub fn backbone(cfg: &RunConfig, vocab: Vocabulary) -> Result<Self> {
        Ok(Self {
            backbone: EncoderStack::new(cfg.encoder_config(), vocab, cfg.seed)?,
            prompt: None,
            adapter: PointAdapter::None,
            tau_cls: cfg.tau_cls,
        })
    }

    /// Freezes the whole backbone and attaches a prompt learner and adapter
    /// for `class_names`.
    pub fn attach_tuning(&mut self, cfg: &RunConfig, class_names: &[String]) -> Result<()> {
        self.backbone.set_frozen(true);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(11);
        let template = Some(cfg.init_template.as_str());
        self.prompt = Some(PromptLearner::new(
            &self.backbone.text,
            &self.backbone.vocab,
            class_names,
            cfg.context_length,
            cfg.insert_position,
            cfg.init_mode,
            template,
            &mut rng,
        )?);
        rng.set_stream(12);
        self.adapter = PointAdapter::new(
            cfg.adapter,
            self.backbone.point.width(),
            cfg.adapter_heads,
            self.backbone.config.gelu,
            &mut rng,
        )?;
        self.tau_cls = cfg.tau_cls;
        Ok(())
    }

    /// Backbone configuration for pre-training: only `f_P` learns.
    pub fn prepare_pretraining(&mut self) {
        self.backbone.set_frozen(true);
        self.backbone.point.set_frozen(false);
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.prompt.as_ref().map(|p| p.class_names.as_slice())
    }

    /// Pooled `h^P`, `[B, D_point]`.
    pub fn point_features(&self, patches: &[Patches]) -> Result<Tensor> {
        self.backbone.point.features(patches)
    }

    /// `[S, D]` text features of the learned prompts.
    pub fn prompt_text_features(&self) -> Result<Tensor> {
        let prompt = self
            .prompt
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no prompt learner".into()))?;
        prompt.class_text_features(&self.backbone.text)
    }

    /// `[S, D]` text features of a hand-written template such as
    /// `"a point cloud model of [CLASS]"`.
    pub fn manual_text_features(&self, template: &str, class_names: &[String]) -> Result<Tensor> {
        let text = &self.backbone.text;
        let seqs = class_names
            .iter()
            .map(|c| text.embed_text(&self.backbone.vocab, &fill_template(template, c)))
            .collect::<Result<Vec<_>>>()?;
        text.encode_batch(&seqs)
    }

    /// Adapter, frozen projection, cosine logits against `text`.
    pub fn logits(&self, point_features: &Tensor, text: &Tensor) -> Result<Tensor> {
        let adapted = self.adapter.forward(point_features)?;
        let projected = self.backbone.point.project(&adapted)?;
        class_logits(&projected, text, self.tau_cls)
    }

    /// Every parameter outside the prompt contexts and adapter is frozen,
    /// and those two are trainable.
    pub fn check_tuning_freeze(&self) -> Result<()> {
        let mut bad = None;
        self.visit(&mut |p| {
            if bad.is_none() && p.trainable() != is_tuning_parameter(p.name()) {
                bad = Some((p.name().to_string(), p.trainable()));
            }
        });
        match bad {
            Some((name, true)) => Err(Error::config(name, "backbone parameter is trainable during tuning")),
            Some((name, false)) => Err(Error::config(name, "tuning parameter is frozen")),
            None if self.prompt.is_none() => Err(Error::Contract("tuning needs a prompt learner".into())),
            None => Ok(()),
        }
    }

    /// Text and image encoders frozen; point encoder trainable.
    pub fn check_pretraining_freeze(&self) -> Result<()> {
        let mut bad = None;
        let mut record = |p: &Parameter, want: bool| {
            if bad.is_none() && p.trainable() != want {
                bad = Some(p.name().to_string());
            }
        };
        self.backbone.text.visit(&mut |p| record(p, false));
        self.backbone.image.visit(&mut |p| record(p, false));
        self.backbone.point.visit(&mut |p| record(p, true));
        match bad {
            Some(name) => Err(Error::config(name, "violates the pre-training freezing contract")),
            None => Ok(()),
        }
    }
}

impl Module for Model {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.backbone.visit(f);
        if let Some(p) = &self.prompt {
            p.visit(f);
        }
        self.adapter.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.backbone.visit_mut(f);
        if let Some(p) = &mut self.prompt {
            p.visit_mut(f);
        }
        self.adapter.visit_mut(f);
    }
}
