//! Flat TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::{AdapterKind, DEFAULT_ADAPTER_HEADS};
use crate::data::SyntheticConfig;
use crate::encoders::{EncoderConfig, ImageEncoderConfig, PointEncoderConfig, TextEncoderConfig};
use crate::error::{Error, Result};
use crate::objectives::{LossForm, LossWeights, DEFAULT_TAU_CLS, DEFAULT_TAU_CONTRASTIVE};
use crate::prompt::{InitMode, InsertPosition};
use crate::tensor::GeluMode;
use crate::train::optim::OptimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Pretrain,
    Tune,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Pretrain => "pretrain",
            Mode::Tune => "tune",
        }
    }
}

/// Every knob of a run. `mode`, `adapter`, `context_length` and `loss_form`
/// have no default and must be written out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub adapter: AdapterKind,
    pub context_length: usize,
    pub loss_form: LossForm,

    #[serde(default = "d::insert_position")]
    pub insert_position: InsertPosition,
    #[serde(default = "d::init_mode")]
    pub init_mode: InitMode,
    #[serde(default = "d::init_template")]
    pub init_template: String,
    #[serde(default = "d::zero_shot_template")]
    pub zero_shot_template: String,

    #[serde(default = "d::tau_cls")]
    pub tau_cls: f64,
    #[serde(default = "d::tau_contrastive")]
    pub tau_contrastive: f64,
    #[serde(default = "d::one")]
    pub alpha: f64,
    #[serde(default = "d::one")]
    pub beta: f64,
    #[serde(default = "d::one")]
    pub theta: f64,

    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    #[serde(default = "d::steps")]
    pub steps: usize,
    /// Defaults to 1e-3 when pre-training and 5e-4 when tuning.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "d::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "d::warmup_fraction")]
    pub warmup_fraction: f64,
    #[serde(default = "d::one")]
    pub clip_norm: f64,

    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data_seed: u64,

    /// OFF directory; the synthetic suite is used when absent.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(default = "d::train_per_class")]
    pub train_per_class: usize,
    #[serde(default = "d::test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "d::points")]
    pub points: usize,
    #[serde(default = "d::noise")]
    pub noise: f64,
    #[serde(default = "d::scale_jitter")]
    pub scale_jitter: f64,
    #[serde(default = "d::yes")]
    pub random_yaw: bool,
    /// Pre-training captions also name shapes by their aliases.
    #[serde(default)]
    pub caption_aliases: bool,
    /// Fresh yaw and scale jitter on every pre-training draw.
    #[serde(default = "d::yes")]
    pub pretrain_augment: bool,
    #[serde(default = "d::one")]
    pub fraction: f64,
    /// Train samples per class; `0` keeps the whole train split.
    #[serde(default)]
    pub shots: usize,

    #[serde(default = "d::embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "d::text_heads")]
    pub text_heads: usize,
    #[serde(default = "d::depth")]
    pub text_depth: usize,
    #[serde(default = "d::text_context")]
    pub text_context: usize,
    #[serde(default = "d::image_size")]
    pub image_size: usize,
    #[serde(default = "d::image_patch")]
    pub image_patch: usize,
    #[serde(default = "d::image_width")]
    pub image_width: usize,
    #[serde(default = "d::image_heads")]
    pub image_heads: usize,
    #[serde(default = "d::depth")]
    pub image_depth: usize,
    #[serde(default = "d::point_width")]
    pub point_width: usize,
    #[serde(default = "d::point_heads")]
    pub point_heads: usize,
    #[serde(default = "d::depth")]
    pub point_depth: usize,
    #[serde(default = "d::num_patches")]
    pub num_patches: usize,
    #[serde(default = "d::patch_size")]
    pub patch_size: usize,
    #[serde(default = "d::patch_hidden")]
    pub patch_hidden: usize,
    #[serde(default = "d::mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default = "d::adapter_heads")]
    pub adapter_heads: usize,
    #[serde(default)]
    pub gelu: GeluMode,
}

mod d {
    use super::*;

    pub fn insert_position() -> InsertPosition {
        InsertPosition::End
    }
    pub fn init_mode() -> InitMode {
        InitMode::Random
    }
    pub fn init_template() -> String {
        "a point cloud model of a".into()
    }
    pub fn zero_shot_template() -> String {
        crate::data::ZERO_SHOT_TEMPLATE.into()
    }
    pub fn tau_cls() -> f64 {
        DEFAULT_TAU_CLS
    }
    pub fn tau_contrastive() -> f64 {
        DEFAULT_TAU_CONTRASTIVE
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn yes() -> bool {
        true
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn steps() -> usize {
        300
    }
    pub fn weight_decay() -> f64 {
        0.05
    }
    pub fn warmup_fraction() -> f64 {
        0.1
    }
    pub fn train_per_class() -> usize {
        64
    }
    pub fn test_per_class() -> usize {
        32
    }
    pub fn points() -> usize {
        256
    }
    pub fn noise() -> f64 {
        0.01
    }
    pub fn scale_jitter() -> f64 {
        0.3
    }
    pub fn embed_dim() -> usize {
        512
    }
    pub fn text_heads() -> usize {
        8
    }
    pub fn depth() -> usize {
        2
    }
    pub fn text_context() -> usize {
        77
    }
    pub fn image_size() -> usize {
        32
    }
    pub fn image_patch() -> usize {
        8
    }
    pub fn image_width() -> usize {
        256
    }
    pub fn image_heads() -> usize {
        4
    }
    pub fn point_width() -> usize {
        384
    }
    pub fn point_heads() -> usize {
        6
    }
    pub fn num_patches() -> usize {
        16
    }
    pub fn patch_size() -> usize {
        8
    }
    pub fn patch_hidden() -> usize {
        128
    }
    pub fn mlp_ratio() -> usize {
        4
    }
    pub fn adapter_heads() -> usize {
        DEFAULT_ADAPTER_HEADS
    }
}

impl RunConfig {
    /// Defaults for everything except the four required keys.
    pub fn new(mode: Mode, adapter: AdapterKind, context_length: usize, loss_form: LossForm) -> Self {
        let text = format!(
            "mode = \"{}\"\nadapter = \"{}\"\ncontext_length = {context_length}\nloss_form = \"{}\"\n",
            match mode {
                Mode::Pretrain => "pretrain",
                Mode::Tune => "tune",
            },
            adapter.as_str(),
            loss_form.as_str()
        );
        toml::from_str(&text).expect("minimal config parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let field = message
                .split('`')
                .nth(1)
                .unwrap_or("config")
                .to_string();
            Error::Config { field, message }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("context_length", self.context_length),
            ("batch_size", self.batch_size),
            ("embed_dim", self.embed_dim),
            ("points", self.points),
            ("train_per_class", self.train_per_class),
            ("test_per_class", self.test_per_class),
            ("num_patches", self.num_patches),
            ("patch_size", self.patch_size),
            ("point_width", self.point_width),
            ("image_width", self.image_width),
            ("mlp_ratio", self.mlp_ratio),
        ];
        if let Some((field, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(*field, "must be positive"));
        }
        for (field, tau) in [("tau_cls", self.tau_cls), ("tau_contrastive", self.tau_contrastive)] {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::config(field, "temperature must be > 0"));
            }
        }
        if self.context_length + 3 > self.text_context {
            return Err(Error::config(
                "context_length",
                format!("M + 3 must fit text_context = {}", self.text_context),
            ));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::config("fraction", "must be in (0, 1]"));
        }
        if self.shots > 0 && self.fraction < 1.0 {
            return Err(Error::config("shots", "cannot combine shots with fraction < 1"));
        }
        if self.points < self.num_patches || self.points < self.patch_size {
            return Err(Error::config("points", "need at least num_patches and patch_size points"));
        }
        if !(self.noise >= 0.0) || !(0.0..1.0).contains(&self.scale_jitter) {
            return Err(Error::config("noise/scale_jitter", "out of range"));
        }
        for (field, width, heads) in [
            ("text_heads", self.embed_dim, self.text_heads),
            ("image_heads", self.image_width, self.image_heads),
            ("point_heads", self.point_width, self.point_heads),
        ] {
            if heads == 0 || width % heads != 0 {
                return Err(Error::config(field, format!("width {width} is not divisible by {heads} heads")));
            }
        }
        if self.adapter == AdapterKind::Ptb && (self.adapter_heads == 0 || !self.point_width.is_multiple_of(self.adapter_heads)) {
            return Err(Error::config(
                "adapter_heads",
                format!("point_width {} is not divisible by {} heads", self.point_width, self.adapter_heads),
            ));
        }
        if self.image_patch == 0 || !self.image_size.is_multiple_of(self.image_patch) {
            return Err(Error::config("image_patch", "must divide image_size"));
        }
        self.loss_weights().validate()?;
        self.optim().validate()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            text: TextEncoderConfig {
                width: self.embed_dim,
                heads: self.text_heads,
                depth: self.text_depth,
                context_len: self.text_context,
                mlp_ratio: self.mlp_ratio,
            },
            image: ImageEncoderConfig {
                image_size: self.image_size,
                patch_size: self.image_patch,
                width: self.image_width,
                heads: self.image_heads,
                depth: self.image_depth,
                mlp_ratio: self.mlp_ratio,
            },
            point: PointEncoderConfig {
                width: self.point_width,
                heads: self.point_heads,
                depth: self.point_depth,
                num_patches: self.num_patches,
                patch_size: self.patch_size,
                patch_hidden: self.patch_hidden,
                mlp_ratio: self.mlp_ratio,
            },
            gelu: self.gelu,
        }
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            points: self.points,
            noise: self.noise,
            scale_jitter: self.scale_jitter,
            random_yaw: self.random_yaw,
            seed: self.data_seed,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            theta: self.theta,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.mode {
            Mode::Pretrain => 1e-3,
            Mode::Tune => 5e-4,
        })
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            weight_decay: self.weight_decay,
            warmup_fraction: self.warmup_fraction,
            clip_norm: self.clip_norm,
            ..OptimConfig::new(self.learning_rate(), self.steps)
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(self.hash_bytes())
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "mode = \"tune\"\nadapter = \"ffn\"\ncontext_length = 32\nloss_form = \"categorical\"\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::parse(MIN).unwrap();
        assert_eq!(cfg.adapter, AdapterKind::Ffn);
        assert_eq!(cfg.embed_dim, 512);
        assert_eq!(cfg.point_width, 384);
        assert_eq!(cfg.learning_rate(), 5e-4);
        assert_eq!(cfg, RunConfig::new(Mode::Tune, AdapterKind::Ffn, 32, LossForm::Categorical));
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn required_keys_and_unknown_keys() {
        for key in ["mode", "adapter", "context_length", "loss_form"] {
            let text: String = MIN.lines().filter(|l| !l.starts_with(key)).map(|l| format!("{l}\n")).collect();
            match RunConfig::parse(&text) {
                Err(Error::Config { message, .. }) => assert!(message.contains(key), "{message}"),
                other => panic!("{key}: {other:?}"),
            }
        }
        match RunConfig::parse(&format!("{MIN}colour = 3\n")) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "colour"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn field_level_validation() {
        let bad = format!("{MIN}adapter_heads = 5\n").replace("adapter = \"ffn\"", "adapter = \"ptb\"");
        match RunConfig::parse(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "adapter_heads"),
            other => panic!("{other:?}"),
        }
        match RunConfig::parse(&format!("{MIN}tau_cls = 0.0\n")) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "tau_cls"),
            other => panic!("{other:?}"),
        }
        let long = MIN.replace("context_length = 32", "context_length = 80");
        assert!(RunConfig::parse(&long).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::parse(MIN).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
