//! Prompt tuning on a frozen backbone with each adapter, against the
//! hand-written zero-shot template.
//!
//! cargo run --release --example tune

use ppt::adapter::AdapterKind;
use ppt::data::Split;
use ppt::encoders::Vocabulary;
use ppt::objectives::LossForm;
use ppt::train::run::load_dataset;
use ppt::train::{pretrain, tune_features, zero_shot, FeatureSplit, Mode, Model, RunConfig};

fn small(mode: Mode) -> RunConfig {
    let mut cfg = RunConfig::new(mode, AdapterKind::None, 8, LossForm::Categorical);
    cfg.embed_dim = 32;
    cfg.text_heads = 4;
    cfg.image_width = 32;
    cfg.point_width = 32;
    cfg.point_heads = 4;
    cfg.patch_hidden = 32;
    cfg.adapter_heads = 4;
    cfg.train_per_class = 16;
    cfg.test_per_class = 8;
    cfg.batch_size = 16;
    cfg.caption_aliases = true;
    cfg
}

fn main() -> ppt::Result<()> {
    let pre = RunConfig { steps: 150, lr: Some(3e-3), ..small(Mode::Pretrain) };
    let ds = load_dataset(&pre)?;
    let mut backbone = Model::backbone(&pre, Vocabulary::default())?;
    pretrain(&pre, &mut backbone, &ds, &mut |_, _| {})?;

    let tune_cfg = RunConfig { steps: 150, tau_cls: 0.1, ..small(Mode::Tune) };
    let train = FeatureSplit::build(&backbone, &ds, Split::Train)?;
    let test = FeatureSplit::build(&backbone, &ds, Split::Test)?;
    let zs = zero_shot(&backbone, &test, &tune_cfg.zero_shot_template, &ds.class_names)?;
    println!("zero-shot  OA {:.3}", zs.overall_accuracy);
    for adapter in AdapterKind::ALL {
        let cfg = RunConfig { adapter, ..tune_cfg.clone() };
        let mut model = backbone.clone();
        model.attach_tuning(&cfg, &ds.class_names)?;
        let r = tune_features(&cfg, &mut model, &train, &test, &mut |_, _| {})?;
        println!(
            "{:>9}  OA {:.3}  mean class {:.3}  learnable {:?}",
            adapter.as_str(),
            r.metrics.overall_accuracy,
            r.metrics.mean_class_accuracy,
            r.learnable.groups
        );
    }
    Ok(())
}
