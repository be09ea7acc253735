//! Contrastive pre-training of the point encoder against the frozen text
//! and image encoders on the synthetic shape suite.
//!
//! cargo run --release --example pretrain

use ppt::adapter::AdapterKind;
use ppt::encoders::Vocabulary;
use ppt::objectives::LossForm;
use ppt::train::run::{load_dataset, window_means};
use ppt::train::{count_learnable, pretrain, Mode, Model, RunConfig};

fn main() -> ppt::Result<()> {
    let mut cfg = RunConfig::new(Mode::Pretrain, AdapterKind::None, 8, LossForm::Categorical);
    cfg.embed_dim = 32;
    cfg.text_heads = 4;
    cfg.image_width = 32;
    cfg.point_width = 32;
    cfg.point_heads = 4;
    cfg.patch_hidden = 32;
    cfg.train_per_class = 16;
    cfg.test_per_class = 4;
    cfg.steps = 150;
    cfg.batch_size = 16;
    cfg.lr = Some(3e-3);
    cfg.caption_aliases = true;

    let ds = load_dataset(&cfg)?;
    let mut model = Model::backbone(&cfg, Vocabulary::default())?;
    model.prepare_pretraining();
    let learnable = count_learnable(&model);
    println!("{} training triplets; learnable {:?}", ds.class_counts(ppt::data::Split::Train).iter().sum::<usize>(), learnable.groups);
    let report = pretrain(&cfg, &mut model, &ds, &mut |step, loss| {
        if step % 50 == 0 {
            println!("step {step:>4}  loss {loss:.4}");
        }
    })?;
    let windows: Vec<String> = window_means(&report.losses, 25).iter().map(|v| format!("{v:.3}")).collect();
    println!("loss per 25 steps {windows:?}");
    Ok(())
}
