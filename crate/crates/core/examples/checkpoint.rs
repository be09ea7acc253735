//! Saving a tuned model with its optimizer state, detecting corruption and
//! rebuilding an identical model from disk.
//!
//! cargo run --release --example checkpoint

use ppt::adapter::AdapterKind;
use ppt::data::Split;
use ppt::encoders::Vocabulary;
use ppt::objectives::LossForm;
use ppt::train::run::load_dataset;
use ppt::train::{tune_features, Checkpoint, FeatureSplit, Mode, Model, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::new(Mode::Tune, AdapterKind::Ffn, 4, LossForm::Categorical);
    cfg.embed_dim = 16;
    cfg.text_heads = 2;
    cfg.image_width = 16;
    cfg.point_width = 16;
    cfg.point_heads = 2;
    cfg.patch_hidden = 16;
    cfg.train_per_class = 4;
    cfg.test_per_class = 2;
    cfg.steps = 20;
    cfg.batch_size = 8;

    let ds = load_dataset(&cfg)?;
    let mut model = Model::backbone(&cfg, Vocabulary::default())?;
    model.attach_tuning(&cfg, &ds.class_names)?;
    let train = FeatureSplit::build(&model, &ds, Split::Train)?;
    let test = FeatureSplit::build(&model, &ds, Split::Test)?;
    let report = tune_features(&cfg, &mut model, &train, &test, &mut |_, _| {})?;

    let dir = std::env::temp_dir().join(format!("ppt-ckpt-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("tuned.ppt");
    Checkpoint::capture(&model, Some(&report.optimizer), &cfg).save(&path)?;
    let bytes = std::fs::read(&path)?;
    let loaded = Checkpoint::load(&path)?;
    println!("{} bytes, {} tensors, step {}, config {}", bytes.len(), loaded.tensors.len(), loaded.step, &loaded.config_hash()[..12]);
    println!("re-serialized identically: {}", loaded.to_bytes() == bytes);

    let rebuilt = loaded.build_model()?;
    let a = model.logits(&test.features, &model.prompt_text_features()?)?;
    let b = rebuilt.logits(&test.features, &rebuilt.prompt_text_features()?)?;
    println!("rebuilt logits identical: {}", a.values() == b.values());

    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 1;
    println!("bit flip: {}", Checkpoint::from_bytes(&flipped).unwrap_err());
    println!("truncated: {}", Checkpoint::from_bytes(&bytes[..bytes.len() - 5]).unwrap_err());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
