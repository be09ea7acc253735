//! Pre-trains the reference backbone on the synthetic suite, then tunes
//! PPT-Base, PPT-FFN and PPT-PTB and compares them with the zero-shot
//! template baseline.
//!
//! cargo run --release --example reference_run

use std::time::Instant;

use ppt::adapter::AdapterKind;
use ppt::data::Split;
use ppt::encoders::Vocabulary;
use ppt::train::run::{load_dataset, window_means};
use ppt::train::{pretrain, tune_features, zero_shot, FeatureSplit, Model, RunConfig};

fn main() -> ppt::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");
    let pre_cfg = RunConfig::load(format!("{dir}/reference-pretrain.toml"))?;
    let tune_cfg = RunConfig::load(format!("{dir}/reference-tune.toml"))?;
    let ds = load_dataset(&pre_cfg)?;

    let t = Instant::now();
    let mut backbone = Model::backbone(&pre_cfg, Vocabulary::default())?;
    let report = pretrain(&pre_cfg, &mut backbone, &ds, &mut |_, _| {})?;
    let w = window_means(&report.losses, 50);
    println!("pretrain: {:.1}s, loss windows {:?}", t.elapsed().as_secs_f64(), w.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());

    let train = FeatureSplit::build(&backbone, &ds, Split::Train)?;
    let test = FeatureSplit::build(&backbone, &ds, Split::Test)?;
    let zs = zero_shot(&backbone, &test, &tune_cfg.zero_shot_template, &ds.class_names)?;
    println!("zero-shot OA {:.4}", zs.overall_accuracy);

    for kind in AdapterKind::ALL {
        let cfg = RunConfig { adapter: kind, ..tune_cfg.clone() };
        let t = Instant::now();
        let mut model = backbone.clone();
        model.attach_tuning(&cfg, &ds.class_names)?;
        let r = tune_features(&cfg, &mut model, &train, &test, &mut |_, _| {})?;
        let w = window_means(&r.losses, 50);
        println!(
            "{:>4}: OA {:.4}  mean-class {:.4}  learnable {}  {:.1}s  loss windows {:?}",
            kind.as_str(),
            r.metrics.overall_accuracy,
            r.metrics.mean_class_accuracy,
            r.learnable.total,
            t.elapsed().as_secs_f64(),
            w.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        );
    }
    Ok(())
}
