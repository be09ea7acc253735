//! Driving the command-line interface in-process: pre-train a small
//! backbone, then sweep the prompt length and the few-shot budget.
//!
//! cargo run --release --example sweep

use ppt::adapter::AdapterKind;
use ppt::cli::{read_table, run_with, CHECKPOINT_FILE, SWEEP_FILE};
use ppt::objectives::LossForm;
use ppt::train::{Mode, RunConfig};

fn config(mode: Mode) -> RunConfig {
    let mut cfg = RunConfig::new(mode, AdapterKind::None, 4, LossForm::Categorical);
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
    match mode {
        Mode::Pretrain => {
            cfg.steps = 150;
            cfg.lr = Some(3e-3);
        }
        Mode::Tune => {
            cfg.steps = 100;
            cfg.tau_cls = 0.1;
        }
    }
    cfg
}

fn call(args: &[&str]) -> i32 {
    let mut out = Vec::new();
    let code = run_with(std::iter::once("ppt").chain(args.iter().copied()), &mut out);
    print!("{}", String::from_utf8_lossy(&out));
    code
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join(format!("ppt-sweep-example-{}", std::process::id()));
    std::fs::create_dir_all(&root)?;
    let pre = root.join("pre.toml");
    let tune = root.join("tune.toml");
    std::fs::write(&pre, config(Mode::Pretrain).to_toml())?;
    std::fs::write(&tune, config(Mode::Tune).to_toml())?;
    let runs = root.join("runs");
    let (pre, tune, runs) = (pre.to_str().unwrap(), tune.to_str().unwrap(), runs.to_str().unwrap());

    assert_eq!(call(&["--config", pre, "--out-dir", runs, "pretrain"]), 0);
    let backbone = std::fs::read_dir(runs)?
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("pretrain-"))
        .unwrap()
        .join(CHECKPOINT_FILE);
    let backbone = backbone.to_str().unwrap();

    for (axis, values) in [("context_length", "1,4,8"), ("few_shot", "1,2,4")] {
        let code = call(&["--config", tune, "--out-dir", runs, "sweep", "--checkpoint", backbone, "--axis", axis, "--values", values]);
        assert_eq!(code, 0);
    }
    let csv = std::fs::read_dir(runs)?
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("sweep-few_shot"))
        .unwrap()
        .join(SWEEP_FILE);
    for row in read_table(&std::fs::read_to_string(csv)?)? {
        println!("parsed: shots {} -> {} samples, OA {:?}", row.value, row.train_samples.unwrap_or(0), row.overall_accuracy);
    }
    std::fs::remove_dir_all(&root)?;
    Ok(())
}
