//! End-to-end acceptance checks. Run with `cargo test --test acceptance`;
//! prints one PASS/FAIL line per criterion and exits non-zero on failure.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use anyhow::{ensure, Result};
use common::grad::{loss_cases, op_cases, run_case, TOL};
use common::{normals, reference_configs, rng};
use ppt::adapter::AdapterKind;
use ppt::data::{Dataset, Mesh, Split};
use ppt::encoders::Vocabulary;
use ppt::objectives::{one_hot, pairwise_contrastive, tuning_loss, LossForm};
use ppt::prompt::{nearest_words, InitMode, InsertPosition};
use ppt::train::run::load_dataset;
use ppt::train::{count_learnable, pretrain, tune_features, zero_shot, Checkpoint, FeatureSplit, Mode, Model, RunConfig};
use ppt::{Error, Module, Tensor};
use rand::Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String>;

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn backbone_hashes(model: &Model) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    model.visit(&mut |p| {
        if !ppt::train::model::is_tuning_parameter(p.name()) {
            let mut h = Sha256::new();
            for v in p.values() {
                h.update(v.to_le_bytes());
            }
            out.insert(p.name().to_string(), hex::encode(h.finalize()));
        }
    });
    out
}

fn brute_force_contrastive(a: &[f64], b: &[f64], bsz: usize, d: usize, tau: f64) -> f64 {
    let cos = |i: usize, k: usize| {
        let (u, v) = (&a[i * d..(i + 1) * d], &b[k * d..(k + 1) * d]);
        let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (nu * nv)
    };
    let mut total = 0.0;
    for i in 0..bsz {
        let (mut row, mut col) = (0.0, 0.0);
        for k in 0..bsz {
            row += (cos(i, k) / tau).exp();
            col += (cos(k, i) / tau).exp();
        }
        let pos = cos(i, i) / tau;
        total += -0.5 * (pos - row.ln()) - 0.5 * (pos - col.ln());
    }
    total / bsz as f64
}

/// Reference backbone, dataset and cached features shared by several
/// criteria.
struct Reference {
    pre_cfg: RunConfig,
    tune_cfg: RunConfig,
    ds: Dataset,
    backbone: Model,
    train: FeatureSplit,
    test: FeatureSplit,
    pretrain_s: f64,
}

impl Reference {
    fn build() -> Result<Self> {
        let (pre_cfg, tune_cfg) = reference_configs();
        let ds = load_dataset(&pre_cfg)?;
        let t = Instant::now();
        let mut backbone = Model::backbone(&pre_cfg, Vocabulary::default())?;
        pretrain(&pre_cfg, &mut backbone, &ds, &mut |_, _| {})?;
        let pretrain_s = t.elapsed().as_secs_f64();
        let train = FeatureSplit::build(&backbone, &ds, Split::Train)?;
        let test = FeatureSplit::build(&backbone, &ds, Split::Test)?;
        Ok(Self { pre_cfg, tune_cfg, ds, backbone, train, test, pretrain_s })
    }

    fn tune(&self, adapter: AdapterKind) -> Result<(Model, ppt::train::TuneReport)> {
        let cfg = RunConfig { adapter, ..self.tune_cfg.clone() };
        let mut model = self.backbone.clone();
        model.attach_tuning(&cfg, &self.ds.class_names)?;
        let report = tune_features(&cfg, &mut model, &self.train, &self.test, &mut |_, _| {})?;
        Ok((model, report))
    }
}

fn learnable_counts() -> Outcome {
    let ffn_closed = |d: usize| 8 * d * d + 7 * d;
    let ptb_closed = |d: usize| 12 * d * d + 13 * d;
    let names = vec!["cube".to_string(), "cone".to_string()];
    let mut lines = Vec::new();
    for (adapter, band) in [
        (AdapterKind::None, None),
        (AdapterKind::Ffn, Some((1_150_000, 1_250_000))),
        (AdapterKind::Ptb, Some((1_750_000, 1_850_000))),
    ] {
        let cfg = RunConfig::new(Mode::Tune, adapter, 32, LossForm::Categorical);
        let (d, dp) = (cfg.embed_dim, cfg.point_width);
        ensure!((d, dp) == (512, 384), "default widths are {d}/{dp}");
        let mut model = Model::backbone(&cfg, Vocabulary::default())?;
        model.attach_tuning(&cfg, &names)?;
        let got = count_learnable(&model);
        let adapter_closed = match adapter {
            AdapterKind::None => 0,
            AdapterKind::Ffn => ffn_closed(dp),
            AdapterKind::Ptb => ptb_closed(dp),
        };
        let want = 32 * d + adapter_closed;
        ensure!(got.total == want, "{}: enumerated {} vs closed form {want}", adapter.as_str(), got.total);
        ensure!(got.groups.get("prompt") == Some(&16_384), "{}: prompt group {:?}", adapter.as_str(), got.groups);
        if let Some((lo, hi)) = band {
            ensure!((lo..=hi).contains(&got.total), "{}: {} outside [{lo}, {hi}]", adapter.as_str(), got.total);
        }
        lines.push(format!("{}={}", adapter.as_str(), got.total));
    }
    Ok(lines.join(" "))
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let mut worst = (0.0f64, "");
    let cases: Vec<_> = op_cases().into_iter().chain(loss_cases()).collect();
    for &(name, case) in &cases {
        let err = run_case(name, case);
        if err > worst.0 {
            worst = (err, name);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(worst.0 <= TOL, "worst relative error {:.3e} in {}", worst.0, worst.1);
    ensure!(secs < 60.0, "suite took {secs:.1}s");
    Ok(format!("{} cases, worst {:.2e} ({}), {secs:.1}s", cases.len(), worst.0, worst.1))
}

fn loss_oracles() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let b = 1 + i % 8;
        let d = r.random_range(2..9);
        let tau = r.random_range(0.05..1.0);
        let x = normals(&mut r, b * d, 1.0);
        let y = normals(&mut r, b * d, 1.0);
        let got = pairwise_contrastive(&Tensor::matrix(b, d, x.clone())?, &Tensor::matrix(b, d, y.clone())?, tau)?.item()?;
        let want = brute_force_contrastive(&x, &y, b, d, tau);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
        if b == 1 {
            ensure!(got == 0.0, "B=1 loss is {got:e}");
        }
    }
    ensure!(worst <= 1e-9, "contrastive error {worst:e}");

    let mut worst_tune = 0.0f64;
    for _ in 0..50 {
        let (b, s) = (r.random_range(1..8), r.random_range(2..6));
        let mut probs = Vec::with_capacity(b * s);
        for _ in 0..b {
            let row: Vec<f64> = (0..s).map(|_| r.random_range(0.01..1.0)).collect();
            let total: f64 = row.iter().sum();
            probs.extend(row.iter().map(|v| v / total));
        }
        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..s)).collect();
        let cat = -(0..b).map(|i| probs[i * s + labels[i]].ln()).sum::<f64>() / b as f64;
        let bce = -(0..b)
            .map(|i| {
                (0..s)
                    .map(|j| if j == labels[i] { probs[i * s + j].ln() } else { (1.0 - probs[i * s + j]).ln() })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / b as f64;
        let p = Tensor::matrix(b, s, probs)?;
        let t = one_hot(&labels, s)?;
        worst_tune = worst_tune.max((tuning_loss(&p, &t, LossForm::Categorical)?.item()? - cat).abs());
        worst_tune = worst_tune.max((tuning_loss(&p, &t, LossForm::Bce)?.item()? - bce).abs());
    }
    ensure!(worst_tune <= 1e-12, "tuning loss error {worst_tune:e}");
    Ok(format!("contrastive {worst:.1e}, tuning {worst_tune:.1e}"))
}

fn frozen_backbone(reference: &Reference) -> Outcome {
    let mut notes = Vec::new();
    let pretrained = backbone_hashes(&reference.backbone);
    for adapter in AdapterKind::ALL {
        let cfg = RunConfig { adapter, ..reference.tune_cfg.clone() };
        let mut model = reference.backbone.clone();
        model.attach_tuning(&cfg, &reference.ds.class_names)?;
        let before = backbone_hashes(&model);
        ensure!(pretrained.iter().all(|(k, v)| before.get(k) == Some(v)), "attaching prompts changed the backbone");
        let report = tune_features(&cfg, &mut model, &reference.train, &reference.test, &mut |_, _| {})?;
        let after = backbone_hashes(&model);
        let changed: Vec<_> = before.keys().filter(|k| after.get(*k) != Some(&before[*k])).collect();
        ensure!(changed.is_empty() && before.len() == after.len(), "{}: frozen tensors changed: {changed:?}", adapter.as_str());
        let want = cfg.context_length * cfg.embed_dim
            + ppt::adapter::adapter_param_count(adapter, model.backbone.point.width(), cfg.adapter_heads)?;
        ensure!(report.learnable.total == want, "{}: {} learnable vs {want}", adapter.as_str(), report.learnable.total);
        notes.push(format!("{}={}", adapter.as_str(), want));
        if adapter == AdapterKind::Ptb {
            notes.insert(0, format!("{} frozen tensors unchanged;", after.len()));
        }
    }
    Ok(format!("learnable {}", notes.join(" ")))
}

fn reference_accuracy(reference: &Reference, base_oa: &mut f64) -> Outcome {
    let zs = zero_shot(&reference.backbone, &reference.test, &reference.tune_cfg.zero_shot_template, &reference.ds.class_names)?;
    let mut oa = BTreeMap::new();
    for adapter in AdapterKind::ALL {
        oa.insert(adapter.as_str(), reference.tune(adapter)?.1.metrics.overall_accuracy);
    }
    let (base, ffn, ptb) = (oa["none"], oa["ffn"], oa["ptb"]);
    *base_oa = base;
    let summary = format!(
        "pretrain {:.0}s; zero-shot {:.4}, base {base:.4}, ffn {ffn:.4}, ptb {ptb:.4}",
        reference.pretrain_s, zs.overall_accuracy
    );
    ensure!(base >= 0.80, "base below 0.80: {summary}");
    ensure!(base - zs.overall_accuracy >= 0.10, "gap below 0.10: {summary}");
    ensure!(ffn >= base - 0.005 && ptb >= base - 0.005, "adapter below base: {summary}");
    Ok(summary)
}

fn data_efficiency(reference: &Reference, base_oa: f64) -> Outcome {
    let ds = &reference.ds;
    let fractions = [0.05, 0.1, 0.2, 0.5, 1.0];
    let subsets: Vec<_> = fractions.iter().map(|&f| ds.fraction(f, reference.tune_cfg.data_seed)).collect::<ppt::Result<_>>()?;
    for pair in subsets.windows(2) {
        let big = pair[1].ids(Split::Train);
        ensure!(pair[0].ids(Split::Train).iter().all(|id| big.contains(id)), "subsets do not nest");
    }
    ensure!(subsets.iter().all(|s| s.ids(Split::Test) == ds.ids(Split::Test)), "test split changed");

    let cfg = RunConfig { fraction: 0.05, ..reference.tune_cfg.clone() };
    let small = &subsets[0];
    let train = FeatureSplit::build(&reference.backbone, small, Split::Train)?;
    let mut model = reference.backbone.clone();
    model.attach_tuning(&cfg, &small.class_names)?;
    let oa5 = tune_features(&cfg, &mut model, &train, &reference.test, &mut |_, _| {})?.metrics.overall_accuracy;
    let need = 0.85 * base_oa;
    let summary = format!("OA@5% {oa5:.4} ({} samples) vs 0.85 x {base_oa:.4} = {need:.4}", train.len());
    ensure!(oa5 >= need, "{summary}");
    Ok(summary)
}

fn determinism(reference: &Reference) -> Outcome {
    let short = RunConfig { steps: 20, ..reference.pre_cfg.clone() };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut m = Model::backbone(&short, Vocabulary::default())?;
        let r = pretrain(&short, &mut m, &reference.ds, &mut |_, _| {})?;
        runs.push((r.losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), Checkpoint::capture(&m, Some(&r.optimizer), &short).to_bytes()));
    }
    ensure!(runs[0] == runs[1], "short pre-training runs differ");

    let mut tuned = Vec::new();
    for _ in 0..2 {
        let (model, report) = reference.tune(AdapterKind::Ptb)?;
        let cfg = RunConfig { adapter: AdapterKind::Ptb, ..reference.tune_cfg.clone() };
        let bytes = Checkpoint::capture(&model, Some(&report.optimizer), &cfg).to_bytes();
        tuned.push((report.losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), report.metrics.overall_accuracy.to_bits(), bytes));
    }
    ensure!(tuned[0] == tuned[1], "tuning runs differ");

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("a.ppt");
    std::fs::write(&path, &tuned[0].2)?;
    let loaded = Checkpoint::load(&path)?;
    let resaved = dir.path().join("b.ppt");
    loaded.save(&resaved)?;
    ensure!(std::fs::read(&resaved)? == tuned[0].2, "save/load/save changed bytes");
    let rebuilt = loaded.build_model()?;
    ensure!(
        Checkpoint::capture(&rebuilt, loaded.optimizer_state()?.as_ref(), &loaded.config).to_bytes() == tuned[0].2,
        "rebuilt model does not re-serialize identically"
    );
    Ok(format!("pretrain and tune bit-identical; checkpoint {} bytes round-trips", tuned[0].2.len()))
}

fn off_fixtures() -> Outcome {
    let tetra = Mesh::load_off(fixture("tetrahedron.off"))?;
    ensure!(tetra.vertices.len() == 4 && tetra.faces == vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]], "tetrahedron: {tetra:?}");
    let quad = Mesh::load_off(fixture("quad.off"))?;
    ensure!(quad.faces == vec![[0, 1, 2], [0, 2, 3]], "quad: {:?}", quad.faces);
    for (name, want_line) in [("bad_index.off", 7), ("bad_counts.off", 2), ("truncated.off", 8)] {
        match Mesh::load_off(fixture(name)) {
            Err(Error::Parse { line, .. }) if line == want_line => {}
            other => anyhow::bail!("{name}: expected a parse error at line {want_line}, got {other:?}"),
        }
    }
    let mesh = Mesh::new(
        vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [10.0, 0.0, 0.0], [16.0, 0.0, 0.0], [10.0, 1.0, 0.0]],
        vec![[0, 1, 2], [3, 4, 5]],
    )?;
    let n = 10_000;
    let samples = mesh.sample_triangles(n, &mut rng(8))?;
    let first = samples.iter().filter(|(f, _)| *f == 0).count() as f64 / n as f64;
    ensure!((first - 0.25).abs() <= 0.03, "area share {first} vs 0.25");
    Ok(format!("5 fixtures; area share {first:.4} vs 0.25"))
}

fn prompt_contract(reference: &Reference) -> Outcome {
    let template = "a point cloud model of a";
    let cfg = RunConfig {
        context_length: 6,
        init_mode: InitMode::Template,
        init_template: template.into(),
        insert_position: InsertPosition::End,
        ..reference.tune_cfg.clone()
    };
    let mut model = reference.backbone.clone();
    model.attach_tuning(&cfg, &reference.ds.class_names)?;
    let learned = model.logits(&reference.test.features, &model.prompt_text_features()?)?;
    let manual = model.logits(
        &reference.test.features,
        &model.manual_text_features(&format!("{template} [CLASS]"), &reference.ds.class_names)?,
    )?;
    let diff = learned.values().iter().zip(manual.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(diff <= 1e-12, "template logits differ from the manual prompt by {diff:e}");

    let prompt = model.prompt.as_ref().expect("attached");
    let text = &model.backbone.text;
    let words = nearest_words(prompt.context.values(), prompt.context.shape()[1], &model.backbone.vocab, text.token_embedding.values())?;
    let got: Vec<&str> = words.iter().map(|w| w.word.as_str()).collect();
    ensure!(got == template.split(' ').collect::<Vec<_>>(), "nearest words {got:?}");
    ensure!(words.iter().all(|w| w.distance == 0.0), "nonzero distances");

    for m in [1, 4, 7, 32] {
        for position in InsertPosition::ALL {
            let cfg = RunConfig { context_length: m, insert_position: position, ..reference.tune_cfg.clone() };
            let mut model = reference.backbone.clone();
            model.attach_tuning(&cfg, &reference.ds.class_names)?;
            let prompt = model.prompt.as_ref().expect("attached");
            let want = match position {
                InsertPosition::Front => 0,
                InsertPosition::Middle => m / 2,
                InsertPosition::End => m,
            };
            ensure!(prompt.class_slot() == want, "M={m} {}: slot {}", position.as_str(), prompt.class_slot());
            let seq = prompt.compose(&model.backbone.text, 0)?;
            ensure!(seq.class_index == Some(want + 1), "M={m} {}: class index {:?}", position.as_str(), seq.class_index);
        }
    }
    Ok(format!("max logit gap {diff:.1e}; slots and nearest words exact"))
}

fn report(id: usize, name: &str, outcome: std::thread::Result<Outcome>) -> bool {
    let (ok, detail) = match outcome {
        Ok(Ok(detail)) => (true, detail),
        Ok(Err(e)) => (false, format!("{e:#}")),
        Err(panic) => (
            false,
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()),
        ),
    };
    println!("criterion {id} {}: {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn main() {
    let start = Instant::now();
    let mut ok = true;
    ok &= report(1, "learnable parameter counts", catch_unwind(learnable_counts));
    ok &= report(2, "gradient checks", catch_unwind(gradient_suite));
    ok &= report(3, "loss oracles", catch_unwind(loss_oracles));

    match Reference::build() {
        Ok(reference) => {
            let mut base_oa = f64::NAN;
            ok &= report(4, "frozen backbone", catch_unwind(AssertUnwindSafe(|| frozen_backbone(&reference))));
            ok &= report(5, "reference accuracy", catch_unwind(AssertUnwindSafe(|| reference_accuracy(&reference, &mut base_oa))));
            ok &= report(6, "data efficiency", catch_unwind(AssertUnwindSafe(|| data_efficiency(&reference, base_oa))));
            ok &= report(7, "determinism and checkpoints", catch_unwind(AssertUnwindSafe(|| determinism(&reference))));
            ok &= report(8, "OFF loading", catch_unwind(off_fixtures));
            ok &= report(9, "prompt contract", catch_unwind(AssertUnwindSafe(|| prompt_contract(&reference))));
        }
        Err(e) => {
            for (id, name) in [(4, "frozen backbone"), (5, "reference accuracy"), (6, "data efficiency"), (7, "determinism and checkpoints"), (9, "prompt contract")] {
                println!("criterion {id} FAIL: {name}: reference pre-training failed: {e}");
            }
            ok = false;
            ok &= report(8, "OFF loading", catch_unwind(off_fixtures));
        }
    }
    println!("acceptance {} in {:.0}s", if ok { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    if !ok {
        std::process::exit(1);
    }
}
