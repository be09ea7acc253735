//! Finite-difference cases shared by the gradient suite and the acceptance
//! run. Each case draws fresh shapes and values from its rng and returns the
//! worst relative error over every checked input.

use ppt::adapter::AdapterKind;
use ppt::encoders::Vocabulary;
use ppt::gradcheck::{grad_check, grad_check_module};
use ppt::nn::{Block, BlockInit};
use ppt::objectives::{pairwise_contrastive, total_contrastive, FeatureBatch, LossForm, LossWeights};
use ppt::tensor::{cosine_matrix, cosine_similarity, GeluMode};
use ppt::train::steps::{pretrain_loss, tune_loss};
use ppt::train::{Mode, Model, PretrainBatch, TuneBatch};
use ppt::{Result, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{normals, randn, rng, tiny_config};
use ppt::data::synthetic::{generate_shape, ShapeKind};

pub const CASES: usize = 20;
pub const TOL: f64 = 1e-4;
pub const H: f64 = 1e-5;

pub type Case = fn(&mut ChaCha8Rng) -> Result<f64>;

fn dims(r: &mut ChaCha8Rng) -> (usize, usize) {
    (r.random_range(1..5), r.random_range(1..6))
}

/// Checks `op` at `x` through a random linear read-out of its output.
fn check1(r: &mut ChaCha8Rng, x: &Tensor, op: impl Fn(&Tensor) -> Result<Tensor>) -> Result<f64> {
    let out = op(x)?;
    let w = Tensor::new(out.shape(), normals(r, out.numel(), 1.0))?;
    grad_check(|v| op(v)?.mul(&w)?.sum(), x, H)
}

fn check2(
    r: &mut ChaCha8Rng,
    a: &Tensor,
    b: &Tensor,
    op: impl Fn(&Tensor, &Tensor) -> Result<Tensor>,
) -> Result<f64> {
    let ea = check1(r, a, |v| op(v, b))?;
    let eb = check1(r, b, |v| op(a, v))?;
    Ok(ea.max(eb))
}

fn unary(r: &mut ChaCha8Rng, op: impl Fn(&Tensor) -> Result<Tensor>) -> Result<f64> {
    let (m, n) = dims(r);
    let x = randn(r, m, n);
    check1(r, &x, op)
}

fn same_shape(r: &mut ChaCha8Rng, op: impl Fn(&Tensor, &Tensor) -> Result<Tensor>) -> Result<f64> {
    let (m, n) = dims(r);
    let a = randn(r, m, n);
    let b = randn(r, m, n);
    check2(r, &a, &b, op)
}

pub fn op_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("add", |r| same_shape(r, |a, b| a.add(b))),
        ("sub", |r| same_shape(r, |a, b| a.sub(b))),
        ("mul", |r| same_shape(r, |a, b| a.mul(b))),
        ("scale", |r| {
            let c = r.random_range(-3.0..3.0);
            unary(r, move |x| x.scale(c))
        }),
        ("add_scalar", |r| {
            let c = r.random_range(-3.0..3.0);
            unary(r, move |x| x.add_scalar(c))
        }),
        ("scale_by", |r| {
            let (m, n) = dims(r);
            let x = randn(r, m, n);
            let s = Tensor::scalar(r.random_range(-2.0..2.0))?;
            check2(r, &x, &s, |a, b| a.scale_by(b))
        }),
        ("exp", |r| unary(r, |x| x.exp())),
        ("log_clamped", |r| {
            let (m, n) = dims(r);
            let x = Tensor::matrix(m, n, (0..m * n).map(|_| r.random_range(0.1..3.0)).collect())?;
            check1(r, &x, |v| v.log_clamped(1e-12))
        }),
        ("add_row", |r| {
            let (m, n) = dims(r);
            let x = randn(r, m, n);
            let b = Tensor::vector(normals(r, n, 1.0))?;
            check2(r, &x, &b, |a, b| a.add_row(b))
        }),
        ("matmul", |r| {
            let (m, k) = dims(r);
            let n = r.random_range(1..5);
            let a = randn(r, m, k);
            let b = randn(r, k, n);
            check2(r, &a, &b, |a, b| a.matmul(b))
        }),
        ("transpose", |r| unary(r, |x| x.transpose())),
        ("reshape", |r| unary(r, |x| x.reshape(&[x.numel()]))),
        ("gelu_tanh", |r| unary(r, |x| x.gelu(GeluMode::Tanh))),
        ("gelu_exact", |r| unary(r, |x| x.gelu(GeluMode::Exact))),
        ("layer_norm", |r| {
            let m = r.random_range(1..5);
            let n = r.random_range(2..7);
            let x = randn(r, m, n);
            let g = Tensor::vector(normals(r, n, 1.0))?;
            let b = Tensor::vector(normals(r, n, 1.0))?;
            let ex = check1(r, &x, |v| v.layer_norm(&g, &b, 1e-5))?;
            let eg = check1(r, &g, |v| x.layer_norm(v, &b, 1e-5))?;
            let eb = check1(r, &b, |v| x.layer_norm(&g, v, 1e-5))?;
            Ok(ex.max(eg).max(eb))
        }),
        ("softmax", |r| unary(r, |x| x.softmax())),
        ("log_softmax", |r| unary(r, |x| x.log_softmax())),
        ("sum", |r| unary(r, |x| x.sum())),
        ("mean", |r| unary(r, |x| x.mean())),
        ("sum_cols", |r| unary(r, |x| x.sum_cols())),
        ("normalize_rows", |r| unary(r, |x| x.normalize_rows())),
        ("slice_rows", |r| {
            let m = r.random_range(2..6);
            let n = r.random_range(1..5);
            let x = randn(r, m, n);
            let start = r.random_range(0..m);
            let len = r.random_range(1..=m - start);
            check1(r, &x, |v| v.slice_rows(start, len))
        }),
        ("concat_rows", |r| {
            let n = r.random_range(1..5);
            let (ra, rb) = (r.random_range(1..4), r.random_range(1..4));
            let a = randn(r, ra, n);
            let b = randn(r, rb, n);
            check2(r, &a, &b, |a, b| Tensor::concat_rows(&[a.clone(), b.clone(), a.clone()]))
        }),
        ("slice_cols", |r| {
            let m = r.random_range(1..5);
            let n = r.random_range(2..7);
            let x = randn(r, m, n);
            let start = r.random_range(0..n);
            let len = r.random_range(1..=n - start);
            check1(r, &x, |v| v.slice_cols(start, len))
        }),
        ("concat_cols", |r| {
            let m = r.random_range(1..5);
            let (ca, cb) = (r.random_range(1..4), r.random_range(1..4));
            let a = randn(r, m, ca);
            let b = randn(r, m, cb);
            check2(r, &a, &b, |a, b| Tensor::concat_cols(&[b.clone(), a.clone()]))
        }),
        ("gather_rows", |r| {
            let (m, n) = dims(r);
            let x = randn(r, m, n);
            let idx: Vec<usize> = (0..r.random_range(1..7)).map(|_| r.random_range(0..m)).collect();
            check1(r, &x, |v| v.gather_rows(&idx))
        }),
        ("segment_mean", |r| {
            let g = r.random_range(1..4);
            let (k, n) = (r.random_range(1..4), r.random_range(1..5));
            let x = randn(r, g * k, n);
            check1(r, &x, |v| v.segment_mean(g))
        }),
        ("segment_max", |r| {
            let g = r.random_range(1..4);
            let (k, n) = (r.random_range(1..4), r.random_range(1..5));
            let x = randn(r, g * k, n);
            check1(r, &x, |v| v.segment_max(g))
        }),
        ("pick", |r| {
            let (m, n) = dims(r);
            let x = randn(r, m, n);
            let i = r.random_range(0..m * n);
            check1(r, &x, |v| v.pick(i))
        }),
        ("diagonal", |r| {
            let n = r.random_range(1..6);
            let x = randn(r, n, n);
            check1(r, &x, |v| v.diagonal())
        }),
        ("cosine_similarity", |r| {
            let n = r.random_range(2..7);
            let a = Tensor::vector(normals(r, n, 1.0))?;
            let b = Tensor::vector(normals(r, n, 1.0))?;
            check2(r, &a, &b, cosine_similarity)
        }),
        ("cosine_matrix", |r| {
            let k = r.random_range(2..6);
            let (ra, rb) = (r.random_range(1..5), r.random_range(1..5));
            let a = randn(r, ra, k);
            let b = randn(r, rb, k);
            check2(r, &a, &b, cosine_matrix)
        }),
        ("transformer_block", |r| {
            let mut block = Block::new("block", 4, 2, 2, BlockInit::Gaussian(0.3), r)?;
            let segments = [r.random_range(1..4), r.random_range(1..4)];
            let x = randn(r, segments.iter().sum(), 4);
            let gelu = if r.random::<bool>() { GeluMode::Tanh } else { GeluMode::Exact };
            let w = Tensor::new(&[x.rows(), 4], normals(r, x.numel(), 1.0))?;
            let ex = check1(r, &x, |v| block.forward(v, &segments, gelu))?;
            let ep = grad_check_module(&mut block, |b| b.forward(&x, &segments, gelu)?.mul(&w)?.sum(), H, 4)?;
            Ok(ex.max(ep))
        }),
    ]
}

fn random_features(r: &mut ChaCha8Rng, b: usize, d: usize) -> Tensor {
    randn(r, b, d)
}

pub fn loss_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("pairwise_contrastive", |r| {
            let b = r.random_range(1..9);
            let d = r.random_range(2..6);
            let tau = r.random_range(0.1..1.5);
            let x = random_features(r, b, d);
            let y = random_features(r, b, d);
            let ex = grad_check(|v| pairwise_contrastive(v, &y, tau), &x, H)?;
            let ey = grad_check(|v| pairwise_contrastive(&x, v, tau), &y, H)?;
            Ok(ex.max(ey))
        }),
        ("pretraining_pipeline", |r| {
            let mut cfg = tiny_config(Mode::Pretrain, AdapterKind::None, 4);
            cfg.seed = r.random();
            let mut model = Model::backbone(&cfg, Vocabulary::default())?;
            model.prepare_pretraining();
            let b = r.random_range(2..4);
            let patches = (0..b)
                .map(|i| {
                    let kind = ShapeKind::ALL[r.random_range(0..8)];
                    let cloud = generate_shape(kind, cfg.points, 0.01, r.random::<u64>() ^ i as u64)?;
                    model.backbone.point.patchify(&cloud)
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = PretrainBatch {
                patches,
                image_features: random_features(r, b, cfg.embed_dim),
                text_features: random_features(r, b, cfg.embed_dim),
            };
            let weights = LossWeights {
                alpha: r.random_range(0.2..1.5),
                beta: r.random_range(0.2..1.5),
                theta: r.random_range(0.2..1.5),
            };
            grad_check_module(&mut model, |m| pretrain_loss(m, &batch, &weights, 0.5), H, 2)
        }),
        ("total_contrastive", |r| {
            let b = r.random_range(1..6);
            let d = r.random_range(2..5);
            let img = random_features(r, b, d);
            let txt = random_features(r, b, d);
            let pts = random_features(r, b, d);
            let w = LossWeights::default();
            let run = |i: &Tensor, t: &Tensor, p: &Tensor| {
                let batch = FeatureBatch {
                    image: Some(i.clone()),
                    text: Some(t.clone()),
                    point: Some(p.clone()),
                };
                total_contrastive(&batch, &w, 0.3)
            };
            let e1 = grad_check(|v| run(v, &txt, &pts), &img, H)?;
            let e2 = grad_check(|v| run(&img, v, &pts), &txt, H)?;
            let e3 = grad_check(|v| run(&img, &txt, v), &pts, H)?;
            Ok(e1.max(e2).max(e3))
        }),
        ("tuning_pipeline", |r| {
            let adapter = AdapterKind::ALL[r.random_range(0..3)];
            let form = if r.random::<bool>() { LossForm::Categorical } else { LossForm::Bce };
            let mut cfg = tiny_config(Mode::Tune, adapter, r.random_range(1..5));
            cfg.seed = r.random();
            cfg.tau_cls = r.random_range(0.2..1.5);
            cfg.insert_position = ppt::prompt::InsertPosition::ALL[r.random_range(0..3)];
            let mut model = Model::backbone(&cfg, Vocabulary::default())?;
            let names: Vec<String> = ["sphere", "cube", "cone"].iter().map(|s| s.to_string()).collect();
            model.attach_tuning(&cfg, &names)?;
            // Non-trivial adapter state so residual branches are exercised.
            model.adapter_perturb(r);
            let b = r.random_range(1..5);
            let batch = TuneBatch {
                features: random_features(r, b, cfg.point_width),
                labels: (0..b).map(|_| r.random_range(0..3)).collect(),
            };
            grad_check_module(&mut model, |m| tune_loss(m, &batch, form), H, 3)
        }),
    ]
}

trait Perturb {
    fn adapter_perturb(&mut self, r: &mut ChaCha8Rng);
}

impl Perturb for Model {
    fn adapter_perturb(&mut self, r: &mut ChaCha8Rng) {
        use ppt::Module;
        self.adapter.visit_mut(&mut |p| {
            let v: Vec<f64> = p.values().iter().map(|x| x + 0.1 * normals(r, 1, 1.0)[0]).collect();
            p.set_values(v).unwrap();
        });
    }
}

/// Worst error of `case` over `CASES` seeded draws.
pub fn run_case(name: &str, case: Case) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..CASES {
        let mut r = rng(0xC0FFEE ^ (i as u64) << 8 ^ name.len() as u64);
        let err = case(&mut r).unwrap_or_else(|e| panic!("{name} case {i}: {e}"));
        worst = worst.max(err);
    }
    worst
}
