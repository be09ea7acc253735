//! Point-feature adapters: parameter budgets at the default width and a
//! forward pass on a batch of pooled features.
//!
//! cargo run --release --example adapters

use ppt::adapter::{adapter_param_count, AdapterKind, PointAdapter};
use ppt::tensor::GeluMode;
use ppt::{Module, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ppt::Result<()> {
    let prompt = 32 * 512;
    println!("prompt contexts (M=32, D=512): {prompt}");
    for kind in AdapterKind::ALL {
        let n = adapter_param_count(kind, 384, 6)?;
        println!("{:>4}: adapter {n:>9}  total learnable {:>9}", kind.as_str(), prompt + n);
    }

    let dim = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = Tensor::matrix(4, dim, (0..4 * dim).map(|i| (i as f64 * 0.37).sin()).collect())?;
    for kind in AdapterKind::ALL {
        let adapter = PointAdapter::new(kind, dim, 4, GeluMode::Tanh, &mut rng)?;
        let out = adapter.forward(&h)?;
        let shift = out.values().iter().zip(h.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let mut params = 0;
        adapter.visit(&mut |p| params += p.numel());
        println!("{:>4}: {:?} -> {:?}, {params} parameters, max change {shift:.3}", kind.as_str(), h.shape(), out.shape());
    }
    Ok(())
}
