//! Reverse-mode gradients through a small expression, checked against
//! central differences.
//!
//! cargo run --example autodiff

use ppt::gradcheck::grad_check;
use ppt::tensor::GeluMode;
use ppt::Tensor;

fn main() -> ppt::Result<()> {
    let w = Tensor::variable(&[2, 3], vec![0.5, -1.0, 0.25, 1.5, 0.1, -0.7])?;
    let x = Tensor::matrix(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.3, -0.2])?;
    let loss = w.matmul(&x)?.gelu(GeluMode::Tanh)?.log_softmax()?.mean()?;
    let grads = loss.backward()?;
    println!("loss {:.6}", loss.item()?);
    println!("dloss/dw {:?}", grads.get(&w).unwrap());

    let f = |w: &Tensor| w.matmul(&x)?.gelu(GeluMode::Tanh)?.log_softmax()?.mean();
    println!("worst relative error vs finite differences {:.2e}", grad_check(f, &w, 1e-5)?);

    let a = Tensor::matrix(2, 4, vec![1.0, 0.0, 2.0, 1.0, -1.0, 3.0, 0.5, 0.0])?;
    let norm = |t: &Tensor| t.normalize_rows()?.layer_norm(&Tensor::vector(vec![1.0; 4])?, &Tensor::vector(vec![0.0; 4])?, 1e-5)?.exp()?.sum();
    println!("normalize -> layer_norm -> exp: worst relative error {:.2e}", grad_check(norm, &a, 1e-5)?);
    Ok(())
}
