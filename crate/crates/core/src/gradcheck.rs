//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::param::Module;
use crate::tensor::Tensor;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn check_scalar(t: &Tensor) -> Result<f64> {
    if t.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    t.item()
}

/// Max over coordinates of `|analytic − central difference| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if h.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Argument(format!("grad_check step must be > 0, got {h}")));
    }
    let var = Tensor::variable(x.shape(), x.to_vec())?;
    let out = f(&var)?;
    check_scalar(&out)?;
    let grads = out.backward()?;
    let zeros = vec![0.0; x.numel()];
    let analytic = grads.get(&var).unwrap_or(&zeros);
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.numel() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = check_scalar(&f(&Tensor::new(x.shape(), probe.clone())?)?)?;
        probe[i] = orig - h;
        let down = check_scalar(&f(&Tensor::new(x.shape(), probe.clone())?)?)?;
        probe[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

/// Same check against the trainable parameters of a module. At most
/// `coords_per_param` evenly strided coordinates of each parameter are probed.
pub fn grad_check_module<M, F>(
    module: &mut M,
    loss: F,
    h: f64,
    coords_per_param: usize,
) -> Result<f64>
where
    M: Module,
    F: Fn(&M) -> Result<Tensor>,
{
    let out = loss(module)?;
    check_scalar(&out)?;
    let grads = out.backward()?;
    drop(out);

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    module.visit(&mut |p| {
        if p.trainable() {
            let g = grads
                .get(p.tensor())
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.numel()]);
            analytic.push((p.name().to_string(), g));
        }
    });

    let mut worst = 0.0f64;
    for (name, g) in &analytic {
        let n = g.len();
        let stride = (n / coords_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            set_coord(module, name, i, |v| v + h)?;
            let up = check_scalar(&loss(module)?)?;
            set_coord(module, name, i, |v| v - 2.0 * h)?;
            let down = check_scalar(&loss(module)?)?;
            set_coord(module, name, i, |v| v + h)?;
            worst = worst.max(rel_err(g[i], (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}

fn set_coord<M: Module>(module: &mut M, name: &str, i: usize, f: impl Fn(f64) -> f64) -> Result<()> {
    let mut result = Ok(());
    module.visit_mut(&mut |p| {
        if p.name() == name {
            let mut v = p.values().to_vec();
            v[i] = f(v[i]);
            if let Err(e) = p.set_values(v) {
                result = Err(e);
            }
        }
    });
    result
}
