use serde::{Deserialize, Serialize};

use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// Which GELU formula to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeluMode {
    #[default]
    Tanh,
    Exact,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

fn gelu_value(x: f64, mode: GeluMode) -> f64 {
    match mode {
        GeluMode::Tanh => {
            let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        }
        GeluMode::Exact => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
    }
}

fn gelu_slope(x: f64, mode: GeluMode) -> f64 {
    match mode {
        GeluMode::Tanh => {
            let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
            let t = u.tanh();
            let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
        }
        GeluMode::Exact => {
            let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
            let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            cdf + x * pdf
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn want(parents: &[Tensor], i: usize) -> bool {
    parents[i].requires_grad()
}

fn as_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Argument(format!(
            "{op} expects a 2-d tensor, got shape {:?}",
            t.shape()
        ))),
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.values().iter().zip(other.values()).map(|(a, b)| a + b).collect();
        Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |p, _, g| {
                vec![
                    want(p, 0).then(|| g.to_vec()),
                    want(p, 1).then(|| g.to_vec()),
                ]
            },
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.values().iter().zip(other.values()).map(|(a, b)| a - b).collect();
        Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |p, _, g| {
                vec![
                    want(p, 0).then(|| g.to_vec()),
                    want(p, 1).then(|| g.iter().map(|v| -v).collect()),
                ]
            },
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.values().iter().zip(other.values()).map(|(a, b)| a * b).collect();
        Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |p, _, g| {
                let ga = want(p, 0).then(|| {
                    g.iter().zip(p[1].values()).map(|(g, b)| g * b).collect()
                });
                let gb = want(p, 1).then(|| {
                    g.iter().zip(p[0].values()).map(|(g, a)| g * a).collect()
                });
                vec![ga, gb]
            },
        )
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        let data = self.values().iter().map(|v| v * factor).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |_, _, g| vec![Some(g.iter().map(|v| v * factor).collect())],
        )
    }

    pub fn add_scalar(&self, offset: f64) -> Result<Tensor> {
        let data = self.values().iter().map(|v| v + offset).collect();
        Tensor::from_op(
            "add_scalar",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            |_, _, g| vec![Some(g.to_vec())],
        )
    }

    /// Multiplies every entry by a scalar tensor.
    pub fn scale_by(&self, factor: &Tensor) -> Result<Tensor> {
        let s = factor.item()?;
        let data = self.values().iter().map(|v| v * s).collect();
        Tensor::from_op(
            "scale_by",
            self.shape().to_vec(),
            data,
            vec![self.clone(), factor.clone()],
            move |p, _, g| {
                let gx = want(p, 0).then(|| g.iter().map(|v| v * s).collect());
                let gs = want(p, 1).then(|| {
                    vec![g.iter().zip(p[0].values()).map(|(g, x)| g * x).sum()]
                });
                vec![gx, gs]
            },
        )
    }

    pub fn exp(&self) -> Result<Tensor> {
        let data = self.values().iter().map(|v| v.exp()).collect();
        Tensor::from_op(
            "exp",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            |_, out, g| vec![Some(g.iter().zip(out).map(|(g, y)| g * y).collect())],
        )
    }

    /// Natural log of `max(x, floor)`; the gradient is zero where the floor binds.
    pub fn log_clamped(&self, floor: f64) -> Result<Tensor> {
        let data = self.values().iter().map(|v| v.max(floor).ln()).collect();
        Tensor::from_op(
            "log",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |p, _, g| {
                let gx = g
                    .iter()
                    .zip(p[0].values())
                    .map(|(g, &x)| if x > floor { g / x } else { 0.0 })
                    .collect();
                vec![Some(gx)]
            },
        )
    }

    /// Adds `bias` (length = last extent) to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let c = self.cols();
        if bias.numel() != c {
            return Err(Error::shape("add_row", self.shape(), bias.shape()));
        }
        let b = bias.values();
        let data = self
            .values()
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(x, b)| x + b))
            .collect();
        Tensor::from_op(
            "add_row",
            self.shape().to_vec(),
            data,
            vec![self.clone(), bias.clone()],
            move |p, _, g| {
                let gx = want(p, 0).then(|| g.to_vec());
                let gb = want(p, 1).then(|| {
                    let mut acc = vec![0.0; c];
                    for row in g.chunks(c) {
                        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    acc
                });
                vec![gx, gb]
            },
        )
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = as_matrix("matmul", self)?;
        let (k2, n) = as_matrix("matmul", other)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, self.values(), false, other.values(), false, 0.0, &mut data);
        Tensor::from_op(
            "matmul",
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            move |p, _, g| {
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                let ga = want(p, 0).then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, p[1].values(), true, 0.0, &mut ga);
                    ga
                });
                let gb = want(p, 1).then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, p[0].values(), true, g, false, 0.0, &mut gb);
                    gb
                });
                vec![ga, gb]
            },
        )
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = as_matrix("transpose", self)?;
        let x = self.values();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = x[i * c + j];
            }
        }
        Tensor::from_op(
            "transpose",
            vec![c, r],
            data,
            vec![self.clone()],
            move |_, _, g| {
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[j * r + i];
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |_, _, g| vec![Some(g.to_vec())],
        )
    }

    pub fn gelu(&self, mode: GeluMode) -> Result<Tensor> {
        let data = self.values().iter().map(|&x| gelu_value(x, mode)).collect();
        Tensor::from_op(
            "gelu",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |p, _, g| {
                let gx = g
                    .iter()
                    .zip(p[0].values())
                    .map(|(g, &x)| g * gelu_slope(x, mode))
                    .collect();
                vec![Some(gx)]
            },
        )
    }

    /// Standardizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let c = self.cols();
        if gamma.numel() != c || beta.numel() != c {
            return Err(Error::shape("layer_norm", self.shape(), gamma.shape()));
        }
        if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Argument(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let rows = self.rows();
        let mut normed = vec![0.0; rows * c];
        let mut inv_std = vec![0.0; rows];
        for (r, row) in self.values().chunks(c).enumerate() {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, x) in normed[r * c..(r + 1) * c].iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
        }
        let (gv, bv) = (gamma.values(), beta.values());
        let data = normed
            .chunks(c)
            .flat_map(|row| row.iter().zip(gv).zip(bv).map(|((x, g), b)| x * g + b))
            .collect();
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            data,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |p, _, g| {
                let gamma = p[1].values();
                let gx = want(p, 0).then(|| {
                    let mut gx = vec![0.0; rows * c];
                    for r in 0..rows {
                        let gy = &g[r * c..(r + 1) * c];
                        let xh = &normed[r * c..(r + 1) * c];
                        let dxh: Vec<f64> = gy.iter().zip(gamma).map(|(g, w)| g * w).collect();
                        let mean_d = dxh.iter().sum::<f64>() / c as f64;
                        let mean_dx = dxh.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx[r * c + j] = inv_std[r] * (dxh[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    gx
                });
                let gg = want(p, 1).then(|| {
                    let mut acc = vec![0.0; c];
                    for (gy, xh) in g.chunks(c).zip(normed.chunks(c)) {
                        for j in 0..c {
                            acc[j] += gy[j] * xh[j];
                        }
                    }
                    acc
                });
                let gb = want(p, 2).then(|| {
                    let mut acc = vec![0.0; c];
                    for gy in g.chunks(c) {
                        acc.iter_mut().zip(gy).for_each(|(a, v)| *a += v);
                    }
                    acc
                });
                vec![gx, gg, gb]
            },
        )
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&self) -> Result<Tensor> {
        if self.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain { op: "softmax" });
        }
        let c = self.cols();
        let mut data = Vec::with_capacity(self.numel());
        for row in self.values().chunks(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|x| (x - max).exp()));
            let total: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|v| *v /= total);
        }
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |_, out, g| {
                let mut gx = vec![0.0; out.len()];
                for ((gxr, yr), gr) in gx.chunks_mut(c).zip(out.chunks(c)).zip(g.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        gxr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Tensor> {
        if self.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain { op: "log_softmax" });
        }
        let c = self.cols();
        let mut data = Vec::with_capacity(self.numel());
        for row in self.values().chunks(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            data.extend(row.iter().map(|x| x - lse));
        }
        Tensor::from_op(
            "log_softmax",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |_, out, g| {
                let mut gx = vec![0.0; out.len()];
                for ((gxr, yr), gr) in gx.chunks_mut(c).zip(out.chunks(c)).zip(g.chunks(c)) {
                    let total: f64 = gr.iter().sum();
                    for j in 0..c {
                        gxr[j] = gr[j] - yr[j].exp() * total;
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    pub fn sum(&self) -> Result<Tensor> {
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![],
            vec![self.values().iter().sum()],
            vec![self.clone()],
            move |_, _, g| vec![Some(vec![g[0]; n])],
        )
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        Tensor::from_op(
            "mean",
            vec![],
            vec![self.values().iter().sum::<f64>() / n as f64],
            vec![self.clone()],
            move |_, _, g| vec![Some(vec![g[0] / n as f64; n])],
        )
    }

    /// Sums each row over the last axis, giving shape `[rows]`.
    pub fn sum_cols(&self) -> Result<Tensor> {
        let c = self.cols();
        let rows = self.rows();
        let data = self.values().chunks(c).map(|r| r.iter().sum()).collect();
        Tensor::from_op(
            "sum_cols",
            vec![rows],
            data,
            vec![self.clone()],
            move |_, _, g| vec![Some(g.iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect())],
        )
    }

    /// Scales each row to unit Euclidean norm.
    pub fn normalize_rows(&self) -> Result<Tensor> {
        let c = self.cols();
        let mut norms = Vec::with_capacity(self.rows());
        for row in self.values().chunks(c) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n <= 0.0 || !n.is_finite() {
                return Err(Error::DegenerateVector { op: "normalize_rows" });
            }
            norms.push(n);
        }
        let data = self
            .values()
            .chunks(c)
            .zip(&norms)
            .flat_map(|(row, n)| row.iter().map(move |x| x / n))
            .collect();
        Tensor::from_op(
            "normalize_rows",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |_, out, g| {
                let mut gx = vec![0.0; out.len()];
                for (r, n) in norms.iter().enumerate() {
                    let y = &out[r * c..(r + 1) * c];
                    let gy = &g[r * c..(r + 1) * c];
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[r * c + j] = (gy[j] - y[j] * dot) / n;
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    /// Rows `start..start+len` of a tensor viewed as `[rows, cols]`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let (rows, c) = (self.rows(), self.cols());
        if len == 0 || start + len > rows {
            return Err(Error::Argument(format!(
                "slice_rows {start}..{} out of {rows} rows",
                start + len
            )));
        }
        let data = self.values()[start * c..(start + len) * c].to_vec();
        let shape = if self.ndim() <= 1 { vec![len] } else { vec![len, c] };
        Tensor::from_op(
            "slice_rows",
            shape,
            data,
            vec![self.clone()],
            move |_, _, g| {
                let mut gx = vec![0.0; rows * c];
                gx[start * c..(start + len) * c].copy_from_slice(g);
                vec![Some(gx)]
            },
        )
    }

    /// Stacks 2-d tensors with a common column count.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat_rows of nothing".into()))?;
        let c = first.cols();
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            if p.cols() != c {
                return Err(Error::shape("concat_rows", first.shape(), p.shape()));
            }
            sizes.push(p.numel());
            data.extend_from_slice(p.values());
        }
        let rows = data.len() / c;
        Tensor::from_op(
            "concat_rows",
            vec![rows, c],
            data,
            parts.to_vec(),
            move |p, _, g| {
                let mut offset = 0;
                sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| {
                        let piece = want(p, i).then(|| g[offset..offset + n].to_vec());
                        offset += n;
                        piece
                    })
                    .collect()
            },
        )
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = as_matrix("slice_cols", self)?;
        if len == 0 || start + len > c {
            return Err(Error::Argument(format!(
                "slice_cols {start}..{} out of {c} columns",
                start + len
            )));
        }
        let data = self
            .values()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Tensor::from_op(
            "slice_cols",
            vec![r, len],
            data,
            vec![self.clone()],
            move |_, _, g| {
                let mut gx = vec![0.0; r * c];
                for (i, gr) in g.chunks(len).enumerate() {
                    gx[i * c + start..i * c + start + len].copy_from_slice(gr);
                }
                vec![Some(gx)]
            },
        )
    }

    /// Places matrices with a common row count side by side.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat_cols of nothing".into()))?;
        let (r, _) = as_matrix("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = as_matrix("concat_cols", p)?;
            if pr != r {
                return Err(Error::shape("concat_cols", first.shape(), p.shape()));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Tensor::from_op(
            "concat_cols",
            vec![r, total],
            data,
            parts.to_vec(),
            move |p, _, g| {
                let mut offset = 0;
                widths
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| {
                        let piece = want(p, k).then(|| {
                            let mut out = Vec::with_capacity(r * w);
                            for i in 0..r {
                                out.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                            }
                            out
                        });
                        offset += w;
                        piece
                    })
                    .collect()
            },
        )
    }

    /// Row lookup: output row `i` is input row `indices[i]`.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (rows, c) = (self.rows(), self.cols());
        if indices.is_empty() {
            return Err(Error::Argument("gather_rows with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Argument(format!("gather_rows index {bad} >= {rows}")));
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&self.values()[i * c..(i + 1) * c]);
        }
        let idx = indices.to_vec();
        Tensor::from_op(
            "gather_rows",
            vec![indices.len(), c],
            data,
            vec![self.clone()],
            move |_, _, g| {
                let mut gx = vec![0.0; rows * c];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        gx[i * c + j] += g[k * c + j];
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    /// Mean over consecutive groups of `group` rows: `[n*group, c] -> [n, c]`.
    pub fn segment_mean(&self, group: usize) -> Result<Tensor> {
        let (rows, c) = (self.rows(), self.cols());
        if group == 0 || rows % group != 0 {
            return Err(Error::Argument(format!(
                "segment_mean: {rows} rows not divisible into groups of {group}"
            )));
        }
        let n = rows / group;
        let x = self.values();
        let mut data = vec![0.0; n * c];
        for s in 0..n {
            for r in 0..group {
                let row = &x[(s * group + r) * c..(s * group + r + 1) * c];
                data[s * c..(s + 1) * c].iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
        }
        data.iter_mut().for_each(|v| *v /= group as f64);
        Tensor::from_op(
            "segment_mean",
            vec![n, c],
            data,
            vec![self.clone()],
            move |_, _, g| {
                let mut gx = vec![0.0; rows * c];
                for s in 0..n {
                    for r in 0..group {
                        for j in 0..c {
                            gx[(s * group + r) * c + j] = g[s * c + j] / group as f64;
                        }
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    /// Column-wise max over consecutive groups of `group` rows. Ties route the
    /// gradient to the first maximal row.
    pub fn segment_max(&self, group: usize) -> Result<Tensor> {
        let (rows, c) = (self.rows(), self.cols());
        if group == 0 || rows % group != 0 {
            return Err(Error::Argument(format!(
                "segment_max: {rows} rows not divisible into groups of {group}"
            )));
        }
        let n = rows / group;
        let x = self.values();
        let mut data = vec![f64::NEG_INFINITY; n * c];
        let mut argmax = vec![0usize; n * c];
        for s in 0..n {
            for r in 0..group {
                let src = s * group + r;
                for j in 0..c {
                    let v = x[src * c + j];
                    if v > data[s * c + j] {
                        data[s * c + j] = v;
                        argmax[s * c + j] = src;
                    }
                }
            }
        }
        Tensor::from_op(
            "segment_max",
            vec![n, c],
            data,
            vec![self.clone()],
            move |_, _, g| {
                let mut gx = vec![0.0; rows * c];
                for (k, &src) in argmax.iter().enumerate() {
                    gx[src * c + k % c] += g[k];
                }
                vec![Some(gx)]
            },
        )
    }

    /// Single entry (flat row-major index) as a scalar.
    pub fn pick(&self, index: usize) -> Result<Tensor> {
        let n = self.numel();
        if index >= n {
            return Err(Error::Argument(format!("pick index {index} >= {n}")));
        }
        Tensor::from_op(
            "pick",
            vec![],
            vec![self.values()[index]],
            vec![self.clone()],
            move |_, _, g| {
                let mut gx = vec![0.0; n];
                gx[index] = g[0];
                vec![Some(gx)]
            },
        )
    }

    /// Main diagonal of a square matrix.
    pub fn diagonal(&self) -> Result<Tensor> {
        let (r, c) = as_matrix("diagonal", self)?;
        if r != c {
            return Err(Error::shape("diagonal", self.shape(), &[c, r]));
        }
        let data = (0..r).map(|i| self.values()[i * c + i]).collect();
        Tensor::from_op(
            "diagonal",
            vec![r],
            data,
            vec![self.clone()],
            move |_, _, g| {
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    gx[i * c + i] = g[i];
                }
                vec![Some(gx)]
            },
        )
    }
}

/// Cosine similarity of two vectors as a differentiable scalar.
pub fn cosine_similarity(u: &Tensor, v: &Tensor) -> Result<Tensor> {
    if u.numel() != v.numel() {
        return Err(Error::shape("cosine_similarity", u.shape(), v.shape()));
    }
    let d = u.numel();
    let un = u.reshape(&[1, d])?.normalize_rows()?;
    let vn = v.reshape(&[1, d])?.normalize_rows()?;
    un.mul(&vn)?.sum()
}

/// `S[i,k] = cos(a_i, b_k)` for row sets `a: [n, d]`, `b: [m, d]`.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(Error::shape("cosine_matrix", a.shape(), b.shape()));
    }
    let an = a.reshape(&[a.rows(), a.cols()])?.normalize_rows()?;
    let bn = b.reshape(&[b.rows(), b.cols()])?.normalize_rows()?;
    an.matmul(&bn.transpose()?)
}
