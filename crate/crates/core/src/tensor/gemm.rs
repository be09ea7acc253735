use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

/// `out = a' · b' + beta · out` where `a'` is `m×k` and `b'` is `k×n`.
/// With `a_t` set, `a` is stored as `k×m` row-major and used transposed;
/// likewise `b_t` for a `n×k` buffer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    out: &mut [f64],
) {
    let av = if a_t {
        ArrayView2::from_shape((k, m), a).expect("gemm lhs").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm lhs")
    };
    let bv = if b_t {
        ArrayView2::from_shape((n, k), b).expect("gemm rhs").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm rhs")
    };
    let mut cv = ArrayViewMut2::from_shape((m, n), out).expect("gemm out");
    general_mat_mul(1.0, &av, &bv, beta, &mut cv);
}
