//! Dense building blocks shared by forward and backward passes. Matrices are
//! row-major slices.

pub const LN_EPS: f64 = 1e-5;

/// `C = alpha * op(A) op(B) + beta * C` with `op(A)` of shape `m x k` and
/// `op(B)` of shape `k x n`. `a_t` means `A` is stored as `k x m`, `b_t`
/// that `B` is stored as `n x k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches for
    // these strides, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Adds `bias` to every row of `x`.
pub fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Accumulates column sums of `dy` into `db`.
pub fn bias_grad(dy: &[f64], db: &mut [f64]) {
    for row in dy.chunks(db.len()) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
}

/// Normalized rows and reciprocal standard deviations kept for backward.
#[derive(Clone, Debug, Default)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &[f64], g: &[f64], b: &[f64], out: &mut [f64]) -> LnCache {
    let d = g.len();
    let rows = x.len() / d;
    let mut cache = LnCache {
        xhat: vec![0.0; x.len()],
        rstd: vec![0.0; rows],
    };
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        cache.rstd[r] = rstd;
        for i in 0..d {
            let xh = (row[i] - mean) * rstd;
            cache.xhat[r * d + i] = xh;
            out[r * d + i] = xh * g[i] + b[i];
        }
    }
    cache
}

/// Backward of [`layer_norm`]. Adds into `dx`; parameter gradients are
/// accumulated only when buffers are given.
pub fn layer_norm_backward(
    cache: &LnCache,
    g: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    mut dparams: Option<(&mut [f64], &mut [f64])>,
) {
    let d = g.len();
    let mut dxhat = vec![0.0; d];
    for (r, &rstd) in cache.rstd.iter().enumerate() {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for i in 0..d {
            dxhat[i] = dyr[i] * g[i];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xh[i];
        }
        mean_d /= d as f64;
        mean_dx /= d as f64;
        for i in 0..d {
            dx[r * d + i] += rstd * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
        if let Some((dg, db)) = dparams.as_mut() {
            for i in 0..d {
                dg[i] += dyr[i] * xh[i];
                db[i] += dyr[i];
            }
        }
    }
}

/// In-place softmax of `row`; returns the log of the normalizer.
pub fn softmax_in_place(row: &mut [f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
