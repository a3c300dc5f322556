//! Dense f32 kernels for the toy model. Row-major everywhere; loops are
//! ordered so the innermost runs over contiguous output columns.

/// c[m,n] += a[m,k] * b[k,n]
pub fn matmul_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// c[m,n] = a[m,k] * b[k,n]
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// c[k,n] += a[m,k]^T * d[m,n]  (weight-gradient shape)
pub fn matmul_at_b_acc(a: &[f32], d: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let drow = &d[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let crow = &mut c[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] += av * drow[j];
            }
        }
    }
}

/// c[m,k] = d[m,n] * b[k,n]^T  (input-gradient shape)
pub fn matmul_a_bt(d: &[f32], b: &[f32], m: usize, n: usize, k: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * k];
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0f32;
            for j in 0..n {
                acc += drow[j] * brow[j];
            }
            crow[kk] = acc;
        }
    }
    c
}

pub const LN_EPS: f32 = 1e-5;

/// y = gain * (x - mean) / sqrt(var + eps) + bias, per row of width `d`.
/// Returns (y, inv_std per row) so the backward pass can reuse the stats.
pub fn layer_norm(x: &[f32], gain: &[f32], bias: &[f32], d: usize) -> (Vec<f32>, Vec<f32>) {
    let rows = x.len() / d;
    let mut y = vec![0.0f32; x.len()];
    let mut inv_std = vec![0.0f32; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f32>() / d as f32;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        let yr = &mut y[r * d..(r + 1) * d];
        for j in 0..d {
            yr[j] = gain[j] * (xr[j] - mean) * is + bias[j];
        }
    }
    (y, inv_std)
}

/// Backward of `layer_norm`. Accumulates parameter grads, returns dx.
pub fn layer_norm_backward(
    x: &[f32],
    gain: &[f32],
    inv_std: &[f32],
    dy: &[f32],
    d: usize,
    dgain: &mut [f32],
    dbias: &mut [f32],
) -> Vec<f32> {
    let rows = x.len() / d;
    let mut dx = vec![0.0f32; x.len()];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let is = inv_std[r];
        let mean = xr.iter().sum::<f32>() / d as f32;
        // xhat and the two reduction terms of the standard LN backward
        let mut sum_dy_g = 0.0f32;
        let mut sum_dy_g_xhat = 0.0f32;
        for j in 0..d {
            let xhat = (xr[j] - mean) * is;
            let dyg = dyr[j] * gain[j];
            sum_dy_g += dyg;
            sum_dy_g_xhat += dyg * xhat;
            dgain[j] += dyr[j] * xhat;
            dbias[j] += dyr[j];
        }
        let dxr = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            let xhat = (xr[j] - mean) * is;
            let dyg = dyr[j] * gain[j];
            dxr[j] = is * (dyg - sum_dy_g / d as f32 - xhat * sum_dy_g_xhat / d as f32);
        }
    }
    dx
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

/// Tanh-approximation GELU.
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f32) -> f32 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// In-place max-subtracted softmax over a slice.
pub fn softmax_inplace(v: &mut [f32]) {
    let max = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// log softmax(logits)[index], accumulated in f64 for stable NLL sums.
pub fn log_softmax_at(logits: &[f32], index: usize) -> f64 {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut sum = 0.0f64;
    for &x in logits {
        sum += (x as f64 - max).exp();
    }
    logits[index] as f64 - max - sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn softmax_normalizes() {
        let mut v = vec![1.0, 2.0, 3.0, -4.0];
        softmax_inplace(&mut v);
        let sum: f32 = v.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-3.0f32, -0.7, 0.0, 0.3, 2.5] {
            let h = 1e-3f32;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-3, "x={x}");
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_difference() {
        let d = 4;
        let x = vec![0.3f32, -1.2, 0.8, 2.0, -0.4, 0.0, 1.1, -2.2];
        let gain = vec![1.1f32, 0.9, -0.5, 1.3];
        let bias = vec![0.1f32, -0.2, 0.0, 0.4];
        // scalar objective: sum of y * w
        let w: Vec<f32> = (0..x.len()).map(|i| 0.1 * (i as f32 + 1.0)).collect();
        let (_, inv_std) = layer_norm(&x, &gain, &bias, d);
        let mut dg = vec![0.0f32; d];
        let mut db = vec![0.0f32; d];
        let dx = layer_norm_backward(&x, &gain, &inv_std, &w, d, &mut dg, &mut db);
        let f = |x: &[f32]| -> f32 {
            let (y, _) = layer_norm(x, &gain, &bias, d);
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += 1e-3;
            xm[i] -= 1e-3;
            let fd = (f(&xp) - f(&xm)) / 2e-3;
            assert!((dx[i] - fd).abs() < 1e-2, "i={i} dx={} fd={}", dx[i], fd);
        }
    }
}
