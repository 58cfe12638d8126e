//! Dense fp64 reference implementations. Row-major slices, any shapes.

use num_complex::Complex64;

/// `C = A B` with A `m x k` and B `k x n`.
pub fn oracle_gemm(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    c
}

/// `softmax(Q Kᵀ / sqrt(d)) V` for one head: Q is `n_q x d`, K and V `n_kv x d`.
pub fn oracle_attention(q: &[f64], k: &[f64], v: &[f64], n_q: usize, n_kv: usize, d: usize) -> Vec<f64> {
    assert_eq!(q.len(), n_q * d);
    assert_eq!(k.len(), n_kv * d);
    assert_eq!(v.len(), n_kv * d);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; n_q * d];
    for i in 0..n_q {
        let scores: Vec<f64> = (0..n_kv)
            .map(|j| (0..d).map(|x| q[i * d + x] * k[j * d + x]).sum::<f64>() * scale)
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        for (j, w) in weights.iter().enumerate() {
            for x in 0..d {
                out[i * d + x] += w / total * v[j * d + x];
            }
        }
    }
    out
}

/// Rotates each pair `(x[i], x[i + d/2])` of every row by the angle with
/// cosine `cos[row][i]` and sine `sin[row][i]`, as a complex multiplication.
/// `x` is `n x d`; the tables are `n x d/2`.
pub fn oracle_rotary(x: &[f64], cos: &[f64], sin: &[f64], n: usize, d: usize) -> Vec<f64> {
    let half = d / 2;
    assert_eq!(x.len(), n * d);
    assert_eq!(cos.len(), n * half);
    assert_eq!(sin.len(), n * half);
    let mut out = vec![0.0; n * d];
    for r in 0..n {
        for i in 0..half {
            let z = Complex64::new(x[r * d + i], x[r * d + half + i]) * Complex64::new(cos[r * half + i], sin[r * half + i]);
            out[r * d + i] = z.re;
            out[r * d + half + i] = z.im;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_identity() {
        let n = 5;
        let eye: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect();
        let b: Vec<f64> = (0..n * 3).map(|i| i as f64 * 0.5 - 2.0).collect();
        assert_eq!(oracle_gemm(&eye, &b, n, 3, n), b);
    }

    #[test]
    fn attention_single_key() {
        let q = vec![0.3, -1.0, 2.0, 0.1, 0.0, 5.0];
        let k = vec![1.0, 2.0];
        let v = vec![7.0, -3.0];
        assert_eq!(oracle_attention(&q, &k, &v, 3, 1, 2), vec![7.0, -3.0, 7.0, -3.0, 7.0, -3.0]);
    }

    #[test]
    fn rotary_quarter_turn() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let out = oracle_rotary(&x, &[0.0, 0.0], &[1.0, 1.0], 1, 4);
        // (x1, x2) -> (-x2, x1)
        let expect = [-3.0, -4.0, 1.0, 2.0];
        for (a, b) in out.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
