//! Dense right-singular-vector decomposition for tall data matrices.
//!
//! Tall inputs are first reduced to their `n x n` triangular factor with
//! Householder QR (the right singular vectors of `A` and `R` coincide), then
//! the factor is orthogonalized column-wise with one-sided Jacobi rotations.

use alloc::vec;
use alloc::vec::Vec;

/// Singular values (descending) and matching right singular vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct RightSvd {
    pub singular_values: Vec<f64>,
    /// `cols x cols`, row-major; column `j` is the j-th right singular vector.
    pub v: Vec<f64>,
    pub cols: usize,
}

impl RightSvd {
    pub fn vector(&self, j: usize) -> Vec<f64> {
        (0..self.cols).map(|r| self.v[r * self.cols + j]).collect()
    }
}

const MAX_SWEEPS: usize = 80;

/// `a` is `rows x cols`, row-major.
pub fn right_svd(a: &[f64], rows: usize, cols: usize) -> RightSvd {
    assert_eq!(a.len(), rows * cols, "matrix buffer length");
    let mut columns = if rows > cols {
        triangular_factor(a, rows, cols)
    } else {
        (0..cols)
            .map(|j| (0..rows).map(|i| a[i * cols + j]).collect())
            .collect()
    };
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&columns[p], &columns[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq.iter()) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || libm::fabs(gamma) <= f64::EPSILON * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut columns, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = columns
        .iter()
        .map(|c| libm::sqrt(c.iter().map(|x| x * x).sum::<f64>()))
        .collect();
    let mut order: Vec<usize> = (0..cols).collect();
    // Stable: equal singular values keep their column order.
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(core::cmp::Ordering::Equal));

    let mut out = vec![0.0; cols * cols];
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..cols {
            out[r * cols + dst] = v[src][r];
        }
    }
    RightSvd {
        singular_values: order.iter().map(|&i| norms[i]).collect(),
        v: out,
        cols,
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Householder QR of a tall row-major matrix; returns the columns of the
/// `cols x cols` upper-triangular factor.
fn triangular_factor(a: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| a[i * cols + j]).collect())
        .collect();
    for k in 0..cols {
        let norm = libm::sqrt(m[k][k..].iter().map(|x| x * x).sum::<f64>());
        if norm == 0.0 {
            continue;
        }
        let alpha = -libm::copysign(norm, m[k][k]);
        let mut v: Vec<f64> = m[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in m.iter_mut().skip(k) {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (x, vi) in col[k..].iter_mut().zip(&v) {
                *x -= f * vi;
            }
        }
    }
    m.into_iter()
        .enumerate()
        .map(|(j, col)| {
            let mut r = vec![0.0; cols];
            r[..=j].copy_from_slice(&col[..=j]);
            r
        })
        .collect()
}
