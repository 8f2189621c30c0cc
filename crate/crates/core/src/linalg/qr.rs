use crate::error::{Error, Result};
use crate::linalg::Tensor;

/// Thin QR factorization by Householder reflections.
///
/// For an `m x n` input with `m >= n`, returns `q` (`m x n`, orthonormal
/// columns) and `r` (`n x n`, upper triangular with exact zeros below the
/// diagonal). No sign convention is applied to `diag(r)`.
pub fn qr_decompose(a: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, n) = a.dims2()?;
    if m < n {
        return Err(Error::WideMatrix { rows: m, cols: n });
    }
    a.check_finite("qr_decompose")?;

    // Column-major working copy: reflections sweep down columns.
    let mut work = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            work[j * m + i] = a.at(i, j);
        }
    }

    // Unit Householder vectors; `None` where the column was already zero.
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    for k in 0..n {
        let col = &work[k * m + k..(k + 1) * m];
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if col[0] >= 0.0 { -norm } else { norm };
        let mut v = col.to_vec();
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        for x in &mut v {
            *x /= vnorm;
        }
        for j in k..n {
            let colj = &mut work[j * m + k..(j + 1) * m];
            let dot: f64 = v.iter().zip(colj.iter()).map(|(a, b)| a * b).sum();
            for (c, vi) in colj.iter_mut().zip(&v) {
                *c -= 2.0 * dot * vi;
            }
        }
        reflectors.push(Some(v));
    }

    let mut r = Tensor::zeros(vec![n, n])?;
    for i in 0..n {
        for j in i..n {
            r.set(i, j, work[j * m + i]);
        }
    }

    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I_m.
    let mut q_cols = vec![0.0; m * n];
    for j in 0..n {
        q_cols[j * m + j] = 1.0;
    }
    for k in (0..n).rev() {
        let Some(v) = &reflectors[k] else { continue };
        for j in 0..n {
            let colj = &mut q_cols[j * m + k..(j + 1) * m];
            let dot: f64 = v.iter().zip(colj.iter()).map(|(a, b)| a * b).sum();
            if dot != 0.0 {
                for (c, vi) in colj.iter_mut().zip(v) {
                    *c -= 2.0 * dot * vi;
                }
            }
        }
    }
    let mut q = Tensor::zeros(vec![m, n])?;
    for i in 0..m {
        for j in 0..n {
            q.set(i, j, q_cols[j * m + i]);
        }
    }
    q.check_finite("qr_decompose")?;
    r.check_finite("qr_decompose")?;
    Ok((q, r))
}
