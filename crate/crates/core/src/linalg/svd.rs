use crate::error::{Error, Result};
use crate::linalg::Tensor;

/// Relative off-diagonal threshold for a column pair to count as orthogonal.
pub const SVD_TOLERANCE: f64 = 1e-12;

/// Singular values of a matrix, descending, via one-sided (Hestenes) Jacobi.
///
/// The routine rotates pairs of columns of the narrower orientation until
/// every pair is orthogonal to `SVD_TOLERANCE` relative to the column norms;
/// the column norms are then the singular values. At most
/// `100 * min(m, n)` sweeps are attempted.
pub fn svd_values(a: &Tensor) -> Result<Vec<f64>> {
    let (m, n) = a.dims2()?;
    a.check_finite("svd_values")?;

    // Columns of the orientation with min(m, n) columns.
    let (ncols, len) = if m >= n { (n, m) } else { (m, n) };
    let mut cols: Vec<Vec<f64>> = (0..ncols)
        .map(|j| {
            (0..len)
                .map(|i| if m >= n { a.at(i, j) } else { a.at(j, i) })
                .collect()
        })
        .collect();

    let max_sweeps = 100 * ncols.max(1);
    let mut residual = 0.0;
    let mut converged = ncols < 2;
    let mut sweeps = 0;
    while !converged && sweeps < max_sweeps {
        sweeps += 1;
        residual = 0.0f64;
        for p in 0..ncols {
            for q in p + 1..ncols {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if alpha == 0.0 || beta == 0.0 || gamma == 0.0 {
                    continue;
                }
                let off = gamma.abs() / (alpha * beta).sqrt();
                residual = residual.max(off);
                if off <= SVD_TOLERANCE {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let (cp, cq) = (&mut left[p], &mut right[0]);
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let xp = *x;
                    let yq = *y;
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        converged = residual <= SVD_TOLERANCE;
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps, residual });
    }

    let mut values: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}
