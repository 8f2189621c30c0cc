//! Dense tensors, matrix products, Householder QR and Jacobi singular values.

pub(crate) mod gemm;
mod qr;
mod svd;
mod tensor;

pub use gemm::MatRef;
pub use qr::qr_decompose;
pub use svd::{svd_values, SVD_TOLERANCE};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Matrix product of an `m x k` and a `k x n` matrix.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm::gemm(
        1.0,
        MatRef::row_major(a.data(), m, k),
        MatRef::row_major(b.data(), k, n),
        0.0,
        &mut out,
    );
    let t = Tensor::from_parts_unchecked(vec![m, n], out);
    t.check_finite("matmul")?;
    Ok(t)
}
