//! Row-major dense matrices and the GEMM kernels convolution lowers onto.

use crate::error::{Error, Result};
use crate::scalar::Element;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<E: Element> {
    rows: usize,
    cols: usize,
    data: Vec<E>,
}

impl<E: Element> Matrix<E> {
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Size(format!("matrix {rows}x{cols} overflows usize")))?;
        Ok(Matrix { rows, cols, data: vec![E::zero(); len] })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<E>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Size(format!(
                "buffer length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Matrix::zeros(n, n)?;
        for i in 0..n {
            m.set(i, i, E::one());
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> E {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: E) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn data(&self) -> &[E] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[E] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Reference dense product.
///
/// Every output element accumulates its k-terms in ascending order, so two
/// invocations on identical inputs are bit-identical. The loop nest is i-k-j
/// for cache friendliness, which performs the same additions in the same
/// order as the textbook i-j-k nest.
pub fn gemm<E: Element>(a: &Matrix<E>, b: &Matrix<E>) -> Result<Matrix<E>> {
    if a.cols != b.rows {
        return Err(Error::Geometry(format!(
            "gemm dimension mismatch: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols)?;
    let n = b.cols;
    for i in 0..a.rows {
        let a_row = &a.data[i * a.cols..(i + 1) * a.cols];
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Cache-blocked variant. Summation within one k-block is in ascending order
/// but blocks change the global order, so results may differ from [`gemm`] in
/// the last bits; callers that need bit-stability use the reference kernel.
pub fn gemm_tiled<E: Element>(a: &Matrix<E>, b: &Matrix<E>) -> Result<Matrix<E>> {
    const BLOCK: usize = 64;
    if a.cols != b.rows {
        return Err(Error::Geometry(format!(
            "gemm dimension mismatch: {}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols)?;
    let n = b.cols;
    for i0 in (0..a.rows).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(a.rows);
        for k0 in (0..a.cols).step_by(BLOCK) {
            let k1 = (k0 + BLOCK).min(a.cols);
            for i in i0..i1 {
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for k in k0..k1 {
                    let aik = a.data[i * a.cols + k];
                    let b_row = &b.data[k * n..(k + 1) * n];
                    for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                        *o += aik * bkj;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent triple-loop oracle in the textbook i-j-k order.
    fn gemm_naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols()).unwrap();
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let t = crate::tensor::Tensor::<f64>::seeded_random(
            crate::tensor::Shape4::new(1, 1, rows, cols).unwrap(),
            seed,
        )
        .unwrap();
        Matrix::from_vec(rows, cols, t.data().to_vec()).unwrap()
    }

    #[test]
    fn identity_is_neutral() {
        let m = random(3, 5, 1);
        let id = Matrix::<f64>::identity(3).unwrap();
        assert_eq!(gemm(&id, &m).unwrap(), m);
    }

    #[test]
    fn scalar_product() {
        let a = Matrix::from_vec(1, 1, vec![2.0f32]).unwrap();
        let b = Matrix::from_vec(1, 1, vec![3.0f32]).unwrap();
        assert_eq!(gemm(&a, &b).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn matches_triple_loop_oracle_exactly() {
        let a = random(5, 7, 11);
        let b = random(7, 4, 12);
        let got = gemm(&a, &b).unwrap();
        let want = gemm_naive(&a, &b);
        assert_eq!(got, want);
    }

    #[test]
    fn reproducible_run_to_run() {
        let a = random(17, 23, 5);
        let b = random(23, 9, 6);
        assert_eq!(gemm(&a, &b).unwrap(), gemm(&a, &b).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_geometry_error() {
        let a = Matrix::<f32>::zeros(2, 3).unwrap();
        let b = Matrix::<f32>::zeros(4, 2).unwrap();
        assert!(matches!(gemm(&a, &b), Err(crate::error::Error::Geometry(_))));
    }

    #[test]
    fn tiled_agrees_with_reference_in_f64() {
        let a = random(130, 70, 21);
        let b = random(70, 90, 22);
        let r = gemm(&a, &b).unwrap();
        let t = gemm_tiled(&a, &b).unwrap();
        let max = r
            .data()
            .iter()
            .zip(t.data())
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max <= 1e-12, "tiled deviates by {max}");
    }
}
