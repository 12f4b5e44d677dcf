//! Hermitian matrices as real decision variables.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::AffineExpr;
use crate::error::{Error, Result};
use crate::CMat;

/// `[[Re H, -Im H], [Im H, Re H]]`; `H ⪰ 0` iff the embedding is PSD.
pub fn complex_embed(h: &CMat) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Dimension {
            what: "Hermitian matrix columns",
            expected: n,
            got: h.ncols(),
        });
    }
    let asym = (h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if asym > 1e-9 * h.iter().map(|z| z.norm()).fold(1.0, f64::max) {
        return Err(Error::NotHermitian(asym));
    }
    Ok(DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let z = h[(r % n, c % n)];
        match (r < n, c < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    }))
}

/// A Hermitian `dim × dim` matrix occupying `dim²` consecutive real variables:
/// the diagonal first, then `(Re, Im)` of each upper entry in row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermitianBlock {
    pub offset: usize,
    pub dim: usize,
}

impl HermitianBlock {
    pub fn new(offset: usize, dim: usize) -> Self {
        HermitianBlock { offset, dim }
    }

    pub fn num_params(dim: usize) -> usize {
        dim * dim
    }

    pub fn end(&self) -> usize {
        self.offset + Self::num_params(self.dim)
    }

    fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        let n = self.dim;
        // pairs before row i: Σ_{r<i} (n-1-r)
        let before = i * (2 * n - i - 1) / 2;
        self.offset + n + 2 * (before + (j - i - 1))
    }

    /// `(Re W_ij, Im W_ij)`.
    pub fn entry(&self, i: usize, j: usize) -> (AffineExpr, AffineExpr) {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => (AffineExpr::var(self.offset + i), AffineExpr::constant(0.0)),
            Less => {
                let p = self.pair_index(i, j);
                (AffineExpr::var(p), AffineExpr::var(p + 1))
            }
            Greater => {
                let p = self.pair_index(j, i);
                (AffineExpr::var(p), AffineExpr::term(p + 1, -1.0))
            }
        }
    }

    /// `tr(A W)` for Hermitian `A` (real-valued).
    pub fn trace_form(&self, a: &CMat) -> AffineExpr {
        let n = self.dim;
        let mut e = AffineExpr::default();
        for i in 0..n {
            e.push(self.offset + i, a[(i, i)].re);
            for j in i + 1..n {
                let p = self.pair_index(i, j);
                // A_ij conj(W_ij) + A_ji conj(W_ji) = 2 Re(A_ij conj(W_ij))
                let z = a[(i, j)] + a[(j, i)].conj();
                e.push(p, z.re);
                e.push(p + 1, z.im);
            }
        }
        e
    }

    pub fn trace(&self) -> AffineExpr {
        let mut e = AffineExpr::default();
        for i in 0..self.dim {
            e.push(self.offset + i, 1.0);
        }
        e
    }

    /// Column-major entries of the real `2n × 2n` embedding.
    pub fn embedded_entries(&self) -> Vec<AffineExpr> {
        let n = self.dim;
        let mut out = Vec::with_capacity(4 * n * n);
        for c in 0..2 * n {
            for r in 0..2 * n {
                let (re, im) = self.entry(r % n, c % n);
                out.push(match (r < n, c < n) {
                    (true, true) | (false, false) => re,
                    (true, false) => -im,
                    (false, true) => im,
                });
            }
        }
        out
    }

    pub fn extract(&self, x: &[f64]) -> CMat {
        let n = self.dim;
        CMat::from_fn(n, n, |i, j| {
            let (re, im) = self.entry(i, j);
            Complex64::new(re.eval(x), im.eval(x))
        })
    }

    /// Writes `w` into the parameter slots.
    pub fn store(&self, w: &CMat, x: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            x[self.offset + i] = w[(i, i)].re;
            for j in i + 1..n {
                let p = self.pair_index(i, j);
                x[p] = w[(i, j)].re;
                x[p + 1] = w[(i, j)].im;
            }
        }
    }
}
