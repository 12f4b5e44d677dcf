//! Scalar bounds shared by the three subproblems: the log-ratio minorant,
//! quadratic Taylor sandwiches, the convex-quadratic minorant and Dinkelbach ratios.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{CMat, CVec};

/// Concave minorant of `ln(1 + ξ/ψ)` touching at `(ξₙ, ψₙ)`.
pub fn log_ratio_lower_bound(xi: f64, psi: f64, xi_n: f64, psi_n: f64) -> Result<f64> {
    for (v, name) in [(xi, "xi"), (psi, "psi"), (xi_n, "xi_n"), (psi_n, "psi_n")] {
        if !(v > 0.0) {
            return Err(Error::NonPositive(name));
        }
    }
    let r = xi_n / psi_n;
    Ok((1.0 + r).ln() + r / (1.0 + r) * (2.0 - xi_n / xi - psi / psi_n))
}

/// Weights `(constant, a, b)` with bound `constant - a·ξₙ/ξ - b·ψ` in natural log units.
pub fn log_ratio_weights(xi_n: f64, psi_n: f64) -> (f64, f64, f64) {
    let r = xi_n / psi_n;
    let w = r / (1.0 + r);
    ((1.0 + r).ln() + 2.0 * w, w, w / psi_n)
}

fn taylor(value_n: f64, grad_n: [f64; 2], p: [f64; 2], p_n: [f64; 2], delta: f64, sign: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::NonPositive("delta"));
    }
    let d = [p[0] - p_n[0], p[1] - p_n[1]];
    Ok(value_n + grad_n[0] * d[0] + grad_n[1] * d[1] + sign * 0.5 * delta * (d[0] * d[0] + d[1] * d[1]))
}

/// `f(pₙ) + ∇fᵀ(p-pₙ) - (δ/2)‖p-pₙ‖²`.
pub fn quad_lower_taylor(value_n: f64, grad_n: [f64; 2], p: [f64; 2], p_n: [f64; 2], delta: f64) -> Result<f64> {
    taylor(value_n, grad_n, p, p_n, delta, -1.0)
}

/// `f(pₙ) + ∇fᵀ(p-pₙ) + (δ/2)‖p-pₙ‖²`.
pub fn quad_upper_taylor(value_n: f64, grad_n: [f64; 2], p: [f64; 2], p_n: [f64; 2], delta: f64) -> Result<f64> {
    taylor(value_n, grad_n, p, p_n, delta, 1.0)
}

/// `2Re{vₙᴴ M v} - vₙᴴ M vₙ ≤ vᴴ M v` for Hermitian PSD `M`.
pub fn linearize_affine_quadratic(v_n: &CVec, m: &CMat, v: &CVec) -> Result<f64> {
    let n = m.nrows();
    if m.ncols() != n || v_n.len() != n || v.len() != n {
        return Err(Error::Dimension {
            what: "quadratic form size",
            expected: n,
            got: v.len().min(v_n.len()).min(m.ncols()),
        });
    }
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let asym = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if asym > 1e-9 * scale {
        return Err(Error::NotHermitian(asym));
    }
    let lmin = m.clone().symmetric_eigenvalues().min();
    if lmin < -1e-9 * scale {
        return Err(Error::NotPsd(lmin));
    }
    let mv_n = m * v_n;
    let cross = v.dotc(&mv_n).conj();
    let base = v_n.dotc(&mv_n).re;
    Ok(2.0 * cross.re - base)
}

/// `y = C / D`.
pub fn dinkelbach_update(c: f64, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::NonPositive("Dinkelbach denominator"));
    }
    Ok(c / d)
}

/// Per-user ratios tracked across an inner Dinkelbach loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DinkelbachState {
    pub y_r: Vec<f64>,
    pub y_t: Vec<f64>,
    pub iterations: usize,
    pub tolerance: f64,
}

impl DinkelbachState {
    pub fn new(k: usize, q: usize, tolerance: f64) -> Self {
        DinkelbachState {
            y_r: vec![0.0; k],
            y_t: vec![0.0; q],
            iterations: 0,
            tolerance,
        }
    }

    /// Replaces every ratio with `C/D` and returns the largest relative change.
    pub fn update(&mut self, ratios_r: &[(f64, f64)], ratios_t: &[(f64, f64)]) -> Result<f64> {
        let mut change: f64 = 0.0;
        let mut step = |slot: &mut f64, (c, d): (f64, f64)| -> Result<()> {
            let y = dinkelbach_update(c, d)?;
            if !(y.is_finite() && y >= 0.0) {
                return Err(Error::Degenerate(format!("ratio {y}")));
            }
            change = change.max((y - *slot).abs() / slot.abs().max(1e-12));
            *slot = y;
            Ok(())
        };
        for (slot, &cd) in self.y_r.iter_mut().zip(ratios_r) {
            step(slot, cd)?;
        }
        for (slot, &cd) in self.y_t.iter_mut().zip(ratios_t) {
            step(slot, cd)?;
        }
        self.iterations += 1;
        Ok(change)
    }
}
