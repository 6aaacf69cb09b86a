//! Discrete-time infinite-horizon LQR by fixed-point Riccati iteration.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAX_ITERS: usize = 200_000;
const TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    /// Feedback gain, `u = -K x`.
    pub gain: DMatrix<f64>,
    /// Cost-to-go matrix at the fixed point.
    pub cost: DMatrix<f64>,
    pub iterations: usize,
}

/// `(R + Bᵀ P B)⁻¹ Bᵀ P A`
pub fn gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Contract("singular R + BᵀPB in Riccati step".into()))?;
    Ok(s_inv * bt_p * a)
}

/// One step of `P ← Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA`.
pub fn riccati_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let at_p = a.transpose() * p;
    let k = gain(a, b, r, p)?;
    let next = q + &at_p * a - &at_p * b * k;
    // keep the iterate exactly symmetric
    Ok((&next + next.transpose()) * 0.5)
}

pub fn solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<LqrSolution> {
    let mut p = q.clone();
    for it in 1..=MAX_ITERS {
        let next = riccati_step(a, b, q, r, &p)?;
        let scale = 1.0 + next.amax();
        let delta = (&next - &p).amax();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Riccati iteration diverged".into()));
        }
        if delta <= TOL * scale {
            let gain = gain(a, b, r, &p)?;
            return Ok(LqrSolution {
                gain,
                cost: p,
                iterations: it,
            });
        }
    }
    Err(Error::Contract(format!(
        "Riccati iteration did not converge in {MAX_ITERS} steps"
    )))
}
