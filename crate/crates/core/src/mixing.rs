//! The one-source extraction parameterization.
//!
//! A mixture `x = a s + y` is described by the mixing vector `a = [gamma; g]`
//! and the separating vector `w = [beta; h]`, tied by `w^H a = 1`. Together
//! with the blocking matrix `B = [g, -gamma I]`, which annihilates `a`, they
//! span the complete de-mixing matrix used for extraction.

use crate::error::{IceError, Result};
use crate::linalg::{C64, CMatrix, CVector, Cholesky, ONE, ZERO};

/// Relative tolerance on `|gamma| / ||a||` below which the model degenerates.
pub const GAMMA_FLOOR: f64 = 1e-12;

/// Tolerance used when checking `w^H a = 1` at construction.
pub const DISTORTIONLESS_TOL: f64 = 1e-10;

/// A mixing/separating vector pair satisfying `w^H a = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionParams {
    a: CVector,
    w: CVector,
}

impl ExtractionParams {
    /// Build from a pair that already satisfies the distortionless response.
    pub fn new(a: CVector, w: CVector) -> Result<Self> {
        check_dims(&a, &w)?;
        let resp = w.dot(&a);
        if (resp - ONE).norm() > DISTORTIONLESS_TOL {
            return Err(IceError::Degenerate(format!(
                "w^H a = {resp} violates the distortionless response"
            )));
        }
        check_gamma(&a)?;
        Ok(Self { a, w })
    }

    /// Rescale `w` by `1 / (a^H w)` so that `w^H a = 1`.
    pub fn repaired(a: CVector, w: CVector) -> Result<Self> {
        check_dims(&a, &w)?;
        let ahw = a.dot(&w);
        if ahw.norm() <= 1e-12 {
            return Err(IceError::Degenerate(format!("a^H w = {ahw} cannot be repaired")));
        }
        let w = w.scale(ONE / ahw);
        check_gamma(&a)?;
        Ok(Self { a, w })
    }

    /// Same pair rescaled so that `gamma = 1` (spatial-image convention).
    pub fn with_unit_gamma(&self) -> Result<Self> {
        let gamma = self.gamma();
        Ok(Self {
            a: self.a.scale(ONE / gamma),
            w: self.w.scale(gamma.conj()),
        })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &CVector {
        &self.a
    }

    pub fn w(&self) -> &CVector {
        &self.w
    }

    pub fn gamma(&self) -> C64 {
        self.a[0]
    }

    pub fn g(&self) -> &[C64] {
        &self.a.as_slice()[1..]
    }

    pub fn beta(&self) -> C64 {
        self.w[0]
    }

    pub fn h(&self) -> &[C64] {
        &self.w.as_slice()[1..]
    }

    pub fn into_parts(self) -> (CVector, CVector) {
        (self.a, self.w)
    }
}

fn check_dims(a: &CVector, w: &CVector) -> Result<()> {
    if a.len() != w.len() {
        return Err(IceError::Dimension(format!("|a| = {} but |w| = {}", a.len(), w.len())));
    }
    if a.len() < 2 {
        return Err(IceError::Dimension("extraction needs d >= 2".into()));
    }
    Ok(())
}

fn check_gamma(a: &CVector) -> Result<()> {
    if a[0].norm() < GAMMA_FLOOR * a.norm() || a[0] == ZERO {
        return Err(IceError::Degenerate(format!("gamma = {} is numerically zero", a[0])));
    }
    Ok(())
}

/// `B = [g, -gamma I_{d-1}]`, computed from `a` alone.
pub fn blocking_matrix(a: &CVector) -> CMatrix {
    let d = a.len();
    let gamma = a[0];
    CMatrix::from_fn(d - 1, d, |i, j| {
        if j == 0 {
            a[i + 1]
        } else if j == i + 1 {
            -gamma
        } else {
            ZERO
        }
    })
}

/// Background signals `Z = B X` without forming `B`.
pub fn background_signals(a: &CVector, x: &CMatrix) -> CMatrix {
    let d = a.len();
    let gamma = a[0];
    let n = x.cols();
    let x1 = x.row(0);
    let mut z = CMatrix::zeros(d - 1, n);
    for i in 0..d - 1 {
        let gi = a[i + 1];
        let xi = x.row(i + 1);
        for ((zv, &s), &r) in z.row_mut(i).iter_mut().zip(x1).zip(xi) {
            *zv = gi * s - gamma * r;
        }
    }
    z
}

/// Full de-mixing/mixing structure of one extraction problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMatrices {
    pub a_ice: CMatrix,
    pub w_ice: CMatrix,
    pub b: CMatrix,
    pub det_w: C64,
}

/// Assemble `W_ICE = [w^H; B]`, its inverse `A_ICE = [a, Q]`, and
/// `det W_ICE = (-1)^{d-1} gamma^{d-2}`.
pub fn assemble(params: &ExtractionParams) -> Result<ModelMatrices> {
    let d = params.dim();
    let gamma = params.gamma();
    if gamma.norm() < GAMMA_FLOOR * params.a().norm() {
        return Err(IceError::Degenerate("gamma is numerically zero".into()));
    }
    let b = blocking_matrix(params.a());
    let mut w_ice = CMatrix::zeros(d, d);
    for j in 0..d {
        w_ice[(0, j)] = params.w()[j].conj();
    }
    w_ice.set_block(1, 0, &b);

    let g = params.g();
    let h = params.h();
    let inv_gamma = ONE / gamma;
    let mut a_ice = CMatrix::zeros(d, d);
    a_ice[(0, 0)] = gamma;
    for j in 1..d {
        a_ice[(0, j)] = h[j - 1].conj();
    }
    for i in 1..d {
        a_ice[(i, 0)] = g[i - 1];
        for j in 1..d {
            let eye = if i == j { ONE } else { ZERO };
            a_ice[(i, j)] = (g[i - 1] * h[j - 1].conj() - eye) * inv_gamma;
        }
    }
    let sign = if (d - 1) % 2 == 0 { 1.0 } else { -1.0 };
    let det_w = gamma.powi(d as i32 - 2) * sign;
    Ok(ModelMatrices {
        a_ice,
        w_ice,
        b,
        det_w,
    })
}

/// `w = C^{-1} a / (a^H C^{-1} a)`: separating vector induced by `a` under
/// the orthogonal constraint.
pub fn couple_w_from_a(a: &CVector, cx: &CMatrix) -> Result<CVector> {
    let chol = Cholesky::new_guarded(cx)?;
    couple_w_from_a_with(a, &chol)
}

/// As [`couple_w_from_a`] with a pre-factorized covariance.
pub fn couple_w_from_a_with(a: &CVector, chol: &Cholesky) -> Result<CVector> {
    let ci_a = chol.solve(a);
    let q = a.dot(&ci_a).re;
    if !(q > 0.0) {
        return Err(IceError::Degenerate("a^H C^{-1} a is not positive".into()));
    }
    Ok(ci_a.scale_real(1.0 / q))
}

/// As [`couple_w_from_a`] with an explicit inverse covariance.
pub fn couple_w_from_a_inv(a: &CVector, cx_inv: &CMatrix) -> Result<CVector> {
    let ci_a = cx_inv.mul_vec(a);
    let q = a.dot(&ci_a).re;
    if !(q > 0.0) || !q.is_finite() {
        return Err(IceError::Degenerate("a^H C^{-1} a is not positive".into()));
    }
    Ok(ci_a.scale_real(1.0 / q))
}

/// `a = C w / (w^H C w)`: mixing vector induced by `w` under the orthogonal
/// constraint.
pub fn couple_a_from_w(w: &CVector, cx: &CMatrix) -> Result<CVector> {
    let cw = cx.mul_vec(w);
    let power = w.dot(&cw).re;
    if !(power > 1e-15 * cx.frobenius_norm()) || !power.is_finite() {
        return Err(IceError::Degenerate(format!(
            "extracted power w^H C w = {power:.3e} is degenerate"
        )));
    }
    Ok(cw.scale_real(1.0 / power))
}

/// Minimum-power distortionless response extraction `w_MPDR^H X` steered by `a`.
pub fn mpdr(a: &CVector, cx: &CMatrix, x: &CMatrix) -> Result<CVector> {
    Ok(x.project(&mpdr_weights(a, cx)?))
}

/// Beamformer weights of [`mpdr`].
pub fn mpdr_weights(a: &CVector, cx: &CMatrix) -> Result<CVector> {
    couple_w_from_a(a, cx)
}
