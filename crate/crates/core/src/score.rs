//! Score functions (source-model nonlinearities).
//!
//! A score `phi` is applied to the extracted signals and then normalized so
//! that `s_hat phi(s_hat)^T / N = 1`. Scalar kinds act row by row; vector
//! kinds couple the K rows sample-wise.

use std::sync::Arc;

use crate::error::{IceError, Result};
use crate::linalg::{C64, CMatrix, CVector};

/// Floor of the vector-score denominator.
pub const VECTOR_FLOOR: f64 = 1e-12;

/// Below this `|nu|` the score is considered uncorrelated with the signal.
pub const NU_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// `conj(tanh(xi))`.
    TanhConjugate,
    /// `conj(xi) / (1 + |xi|^2)`, the score of `f ~ (1 + |xi|^2)^{-1}`.
    Rational,
    /// `conj(tanh(xi^k)) / sqrt(sum_l |xi^l|^2)`.
    VectorCoupled,
    /// [`ScoreKind::VectorCoupled`] with a pilot signal appended to the norm.
    PilotedVector,
    /// `conj(xi^k) / (2 sqrt(sum_l |xi^l|^2))`, the exact score of the
    /// circular vector density `f ~ exp(-||xi||)`.
    VectorLaplace,
}

impl ScoreKind {
    pub fn is_vector(self) -> bool {
        matches!(self, Self::VectorCoupled | Self::PilotedVector | Self::VectorLaplace)
    }
}

/// A nonlinearity together with its input-scaling policy.
#[derive(Clone, Debug)]
pub struct ScoreModel {
    kind: ScoreKind,
    unit_scale: bool,
    pilot: Option<Arc<CVector>>,
}

/// Normalized score values of a K×N signal block.
#[derive(Clone, Debug)]
pub struct ScoreEval {
    /// Normalized scores, `s_hat^k (phi^k)^T / N = 1` for every row.
    pub phi: CMatrix,
    /// Per-row normalization constants.
    pub nu: Vec<C64>,
}

impl ScoreModel {
    /// The tanh score on unit-variance-rescaled input.
    pub fn tanh() -> Self {
        Self {
            kind: ScoreKind::TanhConjugate,
            unit_scale: true,
            pilot: None,
        }
    }

    /// The rational (FastICA) score on raw input.
    pub fn rational() -> Self {
        Self {
            kind: ScoreKind::Rational,
            unit_scale: false,
            pilot: None,
        }
    }

    /// The coupled vector score on unit-variance-rescaled input.
    pub fn vector() -> Self {
        Self {
            kind: ScoreKind::VectorCoupled,
            unit_scale: true,
            pilot: None,
        }
    }

    /// [`ScoreModel::vector`] with a shared pilot signal.
    pub fn piloted(pilot: Arc<CVector>) -> Self {
        Self {
            kind: ScoreKind::PilotedVector,
            unit_scale: true,
            pilot: Some(pilot),
        }
    }

    /// Exact vector Laplace score on raw input.
    pub fn laplace_vector() -> Self {
        Self {
            kind: ScoreKind::VectorLaplace,
            unit_scale: false,
            pilot: None,
        }
    }

    pub fn with_unit_scale(mut self, unit_scale: bool) -> Self {
        self.unit_scale = unit_scale;
        self
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn unit_scale(&self) -> bool {
        self.unit_scale
    }

    pub fn pilot(&self) -> Option<&CVector> {
        self.pilot.as_deref()
    }

    /// Raw (unnormalized) scores of a K×N block.
    pub fn evaluate(&self, s: &CMatrix) -> Result<CMatrix> {
        check_finite(s.as_slice())?;
        let k = s.rows();
        let n = s.cols();
        if k == 0 || n == 0 {
            return Err(IceError::Dimension("empty signal block".into()));
        }
        let scales = self.scales(s)?;
        let mut out = CMatrix::zeros(k, n);
        match self.kind {
            ScoreKind::TanhConjugate => {
                for r in 0..k {
                    crate::kernels::conj_tanh_scaled(s.row(r), 1.0 / scales[r], out.row_mut(r));
                }
            }
            ScoreKind::Rational => {
                for r in 0..k {
                    let inv = 1.0 / scales[r];
                    for (o, &x) in out.row_mut(r).iter_mut().zip(s.row(r)) {
                        *o = rational(x * inv);
                    }
                }
            }
            ScoreKind::VectorCoupled | ScoreKind::PilotedVector | ScoreKind::VectorLaplace => {
                let pilot = self.pilot_slice(n)?;
                let pilot_scale = match pilot {
                    Some(p) if self.unit_scale => rms(p)?,
                    _ => 1.0,
                };
                let norms = joint_norms(s, &scales, pilot, pilot_scale);
                let laplace = self.kind == ScoreKind::VectorLaplace;
                for r in 0..k {
                    let inv = 1.0 / scales[r];
                    let row = out.row_mut(r);
                    if laplace {
                        for (o, &x) in row.iter_mut().zip(s.row(r)) {
                            *o = (x * inv).conj() * 0.5;
                        }
                    } else {
                        crate::kernels::conj_tanh_scaled(s.row(r), inv, row);
                    }
                    for (o, &nrm) in row.iter_mut().zip(&norms) {
                        *o /= nrm.max(VECTOR_FLOOR);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Scores normalized row by row.
    pub fn evaluate_normalized(&self, s: &CMatrix) -> Result<ScoreEval> {
        let mut phi = self.evaluate(s)?;
        let mut nu = Vec::with_capacity(s.rows());
        for r in 0..s.rows() {
            let v = normalization(s.row(r), phi.row(r))?;
            let inv = C64::new(1.0, 0.0) / v;
            for p in phi.row_mut(r) {
                *p *= inv;
            }
            nu.push(v);
        }
        Ok(ScoreEval { phi, nu })
    }

    /// Mean log model density over samples, up to an additive constant.
    ///
    /// Scalar kinds sum over rows. The tanh-based kinds use
    /// `-log|cosh|` which is the model the tanh nonlinearity stands for,
    /// not a potential of it.
    pub fn log_density(&self, s: &CMatrix) -> Result<f64> {
        check_finite(s.as_slice())?;
        let n = s.cols();
        if n == 0 {
            return Err(IceError::Dimension("empty signal block".into()));
        }
        let scales = self.scales(s)?;
        let total: f64 = match self.kind {
            ScoreKind::TanhConjugate => (0..s.rows())
                .map(|r| s.row(r).iter().map(|&x| -log_abs_cosh(x / scales[r])).sum::<f64>())
                .sum(),
            ScoreKind::Rational => (0..s.rows())
                .map(|r| s.row(r).iter().map(|&x| -(x / scales[r]).norm_sqr().ln_1p()).sum::<f64>())
                .sum(),
            ScoreKind::VectorCoupled | ScoreKind::PilotedVector | ScoreKind::VectorLaplace => {
                let pilot = self.pilot_slice(n)?;
                let pilot_scale = match pilot {
                    Some(p) if self.unit_scale => rms(p)?,
                    _ => 1.0,
                };
                let norms = joint_norms(s, &scales, pilot, pilot_scale);
                if self.kind == ScoreKind::VectorLaplace {
                    -norms.iter().sum::<f64>()
                } else {
                    -norms.iter().map(|&r| log_abs_cosh(C64::new(r, 0.0))).sum::<f64>()
                }
            }
        };
        Ok(total / n as f64)
    }

    /// FastICA derivative term `rho = mean d psi / d conj(xi)` per row.
    pub fn rho(&self, s: &CMatrix) -> Result<Vec<C64>> {
        check_finite(s.as_slice())?;
        let scales = self.scales(s)?;
        let n = s.cols() as f64;
        match self.kind {
            ScoreKind::Rational => Ok((0..s.rows())
                .map(|r| {
                    let inv = 1.0 / scales[r];
                    let sum: f64 = s.row(r).iter().map(|&x| rational_deriv((x * inv).norm_sqr()) * inv).sum();
                    C64::new(sum / n, 0.0)
                })
                .collect()),
            ScoreKind::TanhConjugate => Ok((0..s.rows())
                .map(|r| {
                    let inv = 1.0 / scales[r];
                    let sum: C64 = s.row(r).iter().map(|&x| sech_sqr(x * inv).conj() * inv).sum();
                    sum / n
                })
                .collect()),
            _ => Err(IceError::Config(format!("rho is defined for scalar scores only, not {:?}", self.kind))),
        }
    }

    fn scales(&self, s: &CMatrix) -> Result<Vec<f64>> {
        if !self.unit_scale {
            return Ok(vec![1.0; s.rows()]);
        }
        (0..s.rows()).map(|r| rms(s.row(r))).collect()
    }

    fn pilot_slice(&self, n: usize) -> Result<Option<&[C64]>> {
        match (&self.kind, &self.pilot) {
            (ScoreKind::PilotedVector, None) => Err(IceError::Config("piloted score needs a pilot signal".into())),
            (ScoreKind::PilotedVector, Some(p)) => {
                if p.len() != n {
                    return Err(IceError::Dimension(format!("pilot has {} samples, signals have {n}", p.len())));
                }
                Ok(Some(p.as_slice()))
            }
            _ => Ok(None),
        }
    }
}

fn joint_norms(s: &CMatrix, scales: &[f64], pilot: Option<&[C64]>, pilot_scale: f64) -> Vec<f64> {
    let n = s.cols();
    let mut acc = vec![0.0; n];
    for (r, &sc) in scales.iter().enumerate() {
        let inv2 = 1.0 / (sc * sc);
        for (a, x) in acc.iter_mut().zip(s.row(r)) {
            *a += x.norm_sqr() * inv2;
        }
    }
    if let Some(p) = pilot {
        let inv2 = 1.0 / (pilot_scale * pilot_scale);
        for (a, x) in acc.iter_mut().zip(p) {
            *a += x.norm_sqr() * inv2;
        }
    }
    acc.iter_mut().for_each(|a| *a = a.sqrt());
    acc
}

fn rms(x: &[C64]) -> Result<f64> {
    let p = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64;
    if !(p > 0.0) || !p.is_finite() {
        return Err(IceError::Degenerate("signal has zero power".into()));
    }
    Ok(p.sqrt())
}

fn check_finite(x: &[C64]) -> Result<()> {
    if x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(IceError::NonFinite("score input"))
    }
}

/// `conj(tanh(z))`.
#[inline]
pub fn conj_tanh(z: C64) -> C64 {
    let (x, y) = (z.re, z.im);
    if x.abs() > 20.0 {
        return C64::new(x.signum(), 0.0);
    }
    // conj(tanh z) = (sinh 2x - i sin 2y) / (cosh 2x + cos 2y), scaled by 2 e^{2x}
    let e = (2.0 * x).exp();
    let e2 = e * e;
    let (sin2y, cos2y) = (2.0 * y).sin_cos();
    let inv = 1.0 / (e2 + 1.0 + 2.0 * e * cos2y);
    C64::new((e2 - 1.0) * inv, -2.0 * e * sin2y * inv)
}

#[inline]
fn rational(z: C64) -> C64 {
    z.conj() / (1.0 + z.norm_sqr())
}

#[inline]
fn rational_deriv(r2: f64) -> f64 {
    let q = 1.0 + r2;
    1.0 / (q * q)
}

fn sech_sqr(z: C64) -> C64 {
    let c = z.cosh();
    C64::new(1.0, 0.0) / (c * c)
}

/// `log|cosh(z)|`, stable for large real parts.
pub fn log_abs_cosh(z: C64) -> f64 {
    let (x, y) = (z.re.abs(), z.im);
    if x > 20.0 {
        // |cosh z| ~ e^x / 2 with relative error below e^{-2x}
        return x - std::f64::consts::LN_2;
    }
    let sh = x.sinh();
    let co = y.cos();
    0.5 * (sh * sh + co * co).ln()
}

/// `nu = s phi^T / N`.
pub fn normalization(s: &[C64], phi: &[C64]) -> Result<C64> {
    if s.len() != phi.len() || s.is_empty() {
        return Err(IceError::Dimension(format!("|s| = {}, |phi| = {}", s.len(), phi.len())));
    }
    let nu = s.iter().zip(phi).map(|(a, b)| a * b).sum::<C64>() / s.len() as f64;
    if !(nu.norm() > NU_FLOOR) {
        return Err(IceError::DegenerateScore(nu.norm()));
    }
    Ok(nu)
}

/// Divide `phi` by `nu = s phi^T / N`; returns the normalized score and `nu`.
pub fn normalize(phi: &[C64], s: &[C64]) -> Result<(CVector, C64)> {
    let nu = normalization(s, phi)?;
    let inv = C64::new(1.0, 0.0) / nu;
    Ok((phi.iter().map(|&p| p * inv).collect(), nu))
}

/// Entrywise `conj(tanh(xi))`.
pub fn score_tanh(s: &[C64]) -> Result<CVector> {
    check_finite(s)?;
    Ok(s.iter().map(|&x| conj_tanh(x)).collect())
}

/// Rational FastICA score and its `rho`.
pub fn score_rational(s: &[C64]) -> Result<(CVector, C64)> {
    check_finite(s)?;
    if s.is_empty() {
        return Err(IceError::Dimension("empty signal".into()));
    }
    let psi = s.iter().map(|&x| rational(x)).collect();
    let rho = s.iter().map(|x| rational_deriv(x.norm_sqr())).sum::<f64>() / s.len() as f64;
    Ok((psi, C64::new(rho, 0.0)))
}

/// Coupled vector score of a K×N block on raw input, optionally piloted.
pub fn score_vector(s: &CMatrix, pilot: Option<&[C64]>) -> Result<CMatrix> {
    let model = match pilot {
        Some(p) => ScoreModel::piloted(Arc::new(CVector::new(p.to_vec()))),
        None => ScoreModel::vector(),
    };
    model.with_unit_scale(false).evaluate(s)
}

impl Default for ScoreModel {
    fn default() -> Self {
        Self::tanh()
    }
}



#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn normalize_is_idempotent(seed in any::<u64>(), n in 2usize..200) {
            let mut rng = crate::rng::Rng::new(seed);
            let s: Vec<C64> = (0..n).map(|_| rng.complex_normal()).collect();
            let phi = score_tanh(&s).unwrap();
            let (p1, _) = normalize(phi.as_slice(), &s).unwrap();
            let (_, nu2) = normalize(p1.as_slice(), &s).unwrap();
            prop_assert!((nu2 - C64::new(1.0, 0.0)).norm() < 1e-12);
        }

        #[test]
        fn vector_score_magnitude_bounded(seed in any::<u64>(), k in 1usize..5) {
            let mut rng = crate::rng::Rng::new(seed);
            let s = CMatrix::from_fn(k, 30, |_, _| rng.complex_normal());
            let v = score_vector(&s, None).unwrap();
            prop_assert!(v.is_finite());
        }
    }
}
