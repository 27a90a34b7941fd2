//! Reference methods: gradient ICA (Bell-Sejnowski, natural gradient and its
//! scaled variant) and one-unit FastICA.

use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::ice::IceProblem;
use crate::linalg::{C64, CMatrix, CVector};
use crate::mixing::{blocking_matrix, couple_w_from_a, ExtractionParams};
use crate::score::ScoreModel;

/// Condition estimate above which a de-mixing matrix is rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Unnormalized `conj(tanh)` on raw outputs, as used by BS and NG.
pub fn ica_score() -> ScoreModel {
    ScoreModel::tanh().with_unit_scale(false)
}

/// FastICA nonlinearity.
pub fn fica_score() -> ScoreModel {
    ScoreModel::rational()
}

/// `X phi(W X)^T / N` as a `d x d` matrix, with the raw scores.
fn x_phi_matrix(w: &CMatrix, problem: &IceProblem, model: &ScoreModel) -> Result<CMatrix> {
    let d = problem.dim();
    if w.rows() != d || w.cols() != d {
        return Err(IceError::Dimension(format!("W must be {d}x{d}")));
    }
    let y = problem.split().left_mul(w);
    let phi = model.evaluate(&y)?;
    let cols: Vec<CVector> = (0..d).map(|j| problem.mean_product(phi.row(j))).collect();
    CMatrix::from_columns(&cols)
}

/// Bell-Sejnowski direction `Delta W` with `Delta W^H = W^{-1} - X phi(W X)^T / N`.
pub fn bs_update(w: &CMatrix, problem: &IceProblem, model: &ScoreModel) -> Result<CMatrix> {
    let xp = x_phi_matrix(w, problem, model)?;
    Ok(w.inverse()?.sub(&xp).adjoint())
}

/// Natural-gradient direction `Delta W` with `Delta W^H = W^H (I - W X phi(W X)^T / N)`.
pub fn ng_update(w: &CMatrix, problem: &IceProblem, model: &ScoreModel) -> Result<CMatrix> {
    let xp = x_phi_matrix(w, problem, model)?;
    let inner = CMatrix::identity(w.rows()).sub(&w.matmul(&xp)?);
    Ok(w.adjoint().matmul(&inner)?.adjoint())
}

/// Rescale every row of `W` so that its output has unit sample variance.
pub fn unit_output_rows(w: &CMatrix, cx: &CMatrix) -> Result<CMatrix> {
    let mut out = w.clone();
    for i in 0..w.rows() {
        let wi = w.row_vector(i).conj();
        let p = wi.dot(&cx.mul_vec(&wi)).re;
        if !(p > 0.0) || !p.is_finite() {
            return Err(IceError::Degenerate(format!("output {i} has zero variance")));
        }
        let inv = 1.0 / p.sqrt();
        out.row_mut(i).iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}

/// One scaled natural-gradient iteration: `W + mu Delta W_NG`, then unit output variance per row.
pub fn scng_update(w: &CMatrix, problem: &IceProblem, model: &ScoreModel, mu: f64) -> Result<CMatrix> {
    let delta = ng_update(w, problem, model)?;
    unit_output_rows(&w.add(&delta.scale_real(mu)), problem.cx())
}

/// `||W||_F ||W^{-1}||_F`.
pub fn condition_estimate(w: &CMatrix) -> f64 {
    match w.inverse() {
        Ok(inv) => w.frobenius_norm() * inv.frobenius_norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Initial de-mixing matrix: first row `w^H` coupled to `a_ini`, the others `B(a_ini)`.
pub fn initial_demixing(a_ini: &CVector, cx: &CMatrix) -> Result<CMatrix> {
    let d = a_ini.len();
    let w = couple_w_from_a(a_ini, cx)?;
    let b = blocking_matrix(a_ini);
    let mut m = CMatrix::zeros(d, d);
    m.set_row(0, w.conj().as_slice());
    m.set_block(1, 0, &b);
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IcaRule {
    BellSejnowski,
    Natural,
    ScaledNatural,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcaConfig {
    pub rule: IcaRule,
    pub step_mu: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl IcaConfig {
    pub fn ng() -> Self {
        Self {
            rule: IcaRule::Natural,
            step_mu: 0.02,
            tol: 1e-3,
            max_iter: 5000,
        }
    }

    pub fn scng() -> Self {
        Self {
            rule: IcaRule::ScaledNatural,
            ..Self::ng()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_mu > 0.0) || !self.step_mu.is_finite() {
            return Err(IceError::Config(format!("step_mu = {} must be positive", self.step_mu)));
        }
        if !(self.tol > 0.0) {
            return Err(IceError::Config(format!("tol = {} must be positive", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(IceError::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IcaTrace {
    /// `||Delta W||_F` per iteration.
    pub step_norms: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct IcaOutput {
    pub w: CMatrix,
    pub trace: IcaTrace,
}

impl IcaOutput {
    /// Separating vector of the first output.
    pub fn separating_vector(&self) -> CVector {
        self.w.row_vector(0).conj()
    }
}

#[derive(Clone, Debug, thiserror::Error)]
#[error("{error} (after {} iterations)", trace.iterations)]
pub struct IcaFailure {
    pub error: IceError,
    pub trace: IcaTrace,
}

/// Gradient ICA of the whole de-mixing matrix.
pub fn ica_solve(
    problem: &IceProblem,
    w_ini: &CMatrix,
    model: &ScoreModel,
    cfg: &IcaConfig,
) -> std::result::Result<IcaOutput, IcaFailure> {
    let mut trace = IcaTrace::default();
    let fail = |error, trace| IcaFailure { error, trace };
    if let Err(e) = cfg.validate() {
        return Err(fail(e, trace));
    }
    if condition_estimate(w_ini) > MAX_CONDITION {
        return Err(fail(IceError::Singular(condition_estimate(w_ini)), trace));
    }
    let mut w = w_ini.clone();
    for it in 0..cfg.max_iter {
        let step = (|| -> Result<Option<CMatrix>> {
            let delta = match cfg.rule {
                IcaRule::BellSejnowski => bs_update(&w, problem, model)?,
                IcaRule::Natural | IcaRule::ScaledNatural => ng_update(&w, problem, model)?,
            };
            let norm = delta.frobenius_norm();
            trace.step_norms.push(norm);
            trace.iterations = it + 1;
            if !norm.is_finite() {
                return Err(IceError::NonFinite("ICA step"));
            }
            if norm < cfg.tol {
                return Ok(None);
            }
            let mut next = w.add(&delta.scale_real(cfg.step_mu));
            if cfg.rule == IcaRule::ScaledNatural {
                next = unit_output_rows(&next, problem.cx())?;
            }
            let cond = condition_estimate(&next);
            if cond > MAX_CONDITION {
                return Err(IceError::Singular(cond));
            }
            Ok(Some(next))
        })();
        match step {
            Ok(Some(next)) => w = next,
            Ok(None) => {
                trace.converged = true;
                break;
            }
            Err(e) => return Err(fail(e, trace)),
        }
    }
    Ok(IcaOutput { w, trace })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FicaConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FicaConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FicaTrace {
    /// Normalized iterate after each update.
    pub iterates: Vec<CVector>,
    /// `|1 - |w_new^H C w_old||` per iteration.
    pub changes: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct FicaOutput {
    pub params: ExtractionParams,
    pub trace: FicaTrace,
}

#[derive(Clone, Debug, thiserror::Error)]
#[error("{error} (after {} iterations)", trace.iterations)]
pub struct FicaFailure {
    pub error: IceError,
    pub trace: FicaTrace,
}

/// `w / sqrt(w^H C w)`.
pub fn unit_scale(w: &CVector, cx: &CMatrix) -> Result<CVector> {
    let p = w.dot(&cx.mul_vec(w)).re;
    if !(p > 0.0) || !p.is_finite() {
        return Err(IceError::Degenerate("zero output power".into()));
    }
    Ok(w.scale_real(1.0 / p.sqrt()))
}

/// One FastICA fixed-point step followed by the unit-scale normalization.
pub fn fica_update(problem: &IceProblem, w: &CVector, model: &ScoreModel) -> Result<CVector> {
    let s = problem.extract(w);
    let psi = model.evaluate(&s)?;
    let nu: C64 = s.row(0).iter().zip(psi.row(0)).map(|(a, b)| a * b).sum::<C64>() / s.cols() as f64;
    let rho = model.rho(&s)?[0];
    let gap = rho - nu;
    if gap.norm() < 1e-12 {
        return Err(IceError::Breakdown(format!("rho - nu = {gap:.3e}")));
    }
    let g = problem.cx_inv().mul_vec(&problem.mean_product(psi.row(0)));
    let next = w.sub(&g.sub(&w.scale(nu)).scale(C64::new(1.0, 0.0) / gap));
    unit_scale(&next, problem.cx())
}

/// One-unit FastICA from `w_ini`, rescaled to unit output power first.
pub fn fica_one_unit(
    problem: &IceProblem,
    w_ini: &CVector,
    model: &ScoreModel,
    cfg: &FicaConfig,
) -> std::result::Result<FicaOutput, FicaFailure> {
    let mut trace = FicaTrace::default();
    let fail = |error, trace| FicaFailure { error, trace };
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(fail(IceError::Config("FastICA needs tol > 0 and max_iter >= 1".into()), trace));
    }
    let mut w = match unit_scale(w_ini, problem.cx()) {
        Ok(w) => w,
        Err(e) => return Err(fail(e, trace)),
    };
    for it in 0..cfg.max_iter {
        let next = match fica_update(problem, &w, model) {
            Ok(n) if n.is_finite() => n,
            Ok(_) => return Err(fail(IceError::NonFinite("iterate"), trace)),
            Err(e) => return Err(fail(e, trace)),
        };
        let change = (1.0 - next.dot(&problem.cx().mul_vec(&w)).norm()).abs();
        trace.iterates.push(next.clone());
        trace.changes.push(change);
        trace.iterations = it + 1;
        w = next;
        if change < cfg.tol {
            trace.converged = true;
            break;
        }
    }
    let a = problem.cx().mul_vec(&w);
    match ExtractionParams::repaired(a, w) {
        Ok(params) => Ok(FicaOutput { params, trace }),
        Err(e) => Err(fail(e, trace)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ice::{grad_w, ogice_w, Precondition, SolverConfig};
    use crate::rng::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn problem(d: usize, n: usize, seed: u64) -> (IceProblem, CMatrix) {
        let mut rng = Rng::new(seed);
        let a = CMatrix::from_fn(d, d, |i, j| if i == j { c(2.0, 0.0) } else { rng.complex_normal() * 0.4 });
        let u = CMatrix::from_fn(d, n, |_, _| rng.unit_phase() * rng.gamma(2.0, 1.0 / 6f64.sqrt()));
        (IceProblem::new(a.matmul(&u).unwrap()).unwrap(), a)
    }

    fn random_matrix(d: usize, rng: &mut Rng) -> CMatrix {
        CMatrix::from_fn(d, d, |i, j| if i == j { c(1.0, 0.0) } else { C64::new(0.0, 0.0) } + rng.complex_normal() * 0.3)
    }

    #[test]
    fn bs_row_is_unnormalized_grad_w() {
        let (p, _) = problem(4, 300, 1);
        let mut rng = Rng::new(2);
        let w = random_matrix(4, &mut rng);
        let model = ica_score();
        let dw = bs_update(&w, &p, &model).unwrap();
        let a = w.inverse().unwrap().column(0);
        let y = p.split().left_mul(&w);
        let phi = model.evaluate(&y).unwrap();
        let g = grad_w(&a, p.x(), phi.row(0));
        assert!(dw.row_vector(0).conj().sub(&g).norm() < 1e-12 * g.norm().max(1.0));
    }

    #[test]
    fn bs_matches_transcription() {
        let (p, _) = problem(3, 120, 3);
        let mut rng = Rng::new(4);
        let w = random_matrix(3, &mut rng);
        let model = ica_score();
        let dw = bs_update(&w, &p, &model).unwrap();
        let inv = w.inverse().unwrap();
        let x = p.x();
        let n = x.cols();
        for i in 0..3 {
            for j in 0..3 {
                // Delta W[i][j] = conj(A[j][i] - sum_t X[j][t] phi_i(t) / N)
                let mut acc = c(0.0, 0.0);
                for t in 0..n {
                    let mut y = c(0.0, 0.0);
                    for l in 0..3 {
                        y += w[(i, l)] * x[(l, t)];
                    }
                    acc += x[(j, t)] * crate::score::conj_tanh(y);
                }
                let expect = (inv[(j, i)] - acc / n as f64).conj();
                assert!((dw[(i, j)] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn ng_is_bs_times_gram() {
        let (p, _) = problem(5, 200, 5);
        let mut rng = Rng::new(6);
        let model = ica_score();
        for _ in 0..10 {
            let w = random_matrix(5, &mut rng);
            let bs = bs_update(&w, &p, &model).unwrap();
            let ng = ng_update(&w, &p, &model).unwrap();
            let expect = bs.matmul(&w.adjoint().matmul(&w).unwrap()).unwrap();
            assert!(ng.sub(&expect).frobenius_norm() <= 1e-10 * expect.frobenius_norm());
        }
        let id = CMatrix::identity(5);
        let bs = bs_update(&id, &p, &model).unwrap();
        let ng = ng_update(&id, &p, &model).unwrap();
        assert!(ng.sub(&bs).frobenius_norm() < 1e-12);
    }

    #[test]
    fn scng_outputs_have_unit_variance() {
        let (p, _) = problem(4, 300, 7);
        let mut rng = Rng::new(8);
        let w = random_matrix(4, &mut rng);
        let next = scng_update(&w, &p, &ica_score(), 0.02).unwrap();
        for i in 0..4 {
            let wi = next.row_vector(i).conj();
            assert!((wi.dot(&p.cx().mul_vec(&wi)).re - 1.0).abs() < 1e-10);
        }
        let zero = CMatrix::zeros(4, 4);
        assert!(unit_output_rows(&zero, p.cx()).is_err());
    }

    #[test]
    fn ng_stationary_on_independent_sources() {
        // W = I on unit-variance independent sources: off-diagonal step is O(N^-1/2)
        let mut rng = Rng::new(9);
        let n = 20_000;
        let u = CMatrix::from_fn(3, n, |_, _| rng.unit_phase() * rng.gamma(2.0, 1.0 / 6f64.sqrt()));
        let p = IceProblem::new(u).unwrap();
        let dw = ng_update(&CMatrix::identity(3), &p, &ScoreModel::tanh()).unwrap();
        let off: f64 = (0..3)
            .flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| dw[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(off < 6.0 / (n as f64).sqrt(), "off-diagonal NG step {off}");
    }

    #[test]
    fn initial_demixing_structure() {
        let (p, a) = problem(4, 200, 10);
        let a0 = a.column(0);
        let w0 = initial_demixing(&a0, p.cx()).unwrap();
        let w = w0.row_vector(0).conj();
        assert!((w.dot(&a0) - c(1.0, 0.0)).norm() < 1e-10);
        let b = w0.block(1, 0, 3, 4);
        assert!(b.mul_vec(&a0).norm() < 1e-12);
    }

    #[test]
    fn ng_solver_reaches_tolerance_or_limit() {
        let (p, a) = problem(3, 500, 11);
        let w0 = initial_demixing(&a.column(0), p.cx()).unwrap();
        let out = ica_solve(&p, &w0, &ica_score(), &IcaConfig { max_iter: 300, ..IcaConfig::ng() }).unwrap();
        assert_eq!(out.trace.step_norms.len(), out.trace.iterations);
        assert!(out.trace.step_norms.last().unwrap() < &out.trace.step_norms[0]);
        let out = ica_solve(&p, &w0, &ica_score(), &IcaConfig { max_iter: 300, ..IcaConfig::scng() }).unwrap();
        for i in 0..3 {
            let wi = out.w.row_vector(i).conj();
            assert!((wi.dot(&p.cx().mul_vec(&wi)).re - 1.0).abs() < 1e-10);
        }
        let singular = CMatrix::zeros(3, 3);
        assert!(ica_solve(&p, &singular, &ica_score(), &IcaConfig::ng()).is_err());
    }

    #[test]
    fn fica_keeps_unit_scale_and_converges() {
        let (p, a) = problem(4, 2000, 12);
        let w_ini = couple_w_from_a(&a.column(0).add(&CVector::basis(4, 1).scale_real(0.2)), p.cx()).unwrap();
        let out = fica_one_unit(&p, &w_ini, &fica_score(), &FicaConfig::default()).unwrap();
        for w in &out.trace.iterates {
            assert!((w.dot(&p.cx().mul_vec(w)).re - 1.0).abs() < 1e-10);
        }
        assert!(out.trace.converged, "{:?}", out.trace.changes.last());
    }

    #[test]
    fn fica_matches_preconditioned_ogice() {
        let (p, a) = problem(4, 1000, 13);
        let model = fica_score();
        let w_ini = unit_scale(&couple_w_from_a(&a.column(0).add(&CVector::basis(4, 2).scale_real(0.3)), p.cx()).unwrap(), p.cx()).unwrap();
        let fica = fica_one_unit(&p, &w_ini, &model, &FicaConfig { tol: 1e-300, max_iter: 10 }).unwrap();
        let cfg = SolverConfig {
            precondition: Precondition::Whiten,
            adaptive_step: true,
            renormalize: true,
            tol: 1e-300,
            ..SolverConfig::ogice()
        };
        for (i, wf) in fica.trace.iterates.iter().enumerate() {
            let og = ogice_w(&p, &w_ini, &model, &SolverConfig { max_iter: i + 1, ..cfg.clone() }).unwrap();
            let wo = og.params.w();
            let diff = wo.phase_aligned().sub(&wf.phase_aligned()).norm();
            assert!(diff < 1e-8 * wf.norm(), "iteration {i}: {diff}");
        }
    }

    #[test]
    fn fica_rejects_zero_start() {
        let (p, _) = problem(3, 200, 14);
        let err = fica_one_unit(&p, &CVector::zeros(3), &fica_score(), &FicaConfig::default()).unwrap_err();
        assert!(matches!(err.error, IceError::Degenerate(_)));
    }
}
