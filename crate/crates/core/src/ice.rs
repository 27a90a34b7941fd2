//! Single-mixture extraction: contrast, gradients and the OGICE solvers.

use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::linalg::{inv_sqrt, C64, CMatrix, CVector, Cholesky, SplitMatrix};
use crate::mixing::{blocking_matrix, couple_a_from_w, couple_w_from_a_inv, ExtractionParams};
use crate::score::ScoreModel;

/// Which parameter a step updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    A,
    W,
}

/// Preconditioner `D` of the modified update `w <- w + mu D^H D Delta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precondition {
    None,
    /// `D = W_ICE` of the current iterate.
    Demix,
    /// `D = C^{-1/2}`.
    Whiten,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub step_mu: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Criterion refresh period of the switched solvers.
    pub q: usize,
    /// Switching threshold: `B(a) < tau` selects the w-side step.
    pub tau: f64,
    pub precondition: Precondition,
    /// Replace `step_mu` by `nu / (rho - nu)` each iteration (w-side only).
    pub adaptive_step: bool,
    /// Rescale `w` to `w^H C w = 1` after each w-side step.
    pub renormalize: bool,
}

impl SolverConfig {
    pub fn ogice() -> Self {
        Self {
            step_mu: 0.1,
            tol: 1e-3,
            max_iter: 5000,
            q: 10,
            tau: 0.1,
            precondition: Precondition::None,
            adaptive_step: false,
            renormalize: false,
        }
    }

    pub fn ogive() -> Self {
        Self {
            max_iter: 4000,
            ..Self::ogice()
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
        if self.q == 0 {
            return Err(IceError::Config("q must be at least 1".into()));
        }
        if !(self.tau > 0.0) && self.tau != 0.0 {
            return Err(IceError::Config(format!("tau = {} must be non-negative", self.tau)));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::ogice()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub grad_norms: Vec<f64>,
    /// `(iteration, B(a))` at every criterion refresh.
    pub criterion: Vec<(usize, f64)>,
    pub branches: Vec<Branch>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct Extraction {
    pub params: ExtractionParams,
    pub trace: SolverTrace,
}

/// A solver error together with the history up to the failure.
#[derive(Clone, Debug, thiserror::Error)]
#[error("{error} (after {} iterations)", trace.iterations)]
pub struct SolverFailure {
    pub error: IceError,
    pub trace: SolverTrace,
}

pub type SolverResult = std::result::Result<Extraction, SolverFailure>;

/// Observed data with its cached sample covariance.
#[derive(Clone, Debug)]
pub struct IceProblem {
    x: CMatrix,
    xs: SplitMatrix,
    cx: CMatrix,
    cx_inv: CMatrix,
}

impl IceProblem {
    pub fn new(x: CMatrix) -> Result<Self> {
        let (d, n) = (x.rows(), x.cols());
        if d < 2 {
            return Err(IceError::Dimension("need at least two channels".into()));
        }
        if n <= d {
            return Err(IceError::Dimension(format!("N = {n} must exceed d = {d}")));
        }
        if !x.is_finite() {
            return Err(IceError::NonFinite("observations"));
        }
        let cx = crate::linalg::sample_covariance(&x)?;
        let cx_inv = Cholesky::new_guarded(&cx)?.inverse();
        let xs = SplitMatrix::from(&x);
        Ok(Self { x, xs, cx, cx_inv })
    }

    pub fn x(&self) -> &CMatrix {
        &self.x
    }

    pub fn cx(&self) -> &CMatrix {
        &self.cx
    }

    pub fn cx_inv(&self) -> &CMatrix {
        &self.cx_inv
    }

    pub fn dim(&self) -> usize {
        self.x.rows()
    }

    pub fn samples(&self) -> usize {
        self.x.cols()
    }

    /// `s_hat = w^H X` as a 1×N block.
    pub fn extract(&self, w: &CVector) -> CMatrix {
        CMatrix::from_rows(&[self.xs.project(w)]).expect("single row")
    }

    /// `X phi^T / N`.
    pub fn mean_product(&self, phi: &[C64]) -> CVector {
        self.xs.mean_product(phi)
    }

    pub fn split(&self) -> &SplitMatrix {
        &self.xs
    }
}

/// `X phi^T / N`.
pub fn x_phi(x: &CMatrix, phi: &[C64]) -> CVector {
    let n = x.cols() as f64;
    (0..x.rows())
        .map(|i| x.row(i).iter().zip(phi).map(|(a, b)| a * b).sum::<C64>() / n)
        .collect()
}

/// `Delta = a - X phi^T / N` for a normalized score.
pub fn grad_w(a: &CVector, x: &CMatrix, phi: &[C64]) -> CVector {
    a.sub(&x_phi(x, phi))
}

/// `Delta = w - lambda_a C^{-1} X phi^T / N` with `lambda_a = (a^H C^{-1} a)^{-1}`.
pub fn grad_a(a: &CVector, w: &CVector, x: &CMatrix, phi: &[C64], cx_inv: &CMatrix) -> Result<CVector> {
    let q = a.dot(&cx_inv.mul_vec(a)).re;
    if !(q > 0.0) {
        return Err(IceError::Degenerate("a^H C^{-1} a is not positive".into()));
    }
    let lambda_a = 1.0 / q;
    Ok(w.sub(&cx_inv.mul_vec(&x_phi(x, phi)).scale_real(lambda_a)))
}

/// `mean log f(w^H x) - tr(R C_z) + (d - 2) log |gamma|^2`.
pub fn contrast(params: &ExtractionParams, x: &CMatrix, r: &CMatrix, model: &ScoreModel) -> Result<f64> {
    contrast_scaled(params, x, r, model, 1.0)
}

/// [`contrast`] with `log f` multiplied by `log_f_scale`.
pub fn contrast_scaled(
    params: &ExtractionParams,
    x: &CMatrix,
    r: &CMatrix,
    model: &ScoreModel,
    log_f_scale: f64,
) -> Result<f64> {
    let d = params.dim();
    let gamma = params.gamma();
    if gamma.norm() == 0.0 {
        return Err(IceError::Degenerate("gamma = 0".into()));
    }
    if r.rows() != d - 1 || r.cols() != d - 1 {
        return Err(IceError::Dimension(format!("R must be {0}x{0}", d - 1)));
    }
    let s = CMatrix::from_rows(&[x.project(params.w())])?;
    let log_f = model.log_density(&s)?;
    let b = blocking_matrix(params.a());
    let cx = crate::linalg::sample_covariance(x)?;
    let cz = b.matmul(&cx)?.matmul(&b.adjoint())?;
    let quad = r.matmul(&cz)?.trace().re;
    Ok(log_f_scale * log_f - quad + (d as f64 - 2.0) * gamma.norm_sqr().ln())
}

/// Background covariance `B C B^H` of the mixing vector `a`.
pub fn background_covariance(a: &CVector, cx: &CMatrix) -> Result<CMatrix> {
    let b = blocking_matrix(a);
    b.matmul(cx)?.matmul(&b.adjoint())
}

/// Unsimplified w-gradient under the coupling `a = C w / (w^H C w)`, for an
/// arbitrary weighting `R` and the raw model score.
pub fn grad_w_full(w: &CVector, x: &CMatrix, r: &CMatrix, model: &ScoreModel) -> Result<CVector> {
    let d = w.len();
    let cx = crate::linalg::sample_covariance(x)?;
    let a = couple_a_from_w(w, &cx)?;
    let gamma = a[0];
    if gamma.norm() < 1e-12 * a.norm() {
        return Err(IceError::Degenerate("gamma is numerically zero".into()));
    }
    let b = blocking_matrix(&a);
    let bc = b.matmul(&cx)?;
    let cz = bc.matmul(&b.adjoint())?;
    let lw = w.dot(&cx.mul_vec(w)).re;
    let s = CMatrix::from_rows(&[x.project(w)])?;
    let phi = model.evaluate(&s)?;
    let h = CVector::new(w.as_slice()[1..].to_vec());
    let c_e1 = cx.column(0);

    // C E^H R C_z h
    let rczh = r.matmul(&cz)?.mul_vec(&h);
    let mut lifted = CVector::zeros(d);
    lifted.as_mut_slice()[1..].copy_from_slice(rczh.as_slice());
    let c_eh = cx.mul_vec(&lifted);

    // tr(R B C E^H) = tr(R (B C)[:, 1..])
    let rbc = r.matmul(&bc)?;
    let tr_rbce: C64 = (0..d - 1).map(|i| rbc[(i, i + 1)]).sum();
    let tr_rcz = r.matmul(&cz)?.trace();
    let dm2 = d as f64 - 2.0;

    let mut g = x_phi(x, phi.row(0)).scale_real(-1.0);
    g = g.add(&a.scale(tr_rcz * 2.0));
    g = g.sub(&c_eh.sub(&c_e1.scale(tr_rbce)).scale_real(1.0 / lw));
    g = g.sub(&a.scale_real(2.0 * dm2));
    g = g.add(&c_e1.scale(C64::new(dm2 / lw, 0.0) / gamma.conj()));
    Ok(g)
}

/// `w + mu D^H D Delta`.
pub fn preconditioned_step(w: &CVector, delta: &CVector, d: &CMatrix, mu: f64) -> CVector {
    let dd = d.adjoint_mul_vec(&d.mul_vec(delta));
    w.add(&dd.scale_real(mu))
}

/// Proximity-and-dominance criterion `B(a)`.
///
/// Pivots on the first entry of `a` unless it is below 1e-12 in magnitude,
/// in which case the largest-magnitude entry is used.
pub fn switching_criterion(a: &CVector, cx: &CMatrix) -> Result<f64> {
    let pivot = if a[0].norm() >= 1e-12 {
        0
    } else {
        let (idx, best) = a
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.norm().total_cmp(&y.1.norm()))
            .expect("non-empty a");
        if best.norm() < 1e-12 {
            return Err(IceError::Degenerate("mixing vector has no usable pivot".into()));
        }
        idx
    };
    let b = cx.mul_vec(a);
    let lambda_b = b[pivot] / a[pivot];
    if lambda_b.norm() == 0.0 {
        return Err(IceError::Degenerate("C a vanishes at the pivot".into()));
    }
    let proximity = a.scale(C64::new(1.0, 0.0) / a[pivot]).sub(&b.scale(C64::new(1.0, 0.0) / lambda_b)).norm();
    let bn2 = b.norm_sqr();
    let d = cx.rows();
    let rank_one = CMatrix::from_fn(d, d, |i, j| lambda_b * b[i] * b[j].conj() / bn2);
    let dominance = cx.sub(&rank_one).frobenius_norm() / cx.frobenius_norm();
    Ok(proximity * dominance)
}

/// Coupled iterate of the solvers.
#[derive(Clone, Debug)]
pub(crate) struct Pair {
    pub a: CVector,
    pub w: CVector,
}

impl Pair {
    pub fn from_w(problem: &IceProblem, w: CVector) -> Result<Self> {
        let a = couple_a_from_w(&w, problem.cx())?;
        Ok(Self { a, w })
    }

    pub fn from_a(problem: &IceProblem, a: CVector) -> Result<Self> {
        let w = couple_w_from_a_inv(&a, problem.cx_inv())?;
        Ok(Self { a, w })
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.w.is_finite()
    }

    pub fn into_params(self) -> Result<ExtractionParams> {
        ExtractionParams::repaired(self.a, self.w)
    }
}

/// Gradient of the selected branch at a coupled pair.
pub(crate) fn branch_delta(problem: &IceProblem, pair: &Pair, phi: &[C64], branch: Branch) -> Result<CVector> {
    let xp = problem.mean_product(phi);
    match branch {
        Branch::W => Ok(pair.a.sub(&xp)),
        Branch::A => {
            let ci = problem.cx_inv();
            let q = pair.a.dot(&ci.mul_vec(&pair.a)).re;
            if !(q > 0.0) {
                return Err(IceError::Degenerate("a^H C^{-1} a is not positive".into()));
            }
            Ok(pair.w.sub(&ci.mul_vec(&xp).scale_real(1.0 / q)))
        }
    }
}

/// Take one step along `delta` and restore the coupling.
pub(crate) fn branch_step(
    problem: &IceProblem,
    pair: &Pair,
    delta: &CVector,
    branch: Branch,
    cfg: &SolverConfig,
    mu: f64,
) -> Result<Pair> {
    match branch {
        Branch::W => {
            let mut w = match cfg.precondition {
                Precondition::None => pair.w.add(&delta.scale_real(mu)),
                Precondition::Whiten => pair.w.add(&problem.cx_inv().mul_vec(delta).scale_real(mu)),
                Precondition::Demix => {
                    let params = ExtractionParams::repaired(pair.a.clone(), pair.w.clone())?;
                    let m = crate::mixing::assemble(&params)?;
                    preconditioned_step(&pair.w, delta, &m.w_ice, mu)
                }
            };
            if cfg.renormalize {
                let p = w.dot(&problem.cx().mul_vec(&w)).re;
                if !(p > 0.0) {
                    return Err(IceError::Degenerate("zero output power".into()));
                }
                w = w.scale_real(1.0 / p.sqrt());
            }
            Pair::from_w(problem, w)
        }
        Branch::A => Pair::from_a(problem, pair.a.add(&delta.scale_real(mu))),
    }
}

/// `D = C^{-1/2}` used by the whitening preconditioner.
pub fn whitening_preconditioner(cx: &CMatrix) -> Result<CMatrix> {
    inv_sqrt(cx)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Mode {
    W,
    A,
    Switched,
}

/// Separating-vector ascent.
pub fn ogice_w(problem: &IceProblem, w_ini: &CVector, model: &ScoreModel, cfg: &SolverConfig) -> SolverResult {
    let start = Pair::from_w(problem, w_ini.clone()).map_err(|e| fail(e, SolverTrace::default()))?;
    run(problem, start, Mode::W, model, cfg)
}

/// Mixing-vector ascent.
pub fn ogice_a(problem: &IceProblem, a_ini: &CVector, model: &ScoreModel, cfg: &SolverConfig) -> SolverResult {
    let start = Pair::from_a(problem, a_ini.clone()).map_err(|e| fail(e, SolverTrace::default()))?;
    run(problem, start, Mode::A, model, cfg)
}

/// Ascent switching between the a- and w-side by `B(a)`.
pub fn ogice_s(problem: &IceProblem, a_ini: &CVector, model: &ScoreModel, cfg: &SolverConfig) -> SolverResult {
    let start = Pair::from_a(problem, a_ini.clone()).map_err(|e| fail(e, SolverTrace::default()))?;
    run(problem, start, Mode::Switched, model, cfg)
}

fn fail(error: IceError, trace: SolverTrace) -> SolverFailure {
    SolverFailure { error, trace }
}

/// Step length for this iteration: fixed, or `nu / (rho - nu)` from the raw score.
pub(crate) fn step_length(cfg: &SolverConfig, model: &ScoreModel, s: &CMatrix, nu: C64) -> Result<f64> {
    if !cfg.adaptive_step {
        return Ok(cfg.step_mu);
    }
    let rho = model.rho(s)?[0];
    let gap = rho - nu;
    if gap.norm() < 1e-12 {
        return Err(IceError::Breakdown(format!("rho - nu = {gap:.3e}")));
    }
    let mu = nu / gap;
    if mu.im.abs() > 1e-9 * mu.norm().max(1.0) {
        return Err(IceError::Breakdown(format!("adaptive step {mu} is not real")));
    }
    Ok(mu.re)
}

fn run(problem: &IceProblem, mut pair: Pair, mode: Mode, model: &ScoreModel, cfg: &SolverConfig) -> SolverResult {
    let mut trace = SolverTrace::default();
    if let Err(e) = cfg.validate() {
        return Err(fail(e, trace));
    }
    if model.kind().is_vector() && model.pilot().is_some() {
        return Err(fail(IceError::Config("piloted scores need the joint solvers".into()), trace));
    }
    let mut kappa = f64::INFINITY;
    for it in 0..cfg.max_iter {
        if mode == Mode::Switched && it % cfg.q == 0 {
            kappa = match switching_criterion(&pair.a, problem.cx()) {
                Ok(k) => k,
                Err(e) => return Err(fail(e, trace)),
            };
            trace.criterion.push((it, kappa));
        }
        let branch = match mode {
            Mode::W => Branch::W,
            Mode::A => Branch::A,
            Mode::Switched => {
                if kappa < cfg.tau {
                    Branch::W
                } else {
                    Branch::A
                }
            }
        };
        let s = problem.extract(&pair.w);
        let step = (|| -> Result<Option<Pair>> {
            let eval = model.evaluate_normalized(&s)?;
            let delta = branch_delta(problem, &pair, eval.phi.row(0), branch)?;
            let norm = delta.norm();
            trace.grad_norms.push(norm);
            trace.branches.push(branch);
            trace.iterations = it + 1;
            if !norm.is_finite() {
                return Err(IceError::NonFinite("gradient"));
            }
            if norm < cfg.tol {
                return Ok(None);
            }
            let mu = step_length(cfg, model, &s, eval.nu[0])?;
            let next = branch_step(problem, &pair, &delta, branch, cfg, mu)?;
            if !next.is_finite() {
                return Err(IceError::NonFinite("iterate"));
            }
            Ok(Some(next))
        })();
        match step {
            Ok(Some(next)) => pair = next,
            Ok(None) => {
                trace.converged = true;
                break;
            }
            Err(e) => return Err(fail(e, trace)),
        }
    }
    match pair.into_params() {
        Ok(params) => Ok(Extraction { params, trace }),
        Err(e) => Err(fail(e, trace)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sample_covariance;
    use crate::mixing::couple_w_from_a;
    use crate::rng::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_vec(d: usize, rng: &mut Rng) -> CVector {
        (0..d).map(|_| rng.complex_normal()).collect()
    }

    fn laplace_mixture(d: usize, n: usize, rng: &mut Rng) -> (CMatrix, CMatrix) {
        let a = CMatrix::from_fn(d, d, |_, _| rng.complex_normal());
        let u = CMatrix::from_fn(d, n, |_, _| {
            let r = rng.gamma(2.0, 1.0 / 6f64.sqrt());
            rng.unit_phase() * r
        });
        (a.matmul(&u).unwrap(), a)
    }

    #[test]
    fn grad_w_zero_on_noiseless_rank_one() {
        let mut rng = Rng::new(1);
        let a = random_vec(3, &mut rng);
        let s = random_vec(50, &mut rng);
        let x = CMatrix::from_fn(3, 50, |i, j| a[i] * s[j]);
        // phi = s_hat normalized, with w^H a = 1 so s_hat = s
        let w = a.scale_real(1.0 / a.norm_sqr());
        let s_hat = x.project(&w);
        let (phi_n, _) = crate::score::normalize(s_hat.as_slice(), s_hat.as_slice()).unwrap();
        let delta = grad_w(&a, &x, phi_n.as_slice());
        assert!(delta.norm() < 1e-12 * a.norm());
    }

    #[test]
    fn grad_a_matches_loop_oracle() {
        let mut rng = Rng::new(2);
        let (x, _) = laplace_mixture(4, 100, &mut rng);
        let cx = sample_covariance(&x).unwrap();
        let ci = cx.inverse().unwrap();
        let a = random_vec(4, &mut rng);
        let w = couple_w_from_a(&a, &cx).unwrap();
        let phi: Vec<C64> = (0..100).map(|_| rng.complex_normal()).collect();
        let got = grad_a(&a, &w, &x, &phi, &ci).unwrap();
        let mut lam = c(0.0, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                lam += a[i].conj() * ci[(i, j)] * a[j];
            }
        }
        let lam = 1.0 / lam.re;
        for i in 0..4 {
            let mut acc = c(0.0, 0.0);
            for j in 0..4 {
                for n in 0..100 {
                    acc += ci[(i, j)] * x[(j, n)] * phi[n];
                }
            }
            let expect = w[i] - acc * (lam / 100.0);
            assert!((got[i] - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn full_gradient_reduces_to_simplified() {
        let mut rng = Rng::new(3);
        let (x, _) = laplace_mixture(5, 200, &mut rng);
        let cx = sample_covariance(&x).unwrap();
        let model = ScoreModel::rational();
        for _ in 0..10 {
            let w = random_vec(5, &mut rng);
            let a = couple_a_from_w(&w, &cx).unwrap();
            let r = background_covariance(&a, &cx).unwrap().inverse().unwrap();
            let phi = model.evaluate(&CMatrix::from_rows(&[x.project(&w)]).unwrap()).unwrap();
            let simple = grad_w(&a, &x, phi.row(0));
            let full = grad_w_full(&w, &x, &r, &model).unwrap();
            assert!(full.sub(&simple).norm() <= 1e-9 * simple.norm().max(1.0));
        }
    }

    #[test]
    fn full_gradient_with_zero_weight_d2() {
        let mut rng = Rng::new(4);
        let (x, _) = laplace_mixture(2, 100, &mut rng);
        let model = ScoreModel::rational();
        let w = random_vec(2, &mut rng);
        let full = grad_w_full(&w, &x, &CMatrix::zeros(1, 1), &model).unwrap();
        let phi = model.evaluate(&CMatrix::from_rows(&[x.project(&w)]).unwrap()).unwrap();
        let expect = x_phi(&x, phi.row(0)).scale_real(-1.0);
        // with R = 0 and d = 2 only the score term survives
        assert!(full.sub(&expect).norm() < 1e-12);
    }

    #[test]
    fn contrast_d2_zero_weight_is_mean_log_density() {
        let mut rng = Rng::new(5);
        let (x, _) = laplace_mixture(2, 100, &mut rng);
        let a = random_vec(2, &mut rng);
        let w = random_vec(2, &mut rng);
        let p = ExtractionParams::repaired(a, w).unwrap();
        let model = ScoreModel::rational();
        let s = CMatrix::from_rows(&[x.project(p.w())]).unwrap();
        let got = contrast(&p, &x, &CMatrix::zeros(1, 1), &model).unwrap();
        assert!((got - model.log_density(&s).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn criterion_examples() {
        let a = CVector::new(vec![c(1.0, 0.5), c(-0.3, 2.0), c(0.7, 0.0)]);
        let rank_one = CMatrix::from_fn(3, 3, |i, j| a[i] * a[j].conj());
        assert!(switching_criterion(&a, &rank_one).unwrap() < 1e-12);
        let ones = CVector::from_reals(&[1.0, 1.0]);
        assert_eq!(switching_criterion(&ones, &CMatrix::identity(2)).unwrap(), 0.0);
    }

    #[test]
    fn criterion_matches_transcription() {
        let mut rng = Rng::new(6);
        for _ in 0..20 {
            let m = CMatrix::from_fn(4, 4, |_, _| rng.complex_normal());
            let cx = m.matmul(&m.adjoint()).unwrap();
            let a = random_vec(4, &mut rng);
            let b = cx.mul_vec(&a);
            let lb = b[0] / a[0];
            let mut first = 0.0;
            for i in 0..4 {
                first += (a[i] / a[0] - b[i] / lb).norm_sqr();
            }
            let bn: f64 = (0..4).map(|i| b[i].norm_sqr()).sum();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    num += (cx[(i, j)] - lb * b[i] * b[j].conj() / bn).norm_sqr();
                    den += cx[(i, j)].norm_sqr();
                }
            }
            let expect = first.sqrt() * (num / den).sqrt();
            assert!((switching_criterion(&a, &cx).unwrap() - expect).abs() < 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn criterion_repivots() {
        let a = CVector::new(vec![c(0.0, 0.0), c(1.0, 0.0), c(0.5, 0.0)]);
        let v = switching_criterion(&a, &CMatrix::identity(3)).unwrap();
        assert!(v.is_finite());
        assert!(switching_criterion(&CVector::zeros(3), &CMatrix::identity(3)).is_err());
    }

    #[test]
    fn preconditioner_identities() {
        let mut rng = Rng::new(7);
        let (x, _) = laplace_mixture(4, 300, &mut rng);
        let cx = sample_covariance(&x).unwrap();
        let d = whitening_preconditioner(&cx).unwrap();
        let dd = d.adjoint().matmul(&d).unwrap();
        assert!(dd.sub(&cx.inverse().unwrap()).frobenius_norm() <= 1e-9);
        let w = random_vec(4, &mut rng);
        let delta = random_vec(4, &mut rng);
        assert_eq!(preconditioned_step(&w, &delta, &CMatrix::identity(4), 0.3), w.add(&delta.scale_real(0.3)));
    }

    #[test]
    fn demixing_preconditioner_two_paths() {
        let mut rng = Rng::new(8);
        let (x, _) = laplace_mixture(4, 300, &mut rng);
        let cx = sample_covariance(&x).unwrap();
        let model = ScoreModel::tanh();
        let w = random_vec(4, &mut rng);
        let a = couple_a_from_w(&w, &cx).unwrap();
        let params = ExtractionParams::repaired(a.clone(), w.clone()).unwrap();
        let dm = crate::mixing::assemble(&params).unwrap().w_ice;
        let mu = 0.2;
        // x-domain modified step
        let s = CMatrix::from_rows(&[x.project(&w)]).unwrap();
        let phi = model.evaluate_normalized(&s).unwrap().phi;
        let wx = preconditioned_step(&w, &grad_w(&a, &x, phi.row(0)), &dm, mu);
        // u-domain plain step on pre-separated data
        let u = dm.matmul(&x).unwrap();
        let cu = sample_covariance(&u).unwrap();
        let wu = dm.adjoint().inverse().unwrap().mul_vec(&w);
        let au = couple_a_from_w(&wu, &cu).unwrap();
        let su = CMatrix::from_rows(&[u.project(&wu)]).unwrap();
        let phiu = model.evaluate_normalized(&su).unwrap().phi;
        let wu_new = wu.add(&grad_w(&au, &u, phiu.row(0)).scale_real(mu));
        let s1 = x.project(&wx);
        let s2 = u.project(&wu_new);
        assert!(s1.sub(&s2).norm() <= 1e-9 * s1.norm());
    }

    fn easy_problem(seed: u64) -> (IceProblem, CVector) {
        let mut rng = Rng::new(seed);
        let (x, a) = laplace_mixture(3, 2000, &mut rng);
        (IceProblem::new(x).unwrap(), a.column(0))
    }

    #[test]
    fn already_converged_start_stops_at_first_iteration() {
        let (p, a) = easy_problem(9);
        let cfg = SolverConfig {
            tol: 1e6,
            ..SolverConfig::ogice()
        };
        let model = ScoreModel::tanh();
        let w0 = couple_w_from_a(&a, p.cx()).unwrap();
        for out in [
            ogice_w(&p, &w0, &model, &cfg).unwrap(),
            ogice_a(&p, &a, &model, &cfg).unwrap(),
            ogice_s(&p, &a, &model, &cfg).unwrap(),
        ] {
            assert_eq!(out.trace.iterations, 1);
            assert!(out.trace.converged);
        }
        let out = ogice_w(&p, &w0, &model, &cfg).unwrap();
        let back = out.params.w();
        assert!(back.sub(&w0).norm() < 1e-12 * w0.norm());
    }

    #[test]
    fn coupling_holds_along_trajectory() {
        let (p, a) = easy_problem(10);
        let model = ScoreModel::tanh();
        let cfg = SolverConfig {
            max_iter: 50,
            ..SolverConfig::ogice()
        };
        let mut rng = Rng::new(11);
        let a_ini = a.add(&random_vec(3, &mut rng).scale_real(0.1));
        for out in [ogice_a(&p, &a_ini, &model, &cfg).unwrap(), ogice_s(&p, &a_ini, &model, &cfg).unwrap()] {
            let pr = &out.params;
            assert!((pr.w().dot(pr.a()) - c(1.0, 0.0)).norm() < 1e-9);
            let s = p.x().project(pr.w());
            let z = crate::mixing::background_signals(pr.a(), p.x());
            let og = z.mul_vec(&s.conj()).scale_real(1.0 / p.samples() as f64);
            assert!(og.norm() < 1e-8 * p.cx().frobenius_norm());
        }
    }

    #[test]
    fn branch_forcing_by_threshold() {
        let (p, a) = easy_problem(12);
        let model = ScoreModel::tanh();
        let mut rng = Rng::new(13);
        let a_ini = a.add(&random_vec(3, &mut rng).scale_real(0.3));
        let base = SolverConfig {
            max_iter: 40,
            ..SolverConfig::ogice()
        };
        let s0 = ogice_s(&p, &a_ini, &model, &SolverConfig { tau: 0.0, ..base.clone() }).unwrap();
        let sa = ogice_a(&p, &a_ini, &model, &base).unwrap();
        assert_eq!(s0.trace.grad_norms, sa.trace.grad_norms);
        let sinf = ogice_s(&p, &a_ini, &model, &SolverConfig { tau: f64::INFINITY, ..base.clone() }).unwrap();
        let w_ini = couple_w_from_a(&a_ini, p.cx()).unwrap();
        let sw = ogice_w(&p, &w_ini, &model, &base).unwrap();
        for (x, y) in sinf.trace.grad_norms.iter().zip(&sw.trace.grad_norms) {
            assert!((x - y).abs() <= 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn max_iter_returns_unconverged() {
        let (p, a) = easy_problem(14);
        let cfg = SolverConfig {
            max_iter: 3,
            tol: 1e-300,
            ..SolverConfig::ogice()
        };
        let out = ogice_a(&p, &a, &ScoreModel::tanh(), &cfg).unwrap();
        assert!(!out.trace.converged);
        assert_eq!(out.trace.iterations, 3);
        assert_eq!(out.trace.grad_norms.len(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::ogice().validate().is_ok());
        for bad in [
            SolverConfig { step_mu: 0.0, ..SolverConfig::ogice() },
            SolverConfig { tol: -1.0, ..SolverConfig::ogice() },
            SolverConfig { max_iter: 0, ..SolverConfig::ogice() },
            SolverConfig { q: 0, ..SolverConfig::ogice() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn degenerate_score_carries_trace() {
        let (p, _) = easy_problem(15);
        let err = ogice_w(&p, &CVector::zeros(3), &ScoreModel::tanh(), &SolverConfig::ogice()).unwrap_err();
        assert!(matches!(err.error, IceError::Degenerate(_)));
    }
}
