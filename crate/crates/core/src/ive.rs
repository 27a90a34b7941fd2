//! Joint extraction of a dependent vector component from K mixtures.

use std::sync::Arc;

use crate::error::{IceError, Result};
use crate::ice::{
    branch_delta, branch_step, grad_a, step_length, switching_criterion, Branch, IceProblem, Pair, SolverConfig,
    SolverTrace,
};
use crate::linalg::{hermitian_inverse, C64, CMatrix, CVector};
use crate::mixing::{blocking_matrix, ExtractionParams};
use crate::score::ScoreModel;

/// K mixtures of equal dimension and length.
#[derive(Clone, Debug)]
pub struct JointProblem {
    blocks: Vec<IceProblem>,
    cross_cov: Option<CMatrix>,
    pilot: Option<Arc<CVector>>,
}

impl JointProblem {
    pub fn new(x_blocks: Vec<CMatrix>) -> Result<Self> {
        let first = x_blocks
            .first()
            .ok_or_else(|| IceError::Dimension("need at least one mixture".into()))?;
        let (d, n) = (first.rows(), first.cols());
        if x_blocks.iter().any(|x| x.rows() != d || x.cols() != n) {
            return Err(IceError::Dimension("all mixtures must share d and N".into()));
        }
        let blocks = x_blocks.into_iter().map(IceProblem::new).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            cross_cov: None,
            pilot: None,
        })
    }

    pub fn from_problems(blocks: Vec<IceProblem>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| IceError::Dimension("need at least one mixture".into()))?;
        let (d, n) = (first.dim(), first.samples());
        if blocks.iter().any(|b| b.dim() != d || b.samples() != n) {
            return Err(IceError::Dimension("all mixtures must share d and N".into()));
        }
        Ok(Self {
            blocks,
            cross_cov: None,
            pilot: None,
        })
    }

    /// Attach the full `Kd x Kd` sample covariance of the stacked mixtures.
    pub fn with_cross_covariance(mut self) -> Result<Self> {
        let refs: Vec<&CMatrix> = self.blocks.iter().map(|b| b.x()).collect();
        let stacked = CMatrix::vstack(&refs)?;
        self.cross_cov = Some(crate::linalg::sample_covariance(&stacked)?);
        Ok(self)
    }

    /// Attach a given cross covariance; its diagonal blocks must match the per-mixture ones.
    pub fn with_given_cross_covariance(mut self, c: CMatrix) -> Result<Self> {
        let (d, k) = (self.dim(), self.len());
        if c.rows() != k * d || c.cols() != k * d {
            return Err(IceError::Dimension(format!("cross covariance must be {0}x{0}", k * d)));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let diag = c.block(i * d, i * d, d, d);
            if diag.sub(b.cx()).frobenius_norm() > 1e-10 * b.cx().frobenius_norm().max(1.0) {
                return Err(IceError::Dimension(format!("diagonal block {i} differs from the mixture covariance")));
            }
        }
        self.cross_cov = Some(c);
        Ok(self)
    }

    pub fn with_pilot(mut self, pilot: CVector) -> Result<Self> {
        if pilot.len() != self.samples() {
            return Err(IceError::Dimension(format!(
                "pilot has {} samples, mixtures have {}",
                pilot.len(),
                self.samples()
            )));
        }
        self.pilot = Some(Arc::new(pilot));
        Ok(self)
    }

    pub fn blocks(&self) -> &[IceProblem] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &IceProblem {
        &self.blocks[k]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].dim()
    }

    pub fn samples(&self) -> usize {
        self.blocks[0].samples()
    }

    pub fn cross_cov(&self) -> Option<&CMatrix> {
        self.cross_cov.as_ref()
    }

    pub fn pilot(&self) -> Option<&Arc<CVector>> {
        self.pilot.as_ref()
    }

    /// The piloted vector score if a pilot is attached, else the plain vector score.
    pub fn vector_model(&self) -> ScoreModel {
        match &self.pilot {
            Some(p) => ScoreModel::piloted(p.clone()),
            None => ScoreModel::vector(),
        }
    }

    /// `S_hat` with rows `(w^k)^H X^k`.
    pub fn extract(&self, ws: &[CVector]) -> Result<CMatrix> {
        if ws.len() != self.len() {
            return Err(IceError::Dimension(format!("{} separating vectors for {} mixtures", ws.len(), self.len())));
        }
        let n = self.samples();
        let mut s = CMatrix::zeros(ws.len(), n);
        for (k, (b, w)) in self.blocks.iter().zip(ws).enumerate() {
            if w.len() != b.dim() {
                return Err(IceError::Dimension(format!("w^{k} has length {}", w.len())));
            }
            s.set_row(k, b.split().project(w).as_slice());
        }
        Ok(s)
    }
}

/// Per-mixture parameters `(a^k, w^k)`.
#[derive(Clone, Debug)]
pub struct JointParams {
    pub params: Vec<ExtractionParams>,
}

impl JointParams {
    pub fn ws(&self) -> Vec<CVector> {
        self.params.iter().map(|p| p.w().clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JointTrace {
    /// Gradient norms, branches and criterion values of each mixture.
    pub per_mixture: Vec<SolverTrace>,
    /// `max_k ||Delta^k||` per iteration.
    pub max_grad_norms: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct JointExtraction {
    pub params: JointParams,
    pub trace: JointTrace,
}

#[derive(Clone, Debug, thiserror::Error)]
#[error("{error} (after {} iterations)", trace.iterations)]
pub struct JointFailure {
    pub error: IceError,
    pub trace: JointTrace,
}

pub type JointResult = std::result::Result<JointExtraction, JointFailure>;

fn check_k(k: usize, params: &JointParams, problem: &JointProblem, phi: &CMatrix) -> Result<()> {
    let big_k = problem.len();
    if params.len() != big_k || phi.rows() != big_k || phi.cols() != problem.samples() {
        return Err(IceError::Dimension("parameters, scores and mixtures disagree on K or N".into()));
    }
    if k >= big_k {
        return Err(IceError::Dimension(format!("mixture index {k} out of range")));
    }
    Ok(())
}

/// `theta^{lk} = Z_hat^l (s_hat^k)^H / N`.
pub fn theta(z_hat_l: &CMatrix, s_hat_k: &[C64]) -> Result<CVector> {
    if z_hat_l.cols() != s_hat_k.len() {
        return Err(IceError::Dimension("Z and s differ in length".into()));
    }
    let n = s_hat_k.len() as f64;
    Ok((0..z_hat_l.rows())
        .map(|i| z_hat_l.row(i).iter().zip(s_hat_k).map(|(z, s)| z * s.conj()).sum::<C64>() / n)
        .collect())
}

/// `a^k - X^k (phi^k)^T / N`.
pub fn grad_ive_w(k: usize, params: &JointParams, problem: &JointProblem, phi: &CMatrix) -> Result<CVector> {
    check_k(k, params, problem, phi)?;
    Ok(params.params[k].a().sub(&problem.block(k).mean_product(phi.row(k))))
}

/// `w^k - lambda_a^k (C^{kk})^{-1} X^k (phi^k)^T / N`.
pub fn grad_ive_a(k: usize, params: &JointParams, problem: &JointProblem, phi: &CMatrix) -> Result<CVector> {
    check_k(k, params, problem, phi)?;
    let b = problem.block(k);
    let p = &params.params[k];
    grad_a(p.a(), p.w(), b.x(), phi.row(k), b.cx_inv())
}

/// Sample covariance of the stacked backgrounds `[B^1 X^1; ...; B^K X^K]`.
pub fn joint_background_covariance(params: &JointParams, problem: &JointProblem) -> Result<CMatrix> {
    let zs = backgrounds(params, problem)?;
    let refs: Vec<&CMatrix> = zs.iter().collect();
    crate::linalg::sample_covariance(&CMatrix::vstack(&refs)?)
}

fn backgrounds(params: &JointParams, problem: &JointProblem) -> Result<Vec<CMatrix>> {
    params
        .params
        .iter()
        .zip(problem.blocks())
        .map(|(p, b)| blocking_matrix(p.a()).matmul(b.x()))
        .collect()
}

/// Third term of the full gradient for an explicit weighting `R` (`K(d-1)` square).
pub fn ive_correction(
    k: usize,
    params: &JointParams,
    problem: &JointProblem,
    r: &CMatrix,
) -> Result<CVector> {
    let big_k = problem.len();
    let m = problem.dim() - 1;
    if r.rows() != big_k * m || r.cols() != big_k * m {
        return Err(IceError::Dimension(format!("R must be {0}x{0}", big_k * m)));
    }
    let zs = backgrounds(params, problem)?;
    let s_k = problem.block(k).split().project(params.params[k].w());
    let mut eps = CVector::zeros(m);
    for (l, z) in zs.iter().enumerate() {
        let th = theta(z, s_k.as_slice())?;
        let part = r.block(k * m, l * m, m, m).mul_vec(&th);
        eps = eps.add(&part);
    }
    let p = &params.params[k];
    let cx = problem.block(k).cx();
    let lw = p.w().dot(&cx.mul_vec(p.w())).re;
    if !(lw > 0.0) {
        return Err(IceError::Degenerate("zero output power".into()));
    }
    let b = blocking_matrix(p.a());
    Ok(cx.mul_vec(&b.adjoint_mul_vec(&eps)).scale_real(1.0 / lw))
}

/// Full w-gradient with `R` the inverse of the joint background covariance.
///
/// Needs the cross covariance attached to the problem.
pub fn grad_ive_w_full(k: usize, params: &JointParams, problem: &JointProblem, phi: &CMatrix) -> Result<CVector> {
    check_k(k, params, problem, phi)?;
    let cxx = problem
        .cross_cov()
        .ok_or_else(|| IceError::Config("full IVE gradient needs the cross covariance".into()))?;
    let m = problem.dim() - 1;
    let d = problem.dim();
    let big_k = problem.len();
    // C_z = bdiag(B) C_x bdiag(B)^H
    let mut bb = CMatrix::zeros(big_k * m, big_k * d);
    for (i, p) in params.params.iter().enumerate() {
        bb.set_block(i * m, i * d, &blocking_matrix(p.a()));
    }
    let cz = bb.matmul(cxx)?.matmul(&bb.adjoint())?;
    let r = hermitian_inverse(&cz)?;
    let simple = grad_ive_w(k, params, problem, phi)?;
    Ok(simple.add(&ive_correction(k, params, problem, &r)?))
}

/// Joint contrast per sample: `mean log f(S) - tr(R C_z) + sum_k (d-2) log|gamma^k|^2`,
/// with `log f` multiplied by `log_f_scale`.
pub fn joint_contrast(
    params: &JointParams,
    problem: &JointProblem,
    r: &CMatrix,
    model: &ScoreModel,
    log_f_scale: f64,
) -> Result<f64> {
    let s = problem.extract(&params.ws())?;
    let log_f = model.log_density(&s)?;
    let cz = joint_background_covariance(params, problem)?;
    if r.rows() != cz.rows() || r.cols() != cz.cols() {
        return Err(IceError::Dimension(format!("R must be {0}x{0}", cz.rows())));
    }
    let quad = r.matmul(&cz)?.trace().re;
    let dm2 = problem.dim() as f64 - 2.0;
    let mut logdet = 0.0;
    for p in &params.params {
        let g = p.gamma().norm_sqr();
        if g == 0.0 {
            return Err(IceError::Degenerate("gamma = 0".into()));
        }
        logdet += dm2 * g.ln();
    }
    Ok(log_f_scale * log_f - quad + logdet)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Mode {
    W,
    A,
    Switched,
}

/// Joint separating-vector ascent.
pub fn ogive_w(problem: &JointProblem, w_inis: &[CVector], model: &ScoreModel, cfg: &SolverConfig) -> JointResult {
    let pairs = start(problem, w_inis, Pair::from_w)?;
    run(problem, pairs, Mode::W, model, cfg)
}

/// Joint mixing-vector ascent.
pub fn ogive_a(problem: &JointProblem, a_inis: &[CVector], model: &ScoreModel, cfg: &SolverConfig) -> JointResult {
    let pairs = start(problem, a_inis, Pair::from_a)?;
    run(problem, pairs, Mode::A, model, cfg)
}

/// Joint ascent with a per-mixture branch choice.
pub fn ogive_s(problem: &JointProblem, a_inis: &[CVector], model: &ScoreModel, cfg: &SolverConfig) -> JointResult {
    let pairs = start(problem, a_inis, Pair::from_a)?;
    run(problem, pairs, Mode::Switched, model, cfg)
}

fn empty_trace(k: usize) -> JointTrace {
    JointTrace {
        per_mixture: vec![SolverTrace::default(); k],
        ..JointTrace::default()
    }
}

fn start(
    problem: &JointProblem,
    inis: &[CVector],
    couple: fn(&IceProblem, CVector) -> Result<Pair>,
) -> std::result::Result<Vec<Pair>, JointFailure> {
    let fail = |error| JointFailure {
        error,
        trace: empty_trace(problem.len()),
    };
    if inis.len() != problem.len() {
        return Err(fail(IceError::Dimension(format!(
            "{} initial vectors for {} mixtures",
            inis.len(),
            problem.len()
        ))));
    }
    problem
        .blocks()
        .iter()
        .zip(inis)
        .map(|(b, v)| {
            if v.len() != b.dim() {
                return Err(IceError::Dimension(format!("initial vector has length {}", v.len())));
            }
            couple(b, v.clone())
        })
        .collect::<Result<Vec<_>>>()
        .map_err(fail)
}

fn run(problem: &JointProblem, mut pairs: Vec<Pair>, mode: Mode, model: &ScoreModel, cfg: &SolverConfig) -> JointResult {
    let big_k = problem.len();
    let mut trace = empty_trace(big_k);
    let fail = |error, trace| JointFailure { error, trace };
    if let Err(e) = cfg.validate() {
        return Err(fail(e, trace));
    }
    let mut kappa = vec![f64::INFINITY; big_k];
    let mut branches = vec![Branch::W; big_k];
    let mut deltas = Vec::with_capacity(big_k);
    for it in 0..cfg.max_iter {
        if mode == Mode::Switched && it % cfg.q == 0 {
            for k in 0..big_k {
                match switching_criterion(&pairs[k].a, problem.block(k).cx()) {
                    Ok(v) => kappa[k] = v,
                    Err(e) => return Err(fail(e, trace)),
                }
                trace.per_mixture[k].criterion.push((it, kappa[k]));
            }
        }
        for k in 0..big_k {
            branches[k] = match mode {
                Mode::W => Branch::W,
                Mode::A => Branch::A,
                Mode::Switched if kappa[k] < cfg.tau => Branch::W,
                Mode::Switched => Branch::A,
            };
        }
        // every score sees the outputs extracted before any update
        let step = (|| -> Result<Option<Vec<Pair>>> {
            let ws: Vec<CVector> = pairs.iter().map(|p| p.w.clone()).collect();
            let s = problem.extract(&ws)?;
            let eval = model.evaluate_normalized(&s)?;
            deltas.clear();
            let mut worst = 0.0f64;
            for k in 0..big_k {
                let delta = branch_delta(problem.block(k), &pairs[k], eval.phi.row(k), branches[k])?;
                let norm = delta.norm();
                let t = &mut trace.per_mixture[k];
                t.grad_norms.push(norm);
                t.branches.push(branches[k]);
                t.iterations = it + 1;
                if !norm.is_finite() {
                    return Err(IceError::NonFinite("gradient"));
                }
                worst = worst.max(norm);
                deltas.push(delta);
            }
            trace.max_grad_norms.push(worst);
            trace.iterations = it + 1;
            if worst < cfg.tol {
                return Ok(None);
            }
            let mut next = Vec::with_capacity(big_k);
            for k in 0..big_k {
                let row = CMatrix::from_rows(&[s.row_vector(k)])?;
                let mu = step_length(cfg, model, &row, eval.nu[k])?;
                let p = branch_step(problem.block(k), &pairs[k], &deltas[k], branches[k], cfg, mu)?;
                if !p.is_finite() {
                    return Err(IceError::NonFinite("iterate"));
                }
                next.push(p);
            }
            Ok(Some(next))
        })();
        match step {
            Ok(Some(next)) => pairs = next,
            Ok(None) => {
                trace.converged = true;
                break;
            }
            Err(e) => return Err(fail(e, trace)),
        }
    }
    for t in &mut trace.per_mixture {
        t.converged = trace.converged;
    }
    match pairs.into_iter().map(Pair::into_params).collect::<Result<Vec<_>>>() {
        Ok(params) => Ok(JointExtraction {
            params: JointParams { params },
            trace,
        }),
        Err(e) => Err(fail(e, trace)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ice::{ogice_a, ogice_s, ogice_w};
    use crate::mixing::{couple_a_from_w, couple_w_from_a};
    use crate::rng::Rng;
    use crate::simbench::{build_trial, TrialConfig};

    fn random_vec(d: usize, rng: &mut Rng) -> CVector {
        (0..d).map(|_| rng.complex_normal()).collect()
    }

    fn small_trial(k: usize, n: usize, seed: u64) -> (JointProblem, Vec<CVector>) {
        let cfg = TrialConfig {
            d: 4,
            k,
            n,
            epsilon_sq: 0.1,
            seed,
            ..TrialConfig::default()
        };
        let mut rng = Rng::new(seed);
        let t = build_trial(&cfg, &mut rng).unwrap();
        let a_inis = t
            .truth
            .iter()
            .map(|tr| crate::simbench::perturb_init(&tr.a(), cfg.epsilon_sq, &mut rng).unwrap())
            .collect();
        (JointProblem::new(t.x).unwrap(), a_inis)
    }

    fn coupled_params(problem: &JointProblem, rng: &mut Rng) -> JointParams {
        let params = problem
            .blocks()
            .iter()
            .map(|b| {
                let w = random_vec(b.dim(), rng);
                let a = couple_a_from_w(&w, b.cx()).unwrap();
                ExtractionParams::repaired(a, w).unwrap()
            })
            .collect();
        JointParams { params }
    }

    #[test]
    fn theta_vanishes_within_a_mixture_and_matches_alternate_form() {
        let (problem, _) = small_trial(3, 300, 5);
        let mut rng = Rng::new(6);
        let params = coupled_params(&problem, &mut rng);
        let zs = backgrounds(&params, &problem).unwrap();
        let cxx = problem.clone().with_cross_covariance().unwrap();
        let cxx = cxx.cross_cov().unwrap();
        let d = problem.dim();
        for k in 0..3 {
            let s_k = problem.block(k).split().project(params.params[k].w());
            for l in 0..3 {
                let th = theta(&zs[l], s_k.as_slice()).unwrap();
                let alt = blocking_matrix(params.params[l].a())
                    .matmul(&cxx.block(l * d, k * d, d, d))
                    .unwrap()
                    .mul_vec(params.params[k].w());
                assert!(th.sub(&alt).norm() <= 1e-10 * alt.norm().max(1.0));
                if l == k {
                    assert!(th.norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn theta_of_replicated_rows() {
        let mut rng = Rng::new(2);
        let s = random_vec(40, &mut rng);
        let z = CMatrix::from_rows(&[s.clone(), s.clone()]).unwrap();
        let th = theta(&z, s.as_slice()).unwrap();
        let p = s.norm_sqr() / 40.0;
        for v in th.iter() {
            assert!((v - C64::new(p, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn full_gradient_is_simplified_plus_correction() {
        let (problem, _) = small_trial(2, 200, 8);
        let problem = problem.with_cross_covariance().unwrap();
        let mut rng = Rng::new(9);
        let params = coupled_params(&problem, &mut rng);
        let s = problem.extract(&params.ws()).unwrap();
        let phi = ScoreModel::laplace_vector().evaluate(&s).unwrap();
        let cz = joint_background_covariance(&params, &problem).unwrap();
        let r = hermitian_inverse(&cz).unwrap();
        for k in 0..2 {
            let full = grad_ive_w_full(k, &params, &problem, &phi).unwrap();
            let parts = grad_ive_w(k, &params, &problem, &phi)
                .unwrap()
                .add(&ive_correction(k, &params, &problem, &r).unwrap());
            assert!(full.sub(&parts).norm() <= 1e-10 * full.norm());
        }
    }

    #[test]
    fn block_diagonal_weight_removes_correction() {
        let (problem, _) = small_trial(3, 200, 10);
        let mut rng = Rng::new(11);
        let params = coupled_params(&problem, &mut rng);
        let m = problem.dim() - 1;
        let cz = joint_background_covariance(&params, &problem).unwrap();
        let mut r = CMatrix::zeros(3 * m, 3 * m);
        for k in 0..3 {
            r.set_block(k * m, k * m, &hermitian_inverse(&cz.block(k * m, k * m, m, m)).unwrap());
        }
        for k in 0..3 {
            assert!(ive_correction(k, &params, &problem, &r).unwrap().norm() < 1e-10);
        }
    }

    #[test]
    fn single_mixture_full_gradient_is_simplified() {
        let (problem, _) = small_trial(1, 200, 12);
        let problem = problem.with_cross_covariance().unwrap();
        let mut rng = Rng::new(13);
        let params = coupled_params(&problem, &mut rng);
        let s = problem.extract(&params.ws()).unwrap();
        let phi = ScoreModel::vector().evaluate(&s).unwrap();
        let full = grad_ive_w_full(0, &params, &problem, &phi).unwrap();
        let simple = grad_ive_w(0, &params, &problem, &phi).unwrap();
        assert!(full.sub(&simple).norm() <= 1e-10 * simple.norm());
    }

    #[test]
    fn gradients_match_loop_oracles() {
        let (problem, _) = small_trial(2, 150, 14);
        let mut rng = Rng::new(15);
        let params = coupled_params(&problem, &mut rng);
        let s = problem.extract(&params.ws()).unwrap();
        let phi = ScoreModel::vector().evaluate_normalized(&s).unwrap().phi;
        for k in 0..2 {
            let x = problem.block(k).x();
            let n = x.cols();
            let p = &params.params[k];
            let mut xp = vec![C64::new(0.0, 0.0); x.rows()];
            for (i, v) in xp.iter_mut().enumerate() {
                for t in 0..n {
                    *v += x[(i, t)] * phi[(k, t)];
                }
                *v /= n as f64;
            }
            let gw = grad_ive_w(k, &params, &problem, &phi).unwrap();
            for i in 0..x.rows() {
                assert!((gw[i] - (p.a()[i] - xp[i])).norm() < 1e-12);
            }
            let ci = problem.block(k).cx_inv();
            let ci_a = ci.mul_vec(p.a());
            let lambda = 1.0 / p.a().dot(&ci_a).re;
            let ga = grad_ive_a(k, &params, &problem, &phi).unwrap();
            for i in 0..x.rows() {
                let mut acc = C64::new(0.0, 0.0);
                for (j, v) in xp.iter().enumerate() {
                    acc += ci[(i, j)] * v;
                }
                assert!((ga[i] - (p.w()[i] - acc * lambda)).norm() < 1e-12);
            }
        }
    }

    fn assert_same_trajectory(joint: &JointExtraction, single: &crate::ice::Extraction) {
        let jt = &joint.trace.per_mixture[0];
        assert_eq!(jt.grad_norms.len(), single.trace.grad_norms.len());
        for (a, b) in jt.grad_norms.iter().zip(&single.trace.grad_norms) {
            assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
        assert_eq!(jt.branches, single.trace.branches);
        let p = &joint.params.params[0];
        assert!(p.w().sub(single.params.w()).norm() <= 1e-12 * p.w().norm());
        assert!(p.a().sub(single.params.a()).norm() <= 1e-12 * p.a().norm());
    }

    #[test]
    fn single_mixture_reproduces_ice_solvers() {
        let (problem, a_inis) = small_trial(1, 400, 16);
        let cfg = SolverConfig {
            max_iter: 300,
            ..SolverConfig::ogive()
        };
        let model = ScoreModel::vector();
        let ice = problem.block(0);
        let w_ini = couple_w_from_a(&a_inis[0], ice.cx()).unwrap();

        let j = ogive_w(&problem, std::slice::from_ref(&w_ini), &model, &cfg).unwrap();
        let s = ogice_w(ice, &w_ini, &model, &cfg).unwrap();
        assert_same_trajectory(&j, &s);

        let j = ogive_a(&problem, &a_inis, &model, &cfg).unwrap();
        let s = ogice_a(ice, &a_inis[0], &model, &cfg).unwrap();
        assert_same_trajectory(&j, &s);

        let j = ogive_s(&problem, &a_inis, &model, &cfg).unwrap();
        let s = ogice_s(ice, &a_inis[0], &model, &cfg).unwrap();
        assert_same_trajectory(&j, &s);
        assert_eq!(j.trace.per_mixture[0].criterion, s.trace.criterion);
    }

    #[test]
    fn updates_are_synchronous() {
        // serial reference: all scores from the pre-update outputs
        let (problem, a_inis) = small_trial(3, 300, 17);
        let model = ScoreModel::vector();
        let cfg = SolverConfig {
            max_iter: 5,
            tol: 1e-14,
            ..SolverConfig::ogive()
        };
        let got = ogive_a(&problem, &a_inis, &model, &cfg).unwrap();
        let mut pairs: Vec<Pair> = problem
            .blocks()
            .iter()
            .zip(&a_inis)
            .map(|(b, a)| Pair::from_a(b, a.clone()).unwrap())
            .collect();
        for _ in 0..5 {
            let ws: Vec<CVector> = pairs.iter().map(|p| p.w.clone()).collect();
            let s = problem.extract(&ws).unwrap();
            let phi = model.evaluate_normalized(&s).unwrap().phi;
            let snapshot = pairs.clone();
            for k in 0..3 {
                let params = JointParams {
                    params: snapshot
                        .iter()
                        .map(|p| ExtractionParams::repaired(p.a.clone(), p.w.clone()).unwrap())
                        .collect(),
                };
                let delta = grad_ive_a(k, &params, &problem, &phi).unwrap();
                pairs[k] = Pair::from_a(problem.block(k), snapshot[k].a.add(&delta.scale_real(cfg.step_mu))).unwrap();
            }
        }
        for k in 0..3 {
            let w = &got.params.params[k];
            assert!(w.a().sub(&pairs[k].a).norm() <= 1e-10 * pairs[k].a.norm());
        }
    }

    #[test]
    fn preconverged_start_takes_one_iteration() {
        let (problem, a_inis) = small_trial(2, 300, 18);
        let model = ScoreModel::vector();
        let probe = SolverConfig {
            max_iter: 1,
            ..SolverConfig::ogive()
        };
        let first = ogive_a(&problem, &a_inis, &model, &probe).unwrap();
        let cfg = SolverConfig {
            tol: 2.0 * first.trace.max_grad_norms[0],
            ..SolverConfig::ogive()
        };
        let again = ogive_a(&problem, &a_inis, &model, &cfg).unwrap();
        assert_eq!(again.trace.iterations, 1);
        assert!(again.trace.converged);
    }

    #[test]
    fn forced_switch_matches_pure_branches() {
        let (problem, a_inis) = small_trial(2, 300, 19);
        let model = ScoreModel::vector();
        let base = SolverConfig {
            max_iter: 50,
            ..SolverConfig::ogive()
        };
        let w_side = SolverConfig {
            tau: f64::INFINITY,
            ..base.clone()
        };
        let s = ogive_s(&problem, &a_inis, &model, &w_side).unwrap();
        let ws: Vec<CVector> = problem
            .blocks()
            .iter()
            .zip(&a_inis)
            .map(|(b, a)| crate::mixing::couple_w_from_a_inv(a, b.cx_inv()).unwrap())
            .collect();
        let w = ogive_w(&problem, &ws, &model, &base).unwrap();
        for k in 0..2 {
            assert!(s.trace.per_mixture[k].branches.iter().all(|&b| b == Branch::W));
            // the two starts differ by the rounding of the a <-> w coupling
            let pairs = s.trace.per_mixture[k].grad_norms.iter().zip(&w.trace.per_mixture[k].grad_norms);
            for (x, y) in pairs.take(10) {
                assert!((x - y).abs() <= 1e-10 * y.max(1.0));
            }
        }
        let a_side = SolverConfig { tau: 0.0, ..base.clone() };
        let s = ogive_s(&problem, &a_inis, &model, &a_side).unwrap();
        let a = ogive_a(&problem, &a_inis, &model, &base).unwrap();
        for k in 0..2 {
            assert_eq!(s.trace.per_mixture[k].grad_norms, a.trace.per_mixture[k].grad_norms);
        }
    }

    #[test]
    fn piloted_model_requires_matching_length() {
        let (problem, a_inis) = small_trial(2, 300, 20);
        assert!(problem.clone().with_pilot(CVector::zeros(10)).is_err());
        let mut rng = Rng::new(21);
        let pilot = random_vec(300, &mut rng);
        let problem = problem.with_pilot(pilot).unwrap();
        let model = problem.vector_model();
        assert_eq!(model.kind(), crate::score::ScoreKind::PilotedVector);
        let cfg = SolverConfig {
            max_iter: 20,
            ..SolverConfig::ogive()
        };
        let out = ogive_s(&problem, &a_inis, &model, &cfg).unwrap();
        assert_eq!(out.trace.iterations, out.trace.max_grad_norms.len());
    }

    #[test]
    fn rejects_mismatched_blocks() {
        let mut rng = Rng::new(22);
        let a = CMatrix::from_fn(3, 50, |_, _| rng.complex_normal());
        let b = CMatrix::from_fn(3, 60, |_, _| rng.complex_normal());
        assert!(JointProblem::new(vec![a.clone(), b]).is_err());
        assert!(JointProblem::new(vec![]).is_err());
        let p = JointProblem::new(vec![a]).unwrap();
        assert!(ogive_w(&p, &[], &ScoreModel::vector(), &SolverConfig::ogive()).is_err());
    }
}
