//! Self-checks behind `ice verify`: finite-difference gradient checks,
//! algebraic identities of the mixing model, and solver equivalences.
//!
//! The gradient checks use verification densities whose score is the exact
//! Wirtinger derivative of the log density (rational for ICE, circular
//! vector Laplace for IVE). The weighting `R` is frozen at the base point.

use serde::Serialize;

use crate::baselines::{fica_one_unit, fica_score, unit_scale, FicaConfig};
use crate::error::{IceError, Result};
use crate::ice::{
    background_covariance, contrast, contrast_scaled, grad_a, grad_w, grad_w_full, ogice_a, ogice_s, ogice_w,
    IceProblem, Precondition, SolverConfig,
};
use crate::ive::{grad_ive_a, grad_ive_w, grad_ive_w_full, joint_contrast, ogive_a, ogive_s, ogive_w, JointParams, JointProblem};
use crate::linalg::{hermitian_inverse, random_unitary, sample_covariance, CMatrix, CVector, C64, ONE};
use crate::mixing::{assemble, couple_a_from_w, couple_w_from_a, mpdr_weights, ExtractionParams};
use crate::rng::Rng;
use crate::score::ScoreModel;
use crate::simbench::{build_trial, gen_circular_laplace, gen_mixing_matrix, perturb_init, TrialConfig};

/// Signature of [`grad_w`], injectable so that a broken gradient can be shown to fail.
pub type GradW = fn(&CVector, &CMatrix, &[C64]) -> CVector;

const FD_STEP: f64 = 1e-5;
const GRADIENT_SAMPLES: usize = 200;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub group: &'static str,
    pub instances: usize,
    /// Largest relative (or absolute, per check) deviation seen.
    pub worst: f64,
    pub tol: f64,
    pub error: Option<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.worst <= self.tol
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

/// Run every check with instance streams derived from `seed`.
pub fn run_all(seed: u64) -> Report {
    let root = Rng::new(seed);
    let mut checks = vec![
        check_grad_w_with(grad_w, root.split(1)),
        check_grad_a(root.split(2)),
        check_grad_w_full(root.split(3)),
        check_grad_ive_w(root.split(4)),
        check_grad_ive_w_full(root.split(5)),
        check_grad_ive_a(root.split(6)),
    ];
    checks.extend(check_identities(root.split(7)));
    checks.push(check_mpdr_oracle(root.split(8)));
    checks.push(check_fica_equivalence(root.split(9)));
    checks.push(check_single_mixture_ive(root.split(10)));
    Report { checks }
}

struct Worst {
    worst: f64,
    error: Option<String>,
}

impl Worst {
    fn new() -> Self {
        Self { worst: 0.0, error: None }
    }

    fn record(&mut self, r: Result<f64>) {
        match r {
            Ok(v) if v.is_nan() => self.worst = f64::INFINITY,
            Ok(v) => self.worst = self.worst.max(v),
            Err(e) => {
                self.error.get_or_insert_with(|| e.to_string());
            }
        }
    }

    fn finish(self, name: &'static str, group: &'static str, instances: usize, tol: f64) -> Check {
        Check { name, group, instances, worst: self.worst, tol, error: self.error }
    }
}

/// Fourth-order central-difference Wirtinger derivative `df / d conj(v)` of a
/// real function, with step `h * max(||v||, 1)`.
pub fn wirtinger_fd(f: impl Fn(&CVector) -> Result<f64>, v: &CVector, h: f64) -> Result<CVector> {
    let h = h * v.norm().max(1.0);
    let mut g = CVector::zeros(v.len());
    for i in 0..v.len() {
        let shifted = |dz: C64| -> Result<f64> {
            let mut p = v.clone();
            p[i] += dz;
            f(&p)
        };
        let partial = |unit: C64| -> Result<f64> {
            let near = shifted(unit * h)? - shifted(unit * -h)?;
            let far = shifted(unit * (2.0 * h))? - shifted(unit * (-2.0 * h))?;
            Ok((8.0 * near - far) / (12.0 * h))
        };
        g[i] = C64::new(partial(ONE)?, partial(C64::new(0.0, 1.0))?) * 0.5;
    }
    Ok(g)
}

fn rel_err(got: &CVector, want: &CVector) -> f64 {
    got.sub(want).norm() / want.norm().max(f64::MIN_POSITIVE)
}

fn random_vec(d: usize, rng: &mut Rng) -> CVector {
    (0..d).map(|_| rng.complex_normal()).collect()
}

fn random_dim(rng: &mut Rng) -> usize {
    2 + (rng.next_u64() % 5) as usize
}

/// `U S V` with Haar unitaries and singular values in `[0.5, 2]`.
///
/// Rounding in the coupled gradients grows with the condition of `C`, so the
/// instances keep it moderate.
fn random_mixing(d: usize, rng: &mut Rng) -> CMatrix {
    let sv: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.5, 2.0)).collect();
    let u = random_unitary(d, rng).expect("d >= 1");
    let v = random_unitary(d, rng).expect("d >= 1");
    u.matmul(&CMatrix::from_real_diag(&sv)).and_then(|m| m.matmul(&v)).expect("square factors")
}

/// Mixture of circular Laplace sources.
fn laplace_mixture(d: usize, n: usize, rng: &mut Rng) -> CMatrix {
    random_mixing(d, rng).matmul(&laplace_sources(d, n, rng)).expect("square times d x n")
}

fn coupled_from_w(w: &CVector, cx: &CMatrix) -> Result<ExtractionParams> {
    ExtractionParams::new(couple_a_from_w(w, cx)?, w.clone())
}

fn coupled_from_a(a: &CVector, cx: &CMatrix) -> Result<ExtractionParams> {
    ExtractionParams::new(a.clone(), couple_w_from_a(a, cx)?)
}

fn raw_score(model: &ScoreModel, x: &CMatrix, w: &CVector) -> Result<CVector> {
    let phi = model.evaluate(&CMatrix::from_rows(&[x.project(w)])?)?;
    Ok(phi.row_vector(0))
}

/// FD check of the w-gradient on random coupled points, `R = C_z^{-1}` frozen.
pub fn check_grad_w_with(grad: GradW, mut rng: Rng) -> Check {
    let model = ScoreModel::rational();
    let mut acc = Worst::new();
    for _ in 0..50 {
        acc.record((|| {
            let d = random_dim(&mut rng);
            let x = laplace_mixture(d, GRADIENT_SAMPLES, &mut rng);
            let cx = sample_covariance(&x)?;
            let w = random_vec(d, &mut rng);
            let p = coupled_from_w(&w, &cx)?;
            let r = hermitian_inverse(&background_covariance(p.a(), &cx)?)?;
            let fd = wirtinger_fd(|v| contrast(&coupled_from_w(v, &cx)?, &x, &r, &model), &w, FD_STEP)?;
            let got = grad(p.a(), &x, raw_score(&model, &x, &w)?.as_slice());
            Ok(rel_err(&got, &fd))
        })());
    }
    acc.finish("grad_w finite difference", "gradient", 50, 1e-5)
}

/// FD check of the a-gradient. The log density is scaled by `1 / nu` at the
/// base point so that the score there is normalized.
pub fn check_grad_a(mut rng: Rng) -> Check {
    let model = ScoreModel::rational();
    let mut acc = Worst::new();
    for _ in 0..50 {
        acc.record((|| {
            let d = random_dim(&mut rng);
            let x = laplace_mixture(d, GRADIENT_SAMPLES, &mut rng);
            let problem = IceProblem::new(x.clone())?;
            let cx = problem.cx();
            let a = random_vec(d, &mut rng);
            let p = coupled_from_a(&a, cx)?;
            let s = x.project(p.w());
            let phi = raw_score(&model, &x, p.w())?;
            let nu: C64 = s.iter().zip(phi.iter()).map(|(s, f)| s * f).sum::<C64>() / s.len() as f64;
            let phi_n = phi.scale(ONE / nu);
            let r = hermitian_inverse(&background_covariance(&a, cx)?)?;
            let scale = 1.0 / nu.re;
            let fd = wirtinger_fd(|v| contrast_scaled(&coupled_from_a(v, cx)?, &x, &r, &model, scale), &a, FD_STEP)?;
            let got = grad_a(&a, p.w(), &x, phi_n.as_slice(), problem.cx_inv())?;
            Ok(rel_err(&got, &fd))
        })());
    }
    acc.finish("grad_a finite difference", "gradient", 50, 1e-5)
}

/// FD check of the unsimplified w-gradient for a random positive weighting `R`.
pub fn check_grad_w_full(mut rng: Rng) -> Check {
    let model = ScoreModel::rational();
    let mut acc = Worst::new();
    for _ in 0..50 {
        acc.record((|| {
            let d = random_dim(&mut rng);
            let x = laplace_mixture(d, GRADIENT_SAMPLES, &mut rng);
            let cx = sample_covariance(&x)?;
            let w = random_vec(d, &mut rng);
            let m = CMatrix::from_fn(d - 1, d - 1, |_, _| rng.complex_normal());
            let r = m.matmul(&m.adjoint())?;
            let fd = wirtinger_fd(|v| contrast(&coupled_from_w(v, &cx)?, &x, &r, &model), &w, FD_STEP)?;
            let got = grad_w_full(&w, &x, &r, &model)?;
            Ok(rel_err(&got, &fd))
        })());
    }
    acc.finish("grad_w_full finite difference", "gradient", 50, 1e-5)
}

/// `K` mixtures of shared Laplace sources plus independent Gaussian parts.
fn joint_instance(rng: &mut Rng) -> Result<JointProblem> {
    let d = random_dim(rng);
    let k = 1 + (rng.next_u64() % 3) as usize;
    let n = GRADIENT_SAMPLES;
    let base = laplace_sources(d, n, rng);
    let blocks = (0..k)
        .map(|_| {
            let noise = CMatrix::from_fn(d, n, |_, _| rng.complex_normal() * 0.7);
            random_mixing(d, rng).matmul(&base.add(&noise))
        })
        .collect::<Result<Vec<_>>>()?;
    JointProblem::new(blocks)?.with_cross_covariance()
}

fn joint_from_ws(problem: &JointProblem, ws: &[CVector]) -> Result<JointParams> {
    let params = problem
        .blocks()
        .iter()
        .zip(ws)
        .map(|(b, w)| coupled_from_w(w, b.cx()))
        .collect::<Result<Vec<_>>>()?;
    Ok(JointParams { params })
}

fn joint_from_as(problem: &JointProblem, as_: &[CVector]) -> Result<JointParams> {
    let params = problem
        .blocks()
        .iter()
        .zip(as_)
        .map(|(b, a)| coupled_from_a(a, b.cx()))
        .collect::<Result<Vec<_>>>()?;
    Ok(JointParams { params })
}

/// `bdiag((B^k C^k B^kH)^{-1})`.
fn block_diagonal_weight(params: &JointParams, problem: &JointProblem) -> Result<CMatrix> {
    let m = problem.dim() - 1;
    let mut r = CMatrix::zeros(problem.len() * m, problem.len() * m);
    for (k, (p, b)) in params.params.iter().zip(problem.blocks()).enumerate() {
        r.set_block(k * m, k * m, &hermitian_inverse(&background_covariance(p.a(), b.cx())?)?);
    }
    Ok(r)
}

type JointGrad = fn(usize, &JointParams, &JointProblem, &CMatrix) -> Result<CVector>;

fn check_joint_w(mut rng: Rng, full: bool, grad: JointGrad, name: &'static str) -> Check {
    let model = ScoreModel::laplace_vector();
    let mut acc = Worst::new();
    for _ in 0..50 {
        acc.record((|| {
            let problem = joint_instance(&mut rng)?;
            let ws: Vec<CVector> = (0..problem.len()).map(|_| random_vec(problem.dim(), &mut rng)).collect();
            let params = joint_from_ws(&problem, &ws)?;
            let r = if full {
                hermitian_inverse(&crate::ive::joint_background_covariance(&params, &problem)?)?
            } else {
                block_diagonal_weight(&params, &problem)?
            };
            let phi = model.evaluate(&problem.extract(&ws)?)?;
            let mut worst: f64 = 0.0;
            for k in 0..problem.len() {
                let fd = wirtinger_fd(
                    |v| {
                        let mut wk = ws.clone();
                        wk[k] = v.clone();
                        joint_contrast(&joint_from_ws(&problem, &wk)?, &problem, &r, &model, 1.0)
                    },
                    &ws[k],
                    FD_STEP,
                )?;
                worst = worst.max(rel_err(&grad(k, &params, &problem, &phi)?, &fd));
            }
            Ok(worst)
        })());
    }
    acc.finish(name, "gradient", 50, 1e-5)
}

/// FD check of the simplified IVE w-gradient, block-diagonal `R` frozen.
pub fn check_grad_ive_w(rng: Rng) -> Check {
    check_joint_w(rng, false, grad_ive_w, "grad_ive_w finite difference")
}

/// FD check of the full IVE w-gradient, `R` the frozen inverse joint background covariance.
pub fn check_grad_ive_w_full(rng: Rng) -> Check {
    check_joint_w(rng, true, grad_ive_w_full, "grad_ive_w_full finite difference")
}

/// Rescale each `w^k` until `mean s^k phi^k = 1` under the joint model.
fn normalize_joint_scales(problem: &JointProblem, ws: &mut [CVector], model: &ScoreModel) -> Result<CMatrix> {
    for _ in 0..500 {
        let s = problem.extract(ws)?;
        let phi = model.evaluate(&s)?;
        let n = s.cols() as f64;
        let mut done = true;
        for (k, w) in ws.iter_mut().enumerate() {
            let nu = s.row(k).iter().zip(phi.row(k)).map(|(a, b)| (a * b).re).sum::<f64>() / n;
            if !(nu > 0.0) {
                return Err(IceError::Degenerate("non-positive score normalization".into()));
            }
            if (nu - 1.0).abs() > 1e-14 {
                done = false;
            }
            *w = w.scale_real(nu.powf(-0.5));
        }
        if done {
            return Ok(phi);
        }
    }
    Err(IceError::Degenerate("score normalization did not settle".into()))
}

/// FD check of the IVE a-gradient at points where every score is normalized.
pub fn check_grad_ive_a(mut rng: Rng) -> Check {
    let model = ScoreModel::laplace_vector();
    let mut acc = Worst::new();
    for _ in 0..50 {
        acc.record((|| {
            let problem = joint_instance(&mut rng)?;
            let mut ws: Vec<CVector> = (0..problem.len()).map(|_| random_vec(problem.dim(), &mut rng)).collect();
            normalize_joint_scales(&problem, &mut ws, &model)?;
            let base = joint_from_ws(&problem, &ws)?;
            let as_: Vec<CVector> = base.params.iter().map(|p| p.a().clone()).collect();
            let params = joint_from_as(&problem, &as_)?;
            let phi = model.evaluate(&problem.extract(&params.ws())?)?;
            let r = block_diagonal_weight(&params, &problem)?;
            let mut worst: f64 = 0.0;
            for k in 0..problem.len() {
                let fd = wirtinger_fd(
                    |v| {
                        let mut ak = as_.clone();
                        ak[k] = v.clone();
                        joint_contrast(&joint_from_as(&problem, &ak)?, &problem, &r, &model, 1.0)
                    },
                    &as_[k],
                    FD_STEP,
                )?;
                worst = worst.max(rel_err(&grad_ive_a(k, &params, &problem, &phi)?, &fd));
            }
            Ok(worst)
        })());
    }
    acc.finish("grad_ive_a finite difference", "gradient", 50, 1e-5)
}

/// Mixing-model identities on 200 random instances each.
pub fn check_identities(mut rng: Rng) -> Vec<Check> {
    const COUNT: usize = 200;
    let mut round_trip = Worst::new();
    let mut distortionless = Worst::new();
    let mut orthogonal = Worst::new();
    let mut power = Worst::new();
    let mut det = Worst::new();
    let mut inverse = Worst::new();
    let mut reduction = Worst::new();
    let model = ScoreModel::rational();
    for _ in 0..COUNT {
        let d = random_dim(&mut rng);
        let x = laplace_mixture(d, GRADIENT_SAMPLES, &mut rng);
        let a = random_vec(d, &mut rng);
        let w0 = random_vec(d, &mut rng);
        let Ok(cx) = sample_covariance(&x) else {
            round_trip.record(Err(IceError::Degenerate("covariance".into())));
            continue;
        };
        round_trip.record((|| {
            let w = couple_w_from_a(&a, &cx)?;
            let a2 = couple_a_from_w(&w, &cx)?;
            let w2 = couple_w_from_a(&couple_a_from_w(&w0, &cx)?, &cx)?;
            Ok(rel_err(&a2, &a).max(rel_err(&w2, &w0)))
        })());
        distortionless.record((|| {
            let w = couple_w_from_a(&a, &cx)?;
            let w_from = couple_a_from_w(&w0, &cx)?;
            Ok((w.dot(&a) - ONE).norm().max((w0.dot(&w_from) - ONE).norm()))
        })());
        orthogonal.record((|| {
            let p = coupled_from_a(&a, &cx)?;
            let s = x.project(p.w());
            let z = crate::mixing::background_signals(p.a(), &x);
            let n = x.cols() as f64;
            let corr: CVector = (0..z.rows())
                .map(|i| z.row(i).iter().zip(s.iter()).map(|(zi, si)| si * zi.conj()).sum::<C64>() / n)
                .collect();
            let scale = (s.mean_power() * (0..z.rows()).map(|i| z.row_vector(i).mean_power()).sum::<f64>()).sqrt();
            Ok(corr.norm() / scale)
        })());
        power.record((|| {
            let w = couple_w_from_a(&a, &cx)?;
            let lhs = a.dot(&cx.inverse()?.mul_vec(&a)).re;
            let rhs = 1.0 / w.dot(&cx.mul_vec(&w)).re;
            Ok((lhs - rhs).abs() / lhs.abs())
        })());
        let parts = (|| {
            let p = coupled_from_a(&a, &cx)?;
            Ok((p.clone(), assemble(&p)?))
        })();
        match parts {
            Ok((p, mm)) => {
                det.record((|| {
                    let lu = mm.w_ice.determinant()?;
                    Ok((lu - mm.det_w).norm() / mm.det_w.norm())
                })());
                inverse.record((|| {
                    let prod = mm.a_ice.matmul(&mm.w_ice)?;
                    Ok(prod.sub(&CMatrix::identity(d)).frobenius_norm())
                })());
                reduction.record((|| {
                    let r = hermitian_inverse(&background_covariance(p.a(), &cx)?)?;
                    let full = grad_w_full(p.w(), &x, &r, &model)?;
                    let simple = grad_w(p.a(), &x, raw_score(&model, &x, p.w())?.as_slice());
                    Ok(full.sub(&simple).norm() / simple.norm().max(1.0))
                })());
            }
            Err(e) => {
                let msg = |e: &IceError| Err(IceError::Degenerate(e.to_string()));
                det.record(msg(&e));
                inverse.record(msg(&e));
                reduction.record(msg(&e));
            }
        }
    }
    vec![
        round_trip.finish("coupling round trip a -> w -> a and w -> a -> w", "identity", COUNT, 1e-9),
        distortionless.finish("distortionless response w^H a = 1", "identity", COUNT, 1e-9),
        orthogonal.finish("orthogonal constraint s Z^H / N = 0", "identity", COUNT, 1e-8),
        power.finish("MPDR power a^H C^-1 a = 1 / (w^H C w)", "identity", COUNT, 1e-9),
        det.finish("determinant of W_ICE against LU", "identity", COUNT, 1e-9),
        inverse.finish("A_ICE W_ICE = I", "identity", COUNT, 1e-9),
        reduction.finish("full w-gradient reduces to the simplified one at R = C_z^-1", "identity", COUNT, 1e-9),
    ]
}

/// MPDR steered by the true mixing vector with the model covariance recovers the SOI exactly.
pub fn check_mpdr_oracle(mut rng: Rng) -> Check {
    const COUNT: usize = 50;
    let mut acc = Worst::new();
    for _ in 0..COUNT {
        acc.record((|| {
            let d = random_dim(&mut rng);
            let n = GRADIENT_SAMPLES;
            let a_mix = gen_mixing_matrix(d, &mut rng)?;
            let vars: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.1, 10.0)).collect();
            let mut u = CMatrix::zeros(d, n);
            for i in 0..d {
                let row = gen_circular_laplace(n, &mut rng).scale_real(vars[i].sqrt());
                u.set_row(i, row.as_slice());
            }
            let x = a_mix.matmul(&u)?;
            let c_model = a_mix.matmul(&CMatrix::from_real_diag(&vars))?.matmul(&a_mix.adjoint())?;
            let w = mpdr_weights(&a_mix.column(0), &c_model)?;
            let s_hat = x.project(&w);
            let s = u.row_vector(0);
            Ok(s_hat.sub(&s).norm() / s.norm())
        })());
    }
    acc.finish("MPDR oracle extraction with the model covariance", "equivalence", COUNT, 1e-9)
}

/// Whitened, renormalized OGICE_w with the adaptive step tracks one-unit FastICA iterate by iterate.
pub fn check_fica_equivalence(mut rng: Rng) -> Check {
    const COUNT: usize = 20;
    const ITERS: usize = 10;
    let model = fica_score();
    let mut acc = Worst::new();
    for _ in 0..COUNT {
        acc.record((|| {
            let d = 3 + (rng.next_u64() % 4) as usize;
            let mix = gen_mixing_matrix(d, &mut rng)?;
            let problem = IceProblem::new(mix.matmul(&laplace_sources(d, 1000, &mut rng))?)?;
            let a0 = mix.column(0).add(&random_vec(d, &mut rng).scale_real(0.3));
            let w_ini = unit_scale(&couple_w_from_a(&a0, problem.cx())?, problem.cx())?;
            let fica = fica_one_unit(&problem, &w_ini, &model, &FicaConfig { tol: 1e-300, max_iter: ITERS })
                .map_err(|f| f.error)?;
            if fica.trace.iterates.len() < ITERS {
                return Err(IceError::Degenerate("FastICA stopped early".into()));
            }
            let cfg = SolverConfig {
                precondition: Precondition::Whiten,
                adaptive_step: true,
                renormalize: true,
                tol: 1e-300,
                ..SolverConfig::ogice()
            };
            let mut worst: f64 = 0.0;
            for (i, wf) in fica.trace.iterates.iter().enumerate() {
                let og = ogice_w(&problem, &w_ini, &model, &SolverConfig { max_iter: i + 1, ..cfg.clone() })
                    .map_err(|f| f.error)?;
                let diff = og.params.w().phase_aligned().sub(&wf.phase_aligned()).norm() / wf.norm();
                worst = worst.max(diff);
            }
            Ok(worst)
        })());
    }
    acc.finish("one-unit FastICA equals preconditioned OGICE_w", "equivalence", COUNT, 1e-8)
}

fn laplace_sources(d: usize, n: usize, rng: &mut Rng) -> CMatrix {
    let mut u = CMatrix::zeros(d, n);
    for i in 0..d {
        u.set_row(i, gen_circular_laplace(n, rng).as_slice());
    }
    u
}

/// OGIVE on a single mixture reproduces the OGICE trajectory of each variant.
pub fn check_single_mixture_ive(mut rng: Rng) -> Check {
    const COUNT: usize = 5;
    let model = ScoreModel::vector();
    let cfg = SolverConfig::ogive();
    let mut acc = Worst::new();
    for _ in 0..COUNT {
        acc.record((|| {
            let tc = TrialConfig { k: 1, epsilon_sq: 0.1, seed: rng.next_u64(), ..TrialConfig::default() };
            let trial = build_trial(&tc, &mut rng)?;
            let a_ini = perturb_init(&trial.truth[0].a(), tc.epsilon_sq, &mut rng)?;
            let joint = JointProblem::new(trial.x)?;
            let ice = joint.block(0);
            let w_ini = couple_w_from_a(&a_ini, ice.cx())?;
            let err = |e: crate::ive::JointFailure| e.error;
            let err1 = |e: crate::ice::SolverFailure| e.error;
            let pairs = [
                (ogive_w(&joint, std::slice::from_ref(&w_ini), &model, &cfg).map_err(err)?, ogice_w(ice, &w_ini, &model, &cfg).map_err(err1)?),
                (ogive_a(&joint, std::slice::from_ref(&a_ini), &model, &cfg).map_err(err)?, ogice_a(ice, &a_ini, &model, &cfg).map_err(err1)?),
                (ogive_s(&joint, std::slice::from_ref(&a_ini), &model, &cfg).map_err(err)?, ogice_s(ice, &a_ini, &model, &cfg).map_err(err1)?),
            ];
            let mut worst: f64 = 0.0;
            for (j, s) in &pairs {
                let jt = &j.trace.per_mixture[0];
                if jt.grad_norms.len() != s.trace.grad_norms.len() || jt.branches != s.trace.branches {
                    return Ok(f64::INFINITY);
                }
                for (x, y) in jt.grad_norms.iter().zip(&s.trace.grad_norms) {
                    worst = worst.max((x - y).abs() / y.max(1.0));
                }
                let p = &j.params.params[0];
                worst = worst.max(rel_err(p.w(), s.params.w())).max(rel_err(p.a(), s.params.a()));
            }
            Ok(worst)
        })());
    }
    acc.finish("single-mixture OGIVE equals OGICE (w, a, s)", "equivalence", COUNT, 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flipped_grad_w(a: &CVector, x: &CMatrix, phi: &[C64]) -> CVector {
        grad_w(a, x, phi).scale_real(-1.0)
    }

    #[test]
    fn fd_of_quadratic_form() {
        // f = v^H M v with Hermitian M: df/d conj(v) = M v
        let mut rng = Rng::new(1);
        let b = CMatrix::from_fn(3, 3, |_, _| rng.complex_normal());
        let m = b.matmul(&b.adjoint()).unwrap();
        let v = random_vec(3, &mut rng);
        let g = wirtinger_fd(|p| Ok(p.dot(&m.mul_vec(p)).re), &v, 1e-5).unwrap();
        assert!(rel_err(&g, &m.mul_vec(&v)) < 1e-9);
    }

    #[test]
    fn gradient_checks_pass() {
        let root = Rng::new(11);
        for c in [check_grad_w_with(grad_w, root.split(1)), check_grad_a(root.split(2)), check_grad_ive_a(root.split(3))] {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn sign_flip_in_grad_w_is_caught() {
        let c = check_grad_w_with(flipped_grad_w, Rng::new(12));
        assert!(c.error.is_none());
        assert!(!c.passed(), "{c:?}");
        assert!(c.worst > 1.0);
    }

    #[test]
    fn identities_hold() {
        for c in check_identities(Rng::new(13)) {
            assert!(c.passed(), "{c:?}");
        }
    }
}
