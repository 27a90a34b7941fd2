//! Synthetic trial generation.

use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::linalg::{hermitian_eigen, random_unitary, C64, CMatrix, CVector};
use crate::rng::Rng;

/// Largest accepted condition number of a generated mixing matrix.
pub const MAX_MIXING_CONDITION: f64 = 1e6;

/// Circular Laplace radial rate giving unit variance: `E r^2 = 6 / c^2`.
const LAPLACE_RATE: f64 = 2.449_489_742_783_178;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Background {
    CircularGaussian,
    CircularLaplace,
}

impl Background {
    pub fn label(self) -> &'static str {
        match self {
            Self::CircularGaussian => "gaussian",
            Self::CircularLaplace => "laplace",
        }
    }

    pub fn sample(self, n: usize, rng: &mut Rng) -> CVector {
        match self {
            Self::CircularGaussian => gen_circular_gaussian(n, rng),
            Self::CircularLaplace => gen_circular_laplace(n, rng),
        }
    }
}

impl std::str::FromStr for Background {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "circular-gaussian" => Ok(Self::CircularGaussian),
            "laplace" | "circular-laplace" => Ok(Self::CircularLaplace),
            other => Err(IceError::Config(format!("unknown background distribution `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub background: Background,
    pub sr_choices_db: Vec<f64>,
    pub epsilon_sq: f64,
    pub seed: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            d: 6,
            k: 4,
            n: 1000,
            background: Background::CircularGaussian,
            sr_choices_db: vec![-10.0, 10.0],
            epsilon_sq: 0.1,
            seed: 0,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(IceError::Config(format!("d = {} (need d >= 2)", self.d)));
        }
        if self.k < 1 {
            return Err(IceError::Config("k must be at least 1".into()));
        }
        if self.n <= self.d {
            return Err(IceError::Config(format!("n = {} must exceed d = {}", self.n, self.d)));
        }
        if !(self.epsilon_sq >= 0.0) || !self.epsilon_sq.is_finite() {
            return Err(IceError::Config(format!("epsilon_sq = {} must be >= 0", self.epsilon_sq)));
        }
        if self.sr_choices_db.is_empty() || self.sr_choices_db.iter().any(|v| !v.is_finite()) {
            return Err(IceError::Config("sr_choices_db must be a non-empty list of finite values".into()));
        }
        Ok(())
    }
}

/// Ground truth of one mixture `x = A u`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureTruth {
    pub mixing: CMatrix,
    /// Source variances; entry 0 belongs to the SOI.
    pub variances: Vec<f64>,
    pub sr_db: f64,
}

impl MixtureTruth {
    /// True mixing vector (first column of `A`).
    pub fn a(&self) -> CVector {
        self.mixing.column(0)
    }

    /// `A diag(sigma^2) A^H`.
    pub fn model_covariance(&self) -> CMatrix {
        let d = self.mixing.rows();
        let scaled = CMatrix::from_fn(d, d, |i, j| self.mixing[(i, j)] * self.variances[j]);
        scaled.matmul(&self.mixing.adjoint()).expect("square factors")
    }

    /// `w` with `w^H` equal to the first row of `A^{-1}`.
    pub fn separating_vector(&self) -> Result<CVector> {
        Ok(self.mixing.inverse()?.row_vector(0).conj())
    }
}

/// One generated trial: K mixtures with dependent SOIs.
#[derive(Clone, Debug)]
pub struct Trial {
    pub x: Vec<CMatrix>,
    pub truth: Vec<MixtureTruth>,
    /// Unit-variance SOIs before SR scaling, K×N.
    pub sois: CMatrix,
    /// Random unit-norm combination of the SOIs.
    pub pilot: CVector,
}

/// Unit-variance circular Laplace samples `r e^{i theta}` with
/// `r ~ Gamma(2, 1 / c)`.
pub fn gen_circular_laplace(n: usize, rng: &mut Rng) -> CVector {
    (0..n)
        .map(|_| {
            let r = rng.gamma(2.0, 1.0 / LAPLACE_RATE);
            rng.unit_phase() * r
        })
        .collect()
}

/// Unit-variance circular Gaussian samples.
pub fn gen_circular_gaussian(n: usize, rng: &mut Rng) -> CVector {
    (0..n).map(|_| rng.complex_normal()).collect()
}

/// K independent circular Laplace rows mixed by a random unitary matrix.
pub fn gen_dependent_sois(k: usize, n: usize, rng: &mut Rng) -> Result<CMatrix> {
    let rows: Vec<CVector> = (0..k).map(|_| gen_circular_laplace(n, rng)).collect();
    let raw = CMatrix::from_rows(&rows)?;
    if k == 1 {
        return Ok(raw);
    }
    random_unitary(k, rng)?.matmul(&raw)
}

/// Uniform mixing matrix, real parts in `[1, 2]`, imaginary parts in `[0, 1]`,
/// redrawn while its condition number exceeds [`MAX_MIXING_CONDITION`].
pub fn gen_mixing_matrix(d: usize, rng: &mut Rng) -> Result<CMatrix> {
    for _ in 0..1000 {
        let a = CMatrix::from_fn(d, d, |_, _| C64::new(rng.uniform_range(1.0, 2.0), rng.uniform()));
        if condition_number(&a)? <= MAX_MIXING_CONDITION {
            return Ok(a);
        }
    }
    Err(IceError::Singular(f64::INFINITY))
}

/// 2-norm condition number from the eigenvalues of `A^H A`.
pub fn condition_number(a: &CMatrix) -> Result<f64> {
    let gram = a.adjoint().matmul(a)?;
    let (vals, _) = hermitian_eigen(&gram)?;
    let lo = vals.first().copied().unwrap_or(0.0);
    let hi = vals.last().copied().unwrap_or(0.0);
    if !(lo > 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok((hi / lo).sqrt())
}

/// Generate one trial. All randomness comes from `rng`.
pub fn build_trial(cfg: &TrialConfig, rng: &mut Rng) -> Result<Trial> {
    cfg.validate()?;
    let (d, k, n) = (cfg.d, cfg.k, cfg.n);
    let sois = gen_dependent_sois(k, n, rng)?;
    let mut x = Vec::with_capacity(k);
    let mut truth = Vec::with_capacity(k);
    for m in 0..k {
        let sr_db = cfg.sr_choices_db[(rng.next_u64() % cfg.sr_choices_db.len() as u64) as usize];
        let mixing = gen_mixing_matrix(d, rng)?;
        let soi_var = 10f64.powf(sr_db / 10.0);
        let soi_scale = soi_var.sqrt();
        let mut u = CMatrix::zeros(d, n);
        for (dst, &s) in u.row_mut(0).iter_mut().zip(sois.row(m)) {
            *dst = s * soi_scale;
        }
        for r in 1..d {
            let b = cfg.background.sample(n, rng);
            u.set_row(r, b.as_slice());
        }
        let mut variances = vec![1.0; d];
        variances[0] = soi_var;
        x.push(mixing.matmul(&u)?);
        truth.push(MixtureTruth {
            mixing,
            variances,
            sr_db,
        });
    }
    let mut coeffs: CVector = (0..k).map(|_| rng.complex_normal()).collect();
    coeffs = coeffs.scale_real(1.0 / coeffs.norm());
    let pilot = (0..n).map(|j| (0..k).map(|m| coeffs[m] * sois[(m, j)]).sum()).collect();
    Ok(Trial { x, truth, sois, pilot })
}

/// `a + e` with `e^H a = 0` and `||e||^2 = epsilon_sq`, `e` uniform on the
/// sphere of the orthogonal complement.
pub fn perturb_init(a: &CVector, epsilon_sq: f64, rng: &mut Rng) -> Result<CVector> {
    if !(epsilon_sq >= 0.0) {
        return Err(IceError::Config(format!("epsilon_sq = {epsilon_sq} must be >= 0")));
    }
    let an2 = a.norm_sqr();
    if !(an2 > 0.0) {
        return Err(IceError::Degenerate("zero mixing vector".into()));
    }
    let d = a.len();
    // the draw happens even for epsilon 0 so that streams stay aligned
    let v: CVector = (0..d).map(|_| rng.complex_normal()).collect();
    if epsilon_sq == 0.0 {
        return Ok(a.clone());
    }
    let mut e = v.sub(&a.scale(a.dot(&v) / an2));
    // second projection pass removes residual round-off along a
    e = e.sub(&a.scale(a.dot(&e) / an2));
    let en = e.norm();
    if !(en > 0.0) {
        return Err(IceError::Degenerate("perturbation direction collapsed".into()));
    }
    Ok(a.add(&e.scale_real(epsilon_sq.sqrt() / en)))
}
