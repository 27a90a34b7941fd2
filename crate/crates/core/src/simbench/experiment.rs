//! Sweep runner: every algorithm on every trial at every perturbation level.

use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{build_trial, perturb_init, Background, Trial, TrialConfig};
use super::metrics::{mean, median, sir_db, success_rate, Histogram};
use crate::baselines::{
    fica_one_unit, fica_score, ica_score, ica_solve, initial_demixing, FicaConfig, IcaConfig,
};
use crate::error::{IceError, Result};
use crate::ice::{ogice_a, ogice_s, ogice_w, IceProblem, SolverConfig};
use crate::ive::{ogive_a, ogive_s, ogive_w, JointProblem, JointResult};
use crate::linalg::CVector;
use crate::mixing::couple_w_from_a;
use crate::rng::Rng;
use crate::score::ScoreModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    MpdrOracle,
    MpdrIni,
    OgiceW,
    OgiceA,
    OgiceS,
    OgiveW,
    OgiveA,
    OgiveS,
    PilotedOgiveS,
    Ng,
    Scng,
    Fica,
}

impl Algorithm {
    pub const ALL: [Algorithm; 12] = [
        Self::MpdrOracle,
        Self::MpdrIni,
        Self::OgiceW,
        Self::OgiceA,
        Self::OgiceS,
        Self::OgiveW,
        Self::OgiveA,
        Self::OgiveS,
        Self::PilotedOgiveS,
        Self::Ng,
        Self::Scng,
        Self::Fica,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::MpdrOracle => "mpdr-oracle",
            Self::MpdrIni => "mpdr-ini",
            Self::OgiceW => "ogice-w",
            Self::OgiceA => "ogice-a",
            Self::OgiceS => "ogice-s",
            Self::OgiveW => "ogive-w",
            Self::OgiveA => "ogive-a",
            Self::OgiveS => "ogive-s",
            Self::PilotedOgiveS => "piloted-ogive-s",
            Self::Ng => "ng",
            Self::Scng => "scng",
            Self::Fica => "fica",
        }
    }

    pub fn is_joint(self) -> bool {
        matches!(self, Self::OgiveW | Self::OgiveA | Self::OgiveS | Self::PilotedOgiveS)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| IceError::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Resolved sweep configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub backgrounds: Vec<Background>,
    pub sr_choices_db: Vec<f64>,
    pub epsilon_sq: Vec<f64>,
    /// Trials per background and perturbation level.
    pub trials: usize,
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub ogice: SolverConfig,
    pub ogive: SolverConfig,
    pub ng: IcaConfig,
    pub scng: IcaConfig,
    pub fica: FicaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 6,
            k: 4,
            n: 1000,
            backgrounds: vec![Background::CircularGaussian, Background::CircularLaplace],
            sr_choices_db: vec![-10.0, 10.0],
            epsilon_sq: vec![1e-3, 1e-2, 1e-1, 1.0],
            trials: 200,
            seed: 2020,
            algorithms: Algorithm::ALL.to_vec(),
            ogice: SolverConfig::ogice(),
            ogive: SolverConfig::ogive(),
            ng: IcaConfig::ng(),
            scng: IcaConfig::scng(),
            fica: FicaConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.trial_config(Background::CircularGaussian, 0.0).validate()?;
        if self.backgrounds.is_empty() || self.epsilon_sq.is_empty() || self.algorithms.is_empty() {
            return Err(IceError::Config("backgrounds, epsilon_sq and algorithms must be non-empty".into()));
        }
        if let Some(e) = self.epsilon_sq.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
            return Err(IceError::Config(format!("epsilon_sq entry {e} must be finite and >= 0")));
        }
        if self.trials == 0 {
            return Err(IceError::Config("trials must be at least 1".into()));
        }
        self.ogice.validate()?;
        self.ogive.validate()?;
        self.ng.validate()?;
        self.scng.validate()?;
        if !(self.fica.tol > 0.0) || self.fica.max_iter == 0 {
            return Err(IceError::Config("fica needs tol > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }

    pub fn trial_config(&self, background: Background, epsilon_sq: f64) -> TrialConfig {
        TrialConfig {
            d: self.d,
            k: self.k,
            n: self.n,
            background,
            sr_choices_db: self.sr_choices_db.clone(),
            epsilon_sq,
            seed: self.seed,
        }
    }
}

/// One algorithm on one trial at one perturbation level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub algorithm: Algorithm,
    pub background: Background,
    pub epsilon_sq: f64,
    pub trial: usize,
    /// Output SIR per mixture; NaN when the solver failed.
    pub sir_db: Vec<f64>,
    pub sr_db: Vec<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    pub errors: Vec<Option<String>>,
}

impl TrialOutcome {
    pub fn successes(&self) -> impl Iterator<Item = bool> + '_ {
        self.sir_db.iter().map(|&s| s > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub background: Background,
    pub epsilon_sq: f64,
    pub trials: usize,
    /// Share of extractions (all mixtures of all trials) with SIR above 0 dB.
    pub success_rate: f64,
    pub sir_mean_db: f64,
    pub sir_median_db: f64,
    pub mean_iters: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub outcomes: Vec<TrialOutcome>,
}

impl ExperimentResult {
    fn select(&self, algorithm: Algorithm, background: Background, epsilon_sq: Option<f64>) -> Vec<&TrialOutcome> {
        self.outcomes
            .iter()
            .filter(|o| o.algorithm == algorithm && o.background == background)
            .filter(|o| epsilon_sq.is_none_or(|e| o.epsilon_sq == e))
            .collect()
    }

    /// All per-mixture SIR values, pooled over `epsilon_sq` when it is `None`.
    pub fn sirs(&self, algorithm: Algorithm, background: Background, epsilon_sq: Option<f64>) -> Vec<f64> {
        self.select(algorithm, background, epsilon_sq)
            .into_iter()
            .flat_map(|o| o.sir_db.iter().copied())
            .collect()
    }

    pub fn histogram(&self, algorithm: Algorithm, background: Background, epsilon_sq: Option<f64>) -> Histogram {
        let mut h = Histogram::sir_default();
        for v in self.sirs(algorithm, background, epsilon_sq) {
            h.add(v);
        }
        h
    }

    pub fn success_rate(&self, algorithm: Algorithm, background: Background, epsilon_sq: f64) -> f64 {
        success_rate(&self.sirs(algorithm, background, Some(epsilon_sq)))
    }

    /// Number of extractions behind a success rate.
    pub fn extractions(&self, algorithm: Algorithm, background: Background, epsilon_sq: f64) -> usize {
        self.sirs(algorithm, background, Some(epsilon_sq)).len()
    }

    /// One row per algorithm, background and perturbation level, in config order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(usize, usize, usize), Vec<&TrialOutcome>> = BTreeMap::new();
        let cfg = &self.config;
        for o in &self.outcomes {
            let ai = cfg.algorithms.iter().position(|a| *a == o.algorithm);
            let bi = cfg.backgrounds.iter().position(|b| *b == o.background);
            let ei = cfg.epsilon_sq.iter().position(|e| *e == o.epsilon_sq);
            if let (Some(ai), Some(bi), Some(ei)) = (ai, bi, ei) {
                groups.entry((ai, bi, ei)).or_default().push(o);
            }
        }
        groups
            .into_iter()
            .map(|((ai, bi, ei), os)| {
                let sirs: Vec<f64> = os.iter().flat_map(|o| o.sir_db.iter().copied()).collect();
                let iters: Vec<f64> = os.iter().flat_map(|o| o.iterations.iter().map(|&i| i as f64)).collect();
                SummaryRow {
                    algorithm: cfg.algorithms[ai],
                    background: cfg.backgrounds[bi],
                    epsilon_sq: cfg.epsilon_sq[ei],
                    trials: os.len(),
                    success_rate: success_rate(&sirs),
                    sir_mean_db: mean(&sirs),
                    sir_median_db: median(&sirs),
                    mean_iters: mean(&iters),
                }
            })
            .collect()
    }
}

/// Run the sweep on the current rayon pool.
///
/// Each (background, trial) pair draws its data from its own stream, and the
/// perturbation stream restarts at every `epsilon_sq`, so all levels see the
/// same data and the same perturbation directions. Results do not depend on
/// the number of threads.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let units: Vec<(usize, usize)> = (0..cfg.backgrounds.len())
        .flat_map(|b| (0..cfg.trials).map(move |t| (b, t)))
        .collect();
    let per_unit: Vec<Vec<TrialOutcome>> = units.par_iter().map(|&(b, t)| run_unit(cfg, b, t)).collect();
    let mut outcomes = Vec::with_capacity(per_unit.iter().map(Vec::len).sum());
    // order: background, epsilon, trial, algorithm
    for b in 0..cfg.backgrounds.len() {
        for e in 0..cfg.epsilon_sq.len() {
            for t in 0..cfg.trials {
                let unit = &per_unit[b * cfg.trials + t];
                let stride = cfg.algorithms.len();
                outcomes.extend_from_slice(&unit[e * stride..(e + 1) * stride]);
            }
        }
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        outcomes,
    })
}

struct Prepared {
    trial: Trial,
    problems: Vec<IceProblem>,
    joint: JointProblem,
    piloted: JointProblem,
}

fn prepare(cfg: &ExperimentConfig, background: Background, rng: &mut Rng) -> Result<Prepared> {
    let trial = build_trial(&cfg.trial_config(background, 0.0), rng)?;
    let problems = trial.x.iter().cloned().map(IceProblem::new).collect::<Result<Vec<_>>>()?;
    let joint = JointProblem::from_problems(problems.clone())?;
    let piloted = joint.clone().with_pilot(trial.pilot.clone())?;
    Ok(Prepared {
        trial,
        problems,
        joint,
        piloted,
    })
}

/// Stream labels below the per-unit root.
const DATA_STREAM: u64 = 0;
const PERTURB_STREAM: u64 = 1;

fn run_unit(cfg: &ExperimentConfig, b: usize, t: usize) -> Vec<TrialOutcome> {
    let background = cfg.backgrounds[b];
    let root = Rng::new(cfg.seed).split(b as u64).split(t as u64);
    let prepared = prepare(cfg, background, &mut root.split(DATA_STREAM));
    let mut out = Vec::with_capacity(cfg.epsilon_sq.len() * cfg.algorithms.len());
    for &eps in &cfg.epsilon_sq {
        let mut prng = root.split(PERTURB_STREAM);
        let base = |algorithm| TrialOutcome {
            algorithm,
            background,
            epsilon_sq: eps,
            trial: t,
            sir_db: vec![f64::NAN; cfg.k],
            sr_db: vec![f64::NAN; cfg.k],
            iterations: vec![0; cfg.k],
            converged: vec![false; cfg.k],
            errors: vec![None; cfg.k],
        };
        let p = match &prepared {
            Ok(p) => p,
            Err(e) => {
                for &alg in &cfg.algorithms {
                    let mut o = base(alg);
                    o.errors = vec![Some(format!("trial generation: {e}")); cfg.k];
                    out.push(o);
                }
                continue;
            }
        };
        let a_inis: Result<Vec<CVector>> =
            p.trial.truth.iter().map(|tr| perturb_init(&tr.a(), eps, &mut prng)).collect();
        for &alg in &cfg.algorithms {
            let mut o = base(alg);
            o.sr_db = p.trial.truth.iter().map(|tr| tr.sr_db).collect();
            match &a_inis {
                Ok(a_inis) => run_algorithm(cfg, alg, p, a_inis, &mut o),
                Err(e) => o.errors = vec![Some(format!("initialization: {e}")); cfg.k],
            }
            out.push(o);
        }
    }
    out
}

fn record(o: &mut TrialOutcome, m: usize, p: &Prepared, result: std::result::Result<(CVector, usize, bool), String>) {
    match result {
        Ok((w, iters, conv)) => {
            o.sir_db[m] = sir_db(&w, &p.trial.truth[m]);
            o.iterations[m] = iters;
            o.converged[m] = conv;
        }
        Err(e) => o.errors[m] = Some(e),
    }
}

fn record_joint(o: &mut TrialOutcome, p: &Prepared, result: JointResult) {
    match result {
        Ok(ex) => {
            for (m, params) in ex.params.params.iter().enumerate() {
                o.sir_db[m] = sir_db(params.w(), &p.trial.truth[m]);
                o.iterations[m] = ex.trace.iterations;
                o.converged[m] = ex.trace.converged;
            }
        }
        Err(f) => {
            let msg = f.to_string();
            for m in 0..o.errors.len() {
                o.errors[m] = Some(msg.clone());
                o.iterations[m] = f.trace.iterations;
            }
        }
    }
}

fn run_algorithm(cfg: &ExperimentConfig, alg: Algorithm, p: &Prepared, a_inis: &[CVector], o: &mut TrialOutcome) {
    let tanh = ScoreModel::tanh();
    match alg {
        Algorithm::OgiveW => {
            let ws: std::result::Result<Vec<CVector>, _> = p
                .problems
                .iter()
                .zip(a_inis)
                .map(|(pr, a)| couple_w_from_a(a, pr.cx()))
                .collect();
            match ws {
                Ok(ws) => record_joint(o, p, ogive_w(&p.joint, &ws, &ScoreModel::vector(), &cfg.ogive)),
                Err(e) => o.errors = vec![Some(e.to_string()); cfg.k],
            }
        }
        Algorithm::OgiveA => record_joint(o, p, ogive_a(&p.joint, a_inis, &ScoreModel::vector(), &cfg.ogive)),
        Algorithm::OgiveS => record_joint(o, p, ogive_s(&p.joint, a_inis, &ScoreModel::vector(), &cfg.ogive)),
        Algorithm::PilotedOgiveS => {
            record_joint(o, p, ogive_s(&p.piloted, a_inis, &p.piloted.vector_model(), &cfg.ogive))
        }
        _ => {
            for (m, (pr, a_ini)) in p.problems.iter().zip(a_inis).enumerate() {
                let res: std::result::Result<(CVector, usize, bool), String> = match alg {
                    Algorithm::MpdrOracle => couple_w_from_a(&p.trial.truth[m].a(), pr.cx())
                        .map(|w| (w, 0, true))
                        .map_err(|e| e.to_string()),
                    Algorithm::MpdrIni => couple_w_from_a(a_ini, pr.cx()).map(|w| (w, 0, true)).map_err(|e| e.to_string()),
                    Algorithm::OgiceW => couple_w_from_a(a_ini, pr.cx())
                        .map_err(|e| e.to_string())
                        .and_then(|w| ogice_w(pr, &w, &tanh, &cfg.ogice).map_err(|e| e.to_string()))
                        .map(|ex| (ex.params.w().clone(), ex.trace.iterations, ex.trace.converged)),
                    Algorithm::OgiceA => ogice_a(pr, a_ini, &tanh, &cfg.ogice)
                        .map(|ex| (ex.params.w().clone(), ex.trace.iterations, ex.trace.converged))
                        .map_err(|e| e.to_string()),
                    Algorithm::OgiceS => ogice_s(pr, a_ini, &tanh, &cfg.ogice)
                        .map(|ex| (ex.params.w().clone(), ex.trace.iterations, ex.trace.converged))
                        .map_err(|e| e.to_string()),
                    Algorithm::Ng | Algorithm::Scng => {
                        let ica = if alg == Algorithm::Ng { &cfg.ng } else { &cfg.scng };
                        initial_demixing(a_ini, pr.cx())
                            .map_err(|e| e.to_string())
                            .and_then(|w0| ica_solve(pr, &w0, &ica_score(), ica).map_err(|e| e.to_string()))
                            .map(|out| (out.separating_vector(), out.trace.iterations, out.trace.converged))
                    }
                    Algorithm::Fica => couple_w_from_a(a_ini, pr.cx())
                        .map_err(|e| e.to_string())
                        .and_then(|w| fica_one_unit(pr, &w, &fica_score(), &cfg.fica).map_err(|e| e.to_string()))
                        .map(|out| (out.params.w().clone(), out.trace.iterations, out.trace.converged)),
                    _ => unreachable!("joint algorithms handled above"),
                };
                record(o, m, p, res);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            d: 3,
            k: 2,
            n: 200,
            trials: 3,
            epsilon_sq: vec![0.0, 0.5],
            ogice: SolverConfig {
                max_iter: 30,
                ..SolverConfig::ogice()
            },
            ogive: SolverConfig {
                max_iter: 30,
                ..SolverConfig::ogive()
            },
            ng: IcaConfig {
                max_iter: 30,
                ..IcaConfig::ng()
            },
            scng: IcaConfig {
                max_iter: 30,
                ..IcaConfig::scng()
            },
            fica: FicaConfig {
                tol: 1e-6,
                max_iter: 30,
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn labels_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.label().parse::<Algorithm>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.label()));
        }
        assert!("ogice".parse::<Algorithm>().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"trials": 3, "tirals": 4}"#).unwrap_err();
        assert!(err.to_string().contains("tirals"));
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"trials": 3}"#).unwrap();
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.ogive.max_iter, 4000);
    }

    #[test]
    fn sweep_shape_and_determinism() {
        let cfg = tiny();
        let r1 = run_experiment(&cfg).unwrap();
        let expected = cfg.backgrounds.len() * cfg.epsilon_sq.len() * cfg.trials * cfg.algorithms.len();
        assert_eq!(r1.outcomes.len(), expected);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let r2 = pool.install(|| run_experiment(&cfg)).unwrap();
        let j1 = serde_json::to_string(&r1.summary()).unwrap();
        let j2 = serde_json::to_string(&r2.summary()).unwrap();
        assert_eq!(j1, j2);
        assert_eq!(r1.summary().len(), cfg.backgrounds.len() * cfg.epsilon_sq.len() * cfg.algorithms.len());
    }

    #[test]
    fn zero_perturbation_mpdr_is_oracle() {
        let cfg = ExperimentConfig {
            algorithms: vec![Algorithm::MpdrOracle, Algorithm::MpdrIni],
            ..tiny()
        };
        let r = run_experiment(&cfg).unwrap();
        for bg in &cfg.backgrounds {
            assert_eq!(
                r.sirs(Algorithm::MpdrOracle, *bg, Some(0.0)),
                r.sirs(Algorithm::MpdrIni, *bg, Some(0.0))
            );
            assert_eq!(r.success_rate(Algorithm::MpdrIni, *bg, 0.0), 1.0);
        }
    }

    #[test]
    fn common_random_numbers_across_levels() {
        let cfg = ExperimentConfig {
            algorithms: vec![Algorithm::MpdrOracle],
            ..tiny()
        };
        let r = run_experiment(&cfg).unwrap();
        let bg = cfg.backgrounds[0];
        assert_eq!(r.sirs(Algorithm::MpdrOracle, bg, Some(0.0)), r.sirs(Algorithm::MpdrOracle, bg, Some(0.5)));
    }

    #[test]
    fn failures_are_recorded_not_raised() {
        // a tiny iteration budget and a huge step provoke breakdowns without aborting
        let mut cfg = tiny();
        cfg.ogice.step_mu = 1e6;
        cfg.algorithms = vec![Algorithm::OgiceA, Algorithm::MpdrOracle];
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.outcomes.len(), cfg.backgrounds.len() * cfg.epsilon_sq.len() * cfg.trials * 2);
        let summary = r.summary();
        assert!(summary.iter().all(|row| row.trials == cfg.trials));
    }
}
