//! Library side of the `ice` binary: benchmark export, single extractions,
//! fixture generation and the self-check report.

pub mod config;
pub mod plot;
pub mod signal;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{fica_one_unit, fica_score, ica_score, ica_solve, initial_demixing};
use crate::error::{IceError, Result};
use crate::ice::{ogice_a, ogice_s, ogice_w, IceProblem};
use crate::ive::{ogive_a, ogive_s, ogive_w, JointProblem, JointResult};
use crate::linalg::{CMatrix, CVector, C64};
use crate::mixing::{couple_a_from_w, couple_w_from_a};
use crate::rng::Rng;
use crate::score::ScoreModel;
use crate::simbench::{
    build_trial, perturb_init, run_experiment, sir_db, Algorithm, Background, ExperimentConfig, ExperimentResult,
    Histogram, MixtureTruth, SummaryRow,
};
use crate::verify::Report;

pub use config::{digest_of, resolve, RunManifest};

/// Column names of `results.csv`.
pub const CSV_HEADER: &str = "algorithm,background,epsilon_sq,trials,success_rate,sir_mean_db,sir_median_db,mean_iters";

fn io_err(path: &Path, e: std::io::Error) -> IceError {
    IceError::Format(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn pairs(v: &[C64]) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn from_pairs(v: &[[f64; 2]]) -> CVector {
    v.iter().map(|p| C64::new(p[0], p[1])).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------- bench

/// Summary table with a leading `# manifest=<digest>` comment line.
pub fn summary_csv(rows: &[SummaryRow], digest: &str) -> String {
    let mut out = format!("# manifest={digest}\n{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:e},{},{:.6},{:.4},{:.4},{:.2}",
            r.algorithm.label(),
            r.background.label(),
            r.epsilon_sq,
            r.trials,
            r.success_rate,
            r.sir_mean_db,
            r.sir_median_db,
            r.mean_iters
        );
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct HistogramEntry {
    pub algorithm: Algorithm,
    pub background: Background,
    /// `None` for the histogram pooled over every perturbation level.
    pub epsilon_sq: Option<f64>,
    pub histogram: Histogram,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub digest: String,
    pub summary: Vec<SummaryRow>,
    pub histograms: Vec<HistogramEntry>,
}

impl BenchReport {
    pub fn new(result: &ExperimentResult) -> Self {
        let cfg = &result.config;
        let mut histograms = Vec::new();
        for &algorithm in &cfg.algorithms {
            for &background in &cfg.backgrounds {
                let levels = cfg.epsilon_sq.iter().map(|&e| Some(e)).chain([None]);
                for epsilon_sq in levels {
                    histograms.push(HistogramEntry {
                        algorithm,
                        background,
                        epsilon_sq,
                        histogram: result.histogram(algorithm, background, epsilon_sq),
                    });
                }
            }
        }
        Self {
            digest: digest_of(cfg),
            summary: result.summary(),
            histograms,
        }
    }

    pub fn csv(&self) -> String {
        summary_csv(&self.summary, &self.digest)
    }
}

pub struct BenchOutput {
    pub result: ExperimentResult,
    pub report: BenchReport,
    pub files: Vec<PathBuf>,
}

/// Run the sweep and write `results.csv`, `results.json`, `success.svg`,
/// `histograms-<background>.svg` and `manifest.json` into `out_dir`.
///
/// Everything except the manifest timestamp is a function of the config.
pub fn cmd_bench(cfg: &ExperimentConfig, out_dir: &Path) -> Result<BenchOutput> {
    cfg.validate()?;
    let result = run_experiment(cfg)?;
    let report = BenchReport::new(&result);
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut files = Vec::new();
    let mut emit = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = out_dir.join(name);
        write_file(&path, bytes)?;
        files.push(path);
        Ok(())
    };
    emit("results.csv".into(), report.csv().into_bytes())?;
    emit("results.json".into(), to_json(&report)?.into_bytes())?;
    emit("success.svg".into(), plot::success_curves(&result, &report.digest).into_bytes())?;
    for &bg in &cfg.backgrounds {
        emit(format!("histograms-{}.svg", bg.label()), plot::histograms(&result, bg, &report.digest).into_bytes())?;
    }
    emit("manifest.json".into(), to_json(&RunManifest::new(cfg))?.into_bytes())?;
    Ok(BenchOutput { result, report, files })
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| IceError::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

// ---------------------------------------------------------------- extract

/// Parse `re,im,re,im,...` vectors separated by `;`.
pub fn parse_init(text: &str) -> Result<Vec<CVector>> {
    text.split(';')
        .map(|part| {
            let nums = part
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| IceError::Format(format!("bad number `{}` in init", t.trim()))))
                .collect::<Result<Vec<f64>>>()?;
            if nums.is_empty() || nums.len() % 2 != 0 || nums.iter().any(|v| !v.is_finite()) {
                return Err(IceError::Format(format!("init `{part}` must be an even number of finite values")));
            }
            Ok(nums.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect())
        })
        .collect()
}

pub fn format_init(vs: &[CVector]) -> String {
    vs.iter()
        .map(|v| v.iter().map(|z| format!("{:e},{:e}", z.re, z.im)).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthEntry {
    /// Rows of the mixing matrix as `[re, im]` pairs; column 0 is the SOI.
    pub mixing: Vec<Vec<[f64; 2]>>,
    pub variances: Vec<f64>,
    pub sr_db: f64,
    #[serde(default)]
    pub a: Vec<[f64; 2]>,
    #[serde(default)]
    pub a_ini: Vec<[f64; 2]>,
}

impl TruthEntry {
    fn from_truth(t: &MixtureTruth, a_ini: &CVector) -> Self {
        let mixing = (0..t.mixing.rows()).map(|r| pairs(t.mixing.row(r))).collect();
        Self {
            mixing,
            variances: t.variances.clone(),
            sr_db: t.sr_db,
            a: pairs(t.a().as_slice()),
            a_ini: pairs(a_ini.as_slice()),
        }
    }

    pub fn to_truth(&self) -> Result<MixtureTruth> {
        let d = self.mixing.len();
        if d == 0 || self.mixing.iter().any(|r| r.len() != d) || self.variances.len() != d {
            return Err(IceError::Format("truth mixing must be square and match the variances".into()));
        }
        let data = self.mixing.iter().flat_map(|r| from_pairs(r).into_vec()).collect();
        Ok(MixtureTruth {
            mixing: CMatrix::from_vec(d, d, data)?,
            variances: self.variances.clone(),
            sr_db: self.sr_db,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub digest: String,
    pub background: Background,
    pub epsilon_sq: f64,
    /// Perturbed initial mixing vectors in `--init` syntax.
    pub init: String,
    pub mixtures: Vec<TruthEntry>,
}

impl TruthFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| IceError::Format(format!("{}: {e}", path.display())))
    }
}

pub struct ExtractRequest {
    pub algorithm: Algorithm,
    /// One `d x N` matrix per mixture.
    pub inputs: Vec<CMatrix>,
    /// Initial mixing vectors, one per mixture.
    pub inits: Vec<CVector>,
    pub pilot: Option<CVector>,
    pub truth: Option<Vec<MixtureTruth>>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceSummary {
    pub iterations: usize,
    pub converged: bool,
    /// Per-iteration stopping quantity: gradient norm for the gradient
    /// solvers, update norm for NG/scNG, iterate change for FICA.
    pub norms: Vec<f64>,
    /// Solver-specific history.
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct MixtureOutput {
    pub a: Vec<[f64; 2]>,
    pub w: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sir_db: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtractReport {
    pub digest: String,
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub converged: bool,
    pub mixtures: Vec<MixtureOutput>,
    pub trace: TraceSummary,
}

pub struct ExtractOutput {
    pub report: ExtractReport,
    /// Extracted signals, one row per mixture.
    pub signals: CMatrix,
}

#[derive(Serialize)]
struct ExtractManifest<'a> {
    version: &'a str,
    algorithm: Algorithm,
    inputs: Vec<String>,
    init: String,
    pilot: Option<String>,
    config: &'a ExperimentConfig,
}

fn detail<T: Serialize>(t: &T) -> serde_json::Value {
    serde_json::to_value(t).unwrap_or(serde_json::Value::Null)
}

type Solved = (Vec<(CVector, CVector)>, TraceSummary);

fn solve_joint(res: JointResult) -> Result<Solved> {
    let ex = res.map_err(|f| f.error)?;
    let pairs = ex.params.params.iter().map(|p| (p.a().clone(), p.w().clone())).collect();
    let trace = TraceSummary {
        iterations: ex.trace.iterations,
        converged: ex.trace.converged,
        norms: ex.trace.max_grad_norms.clone(),
        detail: detail(&ex.trace),
    };
    Ok((pairs, trace))
}

fn solve_single(alg: Algorithm, cfg: &ExperimentConfig, pr: &IceProblem, a_ini: &CVector, truth: Option<&MixtureTruth>) -> Result<((CVector, CVector), TraceSummary)> {
    let tanh = ScoreModel::tanh();
    let closed = |a: CVector, w: CVector| {
        let t = TraceSummary { iterations: 0, converged: true, norms: vec![], detail: serde_json::Value::Null };
        Ok(((a, w), t))
    };
    let ice = |ex: crate::ice::Extraction| {
        let t = TraceSummary {
            iterations: ex.trace.iterations,
            converged: ex.trace.converged,
            norms: ex.trace.grad_norms.clone(),
            detail: detail(&ex.trace),
        };
        Ok(((ex.params.a().clone(), ex.params.w().clone()), t))
    };
    match alg {
        Algorithm::MpdrOracle => {
            let t = truth.ok_or_else(|| IceError::Config("mpdr-oracle needs --truth".into()))?;
            let a = t.a();
            let w = couple_w_from_a(&a, pr.cx())?;
            closed(a, w)
        }
        Algorithm::MpdrIni => closed(a_ini.clone(), couple_w_from_a(a_ini, pr.cx())?),
        Algorithm::OgiceW => ice(ogice_w(pr, &couple_w_from_a(a_ini, pr.cx())?, &tanh, &cfg.ogice).map_err(|f| f.error)?),
        Algorithm::OgiceA => ice(ogice_a(pr, a_ini, &tanh, &cfg.ogice).map_err(|f| f.error)?),
        Algorithm::OgiceS => ice(ogice_s(pr, a_ini, &tanh, &cfg.ogice).map_err(|f| f.error)?),
        Algorithm::Ng | Algorithm::Scng => {
            let ica = if alg == Algorithm::Ng { &cfg.ng } else { &cfg.scng };
            let out = ica_solve(pr, &initial_demixing(a_ini, pr.cx())?, &ica_score(), ica).map_err(|f| f.error)?;
            let w = out.separating_vector();
            let a = couple_a_from_w(&w, pr.cx())?;
            let t = TraceSummary {
                iterations: out.trace.iterations,
                converged: out.trace.converged,
                norms: out.trace.step_norms.clone(),
                detail: detail(&out.trace),
            };
            Ok(((a, w), t))
        }
        Algorithm::Fica => {
            let out = fica_one_unit(pr, &couple_w_from_a(a_ini, pr.cx())?, &fica_score(), &cfg.fica).map_err(|f| f.error)?;
            let t = TraceSummary {
                iterations: out.trace.iterations,
                converged: out.trace.converged,
                norms: out.trace.changes.clone(),
                detail: serde_json::Value::Null,
            };
            Ok(((out.params.a().clone(), out.params.w().clone()), t))
        }
        _ => unreachable!("joint algorithms are solved together"),
    }
}

/// Run one algorithm on user data. IVE algorithms treat the inputs as the K
/// mixtures of one joint problem; ICE algorithms and baselines process each
/// input on its own.
pub fn extract(req: &ExtractRequest) -> Result<ExtractOutput> {
    let k = req.inputs.len();
    if k == 0 {
        return Err(IceError::Format("no input signal".into()));
    }
    if req.inits.len() != k {
        return Err(IceError::Format(format!("{k} inputs but {} initial vectors", req.inits.len())));
    }
    for (m, (x, a)) in req.inputs.iter().zip(&req.inits).enumerate() {
        if a.len() != x.rows() {
            return Err(IceError::Format(format!("init {m} has {} entries, input has {} channels", a.len(), x.rows())));
        }
    }
    if let Some(t) = &req.truth {
        if t.len() != k || t.iter().zip(&req.inputs).any(|(t, x)| t.mixing.rows() != x.rows()) {
            return Err(IceError::Format("truth does not match the inputs".into()));
        }
    }
    let problems = req.inputs.iter().cloned().map(IceProblem::new).collect::<Result<Vec<_>>>()?;
    let (solved, trace) = if req.algorithm.is_joint() {
        let mut joint = JointProblem::from_problems(problems.clone())?;
        let cfg = &req.config.ogive;
        let vector = ScoreModel::vector();
        let res = match req.algorithm {
            Algorithm::OgiveW => {
                let ws = problems.iter().zip(&req.inits).map(|(p, a)| couple_w_from_a(a, p.cx())).collect::<Result<Vec<_>>>()?;
                ogive_w(&joint, &ws, &vector, cfg)
            }
            Algorithm::OgiveA => ogive_a(&joint, &req.inits, &vector, cfg),
            Algorithm::OgiveS => ogive_s(&joint, &req.inits, &vector, cfg),
            _ => {
                let pilot = req.pilot.clone().ok_or_else(|| IceError::Config("piloted-ogive-s needs --pilot".into()))?;
                joint = joint.with_pilot(pilot)?;
                ogive_s(&joint, &req.inits, &joint.vector_model(), cfg)
            }
        };
        solve_joint(res)?
    } else {
        let mut all = Vec::with_capacity(k);
        let mut traces = Vec::with_capacity(k);
        for (m, pr) in problems.iter().enumerate() {
            let truth = req.truth.as_ref().map(|t| &t[m]);
            let (pair, t) = solve_single(req.algorithm, &req.config, pr, &req.inits[m], truth)?;
            all.push(pair);
            traces.push(t);
        }
        let trace = if k == 1 {
            traces.pop().expect("one trace")
        } else {
            TraceSummary {
                iterations: traces.iter().map(|t| t.iterations).max().unwrap_or(0),
                converged: traces.iter().all(|t| t.converged),
                norms: vec![],
                detail: detail(&traces),
            }
        };
        (all, trace)
    };
    let n = req.inputs[0].cols();
    let mut signals = CMatrix::zeros(k, n.max(1));
    if req.inputs.iter().all(|x| x.cols() == n) {
        for (m, (pr, (_, w))) in problems.iter().zip(&solved).enumerate() {
            signals.set_row(m, pr.x().project(w).as_slice());
        }
    } else {
        return Err(IceError::Format("all inputs must have the same number of samples".into()));
    }
    let mixtures = solved
        .iter()
        .enumerate()
        .map(|(m, (a, w))| MixtureOutput {
            a: pairs(a.as_slice()),
            w: pairs(w.as_slice()),
            sir_db: req.truth.as_ref().map(|t| sir_db(w, &t[m])),
        })
        .collect();
    let manifest = ExtractManifest {
        version: env!("CARGO_PKG_VERSION"),
        algorithm: req.algorithm,
        inputs: req.inputs.iter().map(|x| sha256_hex(&signal::encode(x))).collect(),
        init: format_init(&req.inits),
        pilot: req.pilot.as_ref().map(|p| format_init(std::slice::from_ref(p))),
        config: &req.config,
    };
    let report = ExtractReport {
        digest: digest_of(&manifest),
        algorithm: req.algorithm,
        iterations: trace.iterations,
        converged: trace.converged,
        mixtures,
        trace,
    };
    Ok(ExtractOutput { report, signals })
}

/// Write `extracted.sig` and `result.json` into `out_dir`.
pub fn write_extraction(out: &ExtractOutput, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    write_file(&out_dir.join("extracted.sig"), signal::encode(&out.signals))?;
    write_file(&out_dir.join("result.json"), to_json(&out.report)?)
}

/// Exit status of `ice extract`: 0 converged, 2 stopped at the iteration cap.
pub fn extract_status(report: &ExtractReport) -> i32 {
    if report.converged {
        0
    } else {
        2
    }
}

// ---------------------------------------------------------------- generate

/// Write trial 0 of the benchmark for `background` as `mixture-<k>.sig`,
/// `pilot.sig` and `truth.json`, with initial vectors perturbed by `epsilon_sq`.
///
/// The random streams are the ones `ice bench` uses for the same trial.
pub fn cmd_generate(cfg: &ExperimentConfig, background: Background, epsilon_sq: f64, out_dir: &Path) -> Result<TruthFile> {
    cfg.validate()?;
    let b = cfg.backgrounds.iter().position(|x| *x == background).unwrap_or(0) as u64;
    let root = Rng::new(cfg.seed).split(b).split(0);
    let trial = build_trial(&cfg.trial_config(background, 0.0), &mut root.split(0))?;
    let mut prng = root.split(1);
    let inits = trial
        .truth
        .iter()
        .map(|t| perturb_init(&t.a(), epsilon_sq, &mut prng))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    for (m, x) in trial.x.iter().enumerate() {
        write_file(&out_dir.join(format!("mixture-{m}.sig")), signal::encode(x))?;
    }
    let pilot = CMatrix::from_rows(std::slice::from_ref(&trial.pilot))?;
    write_file(&out_dir.join("pilot.sig"), signal::encode(&pilot))?;
    let file = TruthFile {
        digest: digest_of(cfg),
        background,
        epsilon_sq,
        init: format_init(&inits),
        mixtures: trial.truth.iter().zip(&inits).map(|(t, a)| TruthEntry::from_truth(t, a)).collect(),
    };
    write_file(&out_dir.join("truth.json"), to_json(&file)?)?;
    Ok(file)
}

// ---------------------------------------------------------------- verify

pub fn verify_text(report: &Report) -> String {
    let mut out = String::new();
    for c in &report.checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        let _ = write!(
            out,
            "{status}  {:<28} {:<12} n={:<4} worst={:.3e} tol={:.1e}",
            c.name, c.group, c.instances, c.worst, c.tol
        );
        if let Some(e) = &c.error {
            let _ = write!(out, "  error: {e}");
        }
        out.push('\n');
    }
    let failed = report.checks.iter().filter(|c| !c.passed()).count();
    let _ = writeln!(out, "{} checks, {failed} failed", report.checks.len());
    out
}

pub fn verify_csv(report: &Report) -> String {
    let mut out = String::from("check,group,instances,worst,tol,passed\n");
    for c in &report.checks {
        let _ = writeln!(out, "{},{},{},{:e},{:e},{}", c.name, c.group, c.instances, c.worst, c.tol, c.passed());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_lists_round_trip() {
        let v = parse_init("1,0, 0.5,-2; 3,4,5,6").unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0][1], C64::new(0.5, -2.0));
        assert_eq!(parse_init(&format_init(&v)).unwrap(), v);
        assert!(parse_init("1,2,3").is_err());
        assert!(parse_init("1,x").is_err());
        assert!(parse_init("").is_err());
    }

    #[test]
    fn csv_has_manifest_line_and_stable_header() {
        let csv = summary_csv(&[], "abc");
        assert_eq!(csv, format!("# manifest=abc\n{CSV_HEADER}\n"));
    }
}
