//! Output SIR and aggregate statistics.

use serde::{Deserialize, Serialize};

use super::generate::MixtureTruth;
use crate::linalg::CVector;

/// Cap applied to perfect (or perfectly wrong) extractions.
pub const SIR_CAP_DB: f64 = 150.0;

/// Output SIR in dB of `s_hat = w^H x` from the true mixing algebra.
pub fn sir_db(w: &CVector, truth: &MixtureTruth) -> f64 {
    let d = truth.mixing.rows();
    let mut soi = 0.0;
    let mut rest = 0.0;
    for j in 0..d {
        let col = truth.mixing.column(j);
        let p = w.dot(&col).norm_sqr() * truth.variances[j];
        if j == 0 {
            soi = p;
        } else {
            rest += p;
        }
    }
    if !soi.is_finite() || !rest.is_finite() {
        return f64::NAN;
    }
    if rest == 0.0 {
        return if soi > 0.0 { SIR_CAP_DB } else { f64::NAN };
    }
    if soi == 0.0 {
        return -SIR_CAP_DB;
    }
    (10.0 * (soi / rest).log10()).clamp(-SIR_CAP_DB, SIR_CAP_DB)
}

/// Fixed-width histogram; values outside the range land in the edge bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        assert!(hi > lo && bins > 0);
        Self {
            lo,
            hi,
            counts: vec![0; bins],
        }
    }

    /// 2 dB bins over `[-50, 50]`.
    pub fn sir_default() -> Self {
        Self::new(-50.0, 50.0, 50)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let b = ((v - self.lo) / self.width()).floor();
        (b.max(0.0) as usize).min(self.counts.len() - 1)
    }

    pub fn add(&mut self, v: f64) {
        if v.is_nan() {
            return;
        }
        let b = self.bin_of(v);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.width()
    }

    /// Center of the most populated bin among those with centers in `[lo, hi]`.
    pub fn mode_within(&self, lo: f64, hi: f64) -> Option<f64> {
        (0..self.counts.len())
            .filter(|&b| (lo..=hi).contains(&self.center(b)) && self.counts[b] > 0)
            .max_by_key(|&b| self.counts[b])
            .map(|b| self.center(b))
    }

    /// Local maxima of the smoothed counts, as bin centers.
    pub fn peaks(&self, min_share: f64) -> Vec<f64> {
        let n = self.counts.len();
        let total = self.total().max(1) as f64;
        let smooth: Vec<f64> = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(n - 1);
                (lo..=hi).map(|j| self.counts[j] as f64).sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect();
        (0..n)
            .filter(|&i| {
                let left = if i == 0 { f64::NEG_INFINITY } else { smooth[i - 1] };
                let right = if i + 1 == n { f64::NEG_INFINITY } else { smooth[i + 1] };
                smooth[i] > left && smooth[i] >= right && smooth[i] / total >= min_share
            })
            .map(|i| self.center(i))
            .collect()
    }

    /// Share of outcomes falling in bins entirely inside `(lo, hi)`.
    pub fn share_between(&self, lo: f64, hi: f64) -> f64 {
        let w = self.width();
        let inside: u64 = (0..self.counts.len())
            .filter(|&b| {
                let left = self.lo + b as f64 * w;
                left >= lo && left + w <= hi
            })
            .map(|b| self.counts[b])
            .sum();
        inside as f64 / self.total().max(1) as f64
    }
}

/// Fraction of values strictly above 0 dB.
pub fn success_rate(sirs: &[f64]) -> f64 {
    if sirs.is_empty() {
        return f64::NAN;
    }
    sirs.iter().filter(|&&v| v > 0.0).count() as f64 / sirs.len() as f64
}

/// Binomial standard error of a success rate estimate.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        return f64::NAN;
    }
    finite.iter().sum::<f64>() / finite.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        return f64::NAN;
    }
    finite.sort_by(f64::total_cmp);
    let m = finite.len() / 2;
    if finite.len() % 2 == 1 {
        finite[m]
    } else {
        0.5 * (finite[m - 1] + finite[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{CMatrix, C64};
    use crate::rng::Rng;
    use crate::simbench::generate::{build_trial, TrialConfig};

    #[test]
    fn identity_mixing_closed_form() {
        let truth = MixtureTruth {
            mixing: CMatrix::identity(6),
            variances: vec![1.0; 6],
            sr_db: 0.0,
        };
        let w = CVector::basis(6, 0);
        assert_eq!(sir_db(&w, &truth), SIR_CAP_DB);
        let w = CVector::new(vec![C64::new(1.0, 0.0); 6]);
        assert!((sir_db(&w, &truth) - 10.0 * (0.2f64).log10()).abs() < 1e-12);
    }

    #[test]
    fn true_separating_vector_is_near_perfect() {
        let cfg = TrialConfig {
            n: 100,
            ..TrialConfig::default()
        };
        let t = build_trial(&cfg, &mut Rng::new(3)).unwrap();
        for truth in &t.truth {
            let w = truth.separating_vector().unwrap();
            assert!(sir_db(&w, truth) > 100.0);
        }
    }

    #[test]
    fn matches_time_domain_power_split() {
        let cfg = TrialConfig {
            n: 10_000,
            k: 1,
            ..TrialConfig::default()
        };
        let mut rng = Rng::new(4);
        let t = build_trial(&cfg, &mut rng).unwrap();
        let truth = &t.truth[0];
        let d = cfg.d;
        for _ in 0..5 {
            let w: CVector = (0..d).map(|_| rng.complex_normal()).collect();
            // reconstruct the sources and split the output by contribution
            let u = truth.mixing.inverse().unwrap().matmul(&t.x[0]).unwrap();
            let mut soi = 0.0;
            let mut rest = 0.0;
            for j in 0..cfg.n {
                let g0 = w.dot(&truth.mixing.column(0));
                soi += (g0 * u[(0, j)]).norm_sqr();
                let mut r = C64::new(0.0, 0.0);
                for i in 1..d {
                    r += w.dot(&truth.mixing.column(i)) * u[(i, j)];
                }
                rest += r.norm_sqr();
            }
            let oracle = 10.0 * (soi / rest).log10();
            assert!((oracle - sir_db(&w, truth)).abs() < 0.1, "{oracle} vs {}", sir_db(&w, truth));
        }
    }

    #[test]
    fn histogram_binning() {
        let mut h = Histogram::sir_default();
        assert_eq!(h.counts.len(), 50);
        h.add(-50.0);
        h.add(49.9);
        h.add(150.0);
        h.add(-1000.0);
        h.add(0.5);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[49], 2);
        assert_eq!(h.counts[25], 1);
        assert_eq!(h.total(), 5);
        assert!((h.share_between(-10.0, 10.0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn bimodal_peaks() {
        let mut h = Histogram::sir_default();
        for _ in 0..50 {
            h.add(21.0);
            h.add(-19.0);
        }
        for v in [0.0, 5.0, -5.0] {
            h.add(v);
        }
        let p = h.peaks(0.05);
        assert_eq!(p.len(), 2);
        assert_eq!(h.mode_within(10.0, 35.0), Some(21.0));
    }

    #[test]
    fn stats() {
        assert_eq!(success_rate(&[1.0, -1.0, 0.0, 5.0]), 0.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((binomial_se(0.5, 100) - 0.05).abs() < 1e-15);
    }
}
