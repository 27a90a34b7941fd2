//! Batched elementwise math for the per-sample hot loops.
//!
//! The kernels are branch-free over fixed-size blocks so that the compiler
//! can vectorize them. Only IEEE add, multiply, divide and integer bit
//! operations are used, so results do not depend on the vector width.

// fdlibm split constants are kept digit for digit
#![allow(clippy::excessive_precision, clippy::manual_clamp)]

use crate::linalg::C64;

/// Defines a function whose body is also compiled with AVX2 enabled and
/// selected at runtime. No FMA is enabled, so both paths round identically.
macro_rules! avx2_dispatch {
    ($(#[$m:meta])* $vis:vis fn $name:ident($($arg:ident: $ty:ty),* $(,)?) $(-> $ret:ty)? $body:block) => {
        $(#[$m])*
        $vis fn $name($($arg: $ty),*) $(-> $ret)? {
            #[inline(always)]
            fn body($($arg: $ty),*) $(-> $ret)? $body
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn wide($($arg: $ty),*) $(-> $ret)? {
                    body($($arg),*)
                }
                if std::is_x86_feature_detected!("avx2") {
                    // SAFETY: the feature was detected on this CPU
                    return unsafe { wide($($arg),*) };
                }
            }
            body($($arg),*)
        }
    };
}
pub(crate) use avx2_dispatch;

const BLOCK: usize = 64;

/// `1.5 * 2^52`: adding it rounds to the nearest integer, kept in the low mantissa bits.
const ROUND_MAGIC: f64 = 6755399441055744.0;

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.93147180369123816490e-01;
const LN2_LO: f64 = 1.90821492927058770002e-10;

const FRAC_2_PI: f64 = std::f64::consts::FRAC_2_PI;
const PIO2_1: f64 = 1.57079632673412561417e+00;
const PIO2_2: f64 = 6.07710050630396597660e-11;
const PIO2_3: f64 = 2.02226624871116645580e-21;
const PIO2_3T: f64 = 8.47842766036889956997e-32;

/// Beyond this the three-part reduction loses accuracy; such inputs go through libm.
const SINCOS_REDUCE_LIMIT: f64 = 1.0e5;

/// Largest `|2x|` fed to `exp`; `tanh` is `±1` to double precision past it.
const TANH_ARG_LIMIT: f64 = 40.0;

#[inline(always)]
fn exp_reduced(v: f64) -> f64 {
    // v in [-40, 40]: v = n ln2 + r, |r| <= ln2 / 2
    let t = v * LOG2_E + ROUND_MAGIC;
    let n = t - ROUND_MAGIC;
    let r = v - n * LN2_HI - n * LN2_LO;
    // Taylor to degree 13 is below 1e-17 relative on |r| <= 0.347
    let mut p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let bits = t.to_bits().wrapping_sub(ROUND_MAGIC.to_bits());
    let scale = f64::from_bits(bits.wrapping_add(1023).wrapping_shl(52));
    p * scale
}

#[inline(always)]
fn sincos_reduced(z: f64) -> (f64, f64) {
    let t = z * FRAC_2_PI + ROUND_MAGIC;
    let k = t - ROUND_MAGIC;
    let r = ((z - k * PIO2_1) - k * PIO2_2) - k * PIO2_3 - k * PIO2_3T;
    let r2 = r * r;
    let mut s = -1.0 / 1307674368000.0;
    s = s * r2 + 1.0 / 6227020800.0;
    s = s * r2 - 1.0 / 39916800.0;
    s = s * r2 + 1.0 / 362880.0;
    s = s * r2 - 1.0 / 5040.0;
    s = s * r2 + 1.0 / 120.0;
    s = s * r2 - 1.0 / 6.0;
    s = s * r2 * r + r;
    let mut c = 1.0 / 6402373705728000.0;
    c = c * r2 - 1.0 / 20922789888000.0;
    c = c * r2 + 1.0 / 87178291200.0;
    c = c * r2 - 1.0 / 479001600.0;
    c = c * r2 + 1.0 / 3628800.0;
    c = c * r2 - 1.0 / 40320.0;
    c = c * r2 + 1.0 / 720.0;
    c = c * r2 - 1.0 / 24.0;
    c = c * r2 + 0.5;
    c = 1.0 - c * r2;
    // quadrant q = k mod 4: sin z = [s, c, -s, -c][q], cos z = [c, -s, -c, s][q]
    let q = t.to_bits().wrapping_sub(ROUND_MAGIC.to_bits());
    let swap = 0u64.wrapping_sub(q & 1);
    let (sb, cb) = (s.to_bits(), c.to_bits());
    let sin_b = (sb & !swap) | (cb & swap);
    let cos_b = (cb & !swap) | (sb & swap);
    let sin_sign = (q & 2) << 62;
    let cos_sign = (q.wrapping_add(1) & 2) << 62;
    (f64::from_bits(sin_b ^ sin_sign), f64::from_bits(cos_b ^ cos_sign))
}

/// `exp(v)` for `v` in `[-40, 40]`, exposed for testing.
pub fn exp_small(v: f64) -> f64 {
    exp_reduced(v.clamp(-TANH_ARG_LIMIT, TANH_ARG_LIMIT))
}

/// `(sin z, cos z)`, exposed for testing.
pub fn sin_cos(z: f64) -> (f64, f64) {
    if z.abs() > SINCOS_REDUCE_LIMIT {
        z.sin_cos()
    } else {
        sincos_reduced(z)
    }
}

avx2_dispatch! {
/// `out[i] = conj(tanh(scale * z[i]))` for finite `z`.
pub fn conj_tanh_scaled(z: &[C64], scale: f64, out: &mut [C64]) {
    assert_eq!(z.len(), out.len(), "conj_tanh_scaled length");
    let mut xr = [0.0f64; BLOCK];
    let mut yi = [0.0f64; BLOCK];
    let mut e = [0.0f64; BLOCK];
    let mut sn = [0.0f64; BLOCK];
    let mut cs = [0.0f64; BLOCK];
    for (zc, oc) in z.chunks(BLOCK).zip(out.chunks_mut(BLOCK)) {
        let m = zc.len();
        let s2 = 2.0 * scale;
        for i in 0..m {
            xr[i] = s2 * zc[i].re;
            yi[i] = s2 * zc[i].im;
        }
        for v in &mut xr[..m] {
            // max/min rather than clamp; callers reject non-finite input
            *v = v.max(-TANH_ARG_LIMIT).min(TANH_ARG_LIMIT);
        }
        // integer compare of |y| bits: also flags NaN
        let limit = SINCOS_REDUCE_LIMIT.to_bits();
        let mut wide = 0u64;
        for v in &yi[..m] {
            wide |= (v.abs().to_bits() > limit) as u64;
        }
        let wide = wide != 0;
        for i in 0..m {
            e[i] = exp_reduced(xr[i]);
        }
        for i in 0..m {
            let (s, c) = sincos_reduced(yi[i]);
            sn[i] = s;
            cs[i] = c;
        }
        if wide {
            for i in 0..m {
                if !(yi[i].abs() <= SINCOS_REDUCE_LIMIT) {
                    (sn[i], cs[i]) = yi[i].sin_cos();
                }
            }
        }
        // conj(tanh) = (e^2 - 1 - 2i e sin 2y) / (e^2 + 1 + 2 e cos 2y) with e = exp(2x)
        for i in 0..m {
            let e2 = e[i] * e[i];
            let inv = 1.0 / (e2 + 1.0 + 2.0 * e[i] * cs[i]);
            oc[i] = C64::new((e2 - 1.0) * inv, -2.0 * e[i] * sn[i] * inv);
        }
    }
}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn exp_matches_library() {
        let mut rng = Rng::new(1);
        for _ in 0..20_000 {
            let v = rng.uniform_range(-40.0, 40.0);
            let rel = (exp_small(v) - v.exp()).abs() / v.exp();
            assert!(rel < 4e-16, "exp({v}): {rel}");
        }
        assert_eq!(exp_small(0.0), 1.0);
    }

    #[test]
    fn sin_cos_matches_library() {
        let mut rng = Rng::new(2);
        for scale in [1.0, 10.0, 1e3, 1e5, 1e7] {
            for _ in 0..5_000 {
                let z = rng.uniform_range(-scale, scale);
                let (s, c) = sin_cos(z);
                assert!((s - z.sin()).abs() < 1e-15 * (1.0 + z.abs() * 1e-5), "sin({z})");
                assert!((c - z.cos()).abs() < 1e-15 * (1.0 + z.abs() * 1e-5), "cos({z})");
            }
        }
        for k in -8..=8 {
            let z = k as f64 * std::f64::consts::FRAC_PI_2;
            let (s, c) = sin_cos(z);
            assert!((s - z.sin()).abs() < 1e-15 && (c - z.cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn tanh_block_matches_scalar_formula() {
        let mut rng = Rng::new(3);
        let z: Vec<C64> = (0..1000)
            .map(|i| rng.complex_normal() * if i % 7 == 0 { 30.0 } else { 1.5 })
            .chain([C64::new(0.0, 0.0), C64::new(25.0, 3.0), C64::new(-25.0, 1e6), C64::new(0.3, 1e5 + 1.0)])
            .collect();
        let mut out = vec![C64::new(0.0, 0.0); z.len()];
        conj_tanh_scaled(&z, 0.5, &mut out);
        for (x, o) in z.iter().zip(&out) {
            let t = (x * 0.5).tanh().conj();
            assert!((o - t).norm() < 1e-13 * t.norm().max(1.0), "{x}: {o} vs {t}");
        }
    }
}
