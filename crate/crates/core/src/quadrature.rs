//! Globally adaptive Gauss–Kronrod (10/21-point) quadrature, with a
//! rational map for semi-infinite ranges and a nested driver for the
//! ordered two-dimensional domain `hi > x1 > x2 > lo`.

#![allow(clippy::excessive_precision, clippy::needless_range_loop)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig { abs_tol: 1e-9, rel_tol: 1e-9, max_intervals: 4000 }
    }
}

impl QuadConfig {
    pub fn with_tol(abs_tol: f64, rel_tol: f64) -> Self {
        QuadConfig { abs_tol, rel_tol, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl QuadResult {
    /// Turns a non-converged result into [`Error::QuadratureFailure`].
    pub fn checked(self, cfg: &QuadConfig) -> Result<f64> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(Error::QuadratureFailure {
                achieved: self.abs_error,
                requested: cfg.abs_tol.max(cfg.rel_tol * self.value.abs()),
            })
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Segment {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error)
    }
}

fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_g = 0.0;
    let mut res_k = fc * WGK[10];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..5 {
        let jtw = 2 * j + 1;
        let x = half * XGK[jtw];
        let (f1, f2) = (f(center - x), f(center + x));
        fv1[jtw] = f1;
        fv2[jtw] = f2;
        res_g += WG[j] * (f1 + f2);
        res_k += WGK[jtw] * (f1 + f2);
        res_abs += WGK[jtw] * (f1.abs() + f2.abs());
    }
    for j in 0..5 {
        let jtw = 2 * j;
        let x = half * XGK[jtw];
        let (f1, f2) = (f(center - x), f(center + x));
        fv1[jtw] = f1;
        fv2[jtw] = f2;
        res_k += WGK[jtw] * (f1 + f2);
        res_abs += WGK[jtw] * (f1.abs() + f2.abs());
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let h = half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    let (res_abs, res_asc) = (res_abs * h, res_asc * h);
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (res_k * half, err)
}

/// Adaptive integration over the finite interval `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, cfg: &QuadConfig) -> QuadResult {
    if a == b {
        return QuadResult { value: 0.0, abs_error: 0.0, evaluations: 0, converged: true };
    }
    let mut heap = BinaryHeap::new();
    let (v, e) = gk21(&mut f, a, b);
    let mut total = v;
    let mut total_err = e;
    let mut evaluations = 21;
    heap.push(Segment { a, b, value: v, error: e });
    let mut converged = false;
    while heap.len() < cfg.max_intervals {
        if !total.is_finite() || !total_err.is_finite() {
            break;
        }
        if total_err <= cfg.abs_tol.max(cfg.rel_tol * total.abs()) {
            converged = true;
            break;
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval collapsed to machine resolution
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk21(&mut f, worst.a, mid);
        let (v2, e2) = gk21(&mut f, mid, worst.b);
        evaluations += 42;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // resum to shed the drift of the running totals
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let abs_error: f64 = heap.iter().map(|s| s.error).sum();
    if !converged {
        converged = abs_error <= cfg.abs_tol.max(cfg.rel_tol * value.abs());
    }
    QuadResult { value, abs_error, evaluations, converged: converged && value.is_finite() }
}

/// Integration over `[lo, hi]` where `hi` may be `+∞` (mapped through
/// `x = lo + t/(1 - t)`).
pub fn integrate_range<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, cfg: &QuadConfig) -> QuadResult {
    if hi.is_infinite() {
        integrate(
            |t| {
                let s = 1.0 - t;
                let v = f(lo + t / s);
                if v == 0.0 {
                    0.0
                } else {
                    v / (s * s)
                }
            },
            0.0,
            1.0,
            cfg,
        )
    } else {
        integrate(f, lo, hi, cfg)
    }
}

/// Nested integration of `f(x1, x2)` over `hi > x1 > x2 > lo` (`hi` may be
/// infinite). The inner integral runs over `x1 ∈ (x2, hi)` at a tolerance
/// one hundred times tighter than the outer one.
pub fn integrate_ordered_2d<F: FnMut(f64, f64) -> f64>(mut f: F, lo: f64, hi: f64, cfg: &QuadConfig) -> QuadResult {
    let inner_cfg = QuadConfig { abs_tol: cfg.abs_tol * 1e-2, rel_tol: cfg.rel_tol * 1e-2, ..*cfg };
    let mut inner_failures = 0usize;
    let mut inner_err = 0.0f64;
    let mut evaluations = 0usize;
    let mut outer = integrate_range(
        |x2| {
            let r = integrate_range(|x1| f(x1, x2), x2, hi, &inner_cfg);
            evaluations += r.evaluations;
            if !r.converged {
                inner_failures += 1;
                inner_err = inner_err.max(r.abs_error);
            }
            r.value
        },
        lo,
        hi,
        cfg,
    );
    outer.evaluations = evaluations;
    if inner_failures > 0 {
        outer.abs_error = outer.abs_error.max(inner_err);
        outer.converged = outer.converged && outer.abs_error <= cfg.abs_tol.max(cfg.rel_tol * outer.value.abs());
    }
    outer
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| 3.0 * x * x + 1.0, 0.0, 2.0, &QuadConfig::default());
        assert!(r.converged);
        assert!((r.value - 10.0).abs() < 1e-13);
    }

    #[test]
    fn endpoint_singularity() {
        // ∫₀¹ x^{-1/2} dx = 2
        let r = integrate(|x| x.powf(-0.5), 0.0, 1.0, &QuadConfig::default());
        assert!(r.converged, "{r:?}");
        assert!((r.value - 2.0).abs() < 1e-8);
    }

    #[test]
    fn semi_infinite_gamma_integrals() {
        for a in [0.5_f64, 1.5, 3.7] {
            let r = integrate_range(|t| t.powf(a - 1.0) * (-t).exp(), 0.0, f64::INFINITY, &QuadConfig::with_tol(1e-12, 1e-11));
            let exact = statrs::function::gamma::gamma(a);
            assert!((r.value - exact).abs() < 1e-8 * exact, "a={a} {r:?}");
        }
    }

    #[test]
    fn ordered_square_is_half_the_square() {
        // ∫∫_{1>x1>x2>0} (x1 - x2) = 1/6
        let r = integrate_ordered_2d(|a, b| a - b, 0.0, 1.0, &QuadConfig::default());
        assert!((r.value - 1.0 / 6.0).abs() < 1e-12);
        // ∫∫_{x1>x2>0} e^{-x1-x2} = 1/2
        let r = integrate_ordered_2d(|a, b| (-a - b).exp(), 0.0, f64::INFINITY, &QuadConfig::default());
        assert!((r.value - 0.5).abs() < 1e-10);
    }

    #[test]
    fn cauchy_total_mass() {
        let r = integrate_range(|x| 2.0 / (PI * (1.0 + x * x)), 0.0, f64::INFINITY, &QuadConfig::default());
        assert!((r.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn failure_is_reported() {
        let cfg = QuadConfig { abs_tol: 1e-15, rel_tol: 1e-15, max_intervals: 3 };
        let r = integrate(|x| x.powf(-0.9), 0.0, 1.0, &cfg);
        assert!(!r.converged);
        assert!(matches!(r.checked(&cfg), Err(Error::QuadratureFailure { .. })));
    }
}
