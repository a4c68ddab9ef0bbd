//! Hypergeometric functions of one matrix argument and the confluent
//! function `Ψ^β`.
//!
//! The series `ᵣF_s^β(a; b; X) = Σ_k Σ_{|κ|=k} Π(aᵢ)_κ / Π(bⱼ)_κ · C_κ^β(X)/k!`
//! is evaluated on the eigenvalues of `X`. `Ψ^β(a, c; Σ)` is the cone integral
//! `Γ_p^β(a)⁻¹ ∫_{Y>0} etr(−ΣY) |Y|^{a−m} |I+Y|^{c−a−m} dY`, `m = (p−1)β/2 + 1`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::algebra::{AlgebraTag, DAMatrix, HermitianMatrix, Scalar};
use crate::error::{domain, Error, Result};
use crate::jack::JackTable;
use crate::quadrature::{integrate_range, QuadConfig};
use crate::specfun::{pochhammer, LogValue};
use crate::stats::{run_workers, McConfig, McEstimate, Welford};

/// Number of consecutive negligible degrees that ends a series.
pub const QUIET_DEGREES: usize = 3;

/// Stream index used by [`kummer_psi`]'s Monte Carlo path.
const PSI_STREAM: u64 = 0x5053_4900;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypSeriesResult {
    pub value: LogValue,
    pub degree_used: usize,
    /// Magnitude of the last included degree's contribution.
    pub tail_estimate: f64,
    pub converged: bool,
}

/// Rejects lower parameters `b` with `−b + (j−1)β/2 ∈ {0, 1, 2, …}` for some
/// `j ≤ p`.
pub fn check_lower_parameters(lower: &[f64], beta: AlgebraTag, p: usize) -> Result<()> {
    for (row, &b) in lower.iter().enumerate() {
        for j in 0..p {
            let v = -b + j as f64 * beta.b() / 2.0;
            if v >= -1e-12 && (v - v.round()).abs() < 1e-12 {
                return Err(Error::PoleParameter { value: b, row });
            }
        }
    }
    Ok(())
}

/// Truncated `ᵣF_s^β(upper; lower; x)` at the eigenvalue vector `x`.
///
/// Summation stops after [`QUIET_DEGREES`] consecutive degrees each below
/// `tol·|partial sum|`, or at `max_degree`.
pub fn hyp_pq(upper: &[f64], lower: &[f64], beta: AlgebraTag, x: &[f64], max_degree: usize, tol: f64) -> Result<HypSeriesResult> {
    let p = x.len();
    if p == 0 {
        return Err(domain("eigenvalue vector must be non-empty"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(domain("eigenvalues must be finite"));
    }
    check_lower_parameters(lower, beta, p)?;
    let table = JackTable::cached(p, beta, max_degree)?;
    let b = beta.b();
    let mut sum = 0.0;
    let mut quiet = 0;
    let mut tail = 0.0;
    let mut degree_used = 0;
    let mut log_kfact = 0.0;
    for k in 0..=max_degree {
        if k > 0 {
            log_kfact += (k as f64).ln();
        }
        let cs = table.eval_degree(k, x)?;
        let mut contrib = 0.0;
        for (kappa, c) in table.partitions(k).iter().zip(cs) {
            let mut coef = LogValue::from_log(-log_kfact);
            for &a in upper {
                coef = coef.mul(pochhammer(a, kappa, b));
            }
            for &bb in lower {
                coef = coef.div(pochhammer(bb, kappa, b));
            }
            if !coef.is_zero() {
                contrib += coef.value() * c;
            }
        }
        sum += contrib;
        tail = contrib.abs();
        degree_used = k;
        if k > 0 && tail <= tol * sum.abs() {
            quiet += 1;
            if quiet >= QUIET_DEGREES {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    Ok(HypSeriesResult { value: LogValue::from_value(sum), degree_used, tail_estimate: tail, converged: tail <= tol * sum.abs() })
}

/// Series on a Hermitian argument, reduced to its eigenvalues.
pub fn hyp_pq_matrix(upper: &[f64], lower: &[f64], x: &HermitianMatrix, max_degree: usize, tol: f64) -> Result<HypSeriesResult> {
    hyp_pq(upper, lower, x.tag(), &x.eigenvalues(), max_degree, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiMethod {
    ConeMc,
    ScalarQuadrature,
}

/// Draw from the density `∝ etr(−Y)|Y|^{a−(p−1)β/2−1}` on the cone, as
/// `Y = T*T` with upper-triangular `T`: `t_ii² ~ Gamma(a − (i−1)β/2)` and
/// off-diagonal components `N(0, 1/2)`.
pub fn matrix_gamma_sample<R: Rng + ?Sized>(p: usize, tag: AlgebraTag, a: f64, rng: &mut R) -> Result<HermitianMatrix> {
    tag.require_concrete()?;
    let b = tag.b();
    if !(a > (p as f64 - 1.0) * b / 2.0) {
        return Err(domain(format!("shape {a} must exceed (p-1)β/2 = {}", (p as f64 - 1.0) * b / 2.0)));
    }
    let mut t = DAMatrix::zeros(tag, p, p)?;
    let sd = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..p {
        let g = Gamma::new(a - i as f64 * b / 2.0, 1.0).map_err(|e| domain(e.to_string()))?;
        t.set(i, i, Scalar::real(g.sample(rng).sqrt()));
        for j in (i + 1)..p {
            let mut s = [0.0; 4];
            for c in s.iter_mut().take(tag.components()) {
                let z: f64 = rng.sample(StandardNormal);
                *c = sd * z;
            }
            t.set(i, j, Scalar(s));
        }
    }
    t.gram()
}

fn psi_exponent(a: f64, c: f64, p: usize, tag: AlgebraTag) -> f64 {
    c - a - (p as f64 - 1.0) * tag.b() / 2.0 - 1.0
}

/// `Ψ^β(a, c; Σ)`.
///
/// `ConeMc` samples `Z` from the `Γ_p^β(a)` cone kernel, maps it to
/// `Y = Σ^{-1/2} Z Σ^{-1/2}` and averages `|I+Y|^{c−a−m}`, so that
/// `Ψ = |Σ|^{−a} E|I+Y|^{c−a−m}`. `ScalarQuadrature` (p = 1) integrates the
/// defining integral directly and reports zero standard error.
pub fn kummer_psi(a: f64, c: f64, sigma: &HermitianMatrix, method: PsiMethod, budget: &McConfig) -> Result<McEstimate> {
    let p = sigma.p();
    let tag = sigma.tag();
    if !(a > (p as f64 - 1.0) * tag.b() / 2.0) {
        return Err(domain(format!("Ψ requires a > (p-1)β/2, got a = {a}")));
    }
    if !sigma.is_positive_definite() {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: sigma.min_eigenvalue() });
    }
    let e = psi_exponent(a, c, p, tag);
    match method {
        PsiMethod::ScalarQuadrature => {
            let s = sigma.as_scalar().filter(|_| p == 1).ok_or_else(|| domain("scalar quadrature for Ψ needs p = 1"))?;
            Ok(McEstimate { estimate: psi_scalar(a, c, s)?, stderr: 0.0, samples: 0 })
        }
        PsiMethod::ConeMc => {
            if budget.samples > MAX_PSI_SAMPLES {
                return Err(Error::BudgetExceeded(format!("{} samples requested, limit {MAX_PSI_SAMPLES}", budget.samples)));
            }
            let isq = sigma.inv_sqrt_pd()?;
            let log_det = sigma.log_det_pd()?;
            let acc = run_workers(budget, PSI_STREAM, |rng, n| {
                let mut w = Welford::default();
                for _ in 0..n {
                    let z = matrix_gamma_sample(p, tag, a, rng)?;
                    let y = z.congruence(&isq)?;
                    let log_i_plus_y: f64 = y.eigenvalues().iter().map(|l| l.max(0.0).ln_1p()).sum();
                    w.push((e * log_i_plus_y).exp());
                }
                Ok(w)
            })?;
            let scale = (-a * log_det).exp();
            Ok(McEstimate { estimate: scale * acc.mean, stderr: scale * acc.stderr(), samples: acc.n })
        }
    }
}

/// Upper bound on the Monte Carlo budget accepted by [`kummer_psi`].
pub const MAX_PSI_SAMPLES: usize = 1 << 34;

/// Scalar `Ψ(a, c; x) = Γ(a)⁻¹ ∫₀^∞ e^{−xy} y^{a−1} (1+y)^{c−a−1} dy`.
pub fn psi_scalar(a: f64, c: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && x > 0.0) {
        return Err(domain(format!("scalar Ψ requires a > 0 and x > 0, got a = {a}, x = {x}")));
    }
    let lg = ln_gamma(a);
    let f = |y: f64| {
        if y <= 0.0 {
            return 0.0;
        }
        (-x * y + (a - 1.0) * y.ln() + (c - a - 1.0) * y.ln_1p() - lg).exp()
    };
    let cfg = QuadConfig::with_tol(1e-14, 1e-11);
    // split at 1 so the algebraic endpoint behaviour sits on its own interval
    let lo = integrate_range(f, 0.0, 1.0, &cfg);
    let hi = integrate_range(f, 1.0, f64::INFINITY, &cfg);
    let total = lo.value + hi.value;
    let err = lo.abs_error + hi.abs_error;
    if !(lo.converged && hi.converged) && err > 1e-9 * total.abs() {
        return Err(Error::QuadratureFailure { achieved: err, requested: 1e-9 * total.abs() });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use crate::rng::substream;

    const TAGS: [AlgebraTag; 3] = [AlgebraTag::REAL, AlgebraTag::COMPLEX, AlgebraTag::QUATERNION];

    fn kummer_m(a: f64, b: f64, x: f64) -> f64 {
        let (mut term, mut sum) = (1.0, 1.0);
        for k in 0..500 {
            let k = k as f64;
            term *= (a + k) / (b + k) * x / (k + 1.0);
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    }

    #[test]
    fn zero_f_zero_is_etr() {
        let mut rng = substream(5, 0);
        for tag in TAGS {
            for p in 1..=3 {
                for _ in 0..5 {
                    let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let r = hyp_pq(&[], &[], tag, &x, 30, 1e-16).unwrap();
                    let want = x.iter().sum::<f64>().exp();
                    assert!((r.value.value() - want).abs() <= 1e-8 * want, "β={tag} p={p}");
                }
            }
        }
    }

    #[test]
    fn zero_f_zero_degree_structure() {
        let table = JackTable::cached(3, AlgebraTag::COMPLEX, 12).unwrap();
        let x = [0.3, 0.8, 0.1];
        let s: f64 = x.iter().sum();
        let mut kf = 1.0;
        for k in 0..=12 {
            if k > 0 {
                kf *= k as f64;
            }
            let got: f64 = table.eval_degree(k, &x).unwrap().iter().sum::<f64>() / kf;
            let want = s.powi(k as i32) / kf;
            assert!((got - want).abs() <= 1e-9 * want);
        }
    }

    #[test]
    fn one_f_one_at_zero() {
        let r = hyp_pq(&[1.3], &[2.7], AlgebraTag::REAL, &[0.0, 0.0], 20, 1e-12).unwrap();
        assert_eq!(r.value.value(), 1.0);
        assert!(r.converged);
    }

    #[test]
    fn scalar_kummer_m() {
        let r = hyp_pq(&[1.5], &[2.5], AlgebraTag::REAL, &[0.8], 60, 1e-15).unwrap();
        assert!((r.value.value() - kummer_m(1.5, 2.5, 0.8)).abs() < 1e-10);
        for (a, b, x) in [(0.5, 1.5, -2.0), (2.0, 3.0, 1.7), (-3.0, 0.5, 0.9)] {
            let r = hyp_pq(&[a], &[b], AlgebraTag::QUATERNION, &[x], 80, 1e-14).unwrap();
            assert!(r.converged);
            let m = kummer_m(a, b, x);
            assert!((r.value.value() - m).abs() <= 1e-8 * m.abs().max(1.0));
        }
    }

    #[test]
    fn gauss_two_f_one_scalar() {
        // ₂F₁(1, 1; 2; x) = −ln(1−x)/x
        let x = 0.5;
        let r = hyp_pq(&[1.0, 1.0], &[2.0], AlgebraTag::REAL, &[x], 80, 1e-15).unwrap();
        assert!((r.value.value() + (1.0 - x).ln() / x).abs() < 1e-12);
    }

    #[test]
    fn one_f_zero_is_determinant_power() {
        // ₁F₀(a; ; X) = |I − X|^{−a}
        for tag in TAGS {
            let x = [0.3, 0.1];
            let a = 0.7;
            let r = hyp_pq(&[a], &[], tag, &x, 60, 1e-14).unwrap();
            let want = x.iter().map(|v| (1.0 - v).powf(-a)).product::<f64>();
            assert!((r.value.value() - want).abs() < 1e-9 * want, "β={tag}");
        }
    }

    #[test]
    fn poles_are_rejected() {
        assert!(matches!(hyp_pq(&[1.0], &[-2.0], AlgebraTag::REAL, &[0.1], 5, 1e-8), Err(Error::PoleParameter { .. })));
        // b = 1/2 is a pole for p = 2, β = 1 since −1/2 + 1/2 = 0
        assert!(matches!(hyp_pq(&[1.0], &[0.5], AlgebraTag::REAL, &[0.1, 0.2], 5, 1e-8), Err(Error::PoleParameter { .. })));
        assert!(hyp_pq(&[1.0], &[0.5], AlgebraTag::REAL, &[0.1], 5, 1e-8).is_ok());
    }

    #[test]
    fn monotone_truncation() {
        let x = [0.9, 0.4, 0.2];
        let mut last = 0.0;
        for k in 0..15 {
            let v = hyp_pq(&[0.8, 1.4], &[2.2], AlgebraTag::COMPLEX, &x, k, 0.0).unwrap().value.value();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn psi_scalar_examples() {
        // e·E₁(1)
        assert!((psi_scalar(1.0, 1.0, 1.0).unwrap() - 0.596_347_362_323_194).abs() < 1e-10);
        // c = a + 1 collapses to x^{−a}
        for (a, x) in [(0.4, 2.0), (2.5, 0.7)] {
            assert!((psi_scalar(a, a + 1.0, x).unwrap() - x.powf(-a)).abs() < 1e-9 * x.powf(-a));
        }
        // independent integral on a finite range after y = t/(1−t)
        let direct = integrate(
            |t: f64| {
                if t <= 0.0 || t >= 1.0 {
                    return 0.0;
                }
                let y = t / (1.0 - t);
                (-1.3 * y).exp() * y * (1.0 + y).powf(0.5 - 2.0 - 1.0) / ((1.0 - t) * (1.0 - t))
            },
            0.0,
            1.0,
            &QuadConfig::with_tol(1e-13, 1e-12),
        );
        assert!((psi_scalar(2.0, 0.5, 1.3).unwrap() - direct.value).abs() < 1e-9);
    }

    #[test]
    fn psi_cone_mc_matches_quadrature_at_p1() {
        let s = HermitianMatrix::scalar(AlgebraTag::REAL, 1, 1.3).unwrap();
        let quad = kummer_psi(2.0, 0.5, &s, PsiMethod::ScalarQuadrature, &McConfig::default()).unwrap();
        let mc = kummer_psi(2.0, 0.5, &s, PsiMethod::ConeMc, &McConfig::new(200_000, 9)).unwrap();
        assert!(mc.stderr > 0.0);
        assert!((mc.estimate - quad.estimate).abs() < 3.0 * mc.stderr, "{mc:?} vs {quad:?}");
    }

    #[test]
    fn psi_reduces_to_determinant_power() {
        // c = a + m makes the |I+Y| weight identically one: Ψ = |Σ|^{−a}
        let sigma = HermitianMatrix::from_real(AlgebraTag::COMPLEX, 2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let a = 2.2;
        let c = a + 0.5 * 2.0 + 1.0;
        let r = kummer_psi(a, c, &sigma, PsiMethod::ConeMc, &McConfig::new(1000, 1)).unwrap();
        let want = sigma.det().powf(-a);
        assert!((r.estimate - want).abs() < 1e-12 * want);
        assert!(r.stderr < 1e-12 * want);
    }

    #[test]
    fn matrix_gamma_mean_is_shape_times_identity() {
        // E[Y] = a·I for the Γ_p^β(a) cone kernel
        for tag in TAGS {
            let p = 3;
            let a = 6.0;
            let mut rng = substream(77, tag.beta() as u64);
            let n = 20_000;
            let mut diag = vec![Welford::default(); p];
            let mut off = Welford::default();
            for _ in 0..n {
                let y = matrix_gamma_sample(p, tag, a, &mut rng).unwrap();
                for (i, d) in diag.iter_mut().enumerate() {
                    d.push(y.as_matrix().get(i, i).re());
                }
                off.push(y.as_matrix().get(0, 2).re());
            }
            for d in &diag {
                assert!((d.mean - a).abs() < 4.0 * d.stderr(), "β={tag} {d:?}");
            }
            assert!(off.mean.abs() < 4.0 * off.stderr());
        }
    }

    #[test]
    fn psi_mc_is_deterministic_across_runs() {
        let s = HermitianMatrix::diag(AlgebraTag::REAL, &[1.0, 2.0]).unwrap();
        let cfg = McConfig::new(4000, 3).with_workers(3);
        let a = kummer_psi(1.5, 1.0, &s, PsiMethod::ConeMc, &cfg).unwrap();
        let b = kummer_psi(1.5, 1.0, &s, PsiMethod::ConeMc, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn psi_domain_errors() {
        let s = HermitianMatrix::diag(AlgebraTag::REAL, &[1.0, 2.0]).unwrap();
        assert!(kummer_psi(0.4, 1.0, &s, PsiMethod::ConeMc, &McConfig::default()).is_err());
        assert!(kummer_psi(1.0, 1.0, &s, PsiMethod::ScalarQuadrature, &McConfig::default()).is_err());
        let bad = HermitianMatrix::diag(AlgebraTag::REAL, &[1.0, -2.0]).unwrap();
        assert!(matches!(
            kummer_psi(1.0, 1.0, &bad, PsiMethod::ConeMc, &McConfig::default()),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
