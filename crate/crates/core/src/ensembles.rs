//! Matrix-variate ensembles over `ℝ, ℂ, ℍ`: densities, samplers, the
//! generalized Kummer-beta affine maps and the joint eigenvalue density.
//!
//! Hermitian-valued ensembles share the kernel
//!
//! ```text
//! log f(X) = log K + e₀ log|X| + e₊ log|I+X| + e₋ log|I−X| − tr(L X)
//! ```
//!
//! on the cone or on `0 < X < I`; the generalized Kummer-beta laws are
//! push-forwards of the Kummer-beta ones through `U ↦ A U A + Ψ`.

use nalgebra::DMatrix;
use rand::Rng;
use serde_json::{json, Value};
use std::io::Write;
use std::path::Path;

use crate::algebra::{AlgebraTag, DAMatrix, HermitianMatrix, Scalar, UnitaryMatrix};
use crate::error::{domain, Error, Result};
use crate::hypergeom::{hyp_pq, kummer_psi, matrix_gamma_sample, psi_scalar, PsiMethod};
use crate::quadrature::{integrate_ordered_2d, QuadConfig};
use crate::rng::{split_budget, substream};
use crate::specfun::{mv_beta_log, mv_gamma_log, weyl_log_constant};
use crate::stats::{run_workers, McConfig, Welford};

/// Consecutive rejections after which a rejection sampler gives up.
pub const STALL_PROBE: u64 = 1 << 21;

/// Acceptance rate below which a rejection sampler is declared stalled.
pub const STALL_RATE: f64 = 1e-6;

/// Budget of the Monte Carlo normalizer used for Kummer-beta type II when
/// no deterministic route applies.
pub const KB2_NORMALIZER_SAMPLES: usize = 400_000;
pub const KB2_NORMALIZER_SEED: u64 = 0x4b42_3200;

/// Registered ensemble names, in CLI order.
pub const ENSEMBLE_NAMES: [&str; 10] =
    ["normal", "wishart", "t-type2", "gegenbauer2", "t-laguerre", "gegenbauer-laguerre", "kb1", "kb2", "gkb1", "gkb2"];

/// `(p−1)β/2 + 1`.
pub fn cone_exponent(p: usize, beta: AlgebraTag) -> f64 {
    (p as f64 - 1.0) * beta.b() / 2.0 + 1.0
}

/// A parameter matrix, either `c·I` or explicit.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamMatrix {
    Scalar(f64),
    Full(HermitianMatrix),
}

impl From<HermitianMatrix> for ParamMatrix {
    fn from(m: HermitianMatrix) -> Self {
        ParamMatrix::Full(m)
    }
}

impl ParamMatrix {
    pub fn identity() -> Self {
        ParamMatrix::Scalar(1.0)
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            ParamMatrix::Scalar(c) => Some(*c),
            ParamMatrix::Full(m) => m.as_scalar(),
        }
    }

    pub fn materialize(&self, tag: AlgebraTag, p: usize) -> Result<HermitianMatrix> {
        match self {
            ParamMatrix::Scalar(c) => HermitianMatrix::scalar(tag, p, *c),
            ParamMatrix::Full(m) => Ok(m.clone()),
        }
    }

    fn check(&self, tag: AlgebraTag, p: usize, what: &str) -> Result<()> {
        if let ParamMatrix::Full(m) = self {
            if m.tag() != tag || m.p() != p {
                return Err(Error::DimensionMismatch {
                    expected: format!("{what}: {p}x{p} over β = {tag}"),
                    got: format!("{}x{} over β = {}", m.p(), m.p(), m.tag()),
                });
            }
        }
        Ok(())
    }

    pub fn eigenvalues(&self, p: usize) -> Vec<f64> {
        match self {
            ParamMatrix::Scalar(c) => vec![*c; p],
            ParamMatrix::Full(m) => m.eigenvalues(),
        }
    }

    fn min_eigenvalue(&self, p: usize) -> f64 {
        self.eigenvalues(p).into_iter().fold(f64::INFINITY, f64::min)
    }

    fn log_det_pd(&self, p: usize) -> Result<f64> {
        match self {
            ParamMatrix::Scalar(c) if *c > 0.0 => Ok(p as f64 * c.ln()),
            ParamMatrix::Scalar(c) => Err(Error::NotPositiveDefinite { min_eigenvalue: *c }),
            ParamMatrix::Full(m) => m.log_det_pd(),
        }
    }

    fn combine(&self, o: &ParamMatrix, sign: f64, tag: AlgebraTag, p: usize) -> Result<ParamMatrix> {
        match (self.as_scalar(), o.as_scalar()) {
            (Some(a), Some(b)) => Ok(ParamMatrix::Scalar(a + sign * b)),
            _ => Ok(ParamMatrix::Full(self.materialize(tag, p)?.add(&o.materialize(tag, p)?.scale(sign))?)),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            ParamMatrix::Scalar(c) => json!({ "scalar": c }),
            ParamMatrix::Full(m) => json!({
                "p": m.p(),
                "components": m.as_matrix().components(),
            }),
        }
    }
}

fn require_pd(m: &ParamMatrix, p: usize, what: &str) -> Result<()> {
    let min = m.min_eigenvalue(p);
    if min > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("{what} must be positive definite (smallest eigenvalue {min})")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkbKind {
    /// `X = (Ω−Ψ)^{1/2} U (Ω−Ψ)^{1/2} + Ψ`, `U` Kummer-beta type I.
    One,
    /// `X = (Ω+Ψ)^{1/2} U (Ω+Ψ)^{1/2} + Ψ`, `U` Kummer-beta type II.
    Two,
}

impl GkbKind {
    fn sign(self) -> f64 {
        match self {
            GkbKind::One => -1.0,
            GkbKind::Two => 1.0,
        }
    }
}

/// A matrix-variate distribution together with its dimension `p` and
/// algebra `β`.
#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleSpec {
    /// `n × p` normal with mean `μ` (zero when absent), column covariance
    /// `Σ` and row covariance `Θ`.
    Normal { p: usize, n: usize, beta: AlgebraTag, mu: Option<DAMatrix>, sigma: ParamMatrix, theta: ParamMatrix },
    Wishart { p: usize, beta: AlgebraTag, n: f64, sigma: ParamMatrix },
    TTypeII { p: usize, beta: AlgebraTag, n: f64, nu: f64 },
    GegenbauerII { p: usize, beta: AlgebraTag, n: f64, nu: f64 },
    TLaguerre { p: usize, beta: AlgebraTag, n: f64, nu: f64 },
    GegenbauerLaguerre { p: usize, beta: AlgebraTag, n: f64, nu: f64 },
    Kb1 { p: usize, beta: AlgebraTag, a1: f64, a2: f64, sigma: ParamMatrix },
    Kb2 { p: usize, beta: AlgebraTag, a1: f64, a2: f64, sigma: ParamMatrix },
    Gkb1 { p: usize, beta: AlgebraTag, a1: f64, a2: f64, theta: ParamMatrix, omega: ParamMatrix, psi: ParamMatrix },
    Gkb2 { p: usize, beta: AlgebraTag, a1: f64, a2: f64, theta: ParamMatrix, omega: ParamMatrix, psi: ParamMatrix },
}

/// Support of a Hermitian-valued ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum SupportRegion {
    Cone,
    UnitInterval,
    Band { lower: HermitianMatrix, upper: HermitianMatrix },
    ShiftedCone { lower: HermitianMatrix },
    Full,
}

impl SupportRegion {
    pub fn contains(&self, x: &HermitianMatrix) -> Result<bool> {
        let pd = |m: &HermitianMatrix| m.min_eigenvalue() > 0.0;
        Ok(match self {
            SupportRegion::Cone => pd(x),
            SupportRegion::UnitInterval => {
                let ev = x.eigenvalues();
                ev.iter().all(|&l| l > 0.0 && l < 1.0)
            }
            SupportRegion::Band { lower, upper } => pd(&x.sub(lower)?) && pd(&upper.sub(x)?),
            SupportRegion::ShiftedCone { lower } => pd(&x.sub(lower)?),
            SupportRegion::Full => true,
        })
    }
}

impl EnsembleSpec {
    pub fn wishart(p: usize, beta: AlgebraTag, n: f64, sigma: ParamMatrix) -> Result<Self> {
        let s = EnsembleSpec::Wishart { p, beta, n, sigma };
        s.validate()?;
        Ok(s)
    }

    pub fn kb1(p: usize, beta: AlgebraTag, a1: f64, a2: f64, sigma: ParamMatrix) -> Result<Self> {
        let s = EnsembleSpec::Kb1 { p, beta, a1, a2, sigma };
        s.validate()?;
        Ok(s)
    }

    pub fn kb2(p: usize, beta: AlgebraTag, a1: f64, a2: f64, sigma: ParamMatrix) -> Result<Self> {
        let s = EnsembleSpec::Kb2 { p, beta, a1, a2, sigma };
        s.validate()?;
        Ok(s)
    }

    pub fn gkb(
        kind: GkbKind,
        p: usize,
        beta: AlgebraTag,
        a1: f64,
        a2: f64,
        theta: ParamMatrix,
        omega: ParamMatrix,
        psi: ParamMatrix,
    ) -> Result<Self> {
        let s = match kind {
            GkbKind::One => EnsembleSpec::Gkb1 { p, beta, a1, a2, theta, omega, psi },
            GkbKind::Two => EnsembleSpec::Gkb2 { p, beta, a1, a2, theta, omega, psi },
        };
        s.validate()?;
        Ok(s)
    }

    pub fn p(&self) -> usize {
        use EnsembleSpec::*;
        match self {
            Normal { p, .. }
            | Wishart { p, .. }
            | TTypeII { p, .. }
            | GegenbauerII { p, .. }
            | TLaguerre { p, .. }
            | GegenbauerLaguerre { p, .. }
            | Kb1 { p, .. }
            | Kb2 { p, .. }
            | Gkb1 { p, .. }
            | Gkb2 { p, .. } => *p,
        }
    }

    pub fn beta(&self) -> AlgebraTag {
        use EnsembleSpec::*;
        match self {
            Normal { beta, .. }
            | Wishart { beta, .. }
            | TTypeII { beta, .. }
            | GegenbauerII { beta, .. }
            | TLaguerre { beta, .. }
            | GegenbauerLaguerre { beta, .. }
            | Kb1 { beta, .. }
            | Kb2 { beta, .. }
            | Gkb1 { beta, .. }
            | Gkb2 { beta, .. } => *beta,
        }
    }

    pub fn name(&self) -> &'static str {
        use EnsembleSpec::*;
        match self {
            Normal { .. } => ENSEMBLE_NAMES[0],
            Wishart { .. } => ENSEMBLE_NAMES[1],
            TTypeII { .. } => ENSEMBLE_NAMES[2],
            GegenbauerII { .. } => ENSEMBLE_NAMES[3],
            TLaguerre { .. } => ENSEMBLE_NAMES[4],
            GegenbauerLaguerre { .. } => ENSEMBLE_NAMES[5],
            Kb1 { .. } => ENSEMBLE_NAMES[6],
            Kb2 { .. } => ENSEMBLE_NAMES[7],
            Gkb1 { .. } => ENSEMBLE_NAMES[8],
            Gkb2 { .. } => ENSEMBLE_NAMES[9],
        }
    }

    /// Parameter-domain checks.
    pub fn validate(&self) -> Result<()> {
        use EnsembleSpec::*;
        let p = self.p();
        let beta = self.beta();
        if p == 0 {
            return Err(domain("dimension p must be at least 1"));
        }
        let pm1 = p as f64 - 1.0;
        let half = pm1 * beta.b() / 2.0;
        match self {
            Normal { n, mu, sigma, theta, .. } => {
                if *n == 0 {
                    return Err(domain("normal ensemble needs n >= 1 rows"));
                }
                sigma.check(beta, p, "Σ")?;
                theta.check(beta, *n, "Θ")?;
                require_pd(sigma, p, "Σ")?;
                require_pd(theta, *n, "Θ")?;
                if let Some(m) = mu {
                    if m.rows() != *n || m.cols() != p || m.tag() != beta {
                        return Err(Error::DimensionMismatch {
                            expected: format!("μ: {n}x{p} over β = {beta}"),
                            got: format!("{}x{} over β = {}", m.rows(), m.cols(), m.tag()),
                        });
                    }
                }
            }
            Wishart { n, sigma, .. } => {
                if !(*n > pm1) {
                    return Err(domain(format!("Wishart degrees of freedom n = {n} must exceed p - 1 = {pm1}")));
                }
                sigma.check(beta, p, "Σ")?;
                require_pd(sigma, p, "Σ")?;
            }
            TTypeII { n, nu, .. } | GegenbauerII { n, nu, .. } | TLaguerre { n, nu, .. } | GegenbauerLaguerre { n, nu, .. } => {
                if !(*n > pm1) {
                    return Err(domain(format!("n = {n} must exceed p - 1 = {pm1}")));
                }
                if !(*nu > pm1) {
                    return Err(domain(format!("ν = {nu} must exceed p - 1 = {pm1}")));
                }
            }
            Kb1 { a1, a2, sigma, .. } | Kb2 { a1, a2, sigma, .. } => {
                if !(*a1 > half) {
                    return Err(domain(format!("α₁ = {a1} must exceed (p-1)β/2 = {half}")));
                }
                let kb1 = matches!(self, Kb1 { .. });
                if kb1 && !(*a2 > half) || !kb1 && !(*a2 >= half) {
                    return Err(domain(format!("α₂ = {a2} is below (p-1)β/2 = {half}")));
                }
                sigma.check(beta, p, "Σ")?;
                require_pd(sigma, p, "Σ")?;
            }
            Gkb1 { theta, omega, psi, .. } | Gkb2 { theta, omega, psi, .. } => {
                for (m, what) in [(theta, "Θ"), (omega, "Ω"), (psi, "Ψ")] {
                    m.check(beta, p, what)?;
                }
                require_pd(theta, p, "Θ")?;
                let kind = self.gkb_kind().expect("gkb variant");
                let diff = omega.combine(psi, kind.sign(), beta, p)?;
                require_pd(&diff, p, if kind == GkbKind::One { "Ω − Ψ" } else { "Ω + Ψ" })?;
                self.gkb_inner()?.validate()?;
            }
        }
        Ok(())
    }

    fn gkb_kind(&self) -> Option<GkbKind> {
        match self {
            EnsembleSpec::Gkb1 { .. } => Some(GkbKind::One),
            EnsembleSpec::Gkb2 { .. } => Some(GkbKind::Two),
            _ => None,
        }
    }

    /// The Kummer-beta law of `U` for a generalized Kummer-beta spec, with
    /// `Σ = A Θ A`.
    fn gkb_inner(&self) -> Result<EnsembleSpec> {
        let (kind, p, beta, a1, a2, theta, omega, psi) = match self {
            EnsembleSpec::Gkb1 { p, beta, a1, a2, theta, omega, psi } => (GkbKind::One, *p, *beta, *a1, *a2, theta, omega, psi),
            EnsembleSpec::Gkb2 { p, beta, a1, a2, theta, omega, psi } => (GkbKind::Two, *p, *beta, *a1, *a2, theta, omega, psi),
            _ => return Err(domain("not a generalized Kummer-beta spec")),
        };
        let diff = omega.combine(psi, kind.sign(), beta, p)?;
        let sigma = match (diff.as_scalar(), theta.as_scalar()) {
            (Some(d), Some(t)) => ParamMatrix::Scalar(d * t),
            _ => {
                let a = diff.materialize(beta, p)?.sqrt_pd()?;
                ParamMatrix::Full(theta.materialize(beta, p)?.congruence(&a)?)
            }
        };
        Ok(match kind {
            GkbKind::One => EnsembleSpec::Kb1 { p, beta, a1, a2, sigma },
            GkbKind::Two => EnsembleSpec::Kb2 { p, beta, a1, a2, sigma },
        })
    }

    /// True when the density is invariant under `X ↦ HXH*`.
    pub fn is_invariant(&self) -> bool {
        use EnsembleSpec::*;
        match self {
            Normal { .. } => false,
            Wishart { sigma, .. } | Kb1 { sigma, .. } | Kb2 { sigma, .. } => sigma.as_scalar().is_some(),
            TTypeII { .. } | GegenbauerII { .. } | TLaguerre { .. } | GegenbauerLaguerre { .. } => true,
            Gkb1 { theta, omega, psi, .. } | Gkb2 { theta, omega, psi, .. } => {
                theta.as_scalar().is_some() && omega.as_scalar().is_some() && psi.as_scalar().is_some()
            }
        }
    }

    pub fn support(&self) -> Result<SupportRegion> {
        use EnsembleSpec::*;
        let (p, beta) = (self.p(), self.beta());
        Ok(match self {
            Normal { .. } => SupportRegion::Full,
            Wishart { .. } | TTypeII { .. } | TLaguerre { .. } | Kb2 { .. } => SupportRegion::Cone,
            GegenbauerII { .. } | GegenbauerLaguerre { .. } | Kb1 { .. } => SupportRegion::UnitInterval,
            Gkb1 { omega, psi, .. } => {
                SupportRegion::Band { lower: psi.materialize(beta, p)?, upper: omega.materialize(beta, p)? }
            }
            Gkb2 { psi, .. } => SupportRegion::ShiftedCone { lower: psi.materialize(beta, p)? },
        })
    }

    /// Description used in manifests and reports.
    pub fn to_json(&self) -> Value {
        use EnsembleSpec::*;
        let mut v = json!({ "ensemble": self.name(), "p": self.p(), "beta": self.beta().beta() });
        let extra = match self {
            Normal { n, mu, sigma, theta, .. } => json!({
                "n": n,
                "mu": mu.as_ref().map(|m| m.components().to_vec()),
                "sigma": sigma.to_json(),
                "theta": theta.to_json(),
            }),
            Wishart { n, sigma, .. } => json!({ "n": n, "sigma": sigma.to_json() }),
            TTypeII { n, nu, .. } | GegenbauerII { n, nu, .. } | TLaguerre { n, nu, .. } | GegenbauerLaguerre { n, nu, .. } => {
                json!({ "n": n, "nu": nu })
            }
            Kb1 { a1, a2, sigma, .. } | Kb2 { a1, a2, sigma, .. } => json!({ "a1": a1, "a2": a2, "sigma": sigma.to_json() }),
            Gkb1 { a1, a2, theta, omega, psi, .. } | Gkb2 { a1, a2, theta, omega, psi, .. } => json!({
                "a1": a1, "a2": a2, "theta": theta.to_json(), "omega": omega.to_json(), "psi": psi.to_json(),
            }),
        };
        if let (Value::Object(a), Value::Object(b)) = (&mut v, extra) {
            a.extend(b);
        }
        v
    }

    /// Prepares the density (normalizer computed once).
    pub fn density(&self) -> Result<Density> {
        Density::new(self)
    }

    /// One-off density evaluation at a Hermitian argument.
    pub fn log_density(&self, x: &HermitianMatrix) -> Result<f64> {
        self.density()?.log_density(x)
    }

    pub fn sampler(&self) -> Result<Sampler> {
        Sampler::new(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Region {
    Cone,
    Unit,
}

#[derive(Debug, Clone)]
enum Linear {
    None,
    Scalar(f64),
    Matrix(HermitianMatrix),
}

#[derive(Debug, Clone)]
struct BetaKernel {
    e0: f64,
    e_plus: f64,
    e_minus: f64,
    linear: Linear,
    region: Region,
}

impl BetaKernel {
    fn spectral(&self, lambda: &[f64], trace_term: f64) -> f64 {
        let ok = lambda.iter().all(|&l| l > 0.0 && (self.region == Region::Cone || l < 1.0));
        if !ok {
            return f64::NEG_INFINITY;
        }
        let mut s = -trace_term;
        for &l in lambda {
            s += self.e0 * l.ln();
            if self.e_plus != 0.0 {
                s += self.e_plus * l.ln_1p();
            }
            if self.e_minus != 0.0 {
                s += self.e_minus * (-l).ln_1p();
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Normal { sigma_inv: HermitianMatrix, theta_inv: HermitianMatrix, mu: Option<DAMatrix> },
    Beta(BetaKernel),
    Gkb { inner: Box<Density>, a_inv: ParamOrMatrix, psi: ParamOrMatrix, scale: f64, shift: f64 },
}

/// A matrix square root (or its inverse) kept scalar when possible.
#[derive(Debug, Clone)]
enum ParamOrMatrix {
    Scalar(f64),
    Matrix(HermitianMatrix),
}

/// A density with its normalizing constant precomputed.
#[derive(Debug, Clone)]
pub struct Density {
    spec: EnsembleSpec,
    log_norm: f64,
    kernel: Kernel,
    /// `log` of the rectangular-matrix normalizer for T type II and
    /// Gegenbauer type II.
    log_norm_rect: Option<f64>,
}

fn series_degree(p: usize) -> usize {
    match p {
        1 => 150,
        2 => 80,
        3 => 40,
        _ => 30,
    }
}

/// `log ∫_{0<Y<I} etr(−ΣY)|Y|^{α₁−m}|I−Y|^{α₂−m} dY = log B_p(α₁,α₂) + log ₁F₁(α₁; α₁+α₂; −Σ)`.
pub fn kb1_log_integral(p: usize, beta: AlgebraTag, a1: f64, a2: f64, sigma_eigs: &[f64]) -> Result<f64> {
    let neg: Vec<f64> = sigma_eigs.iter().map(|s| -s).collect();
    let series = hyp_pq(&[a1], &[a1 + a2], beta, &neg, series_degree(p), 1e-15)?;
    if !series.converged || series.value.sign <= 0.0 {
        return Err(Error::NotEstimable(format!(
            "₁F₁ normalizer did not converge (degree {}, tail {:e})",
            series.degree_used, series.tail_estimate
        )));
    }
    Ok(mv_beta_log(p, beta, a1, a2)? + series.value.log_abs)
}

/// The second parameter of `Ψ` in the Kummer-beta type II normalizer,
/// `c = α₁ − α₂ + (p−1)β/2 + 1`.
pub fn kb2_psi_c(p: usize, beta: AlgebraTag, a1: f64, a2: f64) -> f64 {
    a1 - a2 + cone_exponent(p, beta)
}

/// `log ∫_{Y>0} etr(−ΣY)|Y|^{α₁−m}|I+Y|^{−α₂} dY`.
///
/// Deterministic for `p = 1` and for `p = 2` with scalar `Σ` (eigenvalue
/// quadrature); otherwise `Γ_p(α₁)·Ψ` by seeded cone Monte Carlo.
pub fn kb2_log_integral(p: usize, beta: AlgebraTag, a1: f64, a2: f64, sigma: &ParamMatrix) -> Result<f64> {
    let m = cone_exponent(p, beta);
    let c = kb2_psi_c(p, beta, a1, a2);
    let lg = mv_gamma_log(p, beta, a1)?;
    match (p, sigma.as_scalar()) {
        (1, Some(s)) => Ok(lg + psi_scalar(a1, c, s)?.ln()),
        (2, Some(s)) => {
            let b = beta.b();
            let f = |l1: f64, l2: f64| {
                if l2 <= 0.0 || l1 <= l2 {
                    return 0.0;
                }
                (-s * (l1 + l2) + (a1 - m) * (l1.ln() + l2.ln()) - a2 * (l1.ln_1p() + l2.ln_1p()) + b * (l1 - l2).ln()).exp()
            };
            let r = integrate_ordered_2d(f, 0.0, f64::INFINITY, &QuadConfig::with_tol(1e-13, 1e-11));
            let v = r.checked(&QuadConfig::with_tol(1e-11, 1e-9))?;
            Ok(v.ln() - weyl_log_constant(2, beta)?)
        }
        _ => {
            beta.require_concrete()?;
            let s = sigma.materialize(beta, p)?;
            let est = kummer_psi(a1, c, &s, PsiMethod::ConeMc, &McConfig::new(KB2_NORMALIZER_SAMPLES, KB2_NORMALIZER_SEED))?;
            Ok(lg + est.estimate.ln())
        }
    }
}

/// Matrix of the real-linear map `Y ↦ A Y A` on Hermitian coordinates
/// (diagonal entries, then every real component above the diagonal);
/// returns `log |det|`.
pub fn congruence_log_jacobian(a: &HermitianMatrix) -> Result<f64> {
    let (tag, p) = (a.tag(), a.p());
    let comps = tag.components();
    let mut slots = Vec::new();
    for i in 0..p {
        slots.push((i, i, 0));
    }
    for i in 0..p {
        for j in (i + 1)..p {
            for c in 0..comps {
                slots.push((i, j, c));
            }
        }
    }
    let d = slots.len();
    let mut jac = DMatrix::<f64>::zeros(d, d);
    for (col, &(i, j, c)) in slots.iter().enumerate() {
        let mut e = DAMatrix::zeros(tag, p, p)?;
        let mut s = [0.0; 4];
        s[c] = 1.0;
        e.set(i, j, Scalar(s));
        if i != j {
            e.set(j, i, Scalar(s).conj());
        }
        let img = HermitianMatrix::new(e)?.congruence(a)?;
        for (row, &(k, l, cc)) in slots.iter().enumerate() {
            jac[(row, col)] = img.as_matrix().get(k, l).0[cc];
        }
    }
    let det = jac.lu().determinant();
    if det == 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: a.min_eigenvalue() });
    }
    Ok(det.abs().ln())
}

impl Density {
    pub fn new(spec: &EnsembleSpec) -> Result<Density> {
        spec.validate()?;
        use EnsembleSpec::*;
        let p = spec.p();
        let beta = spec.beta();
        let b = beta.b();
        let pf = p as f64;
        let m = cone_exponent(p, beta);
        let mut log_norm_rect = None;
        let (log_norm, kernel) = match spec {
            Normal { n, mu, sigma, theta, .. } => {
                beta.require_concrete()?;
                let nf = *n as f64;
                let ln = 0.5 * b * pf * nf * (b.ln() - (2.0 * std::f64::consts::PI).ln())
                    - 0.5 * b * nf * sigma.log_det_pd(p)?
                    - 0.5 * b * pf * theta.log_det_pd(*n)?;
                let kernel = Kernel::Normal {
                    sigma_inv: sigma.materialize(beta, p)?.inv_pd()?,
                    theta_inv: theta.materialize(beta, *n)?.inv_pd()?,
                    mu: mu.clone(),
                };
                (ln, kernel)
            }
            Wishart { n, sigma, .. } => {
                let half_n = b * n / 2.0;
                let ln = half_n * pf * (b.ln() - 2f64.ln()) - mv_gamma_log(p, beta, half_n)? - half_n * sigma.log_det_pd(p)?;
                let linear = match sigma.as_scalar() {
                    Some(s) => Linear::Scalar(b / (2.0 * s)),
                    None => Linear::Matrix(sigma.materialize(beta, p)?.inv_pd()?.scale(b / 2.0)),
                };
                let k = BetaKernel { e0: b * (n - pf + 1.0) / 2.0 - 1.0, e_plus: 0.0, e_minus: 0.0, linear, region: Region::Cone };
                (ln, Kernel::Beta(k))
            }
            TTypeII { n, nu, .. } | TLaguerre { n, nu, .. } => {
                let ln = -mv_beta_log(p, beta, b * nu / 2.0, b * n / 2.0)?;
                if matches!(spec, TTypeII { .. }) {
                    log_norm_rect = Some(
                        mv_gamma_log(p, beta, b * (n + nu) / 2.0)?
                            - b * pf * n / 2.0 * std::f64::consts::PI.ln()
                            - mv_gamma_log(p, beta, b * nu / 2.0)?,
                    );
                }
                let k = BetaKernel {
                    e0: b * (n - pf + 1.0) / 2.0 - 1.0,
                    e_plus: -b * (n + nu) / 2.0,
                    e_minus: 0.0,
                    linear: Linear::None,
                    region: Region::Cone,
                };
                (ln, Kernel::Beta(k))
            }
            GegenbauerII { n, nu, .. } | GegenbauerLaguerre { n, nu, .. } => {
                let ln = -mv_beta_log(p, beta, b * nu / 2.0, b * n / 2.0)?;
                if matches!(spec, GegenbauerII { .. }) {
                    log_norm_rect = Some(
                        mv_gamma_log(p, beta, b * (n + nu) / 2.0)?
                            - b * pf * n / 2.0 * std::f64::consts::PI.ln()
                            - mv_gamma_log(p, beta, b * nu / 2.0)?,
                    );
                }
                let k = BetaKernel {
                    e0: b * (n - pf + 1.0) / 2.0 - 1.0,
                    e_plus: 0.0,
                    e_minus: b * (nu - pf + 1.0) / 2.0 - 1.0,
                    linear: Linear::None,
                    region: Region::Unit,
                };
                (ln, Kernel::Beta(k))
            }
            Kb1 { a1, a2, sigma, .. } => {
                let ln = -kb1_log_integral(p, beta, *a1, *a2, &sigma.eigenvalues(p))?;
                let linear = match sigma.as_scalar() {
                    Some(s) => Linear::Scalar(s),
                    None => Linear::Matrix(sigma.materialize(beta, p)?),
                };
                let k = BetaKernel { e0: a1 - m, e_plus: 0.0, e_minus: a2 - m, linear, region: Region::Unit };
                (ln, Kernel::Beta(k))
            }
            Kb2 { a1, a2, sigma, .. } => {
                let ln = -kb2_log_integral(p, beta, *a1, *a2, sigma)?;
                let linear = match sigma.as_scalar() {
                    Some(s) => Linear::Scalar(s),
                    None => Linear::Matrix(sigma.materialize(beta, p)?),
                };
                let k = BetaKernel { e0: a1 - m, e_plus: -a2, e_minus: 0.0, linear, region: Region::Cone };
                (ln, Kernel::Beta(k))
            }
            Gkb1 { omega, psi, .. } | Gkb2 { omega, psi, .. } => {
                let kind = spec.gkb_kind().expect("gkb");
                let inner = Box::new(Density::new(&spec.gkb_inner()?)?);
                let diff = omega.combine(psi, kind.sign(), beta, p)?;
                let (a_inv, psi_m, log_jac) = match (diff.as_scalar(), psi.as_scalar()) {
                    (Some(d), Some(s)) => {
                        // U ↦ dU on a space of real dimension p·m
                        (ParamOrMatrix::Scalar(1.0 / d.sqrt()), ParamOrMatrix::Scalar(s), pf * m * d.ln())
                    }
                    _ => {
                        beta.require_concrete()?;
                        let dm = diff.materialize(beta, p)?;
                        let a = dm.sqrt_pd()?;
                        let lj = congruence_log_jacobian(&a)?;
                        (ParamOrMatrix::Matrix(dm.inv_sqrt_pd()?), ParamOrMatrix::Matrix(psi.materialize(beta, p)?), lj)
                    }
                };
                let (scale, shift) = match (&a_inv, &psi_m) {
                    (ParamOrMatrix::Scalar(ai), ParamOrMatrix::Scalar(s)) => (ai * ai, *s),
                    _ => (f64::NAN, f64::NAN),
                };
                (-log_jac, Kernel::Gkb { inner, a_inv, psi: psi_m, scale, shift })
            }
        };
        Ok(Density { spec: spec.clone(), log_norm, kernel, log_norm_rect })
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    /// Log of the normalizing constant (for generalized Kummer-beta laws,
    /// the negative log-Jacobian of the affine map).
    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    fn check_arg(&self, x: &HermitianMatrix) -> Result<()> {
        if x.tag() != self.spec.beta() || x.p() != self.spec.p() {
            return Err(Error::DimensionMismatch {
                expected: format!("{0}x{0} over β = {1}", self.spec.p(), self.spec.beta()),
                got: format!("{0}x{0} over β = {1}", x.p(), x.tag()),
            });
        }
        Ok(())
    }

    /// `log f(X)` for a Hermitian-valued ensemble; `−∞` off the support.
    pub fn log_density(&self, x: &HermitianMatrix) -> Result<f64> {
        self.spec.beta().require_concrete()?;
        self.check_arg(x)?;
        match &self.kernel {
            Kernel::Normal { .. } => Err(domain("the normal ensemble takes a rectangular argument")),
            Kernel::Beta(k) => {
                let ev = x.eigenvalues();
                let tr = match &k.linear {
                    Linear::None => 0.0,
                    Linear::Scalar(s) => s * x.trace(),
                    Linear::Matrix(l) => l.trace_product(x)?,
                };
                Ok(self.log_norm + k.spectral(&ev, tr))
            }
            Kernel::Gkb { inner, a_inv, psi, .. } => {
                let u = match (a_inv, psi) {
                    (ParamOrMatrix::Scalar(ai), ParamOrMatrix::Scalar(s)) => {
                        x.sub(&HermitianMatrix::scalar(x.tag(), x.p(), *s)?)?.scale(ai * ai)
                    }
                    (ParamOrMatrix::Matrix(ai), ParamOrMatrix::Matrix(s)) => x.sub(s)?.congruence(ai)?,
                    _ => unreachable!("square root and shift are materialized together"),
                };
                Ok(self.log_norm + inner.log_density(&u)?)
            }
        }
    }

    /// `log f(Λ)` from the eigenvalues alone; requires an invariant spec.
    /// Works for every `β`, including the formula-only `β = 8`.
    pub fn log_density_spectral(&self, lambda: &[f64]) -> Result<f64> {
        if lambda.len() != self.spec.p() {
            return Err(Error::DimensionMismatch { expected: format!("{} eigenvalues", self.spec.p()), got: lambda.len().to_string() });
        }
        match &self.kernel {
            Kernel::Normal { .. } => Err(domain("the normal ensemble is not Hermitian-valued")),
            Kernel::Beta(k) => {
                let tr = match &k.linear {
                    Linear::None => 0.0,
                    Linear::Scalar(s) => s * lambda.iter().sum::<f64>(),
                    Linear::Matrix(_) => return Err(domain("density is not orthogonally invariant")),
                };
                Ok(self.log_norm + k.spectral(lambda, tr))
            }
            Kernel::Gkb { inner, scale, shift, .. } => {
                if scale.is_nan() {
                    return Err(domain("density is not orthogonally invariant"));
                }
                let u: Vec<f64> = lambda.iter().map(|l| (l - shift) * scale).collect();
                Ok(self.log_norm + inner.log_density_spectral(&u)?)
            }
        }
    }

    /// `log f(X)` for an `n × p` argument: the normal ensemble, and the
    /// rectangular forms of T type II and Gegenbauer type II.
    pub fn log_density_rect(&self, x: &DAMatrix) -> Result<f64> {
        self.spec.beta().require_concrete()?;
        let p = self.spec.p();
        let b = self.spec.beta().b();
        if x.cols() != p || x.tag() != self.spec.beta() {
            return Err(Error::DimensionMismatch { expected: format!("n x {p}"), got: format!("{}x{}", x.rows(), x.cols()) });
        }
        match (&self.spec, &self.kernel) {
            (EnsembleSpec::Normal { n, .. }, Kernel::Normal { sigma_inv, theta_inv, mu }) => {
                if x.rows() != *n {
                    return Err(Error::DimensionMismatch { expected: format!("{n} x {p}"), got: format!("{}x{}", x.rows(), p) });
                }
                let d = match mu {
                    Some(m) => x.sub(m)?,
                    None => x.clone(),
                };
                let q = sigma_inv.as_matrix().matmul(&d.conj_transpose())?.matmul(theta_inv.as_matrix())?.matmul(&d)?;
                Ok(self.log_norm - 0.5 * b * q.real_trace())
            }
            (EnsembleSpec::TTypeII { n, nu, .. } | EnsembleSpec::GegenbauerII { n, nu, .. }, _) => {
                if (x.rows() as f64 - n).abs() > 0.0 {
                    return Err(Error::DimensionMismatch { expected: format!("{n} x {p}"), got: format!("{}x{}", x.rows(), p) });
                }
                let s = x.gram()?;
                let ev = s.eigenvalues();
                let ln = self.log_norm_rect.expect("rectangular normalizer");
                if matches!(self.spec, EnsembleSpec::TTypeII { .. }) {
                    Ok(ln - b * (n + nu) / 2.0 * ev.iter().map(|l| l.ln_1p()).sum::<f64>())
                } else if ev.iter().all(|&l| l < 1.0) {
                    let pf = p as f64;
                    Ok(ln + (b * (nu - pf + 1.0) / 2.0 - 1.0) * ev.iter().map(|l| (-l).ln_1p()).sum::<f64>())
                } else {
                    Ok(f64::NEG_INFINITY)
                }
            }
            _ => Err(domain(format!("{} has no rectangular density", self.spec.name()))),
        }
    }
}

/// `Π_{i<j} (λᵢ − λⱼ)^β` in logs; `−∞` unless strictly descending.
pub fn log_vandermonde(lambda: &[f64], beta: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..lambda.len() {
        for j in (i + 1)..lambda.len() {
            let d = lambda[i] - lambda[j];
            if d <= 0.0 {
                return f64::NEG_INFINITY;
            }
            s += beta * d.ln();
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenDensityEstimate {
    pub log_density: f64,
    pub density: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Joint density of the ordered eigenvalues,
/// `g(λ) = (π^{p²β/2+ϱ}/Γ_p(pβ/2)) Π(λᵢ−λⱼ)^β ∫ f(HΛH*)(dH)`.
///
/// Invariant specs use `f(Λ)` directly; otherwise the Haar average is
/// estimated from `haar.samples` draws.
pub fn eigen_joint_log_density(spec: &EnsembleSpec, lambda: &[f64], haar: &McConfig) -> Result<EigenDensityEstimate> {
    let density = spec.density()?;
    eigen_joint_with(&density, lambda, haar)
}

/// [`eigen_joint_log_density`] with a prepared density.
pub fn eigen_joint_with(density: &Density, lambda: &[f64], haar: &McConfig) -> Result<EigenDensityEstimate> {
    let spec = density.spec();
    let (p, beta) = (spec.p(), spec.beta());
    let prefactor = log_vandermonde(lambda, beta.b()) - weyl_log_constant(p, beta)?;
    if spec.is_invariant() {
        let ld = prefactor + density.log_density_spectral(lambda)?;
        return Ok(EigenDensityEstimate { log_density: ld, density: ld.exp(), stderr: 0.0, samples: 0 });
    }
    beta.require_concrete()?;
    if prefactor == f64::NEG_INFINITY {
        return Ok(EigenDensityEstimate { log_density: f64::NEG_INFINITY, density: 0.0, stderr: 0.0, samples: 0 });
    }
    let lam = HermitianMatrix::diag(beta, lambda)?;
    let shift = density.log_density(&lam)?;
    if shift == f64::NEG_INFINITY {
        return Err(domain("eigenvalues lie outside the support"));
    }
    let acc = run_workers(haar, 0x4841_4152, |rng, n| {
        let mut w = Welford::default();
        for _ in 0..n {
            let h = UnitaryMatrix::haar_sample(p, beta, rng)?;
            let x = h.conjugate_by(lambda)?;
            w.push((density.log_density(&x)? - shift).exp());
        }
        Ok(w)
    })?;
    let scale = (prefactor + shift).exp();
    let est = scale * acc.mean;
    Ok(EigenDensityEstimate { log_density: est.ln(), density: est, stderr: scale * acc.stderr(), samples: acc.n })
}

/// `(Ω∓Ψ)^{1/2}` for the generalized Kummer-beta maps.
fn gkb_root(kind: GkbKind, omega: &HermitianMatrix, psi: &HermitianMatrix) -> Result<HermitianMatrix> {
    let d = omega.add(&psi.scale(kind.sign()))?;
    if !d.is_positive_definite() {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: d.min_eigenvalue() });
    }
    d.sqrt_pd()
}

/// `X = (Ω−Ψ)^{1/2} U (Ω−Ψ)^{1/2} + Ψ`.
pub fn gkb1_transform(u: &HermitianMatrix, omega: &HermitianMatrix, psi: &HermitianMatrix) -> Result<HermitianMatrix> {
    u.congruence(&gkb_root(GkbKind::One, omega, psi)?)?.add(psi)
}

pub fn gkb1_inverse(x: &HermitianMatrix, omega: &HermitianMatrix, psi: &HermitianMatrix) -> Result<HermitianMatrix> {
    x.sub(psi)?.congruence(&gkb_root(GkbKind::One, omega, psi)?.inv_pd()?)
}

/// `X = (Ω+Ψ)^{1/2} U (Ω+Ψ)^{1/2} + Ψ`.
pub fn gkb2_transform(u: &HermitianMatrix, omega: &HermitianMatrix, psi: &HermitianMatrix) -> Result<HermitianMatrix> {
    u.congruence(&gkb_root(GkbKind::Two, omega, psi)?)?.add(psi)
}

pub fn gkb2_inverse(x: &HermitianMatrix, omega: &HermitianMatrix, psi: &HermitianMatrix) -> Result<HermitianMatrix> {
    x.sub(psi)?.congruence(&gkb_root(GkbKind::Two, omega, psi)?.inv_pd()?)
}

/// Density of a generalized Kummer-beta law at `X`.
pub fn gkb_log_density(
    kind: GkbKind,
    a1: f64,
    a2: f64,
    theta: &HermitianMatrix,
    omega: &HermitianMatrix,
    psi: &HermitianMatrix,
    x: &HermitianMatrix,
) -> Result<f64> {
    let spec = EnsembleSpec::gkb(kind, x.p(), x.tag(), a1, a2, theta.clone().into(), omega.clone().into(), psi.clone().into())?;
    spec.log_density(x)
}

/// A draw from an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum Draw {
    Hermitian(HermitianMatrix),
    Rect(DAMatrix),
}

impl Draw {
    pub fn as_matrix(&self) -> &DAMatrix {
        match self {
            Draw::Hermitian(h) => h.as_matrix(),
            Draw::Rect(m) => m,
        }
    }

    pub fn as_hermitian(&self) -> Option<&HermitianMatrix> {
        match self {
            Draw::Hermitian(h) => Some(h),
            Draw::Rect(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Normal { n: usize, mu: Option<DAMatrix>, theta_sqrt: HermitianMatrix, sigma_sqrt: HermitianMatrix },
    Wishart { n: f64, sigma_sqrt: Option<HermitianMatrix> },
    BetaI { a: f64, b: f64 },
    BetaII { a: f64, b: f64 },
    Kb1 { a1: f64, a2: f64, sigma: HermitianMatrix },
    Kb2 { a1: f64, a2: f64, sigma_inv_sqrt: HermitianMatrix },
    Gkb { inner: Box<Sampler>, root: HermitianMatrix, psi: HermitianMatrix },
}

/// Prepared sampler for one ensemble.
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: EnsembleSpec,
    kind: SamplerKind,
}

/// Proposal bookkeeping of rejection samplers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AcceptanceStats {
    pub proposals: u64,
    pub accepted: u64,
}

impl AcceptanceStats {
    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    fn merge(&mut self, o: &AcceptanceStats) {
        self.proposals += o.proposals;
        self.accepted += o.accepted;
    }
}

/// Draw from the matrix beta type I law `∝ |U|^{a−m}|I−U|^{b−m}` as
/// `(A+B)^{−1/2} A (A+B)^{−1/2}` with independent cone-gamma `A`, `B`.
pub fn matrix_beta1_sample<R: Rng + ?Sized>(p: usize, tag: AlgebraTag, a: f64, b: f64, rng: &mut R) -> Result<HermitianMatrix> {
    let ga = matrix_gamma_sample(p, tag, a, rng)?;
    let gb = matrix_gamma_sample(p, tag, b, rng)?;
    let root = ga.add(&gb)?.inv_sqrt_pd()?;
    ga.congruence(&root)
}

/// Draw from the matrix beta type II law `∝ |Y|^{a−m}|I+Y|^{−(a+b)}` as
/// `(I−U)^{−1} − I` with `U` matrix beta type I.
pub fn matrix_beta2_sample<R: Rng + ?Sized>(p: usize, tag: AlgebraTag, a: f64, b: f64, rng: &mut R) -> Result<HermitianMatrix> {
    let u = matrix_beta1_sample(p, tag, a, b, rng)?;
    let i = HermitianMatrix::identity(tag, p)?;
    let imu = i.sub(&u)?;
    Ok(imu.map_spectrum(|l| 1.0 / l.max(f64::MIN_POSITIVE) - 1.0))
}

impl Sampler {
    pub fn new(spec: &EnsembleSpec) -> Result<Sampler> {
        spec.validate()?;
        let (p, beta) = (spec.p(), spec.beta());
        beta.require_concrete()?;
        let b = beta.b();
        use EnsembleSpec::*;
        let kind = match spec {
            Normal { n, mu, sigma, theta, .. } => SamplerKind::Normal {
                n: *n,
                mu: mu.clone(),
                theta_sqrt: theta.materialize(beta, *n)?.sqrt_pd()?,
                sigma_sqrt: sigma.materialize(beta, p)?.sqrt_pd()?,
            },
            Wishart { n, sigma, .. } => SamplerKind::Wishart {
                n: *n,
                sigma_sqrt: match sigma.as_scalar() {
                    Some(1.0) => None,
                    _ => Some(sigma.materialize(beta, p)?.sqrt_pd()?),
                },
            },
            TTypeII { n, nu, .. } | GegenbauerII { n, nu, .. } if *n < p as f64 => {
                return Err(domain(format!("quadratic-form sampling needs n >= p, got n = {n}, nu = {nu}")));
            }
            TTypeII { n, nu, .. } | TLaguerre { n, nu, .. } => SamplerKind::BetaII { a: b * n / 2.0, b: b * nu / 2.0 },
            GegenbauerII { n, nu, .. } | GegenbauerLaguerre { n, nu, .. } => SamplerKind::BetaI { a: b * n / 2.0, b: b * nu / 2.0 },
            Kb1 { a1, a2, sigma, .. } => SamplerKind::Kb1 { a1: *a1, a2: *a2, sigma: sigma.materialize(beta, p)? },
            Kb2 { a1, a2, sigma, .. } => {
                SamplerKind::Kb2 { a1: *a1, a2: *a2, sigma_inv_sqrt: sigma.materialize(beta, p)?.inv_sqrt_pd()? }
            }
            Gkb1 { omega, psi, .. } | Gkb2 { omega, psi, .. } => {
                let kind = spec.gkb_kind().expect("gkb");
                let (om, ps) = (omega.materialize(beta, p)?, psi.materialize(beta, p)?);
                SamplerKind::Gkb { inner: Box::new(Sampler::new(&spec.gkb_inner()?)?), root: gkb_root(kind, &om, &ps)?, psi: ps }
            }
        };
        Ok(Sampler { spec: spec.clone(), kind })
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Draw> {
        Ok(self.sample_counted(rng)?.0)
    }

    /// A draw together with the number of proposals it consumed.
    pub fn sample_counted<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Draw, u64)> {
        let (p, tag) = (self.spec.p(), self.spec.beta());
        let b = tag.b();
        match &self.kind {
            SamplerKind::Normal { n, mu, theta_sqrt, sigma_sqrt } => {
                let z = DAMatrix::gaussian(tag, *n, p, 1.0 / b, rng)?;
                let x = theta_sqrt.as_matrix().matmul(&z)?.matmul(sigma_sqrt.as_matrix())?;
                let x = match mu {
                    Some(m) => x.add(m)?,
                    None => x,
                };
                Ok((Draw::Rect(x), 1))
            }
            SamplerKind::Wishart { n, sigma_sqrt } => {
                let s = if n.fract() == 0.0 {
                    DAMatrix::gaussian(tag, *n as usize, p, 1.0 / b, rng)?.gram()?
                } else {
                    matrix_gamma_sample(p, tag, b * n / 2.0, rng)?.scale(2.0 / b)
                };
                let s = match sigma_sqrt {
                    Some(r) => s.congruence(r)?,
                    None => s,
                };
                Ok((Draw::Hermitian(s), 1))
            }
            SamplerKind::BetaI { a, b } => Ok((Draw::Hermitian(matrix_beta1_sample(p, tag, *a, *b, rng)?), 1)),
            SamplerKind::BetaII { a, b } => Ok((Draw::Hermitian(matrix_beta2_sample(p, tag, *a, *b, rng)?), 1)),
            SamplerKind::Kb1 { a1, a2, sigma } => {
                let mut tries = 0u64;
                loop {
                    tries += 1;
                    let u = matrix_beta1_sample(p, tag, *a1, *a2, rng)?;
                    let log_acc = -sigma.trace_product(&u)?;
                    if rng.random::<f64>().ln() < log_acc {
                        return Ok((Draw::Hermitian(u), tries));
                    }
                    stall_check(tries)?;
                }
            }
            SamplerKind::Kb2 { a1, a2, sigma_inv_sqrt } => {
                let mut tries = 0u64;
                loop {
                    tries += 1;
                    let y = matrix_gamma_sample(p, tag, *a1, rng)?.congruence(sigma_inv_sqrt)?;
                    let log_acc = -a2 * y.eigenvalues().iter().map(|l| l.max(0.0).ln_1p()).sum::<f64>();
                    if rng.random::<f64>().ln() < log_acc {
                        return Ok((Draw::Hermitian(y), tries));
                    }
                    stall_check(tries)?;
                }
            }
            SamplerKind::Gkb { inner, root, psi } => {
                let (d, tries) = inner.sample_counted(rng)?;
                let u = d.as_hermitian().expect("Kummer-beta draws are Hermitian");
                Ok((Draw::Hermitian(u.congruence(root)?.add(psi)?), tries))
            }
        }
    }
}

fn stall_check(tries: u64) -> Result<()> {
    if tries >= STALL_PROBE {
        // no acceptance in the whole probe batch
        let rate = 0.0;
        debug_assert!(rate < STALL_RATE);
        return Err(Error::RejectionStall { rate, proposals: tries });
    }
    Ok(())
}

/// Independent draws split over seeded worker substreams.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub spec: EnsembleSpec,
    pub seed: u64,
    pub workers: usize,
    pub draws: Vec<Draw>,
    pub stats: AcceptanceStats,
}

/// Draws `count` samples; the result depends only on `(seed, workers)`.
pub fn sample_batch(spec: &EnsembleSpec, count: usize, seed: u64, workers: usize) -> Result<SampleBatch> {
    let sampler = Sampler::new(spec)?;
    let workers = workers.max(1);
    let shares = split_budget(count, workers);
    let run = |w: usize, k: usize| -> Result<(Vec<Draw>, AcceptanceStats)> {
        let mut rng = substream(seed, w as u64);
        let mut out = Vec::with_capacity(k);
        let mut st = AcceptanceStats::default();
        for _ in 0..k {
            let (d, tries) = sampler.sample_counted(&mut rng)?;
            st.proposals += tries;
            st.accepted += 1;
            out.push(d);
        }
        Ok((out, st))
    };
    let parts: Vec<Result<(Vec<Draw>, AcceptanceStats)>> = if workers == 1 {
        vec![run(0, count)]
    } else {
        std::thread::scope(|s| {
            let hs: Vec<_> = shares.iter().enumerate().map(|(w, &k)| s.spawn(move || run(w, k))).collect();
            hs.into_iter().map(|h| h.join().expect("sampling worker panicked")).collect()
        })
    };
    let mut draws = Vec::with_capacity(count);
    let mut stats = AcceptanceStats::default();
    for part in parts {
        let (d, st) = part?;
        draws.extend(d);
        stats.merge(&st);
    }
    Ok(SampleBatch { spec: spec.clone(), seed, workers, draws, stats })
}

impl SampleBatch {
    /// One matrix per row, real components in column-major order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let Some(first) = self.draws.first() else {
            return Ok(());
        };
        let m = first.as_matrix();
        let comps = m.tag().components();
        let mut header = Vec::new();
        for j in 0..m.cols() {
            for i in 0..m.rows() {
                for c in 0..comps {
                    header.push(format!("x{}_{}_{}", i + 1, j + 1, c));
                }
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for d in &self.draws {
            let m = d.as_matrix();
            let mut row = Vec::with_capacity(header.len());
            for j in 0..m.cols() {
                for i in 0..m.rows() {
                    let s = m.get(i, j);
                    for c in 0..comps {
                        row.push(format!("{}", s.0[c]));
                    }
                }
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> Value {
        json!({
            "schema_version": 1,
            "spec": self.spec.to_json(),
            "seed": self.seed,
            "workers": self.workers,
            "count": self.draws.len(),
            "proposals": self.stats.proposals,
            "acceptance_rate": self.stats.rate(),
        })
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn export(&self, csv_path: &Path, manifest_path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        self.write_csv(f)?;
        let s = serde_json::to_string_pretty(&self.manifest()).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(manifest_path, s + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jack::JackTable;
    use crate::quadrature::{integrate, integrate_range};
    use crate::specfun::partitions_of;
    use statrs::function::gamma::ln_gamma;

    const TAGS: [AlgebraTag; 3] = [AlgebraTag::REAL, AlgebraTag::COMPLEX, AlgebraTag::QUATERNION];

    fn scalar_pdf(d: &Density) -> impl Fn(f64) -> f64 + '_ {
        move |x| d.log_density_spectral(&[x]).unwrap().exp()
    }

    fn p1_specs(beta: AlgebraTag) -> Vec<EnsembleSpec> {
        let s = ParamMatrix::Scalar;
        vec![
            EnsembleSpec::Wishart { p: 1, beta, n: 3.0, sigma: s(1.5) },
            EnsembleSpec::TTypeII { p: 1, beta, n: 2.0, nu: 3.0 },
            EnsembleSpec::GegenbauerII { p: 1, beta, n: 1.0, nu: 2.5 },
            EnsembleSpec::TLaguerre { p: 1, beta, n: 1.5, nu: 2.0 },
            EnsembleSpec::GegenbauerLaguerre { p: 1, beta, n: 2.0, nu: 3.0 },
            EnsembleSpec::Kb1 { p: 1, beta, a1: 1.5, a2: 2.0, sigma: s(0.8) },
            EnsembleSpec::Kb2 { p: 1, beta, a1: 1.5, a2: 3.0, sigma: s(0.7) },
            EnsembleSpec::Gkb1 { p: 1, beta, a1: 1.0, a2: 2.0, theta: s(1.0), omega: s(2.0), psi: s(0.5) },
            EnsembleSpec::Gkb2 { p: 1, beta, a1: 1.0, a2: 2.0, theta: s(1.0), omega: s(1.0), psi: s(0.0) },
        ]
    }

    fn support_1d(spec: &EnsembleSpec) -> (f64, f64) {
        match spec {
            EnsembleSpec::GegenbauerII { .. } | EnsembleSpec::GegenbauerLaguerre { .. } | EnsembleSpec::Kb1 { .. } => (0.0, 1.0),
            EnsembleSpec::Gkb1 { omega, psi, .. } => (psi.as_scalar().unwrap(), omega.as_scalar().unwrap()),
            EnsembleSpec::Gkb2 { psi, .. } => (psi.as_scalar().unwrap(), f64::INFINITY),
            _ => (0.0, f64::INFINITY),
        }
    }

    #[test]
    fn wishart_is_chi_square_at_p1() {
        let spec = EnsembleSpec::wishart(1, AlgebraTag::REAL, 3.0, ParamMatrix::identity()).unwrap();
        for s in [0.5, 1.0, 2.0] {
            let x = HermitianMatrix::scalar(AlgebraTag::REAL, 1, s).unwrap();
            let want = -(1.5 * 2f64.ln() + ln_gamma(1.5)) + 0.5 * s.ln() - s / 2.0;
            assert!((spec.log_density(&x).unwrap() - want).abs() < 1e-13);
        }
    }

    #[test]
    fn t_type2_quadratic_form_is_beta_prime() {
        let spec = EnsembleSpec::TTypeII { p: 1, beta: AlgebraTag::REAL, n: 1.0, nu: 1.0 };
        let d = spec.density().unwrap();
        for s in [0.3, 1.0, 4.0] {
            // beta-prime(1/2, 1/2): s^{-1/2}(1+s)^{-1}/B(1/2,1/2)
            let want = -0.5 * f64::ln(s) - s.ln_1p() - std::f64::consts::PI.ln();
            assert!((d.log_density_spectral(&[s]).unwrap() - want).abs() < 1e-13);
        }
        // rectangular X = x: density Γ(1)/(π^{1/2}Γ(1/2)) (1+x²)^{-1} is Cauchy
        let x = DAMatrix::from_real(AlgebraTag::REAL, 1, 1, &[0.7]).unwrap();
        let want = -(std::f64::consts::PI * (1.0 + 0.49)).ln();
        assert!((d.log_density_rect(&x).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn p1_normalization_for_every_beta() {
        for beta in [AlgebraTag::REAL, AlgebraTag::COMPLEX, AlgebraTag::QUATERNION, AlgebraTag::OCTONION] {
            for spec in p1_specs(beta) {
                let d = spec.density().unwrap();
                let (lo, hi) = support_1d(&spec);
                let r = integrate_range(scalar_pdf(&d), lo, hi, &QuadConfig::with_tol(1e-12, 1e-10));
                assert!((r.value - 1.0).abs() < 1e-7, "{} β={beta}: {}", spec.name(), r.value);
            }
        }
    }

    #[test]
    fn kb1_small_sigma_matches_gegenbauer_laguerre_shape() {
        let beta = AlgebraTag::COMPLEX;
        let (a1, a2) = (3.0, 4.0); // βn/2 = 3, βν/2 = 4 at n = 3, ν = 4
        let kb = EnsembleSpec::kb1(2, beta, a1, a2, ParamMatrix::Scalar(1e-12)).unwrap().density().unwrap();
        let gl = EnsembleSpec::GegenbauerLaguerre { p: 2, beta, n: 3.0, nu: 4.0 }.density().unwrap();
        let mut rng = substream(3, 0);
        let mut diffs = Vec::new();
        for _ in 0..5 {
            let u = matrix_beta1_sample(2, beta, 2.0, 2.0, &mut rng).unwrap();
            diffs.push(kb.log_density(&u).unwrap() - gl.log_density(&u).unwrap());
        }
        for d in &diffs {
            assert!((d - diffs[0]).abs() < 1e-9);
        }
        // the exponents line up, so the constant is zero as well
        assert!(diffs[0].abs() < 1e-9);
    }

    #[test]
    fn orthogonal_invariance() {
        let mut rng = substream(17, 0);
        for beta in TAGS {
            let specs = vec![
                EnsembleSpec::Wishart { p: 3, beta, n: 5.0, sigma: ParamMatrix::Scalar(2.0) },
                EnsembleSpec::TTypeII { p: 3, beta, n: 4.0, nu: 5.0 },
                EnsembleSpec::Kb1 { p: 3, beta, a1: 5.0, a2: 6.0, sigma: ParamMatrix::Scalar(0.5) },
            ];
            for spec in specs {
                let d = spec.density().unwrap();
                let x = matrix_beta1_sample(3, beta, 5.0, 6.0, &mut rng).unwrap();
                let h = UnitaryMatrix::haar_sample(3, beta, &mut rng).unwrap();
                let y = x.unitary_conjugate(&h).unwrap();
                let (a, b) = (d.log_density(&x).unwrap(), d.log_density(&y).unwrap());
                assert!((a - b).abs() < 1e-10, "{} β={beta}", spec.name());
                let spectral = d.log_density_spectral(&x.eigenvalues()).unwrap();
                assert!((a - spectral).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn congruence_jacobian_matches_determinant_power() {
        let mut rng = substream(4, 0);
        for beta in TAGS {
            for p in 1..=3 {
                let a = matrix_gamma_sample(p, beta, 6.0, &mut rng).unwrap();
                let want = 2.0 * cone_exponent(p, beta) * a.log_det_pd().unwrap();
                assert!((congruence_log_jacobian(&a).unwrap() - want).abs() < 1e-9, "β={beta} p={p}");
            }
        }
    }

    #[test]
    fn gkb_transform_round_trip_and_band() {
        let mut rng = substream(8, 1);
        for beta in TAGS {
            let omega = HermitianMatrix::from_real(beta, 2, &[3.0, 0.4, 0.4, 2.0]).unwrap();
            let psi = HermitianMatrix::from_real(beta, 2, &[0.5, 0.1, 0.1, -0.2]).unwrap();
            for _ in 0..10 {
                let u = matrix_beta1_sample(2, beta, 3.0, 3.5, &mut rng).unwrap();
                let x = gkb1_transform(&u, &omega, &psi).unwrap();
                assert!(gkb1_inverse(&x, &omega, &psi).unwrap().as_matrix().max_abs_diff(u.as_matrix()) < 1e-12);
                let band = SupportRegion::Band { lower: psi.clone(), upper: omega.clone() };
                assert!(band.contains(&x).unwrap());
                let x2 = gkb2_transform(&u, &omega, &psi).unwrap();
                assert!(gkb2_inverse(&x2, &omega, &psi).unwrap().as_matrix().max_abs_diff(u.as_matrix()) < 1e-12);
            }
            let i = HermitianMatrix::identity(beta, 2).unwrap();
            let z = HermitianMatrix::zeros(beta, 2).unwrap();
            let u = matrix_beta1_sample(2, beta, 3.0, 3.5, &mut rng).unwrap();
            assert!(gkb1_transform(&u, &i, &z).unwrap().as_matrix().max_abs_diff(u.as_matrix()) < 1e-13);
        }
        let om = HermitianMatrix::scalar(AlgebraTag::REAL, 1, 2.0).unwrap();
        let ps = HermitianMatrix::scalar(AlgebraTag::REAL, 1, 0.5).unwrap();
        let u = HermitianMatrix::scalar(AlgebraTag::REAL, 1, 0.3).unwrap();
        assert!((gkb1_transform(&u, &om, &ps).unwrap().trace() - (1.5 * 0.3 + 0.5)).abs() < 1e-14);
        let bad = HermitianMatrix::scalar(AlgebraTag::REAL, 1, 3.0).unwrap();
        assert!(matches!(gkb1_transform(&u, &om, &bad), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn gkb_density_is_kb_density_minus_log_jacobian() {
        let beta = AlgebraTag::COMPLEX;
        let theta = HermitianMatrix::from_real(beta, 2, &[1.0, 0.2, 0.2, 0.5]).unwrap();
        let omega = HermitianMatrix::from_real(beta, 2, &[3.0, 0.4, 0.4, 2.0]).unwrap();
        let psi = HermitianMatrix::from_real(beta, 2, &[0.5, 0.1, 0.1, -0.2]).unwrap();
        let spec = EnsembleSpec::gkb(GkbKind::One, 2, beta, 3.0, 2.5, theta.clone().into(), omega.clone().into(), psi.clone().into()).unwrap();
        let gkb = spec.density().unwrap();
        let a = gkb_root(GkbKind::One, &omega, &psi).unwrap();
        let kb = EnsembleSpec::kb1(2, beta, 3.0, 2.5, theta.congruence(&a).unwrap().into()).unwrap().density().unwrap();
        let mut rng = substream(21, 0);
        let mut consts = Vec::new();
        for _ in 0..6 {
            let u = matrix_beta1_sample(2, beta, 3.0, 2.5, &mut rng).unwrap();
            let x = gkb1_transform(&u, &omega, &psi).unwrap();
            consts.push(gkb.log_density(&x).unwrap() - kb.log_density(&u).unwrap());
        }
        for c in &consts {
            assert!((c - consts[0]).abs() < 1e-10);
        }
        assert!((consts[0] + congruence_log_jacobian(&a).unwrap()).abs() < 1e-10);
        // identity map reduces exactly to the Kummer-beta density
        let i = HermitianMatrix::identity(beta, 2).unwrap();
        let z = HermitianMatrix::zeros(beta, 2).unwrap();
        let u = matrix_beta1_sample(2, beta, 3.0, 2.5, &mut rng).unwrap();
        let direct = EnsembleSpec::kb1(2, beta, 3.0, 2.5, theta.clone().into()).unwrap().log_density(&u).unwrap();
        let via = gkb_log_density(GkbKind::One, 3.0, 2.5, &theta, &i, &z, &u).unwrap();
        assert!((direct - via).abs() < 1e-10);
    }

    #[test]
    fn gkb2_scalar_quadrature_oracle() {
        let spec = EnsembleSpec::gkb(
            GkbKind::Two,
            1,
            AlgebraTag::REAL,
            1.0,
            2.0,
            ParamMatrix::Scalar(1.0),
            ParamMatrix::Scalar(1.0),
            ParamMatrix::Scalar(0.0),
        )
        .unwrap();
        let d = spec.density().unwrap();
        let cfg = QuadConfig::with_tol(1e-13, 1e-12);
        let z = integrate_range(|x| (-x).exp() * (1.0 + x).powi(-2), 0.0, f64::INFINITY, &cfg).value;
        for x in [0.2f64, 1.0, 3.5] {
            let want = (-x).exp() * (1.0 + x).powi(-2) / z;
            assert!((d.log_density_spectral(&[x]).unwrap().exp() - want).abs() < 1e-9 * want);
        }
    }

    #[test]
    fn wishart_sample_mean() {
        let spec = EnsembleSpec::wishart(1, AlgebraTag::REAL, 3.0, ParamMatrix::identity()).unwrap();
        let batch = sample_batch(&spec, 200_000, 5, 2).unwrap();
        let mut w = Welford::default();
        for d in &batch.draws {
            w.push(d.as_hermitian().unwrap().trace());
        }
        assert!((w.mean - 3.0).abs() < 3.0 * w.stderr());
    }

    #[test]
    fn wishart_matrix_mean_is_n_sigma() {
        let beta = AlgebraTag::QUATERNION;
        let sigma = HermitianMatrix::from_real(beta, 2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        for n in [3.0, 3.5] {
            let spec = EnsembleSpec::wishart(2, beta, n, sigma.clone().into()).unwrap();
            let batch = sample_batch(&spec, 40_000, 12, 1).unwrap();
            for (i, j) in [(0, 0), (0, 1), (1, 1)] {
                let mut w = Welford::default();
                for d in &batch.draws {
                    w.push(d.as_matrix().get(i, j).re());
                }
                let want = n * sigma.as_matrix().get(i, j).re();
                assert!((w.mean - want).abs() < 4.0 * w.stderr(), "n={n} ({i},{j}) {} vs {want}", w.mean);
            }
        }
    }

    #[test]
    fn kb1_acceptance_rate() {
        let sigma = 2.0;
        let spec = EnsembleSpec::kb1(1, AlgebraTag::REAL, 1.0, 1.0, ParamMatrix::Scalar(sigma)).unwrap();
        let batch = sample_batch(&spec, 50_000, 2, 1).unwrap();
        let want = (1.0 - (-sigma).exp()) / sigma;
        let n = batch.stats.proposals as f64;
        let se = (want * (1.0 - want) / n).sqrt();
        assert!((batch.stats.rate() - want).abs() < 3.0 * se, "{} vs {want}", batch.stats.rate());
    }

    #[test]
    fn gkb1_draws_stay_in_band() {
        let beta = AlgebraTag::COMPLEX;
        let omega = HermitianMatrix::from_real(beta, 2, &[3.0, 0.4, 0.4, 2.0]).unwrap();
        let psi = HermitianMatrix::from_real(beta, 2, &[0.5, 0.1, 0.1, -0.2]).unwrap();
        let spec = EnsembleSpec::gkb(GkbKind::One, 2, beta, 2.0, 2.0, ParamMatrix::identity(), omega.into(), psi.into()).unwrap();
        let region = spec.support().unwrap();
        let batch = sample_batch(&spec, 500, 4, 1).unwrap();
        for d in &batch.draws {
            assert!(region.contains(d.as_hermitian().unwrap()).unwrap());
        }
    }

    #[test]
    fn rejection_stall_is_reported() {
        let spec = EnsembleSpec::kb1(1, AlgebraTag::REAL, 1.0, 1.0, ParamMatrix::Scalar(1e13)).unwrap();
        let err = sample_batch(&spec, 1, 1, 1).unwrap_err();
        assert!(matches!(err, Error::RejectionStall { proposals, .. } if proposals == STALL_PROBE));
    }

    #[test]
    fn batches_are_deterministic() {
        let spec = EnsembleSpec::wishart(2, AlgebraTag::REAL, 4.0, ParamMatrix::identity()).unwrap();
        let a = sample_batch(&spec, 100, 1, 3).unwrap();
        let b = sample_batch(&spec, 100, 1, 3).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        let text = String::from_utf8(ca).unwrap();
        assert_eq!(text.lines().count(), 101);
        assert_eq!(a.manifest()["spec"]["n"], 4.0);
    }

    #[test]
    fn eigen_density_p1_is_scalar_density() {
        for beta in TAGS {
            let spec = EnsembleSpec::Wishart { p: 1, beta, n: 3.0, sigma: ParamMatrix::identity() };
            let d = spec.density().unwrap();
            let g = eigen_joint_log_density(&spec, &[1.7], &McConfig::default()).unwrap();
            assert!((g.log_density - d.log_density_spectral(&[1.7]).unwrap()).abs() < 1e-12);
            assert_eq!(g.stderr, 0.0);
        }
    }

    #[test]
    fn eigen_density_of_wishart_integrates_to_one() {
        for beta in [AlgebraTag::REAL, AlgebraTag::COMPLEX] {
            for n in [3.0, 4.0] {
                let spec = EnsembleSpec::Wishart { p: 2, beta, n, sigma: ParamMatrix::identity() };
                let d = spec.density().unwrap();
                let cfg = McConfig::default();
                let r = integrate_ordered_2d(
                    |a, b| eigen_joint_with(&d, &[a, b], &cfg).map(|g| g.density).unwrap_or(0.0),
                    0.0,
                    f64::INFINITY,
                    &QuadConfig::with_tol(1e-10, 1e-9),
                );
                assert!((r.value - 1.0).abs() < 1e-6, "β={beta} n={n}: {}", r.value);
            }
        }
    }

    #[test]
    fn haar_average_matches_zonal_expansion() {
        // ∫ etr(−ΣHΛH*)(dH) = Σ_κ C_κ(−Σ)C_κ(Λ)/(k! C_κ(I))
        let beta = AlgebraTag::REAL;
        let sig = [1.0, 2.0];
        let lam = [0.7, 0.2];
        let table = JackTable::build(2, beta, 40).unwrap();
        let mut zonal = 0.0;
        let mut kf = 1.0;
        for k in 0..=40 {
            if k > 0 {
                kf *= k as f64;
            }
            let neg: Vec<f64> = sig.iter().map(|s| -s).collect();
            let a = table.eval_degree(k, &neg).unwrap();
            let b = table.eval_degree(k, &lam).unwrap();
            let c = table.eval_degree(k, &[1.0, 1.0]).unwrap();
            for i in 0..partitions_of(k as u32, 2).len() {
                zonal += a[i] * b[i] / (kf * c[i]);
            }
        }
        let spec = EnsembleSpec::kb1(2, beta, 2.0, 2.5, HermitianMatrix::diag(beta, &sig).unwrap().into()).unwrap();
        let d = spec.density().unwrap();
        let KernelParts { log_norm, e0, e_minus } = kernel_parts(&d);
        let est = eigen_joint_with(&d, &lam, &McConfig::new(200_000, 6).with_workers(2)).unwrap();
        // strip everything but the Haar average
        let rest = log_vandermonde(&lam, 1.0) - weyl_log_constant(2, beta).unwrap()
            + log_norm
            + lam.iter().map(|l| e0 * l.ln() + e_minus * (-l).ln_1p()).sum::<f64>();
        let avg = est.density / rest.exp();
        let se = est.stderr / rest.exp();
        assert!((avg - zonal).abs() < 3.0 * se, "{avg} ± {se} vs {zonal}");
    }

    struct KernelParts {
        log_norm: f64,
        e0: f64,
        e_minus: f64,
    }

    fn kernel_parts(d: &Density) -> KernelParts {
        match &d.kernel {
            Kernel::Beta(k) => KernelParts { log_norm: d.log_norm, e0: k.e0, e_minus: k.e_minus },
            _ => unreachable!(),
        }
    }

    #[test]
    fn formula_only_paths() {
        let spec = EnsembleSpec::Wishart { p: 2, beta: AlgebraTag::OCTONION, n: 3.0, sigma: ParamMatrix::identity() };
        assert!(matches!(spec.sampler(), Err(Error::FormulaOnlyAlgebra)));
        let d = spec.density().unwrap();
        assert!(d.log_density_spectral(&[2.0, 1.0]).unwrap().is_finite());
        assert!(matches!(
            d.log_density(&HermitianMatrix::identity(AlgebraTag::REAL, 2).unwrap()),
            Err(Error::FormulaOnlyAlgebra)
        ));
    }

    #[test]
    fn domain_checks() {
        assert!(EnsembleSpec::wishart(3, AlgebraTag::REAL, 2.0, ParamMatrix::identity()).is_err());
        assert!(EnsembleSpec::kb1(2, AlgebraTag::COMPLEX, 0.9, 2.0, ParamMatrix::identity()).is_err());
        assert!(EnsembleSpec::kb1(1, AlgebraTag::REAL, 1.0, 1.0, ParamMatrix::Scalar(-1.0)).is_err());
        assert!(EnsembleSpec::TTypeII { p: 2, beta: AlgebraTag::REAL, n: 3.0, nu: 1.0 }.validate().is_err());
        assert!(EnsembleSpec::gkb(
            GkbKind::One,
            1,
            AlgebraTag::REAL,
            1.0,
            1.0,
            ParamMatrix::identity(),
            ParamMatrix::Scalar(1.0),
            ParamMatrix::Scalar(2.0)
        )
        .is_err());
        let q = HermitianMatrix::identity(AlgebraTag::COMPLEX, 2).unwrap();
        assert!(matches!(
            EnsembleSpec::wishart(2, AlgebraTag::REAL, 3.0, q.into()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kb2_normalizer_routes_agree() {
        // p = 2, scalar Σ: eigenvalue quadrature against cone Monte Carlo
        let beta = AlgebraTag::REAL;
        let q = kb2_log_integral(2, beta, 2.0, 1.5, &ParamMatrix::Scalar(1.2)).unwrap();
        let s = HermitianMatrix::scalar(beta, 2, 1.2).unwrap();
        let c = kb2_psi_c(2, beta, 2.0, 1.5);
        let mc = kummer_psi(2.0, c, &s, PsiMethod::ConeMc, &McConfig::new(200_000, 2)).unwrap();
        let lg = mv_gamma_log(2, beta, 2.0).unwrap();
        let v = (lg).exp() * mc.estimate;
        assert!((q.exp() - v).abs() < 3.0 * lg.exp() * mc.stderr, "{} vs {v}", q.exp());
    }

    #[test]
    fn normal_density_and_sampler() {
        let beta = AlgebraTag::COMPLEX;
        let sigma = HermitianMatrix::from_real(beta, 2, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let spec = EnsembleSpec::Normal { p: 2, n: 1, beta, mu: None, sigma: sigma.clone().into(), theta: ParamMatrix::identity() };
        let d = spec.density().unwrap();
        // n = 1, Σ diagonal-free check against the direct quadratic form
        let x = DAMatrix::from_components(beta, 1, 2, vec![0.3, -0.2, 1.1, 0.4]).unwrap();
        let sinv = sigma.inv_pd().unwrap();
        let q = x.matmul(sinv.as_matrix()).unwrap().matmul(&x.conj_transpose()).unwrap().real_trace();
        let want = 2.0 * (2f64.ln() - (2.0 * std::f64::consts::PI).ln()) - sigma.log_det_pd().unwrap() - q;
        assert!((d.log_density_rect(&x).unwrap() - want).abs() < 1e-12);
        // E[X*X] = Σ for one row
        let batch = sample_batch(&spec, 40_000, 9, 1).unwrap();
        let mut w = Welford::default();
        for dr in &batch.draws {
            w.push(dr.as_matrix().gram().unwrap().as_matrix().get(0, 1).re());
        }
        assert!((w.mean - 0.3).abs() < 4.0 * w.stderr());
        let _ = integrate(|x| x, 0.0, 1.0, &QuadConfig::default());
    }
}
