//! Partitions, generalized Pochhammer symbols, multivariate gamma and beta
//! functions, Stiefel volumes and highest-weight vectors.
//!
//! Everything that can overflow is carried as a logarithm; signed
//! quantities use [`LogValue`].

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::LN_2;
use std::fmt;

use crate::algebra::{AlgebraTag, HermitianMatrix};
use crate::error::{domain, Error, Result};

const LN_PI: f64 = 1.144_729_885_849_400_2;

/// A signed real stored as `sign · exp(log_abs)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    pub log_abs: f64,
    /// `-1`, `0` or `1`.
    pub sign: f64,
}

#[allow(clippy::should_implement_trait)]
impl LogValue {
    pub const ONE: LogValue = LogValue { log_abs: 0.0, sign: 1.0 };
    pub const ZERO: LogValue = LogValue { log_abs: f64::NEG_INFINITY, sign: 0.0 };

    pub fn from_value(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            LogValue { log_abs: x.abs().ln(), sign: x.signum() }
        }
    }

    pub fn from_log(log_abs: f64) -> Self {
        LogValue { log_abs, sign: 1.0 }
    }

    pub fn value(self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.log_abs.exp()
        }
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0.0
    }

    pub fn mul(self, o: LogValue) -> LogValue {
        if self.is_zero() || o.is_zero() {
            Self::ZERO
        } else {
            LogValue { log_abs: self.log_abs + o.log_abs, sign: self.sign * o.sign }
        }
    }

    /// `self / o`; division by zero yields an infinite magnitude.
    pub fn div(self, o: LogValue) -> LogValue {
        if self.is_zero() {
            return Self::ZERO;
        }
        LogValue { log_abs: self.log_abs - o.log_abs, sign: self.sign * if o.sign == 0.0 { 1.0 } else { o.sign } }
    }
}

/// Non-increasing sequence of positive integers (trailing zeros dropped).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Partition(Vec<u32>);

impl Partition {
    pub fn new(parts: impl Into<Vec<u32>>) -> Result<Self> {
        let mut parts = parts.into();
        if parts.windows(2).any(|w| w[0] < w[1]) {
            return Err(domain(format!("partition parts must be non-increasing: {parts:?}")));
        }
        while parts.last() == Some(&0) {
            parts.pop();
        }
        Ok(Partition(parts))
    }

    /// Sorts `parts` into a partition.
    pub fn from_unsorted(mut parts: Vec<u32>) -> Self {
        parts.sort_unstable_by(|a, b| b.cmp(a));
        while parts.last() == Some(&0) {
            parts.pop();
        }
        Partition(parts)
    }

    pub fn empty() -> Self {
        Partition(Vec::new())
    }

    pub fn parts(&self) -> &[u32] {
        &self.0
    }

    /// Number of non-zero parts.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `|κ| = Σ kᵢ`.
    pub fn weight(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Part `i` (0-based), zero past the end.
    pub fn part(&self, i: usize) -> u32 {
        self.0.get(i).copied().unwrap_or(0)
    }

    /// Transposed Young diagram.
    pub fn conjugate(&self) -> Partition {
        let first = self.part(0);
        Partition((1..=first).map(|j| self.0.iter().filter(|&&k| k >= j).count() as u32).collect())
    }

    /// Dominance order `self ≥ other` (equal weights assumed).
    pub fn dominates(&self, other: &Partition) -> bool {
        let n = self.len().max(other.len());
        let (mut a, mut b) = (0u32, 0u32);
        for i in 0..n {
            a += self.part(i);
            b += other.part(i);
            if a < b {
                return false;
            }
        }
        true
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        write!(f, "({})", s.join(","))
    }
}

/// All partitions of `k` into at most `max_parts` parts, reverse
/// lexicographic (`(3), (2,1), (1,1,1)`).
pub fn partitions_of(k: u32, max_parts: usize) -> Vec<Partition> {
    fn rec(remaining: u32, cap: u32, slots: usize, cur: &mut Vec<u32>, out: &mut Vec<Partition>) {
        if remaining == 0 {
            out.push(Partition(cur.clone()));
            return;
        }
        if slots == 0 {
            return;
        }
        for first in (1..=cap.min(remaining)).rev() {
            cur.push(first);
            rec(remaining - first, first, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, k, max_parts, &mut Vec::new(), &mut out);
    out
}

/// `(a)_κ^β = Π_i (a − (i−1)β/2)_{kᵢ}` with sign tracking.
pub fn pochhammer(a: f64, kappa: &Partition, beta: f64) -> LogValue {
    let mut acc = LogValue::ONE;
    for (i, &k) in kappa.parts().iter().enumerate() {
        let shift = a - i as f64 * beta / 2.0;
        for j in 0..k {
            acc = acc.mul(LogValue::from_value(shift + f64::from(j)));
            if acc.is_zero() {
                return acc;
            }
        }
    }
    acc
}

fn check_dim(p: usize) -> Result<()> {
    if p == 0 {
        Err(domain("dimension p must be at least 1"))
    } else {
        Ok(())
    }
}

/// `log Γ_p^β(a)`, requiring `a > (p−1)β/2`.
pub fn mv_gamma_log(p: usize, beta: AlgebraTag, a: f64) -> Result<f64> {
    check_dim(p)?;
    let b = beta.b();
    let bound = (p as f64 - 1.0) * b / 2.0;
    if !(a > bound) {
        return Err(domain(format!("multivariate gamma needs a > (p-1)β/2 = {bound}, got a = {a}")));
    }
    let pf = p as f64;
    let mut s = pf * (pf - 1.0) * b / 4.0 * LN_PI;
    for i in 0..p {
        s += ln_gamma(a - i as f64 * b / 2.0);
    }
    Ok(s)
}

/// `log Γ_p^β(a, κ) = log[(a)_κ^β Γ_p^β(a)]`, requiring `a > (p−1)β/2 − k_p`.
pub fn mv_gamma_weighted_log(p: usize, beta: AlgebraTag, a: f64, kappa: &Partition) -> Result<f64> {
    check_dim(p)?;
    if kappa.len() > p {
        return Err(domain(format!("partition {kappa} has more than p = {p} parts")));
    }
    let b = beta.b();
    let bound = (p as f64 - 1.0) * b / 2.0 - f64::from(kappa.part(p - 1));
    if !(a > bound) {
        return Err(domain(format!("weighted multivariate gamma needs a > (p-1)β/2 - k_p = {bound}, got a = {a}")));
    }
    let pf = p as f64;
    let mut s = pf * (pf - 1.0) * b / 4.0 * LN_PI;
    for i in 0..p {
        s += ln_gamma(a + f64::from(kappa.part(i)) - i as f64 * b / 2.0);
    }
    Ok(s)
}

/// `log B_p^β(a, b) = log Γ_p^β(a) + log Γ_p^β(b) − log Γ_p^β(a + b)`.
pub fn mv_beta_log(p: usize, beta: AlgebraTag, a: f64, b: f64) -> Result<f64> {
    // sorted so that the sum is evaluated in the same order for (a,b) and (b,a)
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    Ok(mv_gamma_log(p, beta, lo)? + mv_gamma_log(p, beta, hi)? - mv_gamma_log(p, beta, a + b)?)
}

/// `log Vol(V_{p,n}^β) = log[2^p π^{npβ/2} / Γ_p^β(nβ/2)]`.
pub fn stiefel_log_volume(n: usize, p: usize, beta: AlgebraTag) -> Result<f64> {
    check_dim(p)?;
    if n < p {
        return Err(domain(format!("Stiefel manifold needs n >= p, got n = {n}, p = {p}")));
    }
    let b = beta.b();
    let (nf, pf) = (n as f64, p as f64);
    Ok(pf * LN_2 + nf * pf * b / 2.0 * LN_PI - mv_gamma_log(p, beta, nf * b / 2.0)?)
}

/// Correction `ϱ` in the eigenvalue-density constant `π^{p²β/2 + ϱ}`.
pub fn rho(p: usize, beta: u32) -> Result<i64> {
    let p = p as i64;
    match beta {
        1 => Ok(0),
        2 => Ok(-p),
        4 => Ok(-2 * p),
        8 => Ok(-4 * p),
        other => Err(Error::InvalidBeta(other)),
    }
}

/// `log[Γ_p^β(pβ/2) / π^{p²β/2 + ϱ}]`, the total mass of the eigenvalue
/// change of variables.
pub fn weyl_log_constant(p: usize, beta: AlgebraTag) -> Result<f64> {
    let pf = p as f64;
    let b = beta.b();
    Ok(mv_gamma_log(p, beta, pf * b / 2.0)? - (pf * pf * b / 2.0 + rho(p, beta.beta())? as f64) * LN_PI)
}

/// Highest-weight vector `q_κ(A) = |A_p|^{k_p} Π_{i<p} |A_i|^{kᵢ − k_{i+1}}`
/// over leading principal minors `A_i`.
pub fn q_kappa(a: &HermitianMatrix, kappa: &Partition) -> Result<f64> {
    let p = a.p();
    if kappa.len() > p {
        return Err(domain(format!("partition {kappa} has more than p = {p} parts")));
    }
    let mut log = 0.0;
    for m in 1..=p {
        let e = kappa.part(m - 1) - if m < p { kappa.part(m) } else { 0 };
        if e == 0 {
            continue;
        }
        let det = a.leading_block(m).det();
        if !(det > 0.0) {
            return Err(Error::SingularMinor { order: m, value: det });
        }
        log += f64::from(e) * det.ln();
    }
    Ok(log.exp())
}
