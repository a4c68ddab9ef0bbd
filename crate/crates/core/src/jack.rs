//! Jack polynomials in C-normalization, `C_κ^{(α)}` with `α = 2/β`.
//!
//! The monic polynomials `P_κ = m_κ + Σ_{μ<κ} c_{κμ} m_μ` come from the
//! eigen-equation of the Laplace–Beltrami operator
//! `Σ xᵢ²∂ᵢ² + (2/α) Σ_{i≠j} xᵢ²/(xᵢ−xⱼ) ∂ᵢ`, which yields
//!
//! ```text
//! c_{κμ} = (2/α) / (ρ_κ − ρ_μ) · Σ_{i<j} Σ_{t=1}^{μⱼ} ((μᵢ+t) − (μⱼ−t)) c_{κλ},
//! λ = sort(μ with μᵢ+t, μⱼ−t),   ρ_μ = Σ μᵢ (μᵢ − 1 − (2/α)(i−1)).
//! ```
//!
//! The C-normalization is `C_κ = α^k k! / Π_{s∈κ} (α(a(s)+1) + l(s)) · P_κ`
//! with arm `a` and leg `l` of each box.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use crate::algebra::AlgebraTag;
use crate::error::{domain, Error, Result};
use crate::specfun::{partitions_of, Partition};

type TableCache = HashMap<(usize, u32), Arc<JackTable>>;

/// File format version of [`JackTable::save`].
pub const TABLE_FORMAT_VERSION: u32 = 1;

/// Default cap on the number of stored monomial coefficients.
pub const DEFAULT_COEFF_CAP: usize = 20_000_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DegreeBlock {
    partitions: Vec<Partition>,
    /// `coeffs[i]` lists `(j, c)` with `C_{κ_i} = Σ c · m_{κ_j}`.
    coeffs: Vec<Vec<(usize, f64)>>,
    /// Relative residual of `Σ_κ C_κ(x) − (Σx)^k` at a fixed probe vector.
    trace_residual: f64,
    #[serde(skip)]
    monomials: Vec<Vec<Vec<u32>>>,
}

/// Monomial expansions of every `C_κ^β` with `|κ| ≤ K` and at most `p`
/// parts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JackTable {
    version: u32,
    p: usize,
    beta: AlgebraTag,
    max_degree: usize,
    degrees: Vec<DegreeBlock>,
}

fn rho(mu: &Partition, alpha: f64) -> f64 {
    mu.parts()
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let m = f64::from(m);
            m * (m - 1.0 - (2.0 / alpha) * i as f64)
        })
        .sum()
}

/// `Π_{s∈κ} (α(a(s)+1) + l(s))`.
fn upper_hook_product(kappa: &Partition, alpha: f64) -> f64 {
    let conj = kappa.conjugate();
    let mut prod = 1.0;
    for (i, &row) in kappa.parts().iter().enumerate() {
        for j in 0..row as usize {
            let arm = f64::from(row) - j as f64 - 1.0;
            let leg = f64::from(conj.part(j)) - i as f64 - 1.0;
            prod *= alpha * (arm + 1.0) + leg;
        }
    }
    prod
}

/// Distinct permutations of `mu` padded with zeros to length `p`.
fn distinct_permutations(mu: &Partition, p: usize) -> Vec<Vec<u32>> {
    let mut v: Vec<u32> = (0..p).map(|i| mu.part(i)).collect();
    v.sort_unstable();
    let mut out = vec![v.clone()];
    // next lexicographic permutation
    while let Some(i) = (0..v.len().saturating_sub(1)).rev().find(|&i| v[i] < v[i + 1]) {
        let j = (i + 1..v.len()).rev().find(|&j| v[j] > v[i]).expect("successor exists");
        v.swap(i, j);
        v[i + 1..].reverse();
        out.push(v.clone());
    }
    out
}

/// Monic monomial coefficients of `P_κ` over `parts` (all partitions of the
/// same degree, reverse-lexicographic, so dominance-larger ones come first).
fn monic_coefficients(kappa_idx: usize, parts: &[Partition], index: &HashMap<Partition, usize>, alpha: f64) -> Vec<f64> {
    let kappa = &parts[kappa_idx];
    let mut c = vec![0.0; parts.len()];
    c[kappa_idx] = 1.0;
    let rho_k = rho(kappa, alpha);
    for (m_idx, mu) in parts.iter().enumerate().skip(kappa_idx + 1) {
        if !kappa.dominates(mu) {
            continue;
        }
        let mut acc = 0.0;
        let n = mu.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let (mi, mj) = (mu.part(i), mu.part(j));
                for t in 1..=mj {
                    let mut raised: Vec<u32> = mu.parts().to_vec();
                    raised[i] = mi + t;
                    raised[j] = mj - t;
                    let lambda = Partition::from_unsorted(raised);
                    if !kappa.dominates(&lambda) {
                        continue;
                    }
                    if let Some(&l_idx) = index.get(&lambda) {
                        acc += f64::from((mi + t) - (mj - t)) * c[l_idx];
                    }
                }
            }
        }
        if acc != 0.0 {
            c[m_idx] = (2.0 / alpha) * acc / (rho_k - rho(mu, alpha));
        }
    }
    c
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl DegreeBlock {
    fn build(k: usize, p: usize, alpha: f64) -> DegreeBlock {
        let partitions = partitions_of(k as u32, p);
        let index: HashMap<Partition, usize> = partitions.iter().cloned().enumerate().map(|(i, q)| (q, i)).collect();
        let kfact = factorial(k);
        let alpha_k = alpha.powi(k as i32);
        let coeffs = (0..partitions.len())
            .map(|ki| {
                let scale = alpha_k * kfact / upper_hook_product(&partitions[ki], alpha);
                monic_coefficients(ki, &partitions, &index, alpha)
                    .into_iter()
                    .enumerate()
                    .filter(|(_, c)| *c != 0.0)
                    .map(|(j, c)| (j, c * scale))
                    .collect()
            })
            .collect();
        let mut block = DegreeBlock { partitions, coeffs, trace_residual: 0.0, monomials: Vec::new() };
        block.attach_monomials(p);
        let probe: Vec<f64> = (0..p).map(|i| 1.0 / (i as f64 + 1.5)).collect();
        let sum: f64 = probe.iter().sum::<f64>().powi(k as i32);
        let total: f64 = block.eval_all(&probe).iter().sum();
        block.trace_residual = (total - sum).abs() / sum;
        block
    }

    fn attach_monomials(&mut self, p: usize) {
        self.monomials = self.partitions.iter().map(|mu| distinct_permutations(mu, p)).collect();
    }

    fn monomial_values(&self, x: &[f64]) -> Vec<f64> {
        self.monomials
            .iter()
            .map(|perms| perms.iter().map(|e| x.iter().zip(e).map(|(xi, &ei)| xi.powi(ei as i32)).product::<f64>()).sum())
            .collect()
    }

    fn eval_all(&self, x: &[f64]) -> Vec<f64> {
        let m = self.monomial_values(x);
        self.coeffs.iter().map(|row| row.iter().map(|&(j, c)| c * m[j]).sum()).collect()
    }
}

impl JackTable {
    /// Builds the table for `(p, β, K)` with the default coefficient cap.
    pub fn build(p: usize, beta: AlgebraTag, max_degree: usize) -> Result<JackTable> {
        Self::build_with_cap(p, beta, max_degree, DEFAULT_COEFF_CAP)
    }

    pub fn build_with_cap(p: usize, beta: AlgebraTag, max_degree: usize, cap: usize) -> Result<JackTable> {
        if p == 0 {
            return Err(domain("Jack table needs p >= 1"));
        }
        let mut stored = 0usize;
        for k in 0..=max_degree {
            let n = partitions_of(k as u32, p).len();
            stored += n * (n + 1) / 2;
            if stored > cap {
                return Err(Error::BudgetExceeded(format!(
                    "Jack table (p = {p}, K = {max_degree}) needs more than {cap} coefficients (exceeded at degree {k})"
                )));
            }
        }
        let alpha = beta.alpha();
        let degrees = (0..=max_degree).map(|k| DegreeBlock::build(k, p, alpha)).collect();
        Ok(JackTable { version: TABLE_FORMAT_VERSION, p, beta, max_degree, degrees })
    }

    /// Shared table from a process-wide cache; a cached table of higher
    /// degree for the same `(p, β)` is reused.
    pub fn cached(p: usize, beta: AlgebraTag, max_degree: usize) -> Result<Arc<JackTable>> {
        static CACHE: OnceLock<Mutex<TableCache>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let key = (p, beta.beta());
        if let Some(t) = cache.lock().expect("cache poisoned").get(&key) {
            if t.max_degree >= max_degree {
                return Ok(Arc::clone(t));
            }
        }
        // built outside the lock; a concurrent builder of the same key only wastes work
        let table = Arc::new(JackTable::build(p, beta, max_degree)?);
        let mut guard = cache.lock().expect("cache poisoned");
        let entry = guard.entry(key).or_insert_with(|| Arc::clone(&table));
        if entry.max_degree < max_degree {
            *entry = Arc::clone(&table);
        }
        Ok(Arc::clone(entry))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn beta(&self) -> AlgebraTag {
        self.beta
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Partitions of degree `k` (at most `p` parts) in table order.
    pub fn partitions(&self, k: usize) -> &[Partition] {
        &self.degrees[k].partitions
    }

    /// Per-degree trace-identity residual recorded at build time.
    pub fn trace_residuals(&self) -> Vec<f64> {
        self.degrees.iter().map(|d| d.trace_residual).collect()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch { expected: format!("{} eigenvalues", self.p), got: x.len().to_string() });
        }
        Ok(())
    }

    /// Every `C_κ(x)` with `|κ| = k`, aligned with [`partitions`](Self::partitions).
    pub fn eval_degree(&self, k: usize, x: &[f64]) -> Result<Vec<f64>> {
        if k > self.max_degree {
            return Err(Error::DegreeExceeded { degree: k, max: self.max_degree });
        }
        self.check_x(x)?;
        Ok(self.degrees[k].eval_all(x))
    }

    /// `C_κ^β(x)`; zero when `κ` has more than `p` parts.
    pub fn eval_c(&self, kappa: &Partition, x: &[f64]) -> Result<f64> {
        let k = kappa.weight() as usize;
        if k > self.max_degree {
            return Err(Error::DegreeExceeded { degree: k, max: self.max_degree });
        }
        self.check_x(x)?;
        if kappa.len() > self.p {
            return Ok(0.0);
        }
        let block = &self.degrees[k];
        let i = block.partitions.iter().position(|q| q == kappa).expect("partition enumerated");
        let m = block.monomial_values(x);
        Ok(block.coeffs[i].iter().map(|&(j, c)| c * m[j]).sum())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<JackTable> {
        let s = std::fs::read_to_string(path)?;
        let mut t: JackTable = serde_json::from_str(&s).map_err(|e| Error::Parse(e.to_string()))?;
        if t.version != TABLE_FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported Jack table version {}", t.version)));
        }
        let p = t.p;
        for d in t.degrees.iter_mut() {
            d.attach_monomials(p);
        }
        Ok(t)
    }
}

/// Convenience wrapper over [`JackTable::eval_c`].
pub fn eval_c(table: &JackTable, kappa: &Partition, x: &[f64]) -> Result<f64> {
    table.eval_c(kappa, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    const TAGS: [AlgebraTag; 3] = [AlgebraTag::REAL, AlgebraTag::COMPLEX, AlgebraTag::QUATERNION];

    fn part(v: &[u32]) -> Partition {
        Partition::new(v.to_vec()).unwrap()
    }

    #[test]
    fn degree_zero_and_one() {
        let t = JackTable::build(3, AlgebraTag::REAL, 1).unwrap();
        assert_eq!(t.partitions(0).len(), 1);
        assert_eq!(t.eval_c(&Partition::empty(), &[0.3, 2.0, 5.0]).unwrap(), 1.0);
        assert_eq!(t.partitions(1).len(), 1);
        let x = [0.3, 2.0, 5.0];
        assert!((t.eval_c(&part(&[1]), &x).unwrap() - 7.3).abs() < 1e-14);
        let t2 = JackTable::build(2, AlgebraTag::REAL, 1).unwrap();
        assert!((t2.eval_c(&part(&[1]), &[3.0, 4.0]).unwrap() - 7.0).abs() < 1e-14);
    }

    #[test]
    fn zonal_degree_two_at_ones() {
        let t = JackTable::build(2, AlgebraTag::REAL, 2).unwrap();
        assert_eq!(t.partitions(2).len(), 2);
        let c2 = t.eval_c(&part(&[2]), &[1.0, 1.0]).unwrap();
        let c11 = t.eval_c(&part(&[1, 1]), &[1.0, 1.0]).unwrap();
        assert!((c2 - 8.0 / 3.0).abs() < 1e-14);
        assert!((c11 - 4.0 / 3.0).abs() < 1e-14);
        assert!((c2 + c11 - 4.0).abs() < 1e-14);
    }

    #[test]
    fn known_jack_expansions() {
        // J_(2) = (1+α) m_2 + 2 m_11 and J_(21) = (2+α) m_21 + 6 m_111
        // (Stanley's tables); compare ratios of monomial coefficients.
        for tag in TAGS {
            let a = tag.alpha();
            let t = JackTable::build(3, tag, 3).unwrap();
            let x = [0.7, 0.0, 0.0];
            let y = [0.7, 1.3, 0.0];
            let c2_x = t.eval_c(&part(&[2]), &x).unwrap(); // coefficient · m_2
            let c2_y = t.eval_c(&part(&[2]), &y).unwrap();
            let m2_y = 0.49 + 1.69;
            let m11_y = 0.7 * 1.3;
            let c_m2 = c2_x / 0.49;
            let c_m11 = (c2_y - c_m2 * m2_y) / m11_y;
            assert!((c_m11 / c_m2 - 2.0 / (1.0 + a)).abs() < 1e-12);

            let z = [1.0, 1.0, 1.0];
            let c21 = t.eval_c(&part(&[2, 1]), &z).unwrap();
            // m_21(1,1,1) = 6, m_111(1,1,1) = 1
            let w = [2.0, 1.0, 0.0];
            let c21_w = t.eval_c(&part(&[2, 1]), &w).unwrap(); // m_21(2,1,0) = 4 + 2 = 6, m_111 = 0
            let c_m21 = c21_w / 6.0;
            let c_m111 = c21 - 6.0 * c_m21;
            assert!((c_m111 / c_m21 - 6.0 / (2.0 + a)).abs() < 1e-12, "beta {tag}");
        }
    }

    #[test]
    fn too_many_parts_evaluates_to_zero() {
        let t = JackTable::build(2, AlgebraTag::REAL, 4).unwrap();
        assert_eq!(t.eval_c(&part(&[1, 1, 1]), &[1.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(t.eval_c(&part(&[5]), &[1.0, 2.0]), Err(Error::DegreeExceeded { .. })));
        assert!(matches!(t.eval_c(&part(&[1]), &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn trace_identity_random_vectors() {
        let mut rng = substream(2024, 0);
        for tag in TAGS {
            for p in 1..=4 {
                let t = JackTable::build(p, tag, 8).unwrap();
                for _ in 0..50 {
                    let x: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..3.0)).collect();
                    let s: f64 = x.iter().sum();
                    for k in 0..=8 {
                        let total: f64 = t.eval_degree(k, &x).unwrap().iter().sum();
                        let want = s.powi(k as i32);
                        assert!((total - want).abs() <= 1e-9 * want, "β={tag} p={p} k={k}: {total} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn symmetric_and_homogeneous() {
        let t = JackTable::build(3, AlgebraTag::COMPLEX, 6).unwrap();
        let x = [0.4, 1.7, 2.9];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for k in 0..=6 {
            let base = t.eval_degree(k, &x).unwrap();
            for perm in perms {
                let y: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
                for (a, b) in base.iter().zip(t.eval_degree(k, &y).unwrap()) {
                    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                }
            }
            for c in [0.5, 2.0, 10.0] {
                let y: Vec<f64> = x.iter().map(|v| v * c).collect();
                for (a, b) in base.iter().zip(t.eval_degree(k, &y).unwrap()) {
                    let want = a * f64::powi(c, k as i32);
                    assert!((b - want).abs() <= 1e-10 * want.abs().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn identity_argument_sums_to_power_of_p() {
        for tag in [AlgebraTag::REAL, AlgebraTag::QUATERNION, AlgebraTag::OCTONION] {
            let t = JackTable::build(3, tag, 10).unwrap();
            for k in 0..=10 {
                let total: f64 = t.eval_degree(k, &[1.0; 3]).unwrap().iter().sum();
                assert!((total - 3f64.powi(k as i32)).abs() <= 1e-9 * 3f64.powi(k as i32));
            }
            assert!(t.trace_residuals().iter().all(|r| *r < 1e-12));
        }
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(JackTable::build_with_cap(4, AlgebraTag::REAL, 20, 100), Err(Error::BudgetExceeded(_))));
    }

    #[test]
    fn cached_tables_are_shared() {
        let a = JackTable::cached(2, AlgebraTag::QUATERNION, 6).unwrap();
        let b = JackTable::cached(2, AlgebraTag::QUATERNION, 4).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn save_and_load() {
        let t = JackTable::build(3, AlgebraTag::COMPLEX, 5).unwrap();
        let path = std::env::temp_dir().join(format!("jack-table-{}.json", std::process::id()));
        t.save(&path).unwrap();
        let u = JackTable::load(&path).unwrap();
        std::fs::remove_file(&path).ok();
        let x = [0.2, 0.9, 1.4];
        assert_eq!(t.eval_degree(5, &x).unwrap(), u.eval_degree(5, &x).unwrap());
    }

    #[test]
    fn permutations_of_multiset() {
        assert_eq!(distinct_permutations(&part(&[2, 1]), 3).len(), 6);
        assert_eq!(distinct_permutations(&part(&[1, 1]), 3).len(), 3);
        assert_eq!(distinct_permutations(&Partition::empty(), 2), vec![vec![0, 0]]);
    }
}
