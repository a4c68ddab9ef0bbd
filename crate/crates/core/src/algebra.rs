//! Matrices over the real, complex and quaternion division algebras.
//!
//! Entries are stored as `β` real components (`1`, `1 + i`, `1 + i + j + k`).
//! All spectral work goes through the complex adjoint embedding: a
//! quaternion matrix `Q = Z1 + Z2·j` maps to the complex matrix
//! `[[Z1, Z2], [-conj(Z2), conj(Z1)]]`, whose spectrum is that of `Q` with
//! every eigenvalue repeated twice.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Relative tolerance of the Hermitian check.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance of the `H*H = I` check.
pub const UNITARY_TOL: f64 = 1e-10;
/// Eigenvalue floor used by matrix square roots.
pub const SQRT_FLOOR: f64 = 1e-13;

/// Real dimension `β` of the underlying division algebra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct AlgebraTag(u32);

impl AlgebraTag {
    pub const REAL: AlgebraTag = AlgebraTag(1);
    pub const COMPLEX: AlgebraTag = AlgebraTag(2);
    pub const QUATERNION: AlgebraTag = AlgebraTag(4);
    pub const OCTONION: AlgebraTag = AlgebraTag(8);

    pub fn new(beta: u32) -> Result<Self> {
        match beta {
            1 | 2 | 4 | 8 => Ok(AlgebraTag(beta)),
            other => Err(Error::InvalidBeta(other)),
        }
    }

    pub fn beta(self) -> u32 {
        self.0
    }

    /// `β` as a float, for use in formulas.
    pub fn b(self) -> f64 {
        f64::from(self.0)
    }

    /// Jack parameter `α = 2/β`.
    pub fn alpha(self) -> f64 {
        2.0 / self.b()
    }

    pub fn is_concrete(self) -> bool {
        self.0 != 8
    }

    pub fn require_concrete(self) -> Result<()> {
        if self.is_concrete() {
            Ok(())
        } else {
            Err(Error::FormulaOnlyAlgebra)
        }
    }

    /// Number of real components per entry.
    pub fn components(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u32> for AlgebraTag {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        AlgebraTag::new(v)
    }
}

impl From<AlgebraTag> for u32 {
    fn from(t: AlgebraTag) -> u32 {
        t.0
    }
}

impl std::fmt::Display for AlgebraTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A scalar of the largest associative algebra (quaternions); reals and
/// complex numbers are the cases with trailing components equal to zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scalar(pub [f64; 4]);

impl Scalar {
    pub const ZERO: Scalar = Scalar([0.0; 4]);
    pub const ONE: Scalar = Scalar([1.0, 0.0, 0.0, 0.0]);

    pub fn real(x: f64) -> Self {
        Scalar([x, 0.0, 0.0, 0.0])
    }

    pub fn complex(re: f64, im: f64) -> Self {
        Scalar([re, im, 0.0, 0.0])
    }

    pub fn quaternion(a: f64, b: f64, c: f64, d: f64) -> Self {
        Scalar([a, b, c, d])
    }

    pub fn re(self) -> f64 {
        self.0[0]
    }

    pub fn conj(self) -> Self {
        let [a, b, c, d] = self.0;
        Scalar([a, -b, -c, -d])
    }

    pub fn norm_sqr(self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn scale(self, s: f64) -> Self {
        let [a, b, c, d] = self.0;
        Scalar([a * s, b * s, c * s, d * s])
    }

    fn max_abs(self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

impl Add for Scalar {
    type Output = Scalar;
    fn add(self, o: Scalar) -> Scalar {
        let (x, y) = (self.0, o.0);
        Scalar([x[0] + y[0], x[1] + y[1], x[2] + y[2], x[3] + y[3]])
    }
}

impl Sub for Scalar {
    type Output = Scalar;
    fn sub(self, o: Scalar) -> Scalar {
        let (x, y) = (self.0, o.0);
        Scalar([x[0] - y[0], x[1] - y[1], x[2] - y[2], x[3] - y[3]])
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        self.scale(-1.0)
    }
}

/// Hamilton product.
impl Mul for Scalar {
    type Output = Scalar;
    fn mul(self, o: Scalar) -> Scalar {
        let [a1, b1, c1, d1] = self.0;
        let [a2, b2, c2, d2] = o.0;
        Scalar([
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        ])
    }
}

/// A dense `rows × cols` matrix over the algebra named by `tag`, stored
/// row-major with `β` real components per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DAMatrix {
    tag: AlgebraTag,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DAMatrix {
    pub fn zeros(tag: AlgebraTag, rows: usize, cols: usize) -> Result<Self> {
        tag.require_concrete()?;
        Ok(DAMatrix { tag, rows, cols, data: vec![0.0; rows * cols * tag.components()] })
    }

    pub fn identity(tag: AlgebraTag, p: usize) -> Result<Self> {
        let mut m = Self::zeros(tag, p, p)?;
        for i in 0..p {
            m.set(i, i, Scalar::ONE);
        }
        Ok(m)
    }

    /// Builds a matrix from raw components (row-major, `β` per entry).
    pub fn from_components(tag: AlgebraTag, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        tag.require_concrete()?;
        let expected = rows * cols * tag.components();
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected: format!("{expected} components"),
                got: format!("{}", data.len()),
            });
        }
        Ok(DAMatrix { tag, rows, cols, data })
    }

    /// Builds a matrix with real entries (row-major).
    pub fn from_real(tag: AlgebraTag, rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{} entries", rows * cols),
                got: format!("{}", entries.len()),
            });
        }
        let mut m = Self::zeros(tag, rows, cols)?;
        for (idx, &x) in entries.iter().enumerate() {
            m.set(idx / cols, idx % cols, Scalar::real(x));
        }
        Ok(m)
    }

    /// Entries i.i.d. with each real component `N(0, variance)`.
    pub fn gaussian<R: Rng + ?Sized>(
        tag: AlgebraTag,
        rows: usize,
        cols: usize,
        variance: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut m = Self::zeros(tag, rows, cols)?;
        let sd = variance.sqrt();
        for x in m.data.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x = sd * z;
        }
        Ok(m)
    }

    pub fn tag(&self) -> AlgebraTag {
        self.tag
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn components(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Scalar {
        let b = self.tag.components();
        let off = (i * self.cols + j) * b;
        let mut s = [0.0; 4];
        s[..b].copy_from_slice(&self.data[off..off + b]);
        Scalar(s)
    }

    /// Stores `s`, dropping components the algebra does not have.
    pub fn set(&mut self, i: usize, j: usize, s: Scalar) {
        let b = self.tag.components();
        let off = (i * self.cols + j) * b;
        self.data[off..off + b].copy_from_slice(&s.0[..b]);
    }

    pub fn conj_transpose(&self) -> DAMatrix {
        let mut out = DAMatrix {
            tag: self.tag,
            rows: self.cols,
            cols: self.rows,
            data: vec![0.0; self.data.len()],
        };
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j).conj());
            }
        }
        out
    }

    fn check_same(&self, other: &DAMatrix, rows: usize, cols: usize) -> Result<()> {
        if self.tag != other.tag {
            return Err(Error::DimensionMismatch {
                expected: format!("beta {}", self.tag),
                got: format!("beta {}", other.tag),
            });
        }
        if other.rows != rows || other.cols != cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{rows}x{cols}"),
                got: format!("{}x{}", other.rows, other.cols),
            });
        }
        Ok(())
    }

    pub fn matmul(&self, other: &DAMatrix) -> Result<DAMatrix> {
        self.check_same(other, self.cols, other.cols)?;
        let mut out = DAMatrix::zeros(self.tag, self.rows, other.cols)?;
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = Scalar::ZERO;
                for k in 0..self.cols {
                    acc = acc + self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &DAMatrix) -> Result<DAMatrix> {
        self.check_same(other, self.rows, self.cols)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(self.with_data(data))
    }

    pub fn sub(&self, other: &DAMatrix) -> Result<DAMatrix> {
        self.check_same(other, self.rows, self.cols)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(self.with_data(data))
    }

    pub fn scale(&self, s: f64) -> DAMatrix {
        self.with_data(self.data.iter().map(|x| x * s).collect())
    }

    fn with_data(&self, data: Vec<f64>) -> DAMatrix {
        DAMatrix { tag: self.tag, rows: self.rows, cols: self.cols, data }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Largest entrywise component difference.
    pub fn max_abs_diff(&self, other: &DAMatrix) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Real part of the trace.
    pub fn real_trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i).re()).sum()
    }

    /// Complex adjoint embedding (`rows × cols` for β ≤ 2, doubled for β = 4).
    pub fn to_embedding(&self) -> DMatrix<Complex64> {
        let (r, c) = (self.rows, self.cols);
        if self.tag.beta() == 4 {
            let mut m = DMatrix::zeros(2 * r, 2 * c);
            for i in 0..r {
                for j in 0..c {
                    let [a, b, cc, d] = self.get(i, j).0;
                    let z1 = Complex64::new(a, b);
                    let z2 = Complex64::new(cc, d);
                    m[(i, j)] = z1;
                    m[(i, j + c)] = z2;
                    m[(i + r, j)] = -z2.conj();
                    m[(i + r, j + c)] = z1.conj();
                }
            }
            m
        } else {
            DMatrix::from_fn(r, c, |i, j| {
                let s = self.get(i, j);
                Complex64::new(s.0[0], s.0[1])
            })
        }
    }

    /// Inverse of [`to_embedding`](Self::to_embedding); for β = 4 the
    /// redundant blocks are averaged, projecting onto the embedding image.
    pub fn from_embedding(tag: AlgebraTag, m: &DMatrix<Complex64>) -> Result<DAMatrix> {
        tag.require_concrete()?;
        let (r, c) = if tag.beta() == 4 { (m.nrows() / 2, m.ncols() / 2) } else { (m.nrows(), m.ncols()) };
        let mut out = DAMatrix::zeros(tag, r, c)?;
        for i in 0..r {
            for j in 0..c {
                let s = match tag.beta() {
                    1 => Scalar::real(m[(i, j)].re),
                    2 => Scalar::complex(m[(i, j)].re, m[(i, j)].im),
                    _ => {
                        let z1 = (m[(i, j)] + m[(i + r, j + c)].conj()) * 0.5;
                        let z2 = (m[(i, j + c)] - m[(i + r, j)].conj()) * 0.5;
                        Scalar::quaternion(z1.re, z1.im, z2.re, z2.im)
                    }
                };
                out.set(i, j, s);
            }
        }
        Ok(out)
    }

    /// `X* X`, always Hermitian.
    pub fn gram(&self) -> Result<HermitianMatrix> {
        let g = self.conj_transpose().matmul(self)?;
        Ok(HermitianMatrix::symmetrized(g))
    }
}

/// Conjugate transpose `A*`.
pub fn conj_transpose(a: &DAMatrix) -> DAMatrix {
    a.conj_transpose()
}

/// A square self-adjoint matrix. Construction validates `A = A*` to
/// [`HERMITIAN_TOL`] relative to the largest entry, then stores the exact
/// Hermitian part.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(DAMatrix);

/// Exponential of a trace, with the log kept when the value overflows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Etr {
    pub log: f64,
    pub value: f64,
    pub overflowed: bool,
}

impl Etr {
    pub fn from_log(log: f64) -> Self {
        let value = log.exp();
        Etr { log, value, overflowed: value.is_infinite() }
    }
}

impl HermitianMatrix {
    pub fn new(m: DAMatrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::DimensionMismatch {
                expected: "square matrix".into(),
                got: format!("{}x{}", m.rows, m.cols),
            });
        }
        let dev = m.max_abs_diff(&m.conj_transpose());
        let scale = m.max_abs();
        if dev > HERMITIAN_TOL * scale {
            return Err(Error::NonHermitian { deviation: dev });
        }
        Ok(Self::symmetrized(m))
    }

    /// `(A + A*)/2` without validation.
    pub(crate) fn symmetrized(m: DAMatrix) -> Self {
        let mut out = m.clone();
        for i in 0..m.rows {
            for j in i..m.cols {
                let avg = (m.get(i, j) + m.get(j, i).conj()).scale(0.5);
                if i == j {
                    out.set(i, i, Scalar::real(avg.re()));
                } else {
                    out.set(i, j, avg);
                    out.set(j, i, avg.conj());
                }
            }
        }
        HermitianMatrix(out)
    }

    pub fn zeros(tag: AlgebraTag, p: usize) -> Result<Self> {
        Ok(HermitianMatrix(DAMatrix::zeros(tag, p, p)?))
    }

    pub fn identity(tag: AlgebraTag, p: usize) -> Result<Self> {
        Ok(HermitianMatrix(DAMatrix::identity(tag, p)?))
    }

    pub fn scalar(tag: AlgebraTag, p: usize, s: f64) -> Result<Self> {
        Ok(HermitianMatrix(DAMatrix::identity(tag, p)?.scale(s)))
    }

    pub fn diag(tag: AlgebraTag, d: &[f64]) -> Result<Self> {
        let mut m = DAMatrix::zeros(tag, d.len(), d.len())?;
        for (i, &x) in d.iter().enumerate() {
            m.set(i, i, Scalar::real(x));
        }
        Ok(HermitianMatrix(m))
    }

    /// Real symmetric matrix from row-major entries.
    pub fn from_real(tag: AlgebraTag, p: usize, entries: &[f64]) -> Result<Self> {
        Self::new(DAMatrix::from_real(tag, p, p, entries)?)
    }

    pub fn tag(&self) -> AlgebraTag {
        self.0.tag
    }

    pub fn p(&self) -> usize {
        self.0.rows
    }

    pub fn as_matrix(&self) -> &DAMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DAMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.real_trace()
    }

    pub fn etr(&self) -> Etr {
        Etr::from_log(self.trace())
    }

    pub fn add(&self, o: &HermitianMatrix) -> Result<HermitianMatrix> {
        Ok(HermitianMatrix(self.0.add(&o.0)?))
    }

    pub fn sub(&self, o: &HermitianMatrix) -> Result<HermitianMatrix> {
        Ok(HermitianMatrix(self.0.sub(&o.0)?))
    }

    pub fn scale(&self, s: f64) -> HermitianMatrix {
        HermitianMatrix(self.0.scale(s))
    }

    /// `Re tr(self · other)`.
    pub fn trace_product(&self, other: &HermitianMatrix) -> Result<f64> {
        Ok(self.0.matmul(&other.0)?.real_trace())
    }

    /// Leading principal `m × m` block.
    pub fn leading_block(&self, m: usize) -> HermitianMatrix {
        let mut out = DAMatrix { tag: self.0.tag, rows: m, cols: m, data: vec![0.0; m * m * self.0.tag.components()] };
        for i in 0..m {
            for j in 0..m {
                out.set(i, j, self.0.get(i, j));
            }
        }
        HermitianMatrix(out)
    }

    fn eigh_embedding(&self) -> (Vec<f64>, DMatrix<Complex64>) {
        match self.tag().beta() {
            1 => {
                let p = self.p();
                let m = DMatrix::from_fn(p, p, |i, j| self.0.get(i, j).re());
                let e = SymmetricEigen::new(m);
                let v = e.eigenvectors.map(|x| Complex64::new(x, 0.0));
                (e.eigenvalues.iter().copied().collect(), v)
            }
            _ => {
                let e = SymmetricEigen::new(self.0.to_embedding());
                (e.eigenvalues.iter().copied().collect(), e.eigenvectors)
            }
        }
    }

    /// The `p` real eigenvalues, descending. For β = 4 the doubled spectrum
    /// of the embedding is reported once per pair.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let (mut ev, _) = self.eigh_embedding();
        ev.sort_by(|a, b| b.total_cmp(a));
        if self.tag().beta() == 4 {
            ev.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
        } else {
            ev
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(f64::INFINITY)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.p() == 0 || self.min_eigenvalue() > 0.0
    }

    /// `log|A|` for positive-definite `A`.
    pub fn log_det_pd(&self) -> Result<f64> {
        let ev = self.eigenvalues();
        let scale = ev.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        match ev.last() {
            Some(&min) if min <= HERMITIAN_TOL * scale => Err(Error::NotPositiveDefinite { min_eigenvalue: min }),
            _ => Ok(ev.iter().map(|x| x.ln()).sum()),
        }
    }

    /// Determinant as the product of eigenvalues (any sign).
    pub fn det(&self) -> f64 {
        self.eigenvalues().iter().product()
    }

    /// `f(A) = V f(D) V*` computed on the embedding.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> HermitianMatrix {
        let (ev, v) = self.eigh_embedding();
        let n = ev.len();
        let mut scaled = v.clone();
        for j in 0..n {
            let fj = Complex64::new(f(ev[j]), 0.0);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        let m = &scaled * v.adjoint();
        let back = DAMatrix::from_embedding(self.tag(), &m).expect("concrete tag");
        HermitianMatrix::symmetrized(back)
    }

    fn require_pd(&self) -> Result<()> {
        let min = self.min_eigenvalue();
        if min > 0.0 {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite { min_eigenvalue: min })
        }
    }

    /// Symmetric square root, eigenvalues floored at [`SQRT_FLOOR`].
    pub fn sqrt_pd(&self) -> Result<HermitianMatrix> {
        self.require_pd()?;
        Ok(self.map_spectrum(|x| x.max(SQRT_FLOOR).sqrt()))
    }

    pub fn inv_sqrt_pd(&self) -> Result<HermitianMatrix> {
        self.require_pd()?;
        Ok(self.map_spectrum(|x| 1.0 / x.max(SQRT_FLOOR).sqrt()))
    }

    pub fn inv_pd(&self) -> Result<HermitianMatrix> {
        self.require_pd()?;
        Ok(self.map_spectrum(|x| 1.0 / x))
    }

    /// `A · self · A` for Hermitian `A`.
    pub fn congruence(&self, a: &HermitianMatrix) -> Result<HermitianMatrix> {
        let m = a.0.matmul(&self.0)?.matmul(&a.0)?;
        Ok(HermitianMatrix::symmetrized(m))
    }

    /// `H · self · H*`.
    pub fn unitary_conjugate(&self, h: &UnitaryMatrix) -> Result<HermitianMatrix> {
        let m = h.0.matmul(&self.0)?.matmul(&h.0.conj_transpose())?;
        Ok(HermitianMatrix::symmetrized(m))
    }

    /// True when `self = c·I` for some real `c`; returns `c`.
    pub fn as_scalar(&self) -> Option<f64> {
        let p = self.p();
        if p == 0 {
            return Some(0.0);
        }
        let c = self.0.get(0, 0).re();
        let tol = HERMITIAN_TOL * self.0.max_abs().max(1.0);
        for i in 0..p {
            for j in 0..p {
                let want = if i == j { Scalar::real(c) } else { Scalar::ZERO };
                if (self.0.get(i, j) - want).max_abs() > tol {
                    return None;
                }
            }
        }
        Some(c)
    }
}

/// Eigenvalues of a Hermitian matrix, descending.
pub fn hermitian_eigenvalues(a: &HermitianMatrix) -> Result<Vec<f64>> {
    a.tag().require_concrete()?;
    Ok(a.eigenvalues())
}

/// A member of `U^β(p)`: `H*H = I_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix(DAMatrix);

impl UnitaryMatrix {
    pub fn new(m: DAMatrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::DimensionMismatch { expected: "square".into(), got: format!("{}x{}", m.rows, m.cols) });
        }
        let id = DAMatrix::identity(m.tag, m.rows)?;
        let dev = m.conj_transpose().matmul(&m)?.max_abs_diff(&id);
        if dev > UNITARY_TOL {
            return Err(Error::Domain(format!("matrix is not unitary (deviation {dev:e})")));
        }
        Ok(UnitaryMatrix(m))
    }

    pub fn identity(tag: AlgebraTag, p: usize) -> Result<Self> {
        Ok(UnitaryMatrix(DAMatrix::identity(tag, p)?))
    }

    /// Haar-distributed draw: Gram–Schmidt on a Ginibre matrix. Columns are
    /// normalised by their (positive) norms, i.e. the triangular factor has
    /// a positive real diagonal.
    pub fn haar_sample<R: Rng + ?Sized>(p: usize, tag: AlgebraTag, rng: &mut R) -> Result<Self> {
        let g = DAMatrix::gaussian(tag, p, p, 1.0, rng)?;
        let mut cols: Vec<Vec<Scalar>> = (0..p).map(|j| (0..p).map(|i| g.get(i, j)).collect()).collect();
        for j in 0..p {
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for k in 0..j {
                    let coef = cols[k].iter().zip(&cols[j]).fold(Scalar::ZERO, |acc, (u, v)| acc + u.conj() * *v);
                    let (done, rest) = cols.split_at_mut(j);
                    for (v, u) in rest[0].iter_mut().zip(&done[k]) {
                        *v = *v - *u * coef;
                    }
                }
            }
            let norm = cols[j].iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            for v in cols[j].iter_mut() {
                *v = v.scale(1.0 / norm);
            }
        }
        let mut h = DAMatrix::zeros(tag, p, p)?;
        for (j, col) in cols.iter().enumerate() {
            for (i, &x) in col.iter().enumerate() {
                h.set(i, j, x);
            }
        }
        Ok(UnitaryMatrix(h))
    }

    pub fn as_matrix(&self) -> &DAMatrix {
        &self.0
    }

    pub fn tag(&self) -> AlgebraTag {
        self.0.tag
    }

    pub fn p(&self) -> usize {
        self.0.rows
    }

    pub fn compose(&self, other: &UnitaryMatrix) -> Result<UnitaryMatrix> {
        Ok(UnitaryMatrix(self.0.matmul(&other.0)?))
    }

    /// `H · Diag(λ) · H*`.
    pub fn conjugate_by(&self, lambda: &[f64]) -> Result<HermitianMatrix> {
        if lambda.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} eigenvalues", self.p()),
                got: format!("{}", lambda.len()),
            });
        }
        HermitianMatrix::diag(self.tag(), lambda)?.unitary_conjugate(self)
    }
}
