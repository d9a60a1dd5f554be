//! Dense complex matrices and seeded random streams.
//!
//! Everything in the simulator is built on [`CMatrix`] (row-major `Complex64`
//! storage) and [`Rng`], a counter-based generator that can be split into
//! independent streams from a `(seed, stream id)` pair.

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Index, IndexMut};

use crate::{Error, Result};

/// Dense complex matrix stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl TryFrom<RawMatrix> for CMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        CMatrix::from_row_major(raw.rows, raw.cols, raw.data)
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.4e}{:+.4e}j ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Shape(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Column vector from entries.
    pub fn column(data: Vec<Complex64>) -> Self {
        let rows = data.len();
        Self { rows, cols: 1, data }
    }

    pub fn diag(entries: &[Complex64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Complex64] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    /// `self + other`, shapes must agree.
    pub fn add(&self, other: &CMatrix) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &CMatrix) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &CMatrix, b: f64) -> Result<Self> {
        self.zip_with(other, |x, y| x * a + y * b)
    }

    fn zip_with(&self, other: &CMatrix, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Entries in column-major (`vec`) order.
    pub fn vec_column_major(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.push(self[(r, c)]);
            }
        }
        out
    }

    /// Inverse of [`CMatrix::vec_column_major`].
    pub fn from_column_major(rows: usize, cols: usize, entries: &[Complex64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Ok(Self::from_fn(rows, cols, |r, c| entries[c * rows + r]))
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Complex matrix product `a · b`.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul of {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = CMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Conjugate transpose.
pub fn hermitian(a: &CMatrix) -> CMatrix {
    CMatrix::from_fn(a.cols, a.rows, |r, c| a[(c, r)].conj())
}

/// Result of [`solve_hermitian_system`].
#[derive(Debug, Clone)]
pub struct HermitianSolve {
    pub x: CMatrix,
    /// Diagonal loading that was added after the plain factorization failed.
    pub regularization: Option<f64>,
}

const PIVOT_REL_TOL: f64 = 1e-14;
const RESIDUAL_REL_TOL: f64 = 1e-9;

/// Solves `a · X = b` for Hermitian positive definite `a` by Cholesky.
///
/// If the plain factorization breaks down, it is retried once with
/// `ε = 1e-12·tr(a)/rows` added to the diagonal. A solution whose residual
/// exceeds `1e-9·‖b‖_F` is reported as [`Error::Singular`].
pub fn solve_hermitian_system(a: &CMatrix, b: &CMatrix) -> Result<HermitianSolve> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::Shape(format!("system matrix is {}x{}", a.rows, a.cols)));
    }
    if b.rows != n {
        return Err(Error::Shape(format!(
            "right-hand side has {} rows, system has {n}",
            b.rows
        )));
    }
    if n == 0 {
        return Err(Error::Shape("empty system".into()));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("solve_hermitian_system input"));
    }

    let (l, regularization) = match cholesky(a, 0.0) {
        Some(l) => (l, None),
        None => {
            let eps = 1e-12 * a.trace().re / n as f64;
            if !(eps > 0.0) {
                return Err(Error::Singular);
            }
            match cholesky(a, eps) {
                Some(l) => (l, Some(eps)),
                None => return Err(Error::Singular),
            }
        }
    };

    let x = cholesky_solve(&l, b);
    if !x.is_finite() {
        return Err(Error::Singular);
    }
    let residual = matmul(a, &x)?.sub(b)?.frobenius();
    if residual > RESIDUAL_REL_TOL * b.frobenius() {
        return Err(Error::Singular);
    }
    Ok(HermitianSolve { x, regularization })
}

/// Lower-triangular `L` with `a + shift·I = L·Lᴴ`, or `None` on a
/// non-positive pivot.
fn cholesky(a: &CMatrix, shift: f64) -> Option<CMatrix> {
    let n = a.rows;
    let max_diag = (0..n).map(|i| a[(i, i)].re.abs()).fold(0.0, f64::max) + shift;
    let floor = PIVOT_REL_TOL * max_diag;
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re + shift;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > floor) {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = Complex64::new(ljj, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &CMatrix, b: &CMatrix) -> CMatrix {
    let n = l.rows;
    let mut x = b.clone();
    for c in 0..b.cols {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)].re;
        }
        // backward: Lᴴ x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)].conj() * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)].re;
        }
    }
    x
}

/// Deterministic, splittable random stream.
///
/// A stream is identified by `(seed, stream)`. Streams with different ids
/// never overlap; [`Rng::derive`] maps a label to a fresh child stream.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Child stream for `label`; independent of how much of `self` was consumed.
    pub fn derive(&self, label: u64) -> Rng {
        let child = splitmix64(self.stream ^ splitmix64(label.wrapping_add(0xD1B5_4A32_D192_ED03)));
        Rng::with_stream(self.seed, child)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; bias is below 2^-32 for the sizes used here.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Circularly-symmetric complex Gaussian with unit total variance.
    pub fn complex_normal(&mut self) -> Complex64 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Complex64::new(s * self.normal(), s * self.normal())
    }
}

/// `rows × cols` matrix of i.i.d. CN(0, 1) entries.
pub fn draw_cn(rng: &mut Rng, rows: usize, cols: usize) -> CMatrix {
    let data = (0..rows * cols).map(|_| rng.complex_normal()).collect();
    CMatrix { rows, cols, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random(rng: &mut Rng, r: usize, k: usize) -> CMatrix {
        draw_cn(rng, r, k)
    }

    fn naive_matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = c(0.0, 0.0);
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    fn det(m: &[Vec<Complex64>]) -> Complex64 {
        let n = m.len();
        if n == 1 {
            return m[0][0];
        }
        let mut total = c(0.0, 0.0);
        for j in 0..n {
            let minor: Vec<Vec<Complex64>> = m[1..]
                .iter()
                .map(|row| row.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &v)| v).collect())
                .collect();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            total += m[0][j] * det(&minor) * sign;
        }
        total
    }

    /// Inverse via the adjugate: inv[i][j] = (-1)^{i+j} det(minor_ji) / det.
    fn adjugate_inverse(a: &CMatrix) -> CMatrix {
        let n = a.rows();
        let rows: Vec<Vec<Complex64>> = (0..n).map(|r| a.row(r).to_vec()).collect();
        let d = det(&rows);
        CMatrix::from_fn(n, n, |i, j| {
            let minor: Vec<Vec<Complex64>> = (0..n)
                .filter(|&r| r != j)
                .map(|r| (0..n).filter(|&k| k != i).map(|k| rows[r][k]).collect())
                .collect();
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            det(&minor) * sign / d
        })
    }

    #[test]
    fn matmul_identity_and_j_squared() {
        let mut rng = Rng::new(1);
        let a = random(&mut rng, 2, 3);
        assert_eq!(matmul(&CMatrix::identity(2), &a).unwrap(), a);

        let j = CMatrix::from_row_major(1, 1, vec![c(0.0, 1.0)]).unwrap();
        let p = matmul(&j, &j).unwrap();
        assert_eq!(p[(0, 0)], c(-1.0, 0.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(7);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let fast = matmul(&a, &b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((x - y).norm() <= 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = CMatrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn hermitian_cases() {
        let a = CMatrix::from_row_major(1, 1, vec![c(1.0, 1.0)]).unwrap();
        assert_eq!(hermitian(&a)[(0, 0)], c(1.0, -1.0));
        let d = CMatrix::diag(&[c(2.0, 0.0), c(-3.0, 0.0)]);
        assert_eq!(hermitian(&d), d);
        let mut rng = Rng::new(3);
        let r = random(&mut rng, 3, 5);
        assert_eq!(hermitian(&hermitian(&r)), r);
    }

    #[test]
    fn solve_trivial_systems() {
        let mut rng = Rng::new(11);
        let b = random(&mut rng, 3, 2);
        let s = solve_hermitian_system(&CMatrix::identity(3), &b).unwrap();
        assert!(s.regularization.is_none());
        for (x, y) in s.x.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).norm() < 1e-15);
        }

        let two = CMatrix::identity(3).scale(2.0);
        let s = solve_hermitian_system(&two, &CMatrix::identity(3)).unwrap();
        let half = CMatrix::identity(3).scale(0.5);
        for (x, y) in s.x.as_slice().iter().zip(half.as_slice()) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn solve_matches_adjugate_inverse() {
        for seed in 0..20 {
            let mut rng = Rng::new(100 + seed);
            let a = random(&mut rng, 4, 4);
            let ah = hermitian(&a);
            let eps = 1e-3;
            let gram = matmul(&ah, &a)
                .unwrap()
                .add(&CMatrix::identity(4).scale(eps))
                .unwrap();
            let x = solve_hermitian_system(&gram, &ah).unwrap().x;
            let oracle = matmul(&adjugate_inverse(&gram), &ah).unwrap();
            let scale = oracle.frobenius();
            for (p, q) in x.as_slice().iter().zip(oracle.as_slice()) {
                assert!((p - q).norm() <= 1e-9 * scale.max(1.0), "seed {seed}");
            }
        }
    }

    #[test]
    fn solve_rejects_singular() {
        // rank-1 Gram matrix
        let v = CMatrix::column(vec![c(1.0, 0.0), c(0.0, 2.0)]);
        let g = matmul(&v, &hermitian(&v)).unwrap();
        assert!(matches!(
            solve_hermitian_system(&g, &CMatrix::identity(2)),
            Err(Error::Singular)
        ));
        let neg = CMatrix::identity(2).scale(-1.0);
        assert!(solve_hermitian_system(&neg, &CMatrix::identity(2)).is_err());
    }

    #[test]
    fn solve_reports_regularization() {
        // Nearly singular but consistent: rhs lies in the range of `a`.
        let d = CMatrix::diag(&[c(1.0, 0.0), c(1e-20, 0.0)]);
        let b = CMatrix::column(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let s = solve_hermitian_system(&d, &b).unwrap();
        assert!(s.regularization.is_some());
        assert!((s.x[(0, 0)] - c(1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn draw_cn_moments() {
        let mut rng = Rng::new(2024);
        let m = draw_cn(&mut rng, 1, 100_000);
        let n = m.as_slice().len() as f64;
        let mean: Complex64 = m.as_slice().iter().sum::<Complex64>() / n;
        let power = m.frobenius_sq() / n;
        assert!(mean.norm() <= 0.02, "mean {mean}");
        assert!((power - 1.0).abs() <= 0.02, "power {power}");
        let var_re = m.as_slice().iter().map(|z| z.re * z.re).sum::<f64>() / n;
        let var_im = m.as_slice().iter().map(|z| z.im * z.im).sum::<f64>() / n;
        assert!((0.48..=0.52).contains(&var_re), "{var_re}");
        assert!((0.48..=0.52).contains(&var_im), "{var_im}");
    }

    #[test]
    fn rng_determinism_and_streams() {
        let a = draw_cn(&mut Rng::new(5), 3, 3);
        let b = draw_cn(&mut Rng::new(5), 3, 3);
        assert_eq!(a, b);
        let c1 = draw_cn(&mut Rng::with_stream(5, 1), 3, 3);
        assert_ne!(a, c1);

        let parent = Rng::new(9);
        let mut consumed = parent.clone();
        consumed.next_u64();
        assert_eq!(parent.derive(3).next_u64(), consumed.derive(3).next_u64());
        assert_ne!(parent.derive(3).next_u64(), parent.derive(4).next_u64());
    }

    #[test]
    fn rng_integer_stream_is_pinned() {
        // Frozen; a change here means every seeded experiment changes too.
        let mut r = Rng::new(42);
        let first: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
        assert_eq!(first, [0xae90bfb5395d5ba1, 0xf3453fc625799188, 0x6d71b708c5b6538c]);
    }

    #[test]
    fn column_major_roundtrip() {
        let mut rng = Rng::new(8);
        let m = random(&mut rng, 3, 2);
        let v = m.vec_column_major();
        assert_eq!(v[1], m[(1, 0)]);
        assert_eq!(CMatrix::from_column_major(3, 2, &v).unwrap(), m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::numerics::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn matmul_is_associative(seed in any::<u64>(), a in 1usize..5, b in 1usize..5, c2 in 1usize..5, d in 1usize..5) {
                let mut rng = Rng::new(seed);
                let x = random(&mut rng, a, b);
                let y = random(&mut rng, b, c2);
                let z = random(&mut rng, c2, d);
                let left = matmul(&matmul(&x, &y).unwrap(), &z).unwrap();
                let right = matmul(&x, &matmul(&y, &z).unwrap()).unwrap();
                let err = left.sub(&right).unwrap().frobenius();
                prop_assert!(err <= 1e-10 * left.frobenius().max(1e-300));
            }

            #[test]
            fn solve_residual_is_small(seed in any::<u64>(), n in 1usize..6, k in 1usize..4) {
                let mut rng = Rng::new(seed);
                let a = random(&mut rng, n, n);
                let gram = matmul(&hermitian(&a), &a).unwrap()
                    .add(&CMatrix::identity(n).scale(0.5)).unwrap();
                let b = random(&mut rng, n, k);
                let x = solve_hermitian_system(&gram, &b).unwrap().x;
                let r = matmul(&gram, &x).unwrap().sub(&b).unwrap().frobenius();
                prop_assert!(r <= 1e-9 * b.frobenius());
            }
        }
    }
}
