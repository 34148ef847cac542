//! Dense complex matrices, pure and mixed states, and Haar sampling.
//!
//! Everything here is row-major double precision. Tensor products order
//! factors left to right, so the first factor of `kron(a, b)` is the most
//! significant digit of the joint index.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest dense operator axis (d^k) this crate will build.
pub const MAX_AXIS: usize = 1024;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

pub(crate) fn check_axis(n: usize, what: &str) -> Result<()> {
    if n > MAX_AXIS {
        return Err(Error::SizeLimit(format!(
            "{what}: axis {n} exceeds the dense cap of {MAX_AXIS}"
        )));
    }
    Ok(())
}

/// `base^exp` with overflow reported as a size-limit error.
pub(crate) fn checked_pow(base: usize, exp: usize) -> Result<usize> {
    base.checked_pow(exp as u32)
        .ok_or_else(|| Error::SizeLimit(format!("{base}^{exp} overflows")))
}

/// `x` rounded to `digits` significant decimal digits. Non-finite values
/// pass through.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let s = format!("{:.*e}", digits.saturating_sub(1), x);
    s.parse().unwrap_or(x)
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CMatrixWire", into = "CMatrixWire")]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

/// JSON form: `{"rows": r, "cols": c, "data": [[re, im], ...]}`, row-major.
#[derive(Serialize, Deserialize)]
struct CMatrixWire {
    rows: usize,
    cols: usize,
    data: Vec<[f64; 2]>,
}

impl TryFrom<CMatrixWire> for CMatrix {
    type Error = Error;

    fn try_from(w: CMatrixWire) -> Result<Self> {
        CMatrix::new(
            w.rows,
            w.cols,
            w.data
                .into_iter()
                .map(|[re, im]| C64::new(re, im))
                .collect(),
        )
    }
}

impl From<CMatrix> for CMatrixWire {
    fn from(m: CMatrix) -> Self {
        CMatrixWire {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

impl CMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDimension(format!(
                "matrix shape {rows}x{cols} must be positive"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(CMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        CMatrix { rows, cols, data }
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &z) in diag.iter().enumerate() {
            m[(i, i)] = z;
        }
        m
    }

    /// Real-valued convenience constructor, row-major.
    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    /// Outer product `|u⟩⟨v|`.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |r, c| u[r] * v[c].conj())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Matrix product. Panics on inner-dimension mismatch, like ndarray's `dot`.
    pub fn dot(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(
            self.cols, other.rows,
            "matrix product shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn try_dot(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.dot(other))
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "matrix-vector shape mismatch");
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn conj(&self) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `tr(self · other)` without forming the product.
    pub fn trace_dot(&self, other: &CMatrix) -> C64 {
        assert_eq!(self.cols, other.rows);
        assert_eq!(self.rows, other.cols);
        let mut acc = ZERO;
        for r in 0..self.rows {
            for k in 0..self.cols {
                acc += self.data[r * self.cols + k] * other.data[k * other.cols + r];
            }
        }
        acc
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> CMatrix {
        self.scale(C64::new(s, 0.0))
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &CMatrix, s: C64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Frobenius distance `‖self − other‖_F`.
    pub fn distance(&self, other: &CMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `‖M†M − I‖_F`; infinite for non-square matrices.
    pub fn unitarity_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        self.dagger()
            .dot(self)
            .distance(&CMatrix::identity(self.rows))
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_deviation() <= tol
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.distance(&self.dagger()) <= tol
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        assert!(self.is_square(), "eigenvalues of a non-square matrix");
        let n = self.rows;
        let m = DMatrix::from_fn(n, n, |r, c| (self[(r, c)] + self[(c, r)].conj()) * 0.5);
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Number of Hermitian eigenvalues above `tol`.
    pub fn hermitian_rank(&self, tol: f64) -> usize {
        self.hermitian_eigenvalues()
            .into_iter()
            .filter(|&e| e.abs() > tol)
            .count()
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self[(r, c)])
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<C64>) -> CMatrix {
        CMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;

    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;

    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;

    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.dot(rhs)
    }
}

/// Kronecker product; `kron(A, B) · kron(C, D) = kron(AC, BD)`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    let mut data = vec![ZERO; rows * cols];
    for ar in 0..a.rows {
        for br in 0..b.rows {
            let row = ar * b.rows + br;
            for ac in 0..a.cols {
                let av = a[(ar, ac)];
                if av == ZERO {
                    continue;
                }
                let base = row * cols + ac * b.cols;
                for bc in 0..b.cols {
                    data[base + bc] = av * b[(br, bc)];
                }
            }
        }
    }
    CMatrix { rows, cols, data }
}

/// Kronecker product of a non-empty list of factors, first factor most significant.
pub fn kron_all(factors: &[CMatrix]) -> CMatrix {
    let (first, rest) = factors.split_first().expect("kron_all of an empty list");
    rest.iter().fold(first.clone(), |acc, f| kron(&acc, f))
}

pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter()
        .flat_map(|&x| b.iter().map(move |&y| x * y))
        .collect()
}

pub(crate) const STATE_NORM_TOL: f64 = 1e-12;
pub(crate) const DENSITY_TOL: f64 = 1e-10;

/// A normalized state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amps: Vec<C64>,
}

impl PureState {
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        if amps.is_empty() {
            return Err(Error::InvalidDimension("empty state vector".into()));
        }
        let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > STATE_NORM_TOL {
            return Err(Error::InvalidState(format!("state norm {norm} != 1")));
        }
        Ok(PureState { amps })
    }

    /// Normalizes `amps`; fails on the zero vector.
    pub fn normalized(mut amps: Vec<C64>) -> Result<Self> {
        let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        for z in &mut amps {
            *z /= norm;
        }
        Ok(PureState { amps })
    }

    pub fn basis(d: usize, j: usize) -> Self {
        let mut amps = vec![ZERO; d];
        amps[j] = ONE;
        PureState { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &PureState) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `⟨self|M|self⟩`
    pub fn expectation(&self, m: &CMatrix) -> C64 {
        let mv = m.apply(&self.amps);
        self.amps.iter().zip(&mv).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn projector(&self) -> CMatrix {
        CMatrix::outer(&self.amps, &self.amps)
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity, trace and spectrum to 1e-10.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidState("density matrix must be square".into()));
        }
        if !matrix.is_hermitian(DENSITY_TOL) {
            return Err(Error::InvalidState(
                "density matrix is not Hermitian".into(),
            ));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > DENSITY_TOL || tr.im.abs() > DENSITY_TOL {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let min_ev = matrix.hermitian_eigenvalues()[0];
        if min_ev < -DENSITY_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_ev:.3e}"
            )));
        }
        Ok(DensityMatrix { matrix })
    }

    pub fn from_pure(state: &PureState) -> Self {
        DensityMatrix {
            matrix: state.projector(),
        }
    }

    pub fn maximally_mixed(d: usize) -> Self {
        DensityMatrix {
            matrix: CMatrix::identity(d).scale_real(1.0 / d as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    /// `⟨φ|ρ|φ⟩`, real part.
    pub fn fidelity_with(&self, phi: &PureState) -> f64 {
        phi.expectation(&self.matrix).re
    }
}

/// Reproducible random source: ChaCha8 keyed by `seed`, on stream `stream`.
///
/// Distinct stream ids give independent sequences for the same seed, which is
/// how Monte Carlo workers are kept apart.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Complex Gaussian with `E|z|² = 1`.
    pub fn complex_gaussian(&mut self) -> C64 {
        let re: f64 = StandardNormal.sample(&mut self.inner);
        let im: f64 = StandardNormal.sample(&mut self.inner);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits in [0, 1)
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `|Ψ₀⟩ = d^{-1/2} Σ_j |j⟩|j⟩` on `d²`.
pub fn max_entangled_state(d: usize) -> Result<PureState> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!(
            "maximally entangled state needs d >= 2, got {d}"
        )));
    }
    let mut amps = vec![ZERO; d * d];
    let a = C64::new(1.0 / (d as f64).sqrt(), 0.0);
    for j in 0..d {
        amps[j * d + j] = a;
    }
    Ok(PureState { amps })
}

/// Haar-random pure state: a normalized vector of i.i.d. complex Gaussians.
pub fn sample_pure_state(d: usize, rng: &mut SeededRng) -> PureState {
    assert!(d >= 1, "state dimension must be positive");
    loop {
        let amps: Vec<C64> = (0..d).map(|_| rng.complex_gaussian()).collect();
        if let Ok(s) = PureState::normalized(amps) {
            return s;
        }
    }
}

/// Haar-random unitary from the QR decomposition of a complex Ginibre
/// matrix. `Q` is multiplied by `diag(r_jj / |r_jj|)` so the result does not
/// depend on the phase convention of the QR routine.
pub fn sample_haar_unitary(d: usize, rng: &mut SeededRng) -> CMatrix {
    assert!(d >= 1, "unitary dimension must be positive");
    let ginibre = CMatrix::from_fn(d, d, |_, _| rng.complex_gaussian());
    let qr = ginibre.to_nalgebra().qr();
    let q = CMatrix::from_nalgebra(&qr.q());
    let r = qr.r();
    let mut u = q;
    for j in 0..d {
        let rjj = r[(j, j)];
        let n = rjj.norm();
        let phase = if n > 0.0 { rjj / n } else { ONE };
        for i in 0..d {
            u[(i, j)] *= phase;
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(r: usize, c: usize, rng: &mut SeededRng) -> CMatrix {
        CMatrix::from_fn(r, c, |_, _| rng.complex_gaussian())
    }

    /// Mean and standard error of a sample.
    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn kron_identity_and_diagonal() {
        let i2 = CMatrix::identity(2);
        assert_eq!(kron(&i2, &i2), CMatrix::identity(4));
        let z = CMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, -1.0]).unwrap();
        let expect = CMatrix::from_real(
            4,
            4,
            &[
                1., 0., 0., 0., 0., 1., 0., 0., 0., 0., -1., 0., 0., 0., 0., -1.,
            ],
        )
        .unwrap();
        assert_eq!(kron(&z, &i2), expect);
    }

    #[test]
    fn kron_trace_factorizes() {
        let mut rng = SeededRng::new(3, 0);
        let a = random_matrix(2, 2, &mut rng);
        let b = random_matrix(2, 2, &mut rng);
        // multiply-out oracle: tr(A⊗B) = Σ_ij a_ii b_jj
        let mut oracle = ZERO;
        for i in 0..2 {
            for j in 0..2 {
                oracle += a[(i, i)] * b[(j, j)];
            }
        }
        assert!((kron(&a, &b).trace() - oracle).norm() < 1e-13);
        assert!((kron(&a, &b).trace() - a.trace() * b.trace()).norm() < 1e-13);
    }

    #[test]
    fn kron_rectangular_shape() {
        let a = CMatrix::zeros(2, 3);
        let b = CMatrix::zeros(4, 1);
        let k = kron(&a, &b);
        assert_eq!((k.rows(), k.cols()), (8, 3));
    }

    #[test]
    fn max_entangled_amplitudes() {
        let s = max_entangled_state(2).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.amplitudes()[0].re - h).abs() < 1e-15);
        assert!((s.amplitudes()[3].re - h).abs() < 1e-15);
        assert_eq!(s.amplitudes()[1], ZERO);
        let s3 = max_entangled_state(3).unwrap();
        for (i, a) in s3.amplitudes().iter().enumerate() {
            let expect = if [0, 4, 8].contains(&i) {
                1.0 / 3f64.sqrt()
            } else {
                0.0
            };
            assert!((a.re - expect).abs() < 1e-15 && a.im == 0.0);
        }
        for d in 2..7 {
            assert!((max_entangled_state(d).unwrap().norm() - 1.0).abs() < 1e-14);
        }
        assert!(matches!(
            max_entangled_state(1),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn pure_state_d1_is_a_phase() {
        let mut rng = SeededRng::new(1, 0);
        let s = sample_pure_state(1, &mut rng);
        assert!((s.amplitudes()[0].norm_sqr() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pure_state_second_moment_qubit() {
        let mut rng = SeededRng::new(11, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_pure_state(2, &mut rng).amplitudes()[0].norm_sqr())
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 0.5).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn pure_state_clock_moment_qutrit() {
        let w = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
        let z3 = CMatrix::from_diag(&[ONE, w, w * w]);
        let mut rng = SeededRng::new(12, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_pure_state(3, &mut rng).expectation(&z3).norm_sqr())
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 0.25).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn haar_unitary_d1_is_a_phase() {
        let mut rng = SeededRng::new(5, 0);
        let u = sample_haar_unitary(1, &mut rng);
        assert!((u[(0, 0)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn haar_unitaries_are_unitary() {
        let mut rng = SeededRng::new(6, 0);
        for d in 1..=8 {
            for _ in 0..20 {
                assert!(sample_haar_unitary(d, &mut rng).unitarity_deviation() <= 1e-10);
            }
        }
    }

    #[test]
    fn haar_unitary_low_moments() {
        let mut rng = SeededRng::new(7, 0);
        let n = 100_000;
        let mut re = Vec::with_capacity(n);
        let mut im = Vec::with_capacity(n);
        let mut sq = Vec::with_capacity(n);
        for _ in 0..n {
            let u = sample_haar_unitary(2, &mut rng);
            re.push(u[(0, 0)].re);
            im.push(u[(0, 0)].im);
            sq.push(u[(0, 0)].norm_sqr());
        }
        let (m, se) = mean_se(&re);
        assert!(m.abs() < 3.0 * se);
        let (m, se) = mean_se(&im);
        assert!(m.abs() < 3.0 * se);
        let (m, se) = mean_se(&sq);
        assert!((m - 0.5).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn haar_left_invariance_two_sample() {
        let mut rng = SeededRng::new(8, 0);
        let w = sample_haar_unitary(3, &mut SeededRng::new(99, 0));
        let n = 100_000;
        let mut plain = Vec::with_capacity(n);
        let mut rotated = Vec::with_capacity(n);
        for _ in 0..n {
            plain.push(sample_haar_unitary(3, &mut rng)[(0, 0)].norm_sqr());
            rotated.push(w.dot(&sample_haar_unitary(3, &mut rng))[(0, 0)].norm_sqr());
        }
        let (m1, s1) = mean_se(&plain);
        let (m2, s2) = mean_se(&rotated);
        assert!((m1 - m2).abs() < 4.0 * (s1 * s1 + s2 * s2).sqrt());
        // second moment as a second probe
        let p2: Vec<f64> = plain.iter().map(|x| x * x).collect();
        let r2: Vec<f64> = rotated.iter().map(|x| x * x).collect();
        let (m1, s1) = mean_se(&p2);
        let (m2, s2) = mean_se(&r2);
        assert!((m1 - m2).abs() < 4.0 * (s1 * s1 + s2 * s2).sqrt());
    }

    #[test]
    fn seeded_rng_streams() {
        let mut a = SeededRng::new(42, 0);
        let mut b = SeededRng::new(42, 0);
        let mut c = SeededRng::new(42, 1);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(CMatrix::identity(2)).is_err());
        assert!(DensityMatrix::new(CMatrix::identity(2).scale_real(0.5)).is_ok());
        let bad = CMatrix::from_real(2, 2, &[1.5, 0.0, 0.0, -0.5]).unwrap();
        assert!(matches!(
            DensityMatrix::new(bad),
            Err(Error::InvalidState(_))
        ));
        let nonherm = CMatrix::from_real(2, 2, &[0.5, 0.3, 0.0, 0.5]).unwrap();
        assert!(DensityMatrix::new(nonherm).is_err());
    }

    #[test]
    fn json_encoding() {
        let m = CMatrix::new(1, 2, vec![C64::new(1.0, -0.5), C64::new(0.0, 2.0)]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"rows":1,"cols":2,"data":[[1.0,-0.5],[0.0,2.0]]}"#);
        let back: CMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let short = r#"{"rows":2,"cols":2,"data":[[1.0,0.0]]}"#;
        assert!(serde_json::from_str::<CMatrix>(short).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn kron_associative_and_mixed_product(seed in any::<u64>(), n in 1usize..4) {
                let mut rng = SeededRng::new(seed, 0);
                let a = random_matrix(n, n, &mut rng);
                let b = random_matrix(2, 2, &mut rng);
                let c = random_matrix(n, n, &mut rng);
                let d = random_matrix(2, 2, &mut rng);
                let left = kron(&kron(&a, &b), &c);
                let right = kron(&a, &kron(&b, &c));
                prop_assert!(left.max_abs_diff(&right) < 1e-12);
                let lhs = kron(&a, &b).dot(&kron(&c, &d));
                let rhs = kron(&a.dot(&c), &b.dot(&d));
                prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
            }

            #[test]
            fn json_round_trip(seed in any::<u64>(), r in 1usize..5, c in 1usize..5) {
                let m = random_matrix(r, c, &mut SeededRng::new(seed, 0));
                let back: CMatrix = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
                prop_assert_eq!(back, m);
            }
        }
    }
}
