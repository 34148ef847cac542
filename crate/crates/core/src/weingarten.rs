//! Haar moments through Schur–Weyl duality.
//!
//! The k-fold twirl of an operator lies in the span of the permutation
//! operators; its coefficients come from the (pseudo-)inverse of the Gram
//! matrix `G[π][σ] = d^{#cyc(π∘σ⁻¹)}`, i.e. the Weingarten function.
//! Pure-state moments reduce to the symmetric projector, and contractions of
//! product operators reduce to cycle traces.

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cmatrix::{check_axis, checked_pow, kron_all, CMatrix, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::symgroup::{
    binomial, cycle_trace, enumerate_sk, perm_index_map, sym_projector, trace_against_perm,
    trace_product, Permutation,
};

/// Largest `k` for Gram / Weingarten computations (720 × 720 Gram matrix).
pub const MAX_GRAM_K: usize = 6;
/// Largest `k` for which twirls are built as explicit matrices.
pub const MAX_TWIRL_K: usize = 4;
/// Relative eigenvalue cutoff of the Moore–Penrose pseudo-inverse.
pub const PINV_RCOND: f64 = 1e-10;
/// Unitarity tolerance for inputs of the fourth-moment closed form.
pub const MOMENT_UNITARY_TOL: f64 = 1e-8;

fn check_gram_k(k: usize) -> Result<()> {
    if k == 0 || k > MAX_GRAM_K {
        return Err(Error::SizeLimit(format!(
            "Gram/Weingarten computations need 1 <= k <= {MAX_GRAM_K}, got {k}"
        )));
    }
    Ok(())
}

fn check_d(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidDimension("d must be positive".into()));
    }
    Ok(())
}

/// `d (d+1) ⋯ (d+k−1)`
pub fn rising_factorial(d: usize, k: usize) -> f64 {
    (0..k).map(|i| (d + i) as f64).product()
}

#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub k: usize,
    pub d: usize,
    /// Row/column labels, in [`enumerate_sk`] order.
    pub perms: Vec<Permutation>,
    /// Row-major `k! × k!` entries.
    pub entries: Vec<f64>,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.perms.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size() + j]
    }

    /// Inverse when `d >= k` (Cholesky), Moore–Penrose pseudo-inverse otherwise.
    pub fn pseudo_inverse(&self) -> Result<Vec<f64>> {
        let n = self.size();
        let g = DMatrix::from_row_slice(n, n, &self.entries);
        let inv = if self.d >= self.k {
            g.cholesky()
                .ok_or_else(|| {
                    Error::Inconsistent(format!(
                        "Gram matrix for k={} d={} is not positive definite",
                        self.k, self.d
                    ))
                })?
                .inverse()
        } else {
            let eig = g.symmetric_eigen();
            let max = eig.eigenvalues.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
            let cutoff = PINV_RCOND * max;
            let mut inv = DMatrix::<f64>::zeros(n, n);
            for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
                if lambda.abs() <= cutoff {
                    continue;
                }
                let v = eig.eigenvectors.column(idx);
                inv += (v * v.transpose()) / lambda;
            }
            inv
        };
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(inv[(i, j)]);
            }
        }
        Ok(out)
    }
}

pub fn gram_matrix(k: usize, d: usize) -> Result<GramMatrix> {
    check_gram_k(k)?;
    check_d(d)?;
    let perms = enumerate_sk(k)?;
    let inverses: Vec<Permutation> = perms.iter().map(Permutation::inverse).collect();
    let n = perms.len();
    let mut entries = Vec::with_capacity(n * n);
    for p in &perms {
        for s_inv in &inverses {
            entries.push(trace_product(p, s_inv, d)?);
        }
    }
    Ok(GramMatrix {
        k,
        d,
        perms,
        entries,
    })
}

/// Weingarten function `Wg_d(·)` on `S_k`, stored per cycle type.
#[derive(Clone, Debug, PartialEq)]
pub struct WeingartenTable {
    pub k: usize,
    pub d: usize,
    values: BTreeMap<Vec<usize>, f64>,
    class_sizes: BTreeMap<Vec<usize>, usize>,
}

impl WeingartenTable {
    pub fn value(&self, p: &Permutation) -> f64 {
        self.values[&p.cycle_type()]
    }

    pub fn by_cycle_type(&self, cycle_type: &[usize]) -> Option<f64> {
        self.values.get(cycle_type).copied()
    }

    /// `(cycle type, class size, value)` triples.
    pub fn classes(&self) -> impl Iterator<Item = (&Vec<usize>, usize, f64)> {
        self.values
            .iter()
            .map(move |(t, &v)| (t, self.class_sizes[t], v))
    }

    /// `Σ_τ Wg(τ)` over the whole group.
    pub fn total(&self) -> f64 {
        self.classes().map(|(_, n, v)| n as f64 * v).sum()
    }
}

pub fn weingarten_table(k: usize, d: usize) -> Result<WeingartenTable> {
    let gram = gram_matrix(k, d)?;
    let inv = gram.pseudo_inverse()?;
    let n = gram.size();
    // perms[0] is the identity, so column 0 holds Wg(π ∘ id⁻¹) = Wg(π)
    let mut values = BTreeMap::new();
    let mut class_sizes = BTreeMap::new();
    for (i, p) in gram.perms.iter().enumerate() {
        let t = p.cycle_type();
        values.entry(t.clone()).or_insert(inv[i * n]);
        *class_sizes.entry(t).or_insert(0) += 1;
    }
    Ok(WeingartenTable {
        k,
        d,
        values,
        class_sizes,
    })
}

/// Reusable k-fold Haar twirl on `(C^d)^{⊗k}`.
#[derive(Clone, Debug)]
pub struct Twirl {
    k: usize,
    d: usize,
    n: usize,
    perms: Vec<Permutation>,
    maps: Vec<Vec<usize>>,
    /// `wg[i][j] = Wg(π_i ∘ π_j⁻¹)`, row-major.
    wg: Vec<f64>,
}

impl Twirl {
    pub fn new(k: usize, d: usize) -> Result<Self> {
        if k == 0 || k > MAX_TWIRL_K {
            return Err(Error::SizeLimit(format!(
                "explicit twirls need 1 <= k <= {MAX_TWIRL_K}, got {k}"
            )));
        }
        check_d(d)?;
        let n = checked_pow(d, k)?;
        check_axis(n, "twirl")?;
        let table = weingarten_table(k, d)?;
        let perms = enumerate_sk(k)?;
        let maps = perms
            .iter()
            .map(|p| perm_index_map(p, d))
            .collect::<Result<Vec<_>>>()?;
        let m = perms.len();
        let mut wg = Vec::with_capacity(m * m);
        for p in &perms {
            for s in &perms {
                wg.push(table.value(&p.compose(&s.inverse())));
            }
        }
        Ok(Twirl {
            k,
            d,
            n,
            perms,
            maps,
            wg,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Coefficients `t_π` of `T_k(O) = Σ_π t_π V(π)`, in [`enumerate_sk`] order.
    pub fn coefficients(&self, o: &CMatrix) -> Result<Vec<C64>> {
        if o.rows() != self.n || o.cols() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "twirl input is {}x{}, expected {n}x{n}",
                o.rows(),
                o.cols(),
                n = self.n
            )));
        }
        // y_σ = tr[O V(σ⁻¹)]; V(σ⁻¹) has its 1 in row j of column map_σ[j]
        let y: Vec<C64> = self
            .maps
            .iter()
            .map(|map| map.iter().enumerate().map(|(j, &m)| o[(m, j)]).sum())
            .collect();
        let m = self.perms.len();
        Ok((0..m)
            .map(|i| (0..m).map(|j| y[j] * self.wg[i * m + j]).sum::<C64>())
            .collect())
    }

    pub fn apply(&self, o: &CMatrix) -> Result<CMatrix> {
        let t = self.coefficients(o)?;
        let mut out = CMatrix::zeros(self.n, self.n);
        for (coef, map) in t.iter().zip(&self.maps) {
            for (col, &row) in map.iter().enumerate() {
                out[(row, col)] += coef;
            }
        }
        Ok(out)
    }

    pub fn permutations(&self) -> &[Permutation] {
        &self.perms
    }
}

/// Haar k-fold twirl `∫ dU U^{⊗k} O U^{†⊗k}`.
pub fn twirl(o: &CMatrix, k: usize, d: usize) -> Result<CMatrix> {
    Twirl::new(k, d)?.apply(o)
}

/// `tr(X·S)` with `S` the swap on `C^d ⊗ C^d`.
fn trace_with_swap(x: &CMatrix, d: usize) -> C64 {
    let mut acc = ZERO;
    for i in 0..d {
        for j in 0..d {
            acc += x[(i * d + j, j * d + i)];
        }
    }
    acc
}

/// Coefficients `(a, b)` of the two-fold twirl `a·I + b·S`.
pub fn twirl2_coefficients(x: &CMatrix, d: usize) -> Result<(C64, C64)> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!(
            "two-fold twirl coefficients need d >= 2, got {d}"
        )));
    }
    if x.rows() != d * d || x.cols() != d * d {
        return Err(Error::DimensionMismatch(format!(
            "expected a {n}x{n} operator",
            n = d * d
        )));
    }
    let tr = x.trace();
    let trs = trace_with_swap(x, d);
    let df = d as f64;
    let denom = df * df - 1.0;
    Ok(((tr - trs / df) / denom, (trs - tr / df) / denom))
}

/// Pure-state moment operator `∫ dφ (|φ⟩⟨φ|)^{⊗k} = P_sym / C(d+k−1, k)`.
pub fn moment_operator(k: usize, d: usize) -> Result<CMatrix> {
    check_d(d)?;
    let p = sym_projector(d, k)?;
    Ok(p.scale_real(1.0 / binomial(d + k - 1, k) as f64))
}

/// `∫ dφ ⟨φ|^{⊗k} O |φ⟩^{⊗k} = Σ_π tr[V(π) O] / (d(d+1)⋯(d+k−1))`.
pub fn pure_contraction(o: &CMatrix, k: usize, d: usize) -> Result<C64> {
    check_d(d)?;
    let n = checked_pow(d, k)?;
    check_axis(n, "pure_contraction")?;
    let mut acc = ZERO;
    for p in enumerate_sk(k)? {
        acc += trace_against_perm(o, &p, d)?;
    }
    Ok(acc / rising_factorial(d, k))
}

/// [`pure_contraction`] for `O = A_1 ⊗ ⋯ ⊗ A_k`, evaluated by cycle traces.
pub fn pure_contraction_factors(ops: &[CMatrix]) -> Result<C64> {
    let k = ops.len();
    if k == 0 {
        return Err(Error::InvalidDimension("no factors".into()));
    }
    let d = ops[0].rows();
    let mut acc = ZERO;
    for p in enumerate_sk(k)? {
        acc += cycle_trace(&p, ops)?;
    }
    Ok(acc / rising_factorial(d, k))
}

/// The five trace invariants of a pair `(X_α, X_β)` entering the fourth moment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairTraces {
    pub tr_a: C64,
    pub tr_b: C64,
    /// `tr(X_α X_β)`
    pub tr_ab: C64,
    /// `tr(X_α X_β†)`
    pub tr_ab_dag: C64,
    /// `tr(X_α X_β X_α† X_β†)`
    pub four_cycle: C64,
}

impl PairTraces {
    pub fn of(xa: &CMatrix, xb: &CMatrix) -> Self {
        let ab = xa.dot(xb);
        let ba = xb.dot(xa);
        PairTraces {
            tr_a: xa.trace(),
            tr_b: xb.trace(),
            tr_ab: ab.trace(),
            tr_ab_dag: xa.trace_dot(&xb.dagger()),
            four_cycle: ab.trace_dot(&ba.dagger()),
        }
    }
}

/// Closed form of `∫ dφ |⟨φ|X_α|φ⟩|² |⟨φ|X_β|φ⟩|²` for unitary `X_α, X_β`.
pub fn fourth_moment_from_traces(d: usize, t: &PairTraces) -> f64 {
    let df = d as f64;
    let na = t.tr_a.norm_sqr();
    let nb = t.tr_b.norm_sqr();
    let numerator = df * (df + 4.0)
        + (df + 4.0) * (na + nb)
        + na * nb
        + t.tr_ab.norm_sqr()
        + t.tr_ab_dag.norm_sqr()
        + 2.0 * (t.tr_ab * t.tr_a.conj() * t.tr_b.conj()).re
        + 2.0 * (t.tr_ab_dag * t.tr_a.conj() * t.tr_b).re
        + 2.0 * t.four_cycle.re;
    numerator / rising_factorial(d, 4)
}

/// Fourth moment `d̄_{αβ}` from the closed form.
///
/// Non-unitary input still gets evaluated; the value comes back inside
/// [`Error::NonUnitaryMoment`].
pub fn fourth_moment_pair(xa: &CMatrix, xb: &CMatrix) -> Result<f64> {
    let d = xa.rows();
    if !xa.is_square() || xb.rows() != d || xb.cols() != d {
        return Err(Error::DimensionMismatch(
            "fourth_moment_pair needs two d x d matrices".into(),
        ));
    }
    let value = fourth_moment_from_traces(d, &PairTraces::of(xa, xb));
    let deviation = xa.unitarity_deviation().max(xb.unitarity_deviation());
    if deviation > MOMENT_UNITARY_TOL {
        return Err(Error::NonUnitaryMoment { value, deviation });
    }
    Ok(value)
}

/// The same quantity through the generic contraction of
/// `X_α ⊗ X_α† ⊗ X_β ⊗ X_β†` against all of `S_4`.
pub fn fourth_moment_generic(xa: &CMatrix, xb: &CMatrix) -> Result<f64> {
    let ops = [xa.clone(), xa.dagger(), xb.clone(), xb.dagger()];
    Ok(pure_contraction_factors(&ops)?.re)
}

/// Ensemble file: `{"d": d, "unitaries": [CMatrix, ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ensemble {
    pub d: usize,
    pub unitaries: Vec<CMatrix>,
}

impl Ensemble {
    pub fn new(d: usize, unitaries: Vec<CMatrix>) -> Result<Self> {
        let e = Ensemble { d, unitaries };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.unitaries.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        for (i, u) in self.unitaries.iter().enumerate() {
            if u.rows() != self.d || u.cols() != self.d {
                return Err(Error::DimensionMismatch(format!(
                    "ensemble member {i} is {}x{}, expected {d}x{d}",
                    u.rows(),
                    u.cols(),
                    d = self.d
                )));
            }
            let dev = u.unitarity_deviation();
            if dev > 1e-10 {
                return Err(Error::NotUnitary {
                    context: format!("ensemble member {i}"),
                    deviation: dev,
                });
            }
        }
        Ok(())
    }
}

/// `{I, X, Y, Z}`.
pub fn pauli_ensemble() -> Ensemble {
    let i = C64::new(0.0, 1.0);
    let m = |a: [C64; 4]| CMatrix::new(2, 2, a.to_vec()).unwrap();
    Ensemble {
        d: 2,
        unitaries: vec![
            CMatrix::identity(2),
            m([ZERO, ONE, ONE, ZERO]),
            m([ZERO, -i, i, ZERO]),
            m([ONE, ZERO, ZERO, -ONE]),
        ],
    }
}

/// Multiplies by a phase so the first non-negligible entry is real positive.
fn strip_global_phase(u: &CMatrix) -> CMatrix {
    let lead = u
        .data()
        .iter()
        .copied()
        .find(|z| z.norm() > 1e-9)
        .unwrap_or(ONE);
    u.scale(lead.conj() / lead.norm())
}

fn phase_key(u: &CMatrix) -> Vec<(i64, i64)> {
    u.data()
        .iter()
        .map(|z| ((z.re * 1e8).round() as i64, (z.im * 1e8).round() as i64))
        .collect()
}

/// The 24-element single-qubit Clifford group modulo global phase, generated
/// by `H` and `S`.
pub fn clifford_ensemble() -> Ensemble {
    let h = CMatrix::from_real(2, 2, &[1.0, 1.0, 1.0, -1.0])
        .unwrap()
        .scale_real(std::f64::consts::FRAC_1_SQRT_2);
    let s = CMatrix::from_diag(&[ONE, C64::new(0.0, 1.0)]);
    let mut seen = HashSet::new();
    let mut group = vec![CMatrix::identity(2)];
    seen.insert(phase_key(&group[0]));
    let mut frontier = group.clone();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for g in &frontier {
            for gen in [&h, &s] {
                let cand = strip_global_phase(&gen.dot(g));
                if seen.insert(phase_key(&cand)) {
                    next.push(cand.clone());
                    group.push(cand);
                }
            }
        }
        frontier = next;
    }
    Ensemble {
        d: 2,
        unitaries: group,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignReport {
    pub k: usize,
    pub d: usize,
    pub ensemble_size: usize,
    pub is_design: bool,
    pub max_deviation: f64,
    pub tol: f64,
}

/// Checks `(1/|E|) Σ_j U_j^{⊗k} O U_j^{†⊗k} = T_k(O)` on every matrix unit `O = |i⟩⟨j|`.
pub fn verify_t_design(ensemble: &[CMatrix], k: usize, d: usize, tol: f64) -> Result<DesignReport> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if k == 0 || k > 3 {
        return Err(Error::SizeLimit(format!(
            "t-design checks need 1 <= k <= 3, got {k}"
        )));
    }
    let e = Ensemble::new(d, ensemble.to_vec())?;
    let twirl = Twirl::new(k, d)?;
    let n = checked_pow(d, k)?;
    let powers: Vec<CMatrix> = e
        .unitaries
        .iter()
        .map(|u| kron_all(&vec![u.clone(); k]))
        .collect();
    let weight = 1.0 / powers.len() as f64;
    let mut max_dev = 0.0f64;
    let mut unit = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            unit[(i, j)] = ONE;
            let haar = twirl.apply(&unit)?;
            unit[(i, j)] = ZERO;
            // ensemble average of W|i⟩⟨j|W† has entries W[a,i]·conj(W[b,j])
            let mut avg = CMatrix::zeros(n, n);
            for w in &powers {
                for a in 0..n {
                    let wai = w[(a, i)] * weight;
                    for b in 0..n {
                        avg[(a, b)] += wai * w[(b, j)].conj();
                    }
                }
            }
            max_dev = max_dev.max(avg.distance(&haar));
        }
    }
    Ok(DesignReport {
        k,
        d,
        ensemble_size: powers.len(),
        is_design: max_dev <= tol,
        max_deviation: max_dev,
        tol,
    })
}
