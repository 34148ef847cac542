//! Symmetric-group combinatorics and permutation operators on `(C^d)^{⊗k}`.
//!
//! Permutations are 0-based image arrays. Composition is `(p∘q)(i) = p(q(i))`,
//! which makes `V(p)·V(q) = V(p∘q)` for the operator
//! `V(π)|i_1…i_k⟩ = |i_{π⁻¹(1)}…i_{π⁻¹(k)}⟩` (tensor factor `m` moves to slot `π(m)`).

use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::cmatrix::{check_axis, checked_pow, CMatrix, C64, ONE, ZERO};
use crate::error::{Error, Result};

/// Largest `k` accepted by [`enumerate_sk`].
pub const MAX_ENUM_K: usize = 8;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    images: Vec<usize>,
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(images: Vec<usize>) -> Result<Self> {
        Permutation::new(images)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.images
    }
}

impl Permutation {
    pub fn new(images: Vec<usize>) -> Result<Self> {
        let k = images.len();
        if k == 0 {
            return Err(Error::InvalidPermutation("empty image array".into()));
        }
        let mut seen = vec![false; k];
        for &i in &images {
            if i >= k || seen[i] {
                return Err(Error::InvalidPermutation(format!(
                    "{images:?} is not a bijection on 0..{k}"
                )));
            }
            seen[i] = true;
        }
        Ok(Permutation { images })
    }

    pub fn identity(k: usize) -> Self {
        Permutation {
            images: (0..k).collect(),
        }
    }

    /// Builds a permutation from 0-based disjoint cycles; unlisted points are fixed.
    pub fn from_cycles(k: usize, cycles: &[&[usize]]) -> Result<Self> {
        let mut images: Vec<usize> = (0..k).collect();
        let mut touched = vec![false; k];
        for cycle in cycles {
            for (pos, &i) in cycle.iter().enumerate() {
                if i >= k || touched[i] {
                    return Err(Error::InvalidPermutation(format!(
                        "cycles {cycles:?} are not disjoint within 0..{k}"
                    )));
                }
                touched[i] = true;
                images[i] = cycle[(pos + 1) % cycle.len()];
            }
        }
        Permutation::new(images)
    }

    /// Parses 1-based cycle notation such as `"(1 2 3)(4)"`.
    pub fn from_cycle_notation(k: usize, s: &str) -> Result<Self> {
        let mut cycles: Vec<Vec<usize>> = Vec::new();
        for chunk in s.split('(').map(str::trim).filter(|c| !c.is_empty()) {
            let body = chunk.strip_suffix(')').ok_or_else(|| {
                Error::InvalidPermutation(format!("unbalanced parenthesis in {s:?}"))
            })?;
            let cycle = body
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| match t.parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v - 1),
                    _ => Err(Error::InvalidPermutation(format!("bad cycle entry {t:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            cycles.push(cycle);
        }
        let refs: Vec<&[usize]> = cycles.iter().map(Vec::as_slice).collect();
        Permutation::from_cycles(k, &refs)
    }

    /// Transposition of two 0-based points.
    pub fn transposition(k: usize, a: usize, b: usize) -> Result<Self> {
        Permutation::from_cycles(k, &[&[a, b]])
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.images.len()
    }

    pub fn images(&self) -> &[usize] {
        &self.images
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.images[i]
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        assert_eq!(
            self.k(),
            other.k(),
            "composing permutations of different degree"
        );
        Permutation {
            images: other.images.iter().map(|&i| self.images[i]).collect(),
        }
    }

    pub fn try_compose(&self, other: &Permutation) -> Result<Permutation> {
        if self.k() != other.k() {
            return Err(Error::DimensionMismatch(format!(
                "permutations of degree {} and {}",
                self.k(),
                other.k()
            )));
        }
        Ok(self.compose(other))
    }

    pub fn inverse(&self) -> Permutation {
        let mut images = vec![0; self.k()];
        for (i, &j) in self.images.iter().enumerate() {
            images[j] = i;
        }
        Permutation { images }
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn cycles(&self) -> CycleDecomposition {
        let k = self.k();
        let mut seen = vec![false; k];
        let mut cycles = Vec::new();
        for start in 0..k {
            if seen[start] {
                continue;
            }
            let mut cycle = Vec::new();
            let mut i = start;
            while !seen[i] {
                seen[i] = true;
                cycle.push(i);
                i = self.images[i];
            }
            cycles.push(cycle);
        }
        CycleDecomposition { cycles }
    }

    /// Number of disjoint cycles, fixed points included.
    pub fn cycle_count(&self) -> usize {
        let mut seen = vec![false; self.k()];
        let mut count = 0;
        for start in 0..self.k() {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut i = start;
            while !seen[i] {
                seen[i] = true;
                i = self.images[i];
            }
        }
        count
    }

    /// Cycle lengths in non-increasing order (an integer partition of `k`).
    pub fn cycle_type(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.cycles().cycles.iter().map(Vec::len).collect();
        t.sort_unstable_by(|a, b| b.cmp(a));
        t
    }

    pub fn sign(&self) -> i32 {
        if (self.k() - self.cycle_count()).is_multiple_of(2) {
            1
        } else {
            -1
        }
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Permutation{}", self.cycles())
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.cycles())
    }
}

/// Disjoint cycles covering `0..k`; each cycle lists `i, p(i), p²(i), …`
/// starting from its smallest element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleDecomposition {
    pub cycles: Vec<Vec<usize>>,
}

impl CycleDecomposition {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.cycles.iter().map(Vec::len).sum()
    }
}

/// 1-based cycle notation, fixed points included.
impl fmt::Display for CycleDecomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cycles {
            write!(f, "({})", c.iter().map(|i| i + 1).join(" "))?;
        }
        Ok(())
    }
}

/// All `k!` permutations in lexicographic order of their image arrays.
pub fn enumerate_sk(k: usize) -> Result<Vec<Permutation>> {
    if k == 0 || k > MAX_ENUM_K {
        return Err(Error::SizeLimit(format!(
            "enumeration of S_k needs 1 <= k <= {MAX_ENUM_K}, got {k}"
        )));
    }
    Ok((0..k)
        .permutations(k)
        .map(|images| Permutation { images })
        .collect())
}

pub fn cycle_count(p: &Permutation) -> usize {
    p.cycle_count()
}

pub fn factorial(k: usize) -> usize {
    (1..=k).product()
}

pub fn binomial(n: usize, r: usize) -> usize {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    (0..r).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Column-to-row map of `V_d(π)`: `V|j⟩ = |map[j]⟩`.
pub(crate) fn perm_index_map(p: &Permutation, d: usize) -> Result<Vec<usize>> {
    let k = p.k();
    let n = checked_pow(d, k)?;
    let mut place = vec![0usize; k];
    for (m, pl) in place.iter_mut().enumerate() {
        // digit of slot s has weight d^(k-1-s)
        *pl = d.pow((k - 1 - p.apply(m)) as u32);
    }
    let mut map = vec![0usize; n];
    let mut digits = vec![0usize; k];
    for (col, entry) in map.iter_mut().enumerate() {
        let mut rest = col;
        for s in (0..k).rev() {
            digits[s] = rest % d;
            rest /= d;
        }
        *entry = digits.iter().zip(&place).map(|(dg, w)| dg * w).sum();
    }
    Ok(map)
}

/// The `d^k × d^k` permutation operator `V_d(π)`.
pub fn perm_operator(p: &Permutation, d: usize) -> Result<CMatrix> {
    let n = checked_pow(d, p.k())?;
    check_axis(n, "perm_operator")?;
    let map = perm_index_map(p, d)?;
    let mut m = CMatrix::zeros(n, n);
    for (col, &row) in map.iter().enumerate() {
        m[(row, col)] = ONE;
    }
    Ok(m)
}

/// `tr[O · V_d(π)]` read straight off `O` without building `V_d(π)`.
pub fn trace_against_perm(o: &CMatrix, p: &Permutation, d: usize) -> Result<C64> {
    let n = checked_pow(d, p.k())?;
    if o.rows() != n || o.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "operator is {}x{}, expected {n}x{n}",
            o.rows(),
            o.cols()
        )));
    }
    let map = perm_index_map(p, d)?;
    Ok(map.iter().enumerate().map(|(j, &m)| o[(j, m)]).sum())
}

/// `tr(V_d(p)·V_d(q)) = d^{#cyc(p∘q)}`, computed combinatorially.
pub fn trace_product(p: &Permutation, q: &Permutation, d: usize) -> Result<f64> {
    let pq = p.try_compose(q)?;
    Ok((d as f64).powi(pq.cycle_count() as i32))
}

fn signed_projector(d: usize, k: usize, signed: bool) -> Result<CMatrix> {
    if d == 0 {
        return Err(Error::InvalidDimension("d must be positive".into()));
    }
    let n = checked_pow(d, k)?;
    check_axis(n, "symmetric projector")?;
    let perms = enumerate_sk(k)?;
    let weight = 1.0 / factorial(k) as f64;
    let mut out = CMatrix::zeros(n, n);
    for p in &perms {
        let s = if signed { p.sign() as f64 } else { 1.0 } * weight;
        for (col, row) in perm_index_map(p, d)?.into_iter().enumerate() {
            out[(row, col)] += C64::new(s, 0.0);
        }
    }
    Ok(out)
}

/// Projector onto the totally symmetric subspace, `(1/k!) Σ_π V_d(π)`.
pub fn sym_projector(d: usize, k: usize) -> Result<CMatrix> {
    signed_projector(d, k, false)
}

/// Projector onto the totally antisymmetric subspace, `(1/k!) Σ_π sgn(π) V_d(π)`.
pub fn asym_projector(d: usize, k: usize) -> Result<CMatrix> {
    signed_projector(d, k, true)
}

/// `tr[(A_1 ⊗ … ⊗ A_k) · V_d(π)]` as a product over the cycles of `π`.
///
/// A cycle through `i` contributes `tr(A_i · A_{π⁻¹(i)} · A_{π⁻²(i)} ⋯)`.
/// Nothing of size `d^k` is ever allocated.
pub fn cycle_trace(p: &Permutation, ops: &[CMatrix]) -> Result<C64> {
    if ops.len() != p.k() {
        return Err(Error::DimensionMismatch(format!(
            "{} operators for a permutation of degree {}",
            ops.len(),
            p.k()
        )));
    }
    let d = ops[0].rows();
    if ops.iter().any(|a| a.rows() != d || a.cols() != d) {
        return Err(Error::DimensionMismatch(
            "cycle_trace operators must all be d x d".into(),
        ));
    }
    let inv = p.inverse();
    let mut total = ONE;
    for cycle in p.cycles().cycles {
        let start = cycle[0];
        let mut prod = ops[start].clone();
        let mut i = inv.apply(start);
        while i != start {
            prod = prod.dot(&ops[i]);
            i = inv.apply(i);
        }
        total *= prod.trace();
        if total == ZERO {
            break;
        }
    }
    Ok(total)
}
