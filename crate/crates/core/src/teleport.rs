//! d-dimensional teleportation through an isotropic resource.
//!
//! Registers are ordered (input, Alice's share, Bob's share). Alice's Bell
//! measurement acts on the first two, Bob's correction `V_α` on the third.
//! Every correction wiring is summarized by the composed unitaries
//! `X_α = V_α U_α†`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cmatrix::{
    kron, max_entangled_state, sample_haar_unitary, CMatrix, DensityMatrix, PureState, SeededRng,
    C64, ONE, ZERO,
};
use crate::error::{Error, Result};

/// Tolerance for unitarity and basis orthogonality.
pub const UNITARY_TOL: f64 = 1e-10;

fn check_unitary(m: &CMatrix, d: usize, context: impl Fn() -> String) -> Result<()> {
    if m.rows() != d || m.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "{} is {}x{}, expected {d}x{d}",
            context(),
            m.rows(),
            m.cols()
        )));
    }
    let deviation = m.unitarity_deviation();
    if deviation > UNITARY_TOL {
        return Err(Error::NotUnitary {
            context: context(),
            deviation,
        });
    }
    Ok(())
}

/// `d²` trace-orthogonal unitaries `{U_α}`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryErrorBasis {
    d: usize,
    unitaries: Vec<CMatrix>,
}

impl UnitaryErrorBasis {
    pub fn new(d: usize, unitaries: Vec<CMatrix>) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(format!(
                "UEB needs d >= 2, got {d}"
            )));
        }
        if unitaries.len() != d * d {
            return Err(Error::DimensionMismatch(format!(
                "UEB needs {} members, got {}",
                d * d,
                unitaries.len()
            )));
        }
        for (a, u) in unitaries.iter().enumerate() {
            check_unitary(u, d, || format!("UEB member {a}"))?;
        }
        for (a, ua) in unitaries.iter().enumerate() {
            for (b, ub) in unitaries.iter().enumerate() {
                let overlap = ua.dagger().trace_dot(ub).norm();
                let expect = if a == b { d as f64 } else { 0.0 };
                if (overlap - expect).abs() > UNITARY_TOL {
                    return Err(Error::InvalidState(format!(
                        "UEB members {a},{b}: |tr(U_a† U_b)| = {overlap}, expected {expect}"
                    )));
                }
            }
        }
        Ok(UnitaryErrorBasis { d, unitaries })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn unitaries(&self) -> &[CMatrix] {
        &self.unitaries
    }

    pub fn get(&self, alpha: usize) -> &CMatrix {
        &self.unitaries[alpha]
    }

    pub fn len(&self) -> usize {
        self.unitaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unitaries.is_empty()
    }
}

/// `Shift|j⟩ = |j+1 mod d⟩`
pub fn shift_operator(d: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    for j in 0..d {
        m[((j + 1) % d, j)] = ONE;
    }
    m
}

/// `Phase|j⟩ = ω^j |j⟩`, `ω = exp(2πi/d)`
pub fn phase_operator(d: usize) -> CMatrix {
    let diag: Vec<C64> = (0..d)
        .map(|j| C64::from_polar(1.0, 2.0 * PI * j as f64 / d as f64))
        .collect();
    CMatrix::from_diag(&diag)
}

fn matrix_power(m: &CMatrix, e: usize) -> CMatrix {
    (0..e).fold(CMatrix::identity(m.rows()), |acc, _| acc.dot(m))
}

/// Heisenberg–Weyl basis `U_{a·d+b} = Shift^a · Phase^b`.
pub fn heisenberg_weyl_basis(d: usize) -> Result<UnitaryErrorBasis> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!(
            "Heisenberg-Weyl basis needs d >= 2, got {d}"
        )));
    }
    let shift = shift_operator(d);
    let phase = phase_operator(d);
    let mut unitaries = Vec::with_capacity(d * d);
    for a in 0..d {
        let sa = matrix_power(&shift, a);
        for b in 0..d {
            unitaries.push(sa.dot(&matrix_power(&phase, b)));
        }
    }
    UnitaryErrorBasis::new(d, unitaries)
}

/// `|Ψ_α⟩ = (U_α ⊗ I)|Ψ₀⟩`, i.e. amplitudes `U_α[i][j] / √d` at `i·d + j`.
pub fn bell_basis(ueb: &UnitaryErrorBasis) -> Vec<PureState> {
    let d = ueb.d();
    let s = 1.0 / (d as f64).sqrt();
    ueb.unitaries()
        .iter()
        .map(|u| {
            let amps = u.data().iter().map(|z| z * s).collect();
            PureState::new(amps).expect("UEB members are unitary")
        })
        .collect()
}

/// Checks `(M⊗I)|Ψ₀⟩ = (I⊗Mᵀ)|Ψ₀⟩` and `⟨Ψ₀|(A⊗B)|Ψ₀⟩ = tr(A Bᵀ)/d` to 1e-10.
pub fn vectorization_checks(m: &CMatrix, a: &CMatrix, b: &CMatrix) -> bool {
    let d = m.rows();
    if [m, a, b].iter().any(|x| x.rows() != d || x.cols() != d) || d < 2 {
        return false;
    }
    let psi0 = max_entangled_state(d).expect("d >= 2");
    let id = CMatrix::identity(d);
    let left = kron(m, &id).apply(psi0.amplitudes());
    let right = kron(&id, &m.transpose()).apply(psi0.amplitudes());
    let first = left
        .iter()
        .zip(&right)
        .all(|(x, y)| (x - y).norm() <= 1e-10);
    let lhs = psi0.expectation(&kron(a, b));
    let rhs = a.trace_dot(&b.transpose()) / d as f64;
    first && (lhs - rhs).norm() <= 1e-10
}

/// Named correction wirings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `V_α = U_α`, so every `X_α = I`.
    Ideal,
    /// `X_α = W_{1 + (α mod (d²−1))}`: the traceless Heisenberg–Weyl
    /// operators, cycled over all `d²` labels.
    AllTracelessHw,
    /// Every `X_α` equal to the phase (clock) operator; all-`Z` for qubits.
    AllEqualTraceless,
}

impl Preset {
    pub const ALL: [Preset; 3] = [
        Preset::Ideal,
        Preset::AllTracelessHw,
        Preset::AllEqualTraceless,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Ideal => "ideal",
            Preset::AllTracelessHw => "all_traceless_hw",
            Preset::AllEqualTraceless => "all_equal_traceless",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

/// Bob's corrections `{V_α}` together with the composed `{X_α = V_α U_α†}`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionSet {
    basis: UnitaryErrorBasis,
    corrections: Vec<CMatrix>,
    composed: Vec<CMatrix>,
}

impl CorrectionSet {
    pub fn from_corrections(basis: UnitaryErrorBasis, corrections: Vec<CMatrix>) -> Result<Self> {
        let d = basis.d();
        if corrections.len() != d * d {
            return Err(Error::DimensionMismatch(format!(
                "{} corrections for d = {d}, expected {}",
                corrections.len(),
                d * d
            )));
        }
        for (a, v) in corrections.iter().enumerate() {
            check_unitary(v, d, || format!("correction V_{a}"))?;
        }
        let composed = corrections
            .iter()
            .zip(basis.unitaries())
            .map(|(v, u)| v.dot(&u.dagger()))
            .collect();
        Ok(CorrectionSet {
            basis,
            corrections,
            composed,
        })
    }

    /// From composed unitaries; the corrections are recovered as `V_α = X_α U_α`.
    pub fn from_composed(basis: UnitaryErrorBasis, composed: Vec<CMatrix>) -> Result<Self> {
        let d = basis.d();
        if composed.len() != d * d {
            return Err(Error::DimensionMismatch(format!(
                "{} composed unitaries for d = {d}, expected {}",
                composed.len(),
                d * d
            )));
        }
        for (a, x) in composed.iter().enumerate() {
            check_unitary(x, d, || format!("composed X_{a}"))?;
        }
        let corrections = composed
            .iter()
            .zip(basis.unitaries())
            .map(|(x, u)| x.dot(u))
            .collect();
        Ok(CorrectionSet {
            basis,
            corrections,
            composed,
        })
    }

    pub fn ideal(basis: UnitaryErrorBasis) -> Self {
        let corrections = basis.unitaries().to_vec();
        let composed = vec![CMatrix::identity(basis.d()); basis.len()];
        CorrectionSet {
            basis,
            corrections,
            composed,
        }
    }

    /// Preset wiring against the Heisenberg–Weyl basis.
    pub fn preset(d: usize, preset: Preset) -> Result<Self> {
        let basis = heisenberg_weyl_basis(d)?;
        let n = d * d;
        match preset {
            Preset::Ideal => Ok(Self::ideal(basis)),
            Preset::AllTracelessHw => {
                let composed = (0..n).map(|a| basis.get(1 + a % (n - 1)).clone()).collect();
                Self::from_composed(basis, composed)
            }
            Preset::AllEqualTraceless => {
                let composed = vec![phase_operator(d); n];
                Self::from_composed(basis, composed)
            }
        }
    }

    /// Haar-random corrections against the Heisenberg–Weyl basis.
    pub fn haar_random(d: usize, rng: &mut SeededRng) -> Result<Self> {
        let basis = heisenberg_weyl_basis(d)?;
        let corrections = (0..d * d).map(|_| sample_haar_unitary(d, rng)).collect();
        Self::from_corrections(basis, corrections)
    }

    pub fn d(&self) -> usize {
        self.basis.d()
    }

    pub fn basis(&self) -> &UnitaryErrorBasis {
        &self.basis
    }

    pub fn corrections(&self) -> &[CMatrix] {
        &self.corrections
    }

    pub fn composed(&self) -> &[CMatrix] {
        &self.composed
    }
}

/// Correction-set file, one of
/// `{"d", "V": [...]}`, `{"d", "X": [...]}` or `{"d", "preset": name}`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionFile {
    pub d: usize,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<CMatrix>>,
    #[serde(rename = "X", default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<CMatrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
}

impl CorrectionFile {
    pub fn into_correction_set(self) -> Result<CorrectionSet> {
        match (self.v, self.x, self.preset) {
            (Some(v), None, None) => {
                CorrectionSet::from_corrections(heisenberg_weyl_basis(self.d)?, v)
            }
            (None, Some(x), None) => {
                CorrectionSet::from_composed(heisenberg_weyl_basis(self.d)?, x)
            }
            (None, None, Some(name)) => CorrectionSet::preset(self.d, name.parse()?),
            (None, None, None) => Err(Error::Config(
                "correction file needs one of \"V\", \"X\" or \"preset\"".into(),
            )),
            _ => Err(Error::Config(
                "correction file must give exactly one of \"V\", \"X\" or \"preset\"".into(),
            )),
        }
    }
}

/// `ρ_iso(p) = p |Ψ₀⟩⟨Ψ₀| + (1−p) I / d²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropicResource {
    d: usize,
    p: f64,
}

impl IsotropicResource {
    pub fn new(d: usize, p: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(format!(
                "isotropic resource needs d >= 2, got {d}"
            )));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange(format!(
                "visibility p = {p} not in [0, 1]"
            )));
        }
        Ok(IsotropicResource { d, p })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn matrix(&self) -> CMatrix {
        let d2 = self.d * self.d;
        let psi0 = max_entangled_state(self.d).expect("d >= 2");
        let mut m = psi0.projector().scale_real(self.p);
        m.add_scaled(
            &CMatrix::identity(d2),
            C64::new((1.0 - self.p) / d2 as f64, 0.0),
        );
        m
    }

    pub fn density_matrix(&self) -> DensityMatrix {
        DensityMatrix::new(self.matrix()).expect("isotropic state is a valid density matrix")
    }
}

/// `⟨ψ|ρ|ψ⟩` over the leading `d²` factor of `ρ` on `d² ⊗ d`, leaving an
/// operator on the trailing `d`-dimensional register.
fn contract_leading_pair(rho: &CMatrix, psi: &[C64], d: usize) -> CMatrix {
    let d2 = d * d;
    debug_assert_eq!(rho.rows(), d2 * d);
    let mut out = CMatrix::zeros(d, d);
    for x in 0..d2 {
        let cx = psi[x].conj();
        if cx == ZERO {
            continue;
        }
        for y in 0..d2 {
            let w = cx * psi[y];
            if w == ZERO {
                continue;
            }
            for c in 0..d {
                for c2 in 0..d {
                    out[(c, c2)] += w * rho[(x * d + c, y * d + c2)];
                }
            }
        }
    }
    out
}

fn check_protocol_dims(
    rho_phi: &DensityMatrix,
    resource: &IsotropicResource,
    cs: &CorrectionSet,
) -> Result<usize> {
    let d = cs.d();
    if rho_phi.dim() != d || resource.d() != d {
        return Err(Error::DimensionMismatch(format!(
            "input dim {}, resource d {}, corrections d {d}",
            rho_phi.dim(),
            resource.d()
        )));
    }
    Ok(d)
}

/// Result of running the protocol explicitly.
#[derive(Clone, Debug)]
pub struct SimulatedOutput {
    pub output: DensityMatrix,
    /// Trace of each unnormalized branch, i.e. the probability of outcome `α`.
    pub branch_probabilities: Vec<f64>,
}

/// Builds `ρ_φ ⊗ ρ_iso`, projects Alice's pair onto each `|Ψ_α⟩`, applies
/// `V_α` to Bob, and sums the branches.
pub fn simulate_protocol(
    rho_phi: &DensityMatrix,
    resource: &IsotropicResource,
    cs: &CorrectionSet,
) -> Result<SimulatedOutput> {
    let d = check_protocol_dims(rho_phi, resource, cs)?;
    let rho_in = kron(rho_phi.matrix(), &resource.matrix());
    let bell = bell_basis(cs.basis());
    let mut total = CMatrix::zeros(d, d);
    let mut probs = Vec::with_capacity(bell.len());
    for (psi, v) in bell.iter().zip(cs.corrections()) {
        let branch = contract_leading_pair(&rho_in, psi.amplitudes(), d);
        probs.push(branch.trace().re);
        total = &total + &v.dot(&branch).dot(&v.dagger());
    }
    Ok(SimulatedOutput {
        output: DensityMatrix::new(total)?,
        branch_probabilities: probs,
    })
}

pub fn unconditional_output_simulated(
    rho_phi: &DensityMatrix,
    resource: &IsotropicResource,
    cs: &CorrectionSet,
) -> Result<DensityMatrix> {
    Ok(simulate_protocol(rho_phi, resource, cs)?.output)
}

/// `ρ_out = (p/d²) Σ_α X_α ρ_φ X_α† + (1−p) I / d`.
pub fn unconditional_output_closed(
    rho_phi: &DensityMatrix,
    resource: &IsotropicResource,
    cs: &CorrectionSet,
) -> Result<DensityMatrix> {
    let d = check_protocol_dims(rho_phi, resource, cs)?;
    let p = resource.p();
    let mut out = CMatrix::identity(d).scale_real((1.0 - p) / d as f64);
    let w = C64::new(p / (d * d) as f64, 0.0);
    for x in cs.composed() {
        out.add_scaled(&x.dot(rho_phi.matrix()).dot(&x.dagger()), w);
    }
    DensityMatrix::new(out)
}

/// `f(φ) = (p/d²) Σ_α |⟨φ|X_α|φ⟩|² + (1−p)/d`.
pub fn single_shot_fidelity(
    phi: &PureState,
    resource: &IsotropicResource,
    cs: &CorrectionSet,
) -> Result<f64> {
    let d = cs.d();
    if phi.dim() != d || resource.d() != d {
        return Err(Error::DimensionMismatch(format!(
            "state dim {}, resource d {}, corrections d {d}",
            phi.dim(),
            resource.d()
        )));
    }
    Ok(fidelity_of_composed(phi, resource.p(), cs.composed()))
}

/// Unchecked core of [`single_shot_fidelity`].
pub(crate) fn fidelity_of_composed(phi: &PureState, p: f64, composed: &[CMatrix]) -> f64 {
    let d = phi.dim();
    let overlap: f64 = composed.iter().map(|x| phi.expectation(x).norm_sqr()).sum();
    p / (d * d) as f64 * overlap + (1.0 - p) / d as f64
}

/// Frobenius distance between the explicitly contracted
/// `V_α ⟨Ψ_α|(ρ ⊗ |Ψ₀⟩⟨Ψ₀|)|Ψ_α⟩ V_α†` and `X_α ρ X_α† / d²`.
pub fn identity1_check(rho: &DensityMatrix, alpha: usize, cs: &CorrectionSet) -> Result<f64> {
    let d = cs.d();
    if rho.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "rho is {}-dimensional, corrections act on d = {d}",
            rho.dim()
        )));
    }
    if alpha >= d * d {
        return Err(Error::OutOfRange(format!(
            "alpha = {alpha} >= d² = {}",
            d * d
        )));
    }
    let psi0 = max_entangled_state(d)?;
    let joint = kron(rho.matrix(), &psi0.projector());
    let psi_a = &bell_basis(cs.basis())[alpha];
    let v = &cs.corrections()[alpha];
    let lhs = v
        .dot(&contract_leading_pair(&joint, psi_a.amplitudes(), d))
        .dot(&v.dagger());
    let x = &cs.composed()[alpha];
    let rhs = x
        .dot(rho.matrix())
        .dot(&x.dagger())
        .scale_real(1.0 / (d * d) as f64);
    Ok(lhs.distance(&rhs))
}

/// Frobenius distance of `⟨Ψ_α|(ρ ⊗ I_{d²})|Ψ_α⟩` from `I/d`, for `ρ` on the
/// input register.
pub fn identity2_check(rho: &DensityMatrix, alpha: usize, ueb: &UnitaryErrorBasis) -> Result<f64> {
    let d = ueb.d();
    if rho.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "rho is {}-dimensional, basis acts on d = {d}",
            rho.dim()
        )));
    }
    if alpha >= d * d {
        return Err(Error::OutOfRange(format!(
            "alpha = {alpha} >= d² = {}",
            d * d
        )));
    }
    let joint = kron(rho.matrix(), &CMatrix::identity(d * d));
    let psi_a = &bell_basis(ueb)[alpha];
    let lhs = contract_leading_pair(&joint, psi_a.amplitudes(), d);
    Ok(lhs.distance(&CMatrix::identity(d).scale_real(1.0 / d as f64)))
}
