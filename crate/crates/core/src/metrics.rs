//! Average fidelity `F` and fidelity deviation `D` of a correction wiring,
//! in closed form and by Haar Monte Carlo.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmatrix::{sample_pure_state, CMatrix, SeededRng, C64};
use crate::error::{Error, Result};
use crate::teleport::{fidelity_of_composed, phase_operator, CorrectionSet};
use crate::weingarten::{fourth_moment_from_traces, PairTraces};

/// Default Monte Carlo sample count.
pub const DEFAULT_MC_SAMPLES: usize = 200_000;
/// Fixed shard count; each shard draws from its own rng stream.
pub const MC_SHARDS: usize = 16;
pub const MIN_MC_SAMPLES: usize = 100;
/// Tolerance on the linear deviation bound.
pub const BOUND_TOL: f64 = 1e-9;
const CLAMP_TOL: f64 = 1e-12;

/// Trace invariants of the composed unitaries.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceInvariants {
    pub d: usize,
    /// `tr X_α`
    pub diag: Vec<C64>,
    /// `tr(X_α X_β)`
    pub pair_plain: Vec<Vec<C64>>,
    /// `tr(X_α X_β†)`
    pub pair_dagger: Vec<Vec<C64>>,
    /// `tr(X_α X_β X_α† X_β†)`
    pub four_cycle: Vec<Vec<C64>>,
}

impl TraceInvariants {
    pub fn pair(&self, a: usize, b: usize) -> PairTraces {
        PairTraces {
            tr_a: self.diag[a],
            tr_b: self.diag[b],
            tr_ab: self.pair_plain[a][b],
            tr_ab_dag: self.pair_dagger[a][b],
            four_cycle: self.four_cycle[a][b],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }
}

pub fn trace_invariants(cs: &CorrectionSet) -> TraceInvariants {
    invariants_of(cs.d(), cs.composed())
}

fn invariants_of(d: usize, xs: &[CMatrix]) -> TraceInvariants {
    let n = xs.len();
    let daggers: Vec<CMatrix> = xs.iter().map(CMatrix::dagger).collect();
    let rows: Vec<_> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut plain = Vec::with_capacity(n);
            let mut dag = Vec::with_capacity(n);
            let mut four = Vec::with_capacity(n);
            for b in 0..n {
                let ab = xs[a].dot(&xs[b]);
                plain.push(ab.trace());
                dag.push(xs[a].trace_dot(&daggers[b]));
                let ba_dag = daggers[a].dot(&daggers[b]);
                four.push(ab.trace_dot(&ba_dag));
            }
            (plain, dag, four)
        })
        .collect();
    let mut inv = TraceInvariants {
        d,
        diag: xs.iter().map(CMatrix::trace).collect(),
        pair_plain: Vec::with_capacity(n),
        pair_dagger: Vec::with_capacity(n),
        four_cycle: Vec::with_capacity(n),
    };
    for (plain, dag, four) in rows {
        inv.pair_plain.push(plain);
        inv.pair_dagger.push(dag);
        inv.four_cycle.push(four);
    }
    inv
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange(format!(
            "visibility p = {p} not in [0, 1]"
        )));
    }
    Ok(())
}

fn check_d(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!("need d >= 2, got {d}")));
    }
    Ok(())
}

/// `F = p/(d³(d+1)) Σ|tr X_α|² + (d+1−p)/(d(d+1))`.
pub fn average_fidelity_closed(inv: &TraceInvariants, p: f64) -> Result<f64> {
    check_p(p)?;
    check_d(inv.d)?;
    let d = inv.d as f64;
    let s: f64 = inv.diag.iter().map(|t| t.norm_sqr()).sum();
    Ok(p / (d * d * d * (d + 1.0)) * s + (d + 1.0 - p) / (d * (d + 1.0)))
}

/// `f̄_α = (|tr X_α|² + d) / (d(d+1))`
fn second_moments(inv: &TraceInvariants) -> Vec<f64> {
    let d = inv.d as f64;
    inv.diag
        .iter()
        .map(|t| (t.norm_sqr() + d) / (d * (d + 1.0)))
        .collect()
}

/// `Σ_{αβ} c_{αβ}` with `c_{αβ} = d̄_{αβ} − f̄_α f̄_β`. The fourth moment is
/// evaluated once per unordered pair.
pub fn covariance_sum(inv: &TraceInvariants) -> f64 {
    let fbar = second_moments(inv);
    let n = inv.len();
    let mut total = 0.0;
    for a in 0..n {
        for b in a..n {
            let c = fourth_moment_from_traces(inv.d, &inv.pair(a, b)) - fbar[a] * fbar[b];
            total += if a == b { c } else { 2.0 * c };
        }
    }
    total
}

/// `D = (p/d²) √(Σ_{αβ} c_{αβ})`.
pub fn deviation_closed(inv: &TraceInvariants, p: f64) -> Result<f64> {
    check_p(p)?;
    check_d(inv.d)?;
    let s = covariance_sum(inv);
    if s < -CLAMP_TOL {
        return Err(Error::Inconsistent(format!(
            "negative covariance sum {s:e} in the fidelity deviation"
        )));
    }
    let s = s.max(0.0);
    let d = inv.d as f64;
    Ok(p / (d * d) * s.sqrt())
}

/// Closed-form constants for given `d` and `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Extremal {
    pub f_max: f64,
    pub f_min: f64,
    pub delta_f: f64,
    pub s_d: f64,
    pub d_max: f64,
}

/// Slope `s_d = √(2/(d(d+3)))` of the deviation bound.
pub fn slope(d: usize) -> f64 {
    let d = d as f64;
    (2.0 / (d * (d + 3.0))).sqrt()
}

pub fn extremal_values(d: usize, p: f64) -> Result<Extremal> {
    check_d(d)?;
    check_p(p)?;
    let df = d as f64;
    let s_d = slope(d);
    let delta_f = df * p / (df + 1.0);
    Ok(Extremal {
        f_max: p + (1.0 - p) / df,
        f_min: (df + 1.0 - p) / (df * (df + 1.0)),
        delta_f,
        s_d,
        d_max: s_d * delta_f,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    ClosedForm,
    MonteCarlo,
}

/// `(F, D)` with the constants they are compared against.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FidelityStats {
    pub d: usize,
    pub p: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "D")]
    pub dev: f64,
    #[serde(rename = "F_max")]
    pub f_max: f64,
    #[serde(rename = "F_min")]
    pub f_min: f64,
    pub delta_f: f64,
    pub s_d: f64,
    /// `s_d (F_max − F)`
    #[serde(rename = "D_bound")]
    pub d_bound: f64,
    #[serde(rename = "D_max")]
    pub d_max: f64,
    pub source: StatsSource,
    #[serde(rename = "stderr_F")]
    pub stderr_f: Option<f64>,
    #[serde(rename = "stderr_D")]
    pub stderr_d: Option<f64>,
}

impl FidelityStats {
    fn assemble(d: usize, p: f64, f: f64, dev: f64, source: StatsSource) -> Result<Self> {
        let ex = extremal_values(d, p)?;
        Ok(FidelityStats {
            d,
            p,
            f,
            dev,
            f_max: ex.f_max,
            f_min: ex.f_min,
            delta_f: ex.delta_f,
            s_d: ex.s_d,
            d_bound: ex.s_d * (ex.f_max - f),
            d_max: ex.d_max,
            source,
            stderr_f: None,
            stderr_d: None,
        })
    }
}

pub fn closed_form_stats(cs: &CorrectionSet, p: f64) -> Result<FidelityStats> {
    let inv = trace_invariants(cs);
    let f = average_fidelity_closed(&inv, p)?;
    let dev = deviation_closed(&inv, p)?;
    FidelityStats::assemble(cs.d(), p, f, dev, StatsSource::ClosedForm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub satisfied: bool,
    /// `s_d (F_max − F) − D`
    pub slack: f64,
}

/// Checks `D ≤ s_d (F_max − F)` up to [`BOUND_TOL`].
pub fn deviation_bound_check(stats: &FidelityStats) -> BoundCheck {
    let slack = stats.s_d * (stats.f_max - stats.f) - stats.dev;
    BoundCheck {
        satisfied: slack >= -BOUND_TOL,
        slack,
    }
}

/// Streaming first and second moments of `(f, f²)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Moments {
    n: f64,
    mean_f: f64,
    mean_g: f64,
    // co-moments: Σ(f−f̄)², Σ(g−ḡ)², Σ(f−f̄)(g−ḡ)
    m_ff: f64,
    m_gg: f64,
    m_fg: f64,
}

impl Moments {
    fn push(&mut self, f: f64) {
        let g = f * f;
        self.n += 1.0;
        let df = f - self.mean_f;
        let dg = g - self.mean_g;
        self.mean_f += df / self.n;
        self.mean_g += dg / self.n;
        self.m_ff += df * (f - self.mean_f);
        self.m_gg += dg * (g - self.mean_g);
        self.m_fg += df * (g - self.mean_g);
    }

    fn merge(&self, o: &Moments) -> Moments {
        if self.n == 0.0 {
            return *o;
        }
        if o.n == 0.0 {
            return *self;
        }
        let n = self.n + o.n;
        let df = o.mean_f - self.mean_f;
        let dg = o.mean_g - self.mean_g;
        let w = self.n * o.n / n;
        Moments {
            n,
            mean_f: self.mean_f + df * o.n / n,
            mean_g: self.mean_g + dg * o.n / n,
            m_ff: self.m_ff + o.m_ff + df * df * w,
            m_gg: self.m_gg + o.m_gg + dg * dg * w,
            m_fg: self.m_fg + o.m_fg + df * dg * w,
        }
    }
}

fn shard_sizes(n: usize) -> Vec<usize> {
    (0..MC_SHARDS)
        .map(|i| n / MC_SHARDS + usize::from(i < n % MC_SHARDS))
        .collect()
}

/// Haar Monte Carlo estimate of `(F, D)`.
///
/// Samples are split over [`MC_SHARDS`] shards; shard `i` draws from stream
/// `i` of `seed`. Shards are merged in index order, so the result depends
/// only on `(seed, n_samples)`.
///
/// `stderr_D` uses the delta method on the sample means of `(f, f²)`:
/// with `D = √(m₂ − m₁²)`, `∇D = (−m₁/D, 1/(2D))` and
/// `var D ≈ ∇Dᵀ Σ ∇D / n` where `Σ` is the sample covariance of `(f, f²)`.
/// When the sample spread is below 1e-12, `D` and its stderr are reported as 0.
pub fn monte_carlo_stats(
    cs: &CorrectionSet,
    p: f64,
    n_samples: usize,
    seed: u64,
) -> Result<FidelityStats> {
    check_p(p)?;
    if n_samples < MIN_MC_SAMPLES {
        return Err(Error::OutOfRange(format!(
            "need at least {MIN_MC_SAMPLES} Monte Carlo samples, got {n_samples}"
        )));
    }
    let d = cs.d();
    let xs = cs.composed();
    let shards: Vec<Moments> = shard_sizes(n_samples)
        .into_par_iter()
        .enumerate()
        .map(|(i, count)| {
            let mut rng = SeededRng::new(seed, i as u64);
            let mut m = Moments::default();
            for _ in 0..count {
                let phi = sample_pure_state(d, &mut rng);
                m.push(fidelity_of_composed(&phi, p, xs));
            }
            m
        })
        .collect();
    let m = shards
        .iter()
        .fold(Moments::default(), |acc, s| acc.merge(s));

    let n = m.n;
    let var = m.m_ff / n;
    let cov = |x: f64| x / (n - 1.0);
    let stderr_f = (cov(m.m_ff) / n).sqrt();
    let (dev, stderr_d) = if var.sqrt() <= 1e-12 {
        (0.0, 0.0)
    } else {
        let dev = var.sqrt();
        let gf = -m.mean_f / dev;
        let gg = 0.5 / dev;
        let v = gf * gf * cov(m.m_ff) + 2.0 * gf * gg * cov(m.m_fg) + gg * gg * cov(m.m_gg);
        (dev, (v.max(0.0) / n).sqrt())
    };
    let mut stats = FidelityStats::assemble(d, p, m.mean_f, dev, StatsSource::MonteCarlo)?;
    stats.stderr_f = Some(stderr_f);
    stats.stderr_d = Some(stderr_d);
    Ok(stats)
}

/// Agreement of a Monte Carlo estimate with closed-form values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Agreement {
    /// `|F_closed − F_mc| / stderr_F`, 0 when both agree exactly
    pub z_f: f64,
    pub z_d: f64,
    pub ok: bool,
}

/// `ok` iff both differences are within `n_sigma` standard errors. A zero
/// stderr only accepts differences below 1e-12.
pub fn agreement(closed: &FidelityStats, mc: &FidelityStats, n_sigma: f64) -> Agreement {
    let z = |diff: f64, se: Option<f64>| {
        let diff = diff.abs();
        if diff <= 1e-12 {
            0.0
        } else {
            match se {
                Some(se) if se > 0.0 => diff / se,
                _ => f64::INFINITY,
            }
        }
    };
    let z_f = z(closed.f - mc.f, mc.stderr_f);
    let z_d = z(closed.dev - mc.dev, mc.stderr_d);
    Agreement {
        z_f,
        z_d,
        ok: z_f <= n_sigma && z_d <= n_sigma,
    }
}

/// Best wiring found by [`zero_deviation_search`].
#[derive(Clone, Debug)]
pub struct SearchResult {
    pub d: usize,
    pub trials: usize,
    /// `D` at `p = 1` of the best wiring; its `F` is `F_min`.
    pub best_dev: f64,
    pub composed: Vec<CMatrix>,
}

/// Random search for traceless wirings with small `D`. Every `X_α` is a
/// Haar-random conjugate `W Phase W†` of the clock operator, so all wirings
/// sit at `F = F_min`.
pub fn zero_deviation_search(d: usize, trials: usize, seed: u64) -> Result<SearchResult> {
    check_d(d)?;
    if trials == 0 {
        return Err(Error::OutOfRange(
            "zero_deviation_search needs trials >= 1".into(),
        ));
    }
    let clock = phase_operator(d);
    let mut rng = SeededRng::new(seed, 0);
    let mut best: Option<(f64, Vec<CMatrix>)> = None;
    for _ in 0..trials {
        let xs: Vec<CMatrix> = (0..d * d)
            .map(|_| {
                let w = crate::cmatrix::sample_haar_unitary(d, &mut rng);
                w.dot(&clock).dot(&w.dagger())
            })
            .collect();
        let dev = deviation_closed(&invariants_of(d, &xs), 1.0)?;
        if best.as_ref().is_none_or(|(b, _)| dev < *b) {
            best = Some((dev, xs));
        }
    }
    let (best_dev, composed) = best.expect("trials >= 1");
    Ok(SearchResult {
        d,
        trials,
        best_dev,
        composed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmatrix::sample_haar_unitary;
    use crate::teleport::{heisenberg_weyl_basis, Preset};
    use crate::weingarten::{fourth_moment_generic, fourth_moment_pair};
    use proptest::prelude::*;

    fn random_set(d: usize, rng: &mut SeededRng) -> CorrectionSet {
        CorrectionSet::haar_random(d, rng).unwrap()
    }

    fn uniform_wiring(x: CMatrix) -> CorrectionSet {
        let d = x.rows();
        CorrectionSet::from_composed(heisenberg_weyl_basis(d).unwrap(), vec![x; d * d]).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn invariants_examples() {
        let inv = trace_invariants(&CorrectionSet::preset(3, Preset::Ideal).unwrap());
        assert!(inv
            .diag
            .iter()
            .all(|t| close(t.re, 3.0, 1e-15) && t.im == 0.0));
        for row in inv
            .pair_plain
            .iter()
            .chain(&inv.pair_dagger)
            .chain(&inv.four_cycle)
        {
            assert!(row.iter().all(|t| (t - C64::new(3.0, 0.0)).norm() < 1e-14));
        }
        let inv = trace_invariants(&CorrectionSet::preset(2, Preset::AllEqualTraceless).unwrap());
        assert!(inv.diag.iter().all(|t| t.norm() < 1e-15));
        for row in inv
            .pair_plain
            .iter()
            .chain(&inv.pair_dagger)
            .chain(&inv.four_cycle)
        {
            assert!(row.iter().all(|t| (t - C64::new(2.0, 0.0)).norm() < 1e-14));
        }
        let mut rng = SeededRng::new(50, 0);
        let inv = trace_invariants(&random_set(4, &mut rng));
        for (a, row) in inv.pair_dagger.iter().enumerate() {
            assert!((row[a] - C64::new(4.0, 0.0)).norm() < 1e-12);
            assert!(inv.diag[a].norm() <= 4.0 + 1e-12);
        }
    }

    #[test]
    fn fidelity_examples() {
        for d in 2..=5 {
            let inv = trace_invariants(&CorrectionSet::preset(d, Preset::Ideal).unwrap());
            for p in [0.0, 0.3, 0.5, 1.0] {
                let f = average_fidelity_closed(&inv, p).unwrap();
                assert!(close(f, p + (1.0 - p) / d as f64, 1e-14));
            }
        }
        let inv = trace_invariants(&CorrectionSet::preset(2, Preset::AllTracelessHw).unwrap());
        assert!(close(
            average_fidelity_closed(&inv, 1.0).unwrap(),
            1.0 / 3.0,
            1e-15
        ));
        let inv = trace_invariants(&CorrectionSet::preset(2, Preset::Ideal).unwrap());
        assert!(close(
            average_fidelity_closed(&inv, 0.5).unwrap(),
            0.75,
            1e-15
        ));
        assert!(average_fidelity_closed(&inv, 1.5).is_err());
        assert!(deviation_closed(&inv, -0.1).is_err());
    }

    #[test]
    fn deviation_examples() {
        for d in 2..=4 {
            let inv = trace_invariants(&CorrectionSet::preset(d, Preset::Ideal).unwrap());
            assert_eq!(deviation_closed(&inv, 0.7).unwrap(), 0.0);
        }
        let all_z = trace_invariants(&CorrectionSet::preset(2, Preset::AllEqualTraceless).unwrap());
        let dz = deviation_closed(&all_z, 1.0).unwrap();
        assert!(close(dz, (2.0 / 3.0) / 5f64.sqrt(), 1e-12), "{dz}");
        // hand value: c = 1/5 − 1/9 for each of the 16 pairs
        assert!(close(
            dz,
            0.25 * (16.0f64 * (0.2 - 1.0 / 9.0)).sqrt(),
            1e-12
        ));
        let mut rng = SeededRng::new(51, 0);
        let inv = trace_invariants(&random_set(3, &mut rng));
        assert_eq!(deviation_closed(&inv, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn fourth_moment_symmetric_in_pair() {
        let mut rng = SeededRng::new(52, 0);
        for d in 2..=4 {
            let inv = trace_invariants(&random_set(d, &mut rng));
            for a in 0..inv.len() {
                for b in 0..inv.len() {
                    let ab = fourth_moment_from_traces(d, &inv.pair(a, b));
                    let ba = fourth_moment_from_traces(d, &inv.pair(b, a));
                    assert!(close(ab, ba, 1e-13));
                }
            }
        }
    }

    #[test]
    fn fourth_moment_on_wiring_data() {
        let mut rng = SeededRng::new(53, 0);
        for d in [2, 3] {
            let cs = random_set(d, &mut rng);
            let xs = cs.composed();
            for a in 0..xs.len() {
                let b = (a * 5 + 1) % xs.len();
                let closed = fourth_moment_pair(&xs[a], &xs[b]).unwrap();
                let generic = fourth_moment_generic(&xs[a], &xs[b]).unwrap();
                assert!(close(closed, generic, 1e-10));
            }
        }
    }

    #[test]
    fn extremal_examples() {
        let e = extremal_values(2, 1.0).unwrap();
        assert!(close(e.f_max, 1.0, 1e-15));
        assert!(close(e.f_min, 1.0 / 3.0, 1e-15));
        assert!(close(e.delta_f, 2.0 / 3.0, 1e-15));
        assert!(close(e.s_d, 1.0 / 5f64.sqrt(), 1e-15));
        assert!(close(e.d_max, 0.298142397, 1e-9));
        for d in 2..=6 {
            let e = extremal_values(d, 0.0).unwrap();
            assert_eq!(e.delta_f, 0.0);
            assert_eq!(e.d_max, 0.0);
            let e = extremal_values(d, 0.4).unwrap();
            assert!(close(e.f_max - e.f_min, e.delta_f, 1e-15));
        }
        assert!(extremal_values(1, 0.5).is_err());
        assert!(extremal_values(2, 2.0).is_err());
    }

    #[test]
    fn bound_check_examples() {
        let ideal =
            closed_form_stats(&CorrectionSet::preset(3, Preset::Ideal).unwrap(), 0.6).unwrap();
        let b = deviation_bound_check(&ideal);
        assert!(b.satisfied && b.slack.abs() < 1e-14);
        let all_z = closed_form_stats(
            &CorrectionSet::preset(2, Preset::AllEqualTraceless).unwrap(),
            1.0,
        )
        .unwrap();
        let b = deviation_bound_check(&all_z);
        assert!(b.satisfied && b.slack.abs() <= 1e-9);
        assert!(close(all_z.dev, all_z.d_max, 1e-9));
        assert!(close(all_z.f, all_z.f_min, 1e-12));
    }

    #[test]
    fn bound_fails_for_aligned_qutrit_wiring() {
        // every X_α = diag(1, 1, −1): F = F_min = 1/3 at p = 1 but
        // D = 0.29814 exceeds s_3 (F_max − F) = 2/9
        let x = CMatrix::from_diag(&[C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]);
        let cs = uniform_wiring(x);
        let stats = closed_form_stats(&cs, 1.0).unwrap();
        assert!(close(stats.f, 1.0 / 3.0, 1e-12));
        assert!(close(stats.dev, 0.298142397, 1e-8), "{}", stats.dev);
        let b = deviation_bound_check(&stats);
        assert!(!b.satisfied);
        assert!(close(b.slack, 2.0 / 9.0 - stats.dev, 1e-12));
        // the Monte Carlo oracle sees the same D
        let mc = monte_carlo_stats(&cs, 1.0, 100_000, 3).unwrap();
        assert!(agreement(&stats, &mc, 4.0).ok, "{mc:?}");
    }

    #[test]
    fn bound_holds_for_random_wirings() {
        let mut rng = SeededRng::new(54, 0);
        for d in [2, 3] {
            for _ in 0..100 {
                let stats = closed_form_stats(&random_set(d, &mut rng), 1.0).unwrap();
                assert!(deviation_bound_check(&stats).satisfied);
            }
        }
    }

    #[test]
    fn stats_invariants_random() {
        let mut rng = SeededRng::new(55, 0);
        for d in [2, 3] {
            for _ in 0..100 {
                let cs = random_set(d, &mut rng);
                let p = rng.uniform();
                let s = closed_form_stats(&cs, p).unwrap();
                assert!(s.f >= s.f_min - 1e-10 && s.f <= s.f_max + 1e-10);
                assert!(s.dev * s.dev <= s.f * (1.0 - s.f) + 1e-10);
            }
        }
    }

    #[test]
    fn linear_in_p() {
        let mut rng = SeededRng::new(56, 0);
        for d in 2..=4 {
            let inv = trace_invariants(&random_set(d, &mut rng));
            let f0 = average_fidelity_closed(&inv, 0.0).unwrap();
            let f1 = average_fidelity_closed(&inv, 1.0).unwrap();
            let d1 = deviation_closed(&inv, 1.0).unwrap();
            let f3 = average_fidelity_closed(&inv, 0.3).unwrap();
            assert!(close(f3, 0.7 * f0 + 0.3 * f1, 1e-12));
            assert!(close(deviation_closed(&inv, 0.3).unwrap(), 0.3 * d1, 1e-12));
        }
    }

    #[test]
    fn negative_covariance_is_an_error() {
        // non-unitary input pushes the closed form below zero
        let mut inv = trace_invariants(&CorrectionSet::preset(2, Preset::Ideal).unwrap());
        for row in &mut inv.four_cycle {
            for t in row.iter_mut() {
                *t = C64::new(-10.0, 0.0);
            }
        }
        assert!(matches!(
            deviation_closed(&inv, 1.0),
            Err(Error::Inconsistent(_))
        ));
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let mut rng = SeededRng::new(57, 0);
        let xs: Vec<f64> = (0..1000).map(|_| rng.uniform()).collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut parts = [Moments::default(); 3];
        for (i, &x) in xs.iter().enumerate() {
            parts[i * 3 / xs.len()].push(x);
        }
        let merged = parts.iter().fold(Moments::default(), |a, b| a.merge(b));
        assert!(close(merged.mean_f, whole.mean_f, 1e-13));
        assert!(close(merged.m_ff, whole.m_ff, 1e-10));
        assert!(close(merged.m_fg, whole.m_fg, 1e-10));
        assert!(close(merged.m_gg, whole.m_gg, 1e-10));
        let naive_var = xs.iter().map(|x| x * x).sum::<f64>() / 1000.0 - whole.mean_f.powi(2);
        assert!(close(whole.m_ff / 1000.0, naive_var, 1e-12));
    }

    #[test]
    fn monte_carlo_ideal_is_exact() {
        for d in 2..=4 {
            let cs = CorrectionSet::preset(d, Preset::Ideal).unwrap();
            let s = monte_carlo_stats(&cs, 0.6, 1000, 9).unwrap();
            assert!(close(s.f, 0.6 + 0.4 / d as f64, 1e-13));
            assert_eq!(s.dev, 0.0);
            assert_eq!(s.stderr_d, Some(0.0));
        }
        let cs = CorrectionSet::preset(2, Preset::Ideal).unwrap();
        assert!(monte_carlo_stats(&cs, 0.6, 99, 9).is_err());
    }

    #[test]
    fn monte_carlo_all_z() {
        let cs = CorrectionSet::preset(2, Preset::AllEqualTraceless).unwrap();
        let mc = monte_carlo_stats(&cs, 1.0, 200_000, 11).unwrap();
        let se_f = mc.stderr_f.unwrap();
        let se_d = mc.stderr_d.unwrap();
        assert!(close(mc.f, 1.0 / 3.0, 3.0 * se_f), "{mc:?}");
        assert!(close(mc.dev, 0.298142397, 3.0 * se_d), "{mc:?}");
    }

    #[test]
    fn monte_carlo_matches_closed_random() {
        let mut rng = SeededRng::new(58, 0);
        for d in [2, 3] {
            for _ in 0..3 {
                let cs = random_set(d, &mut rng);
                let p = 0.5 + 0.5 * rng.uniform();
                let closed = closed_form_stats(&cs, p).unwrap();
                let mc =
                    monte_carlo_stats(&cs, p, 200_000, rand::RngCore::next_u64(&mut rng)).unwrap();
                let a = agreement(&closed, &mc, 4.0);
                assert!(a.ok, "{a:?} {closed:?} {mc:?}");
            }
        }
    }

    #[test]
    fn monte_carlo_deterministic() {
        let mut rng = SeededRng::new(59, 0);
        let cs = random_set(3, &mut rng);
        let a = monte_carlo_stats(&cs, 0.8, 5000, 7).unwrap();
        let b = monte_carlo_stats(&cs, 0.8, 5000, 7).unwrap();
        assert_eq!(a, b);
        let c = monte_carlo_stats(&cs, 0.8, 5000, 8).unwrap();
        assert_ne!(a.f, c.f);
        assert_eq!(shard_sizes(5003).iter().sum::<usize>(), 5003);
    }

    #[test]
    fn zero_deviation_search_improves() {
        let r = zero_deviation_search(2, 200, 1).unwrap();
        let cs =
            CorrectionSet::from_composed(heisenberg_weyl_basis(2).unwrap(), r.composed.clone())
                .unwrap();
        let stats = closed_form_stats(&cs, 1.0).unwrap();
        assert!(close(stats.dev, r.best_dev, 1e-12));
        assert!(close(stats.f, stats.f_min, 1e-12));
        // the all-equal wiring is the worst traceless case at d = 2
        assert!(r.best_dev < 0.298142397 / 2.0);
        assert!(zero_deviation_search(2, 0, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_range_and_basic_bound(seed in any::<u64>(), d in 2usize..=3, p in 0.0f64..=1.0) {
            let mut rng = SeededRng::new(seed, 0);
            let s = closed_form_stats(&random_set(d, &mut rng), p).unwrap();
            prop_assert!(s.f >= s.f_min - 1e-10 && s.f <= s.f_max + 1e-10);
            prop_assert!(s.dev * s.dev <= s.f * (1.0 - s.f) + 1e-10);
            prop_assert!(s.f * (1.0 - s.f) <= 0.25 + 1e-15);
        }

        #[test]
        fn prop_global_phase_invariance(seed in any::<u64>(), theta in 0.0f64..6.3) {
            let mut rng = SeededRng::new(seed, 0);
            let cs = random_set(2, &mut rng);
            let phase = C64::from_polar(1.0, theta);
            let rotated: Vec<CMatrix> = cs.composed().iter().map(|x| x.scale(phase)).collect();
            let cs2 = CorrectionSet::from_composed(cs.basis().clone(), rotated).unwrap();
            let a = closed_form_stats(&cs, 1.0).unwrap();
            let b = closed_form_stats(&cs2, 1.0).unwrap();
            prop_assert!(close(a.f, b.f, 1e-12) && close(a.dev, b.dev, 1e-12));
        }

        #[test]
        fn prop_unitary_conjugation_invariance(seed in any::<u64>()) {
            // f(Wφ) under X → W X W† is a relabelling of the Haar integral
            let mut rng = SeededRng::new(seed, 0);
            let cs = random_set(3, &mut rng);
            let w = sample_haar_unitary(3, &mut rng);
            let conj: Vec<CMatrix> = cs.composed().iter().map(|x| w.dot(x).dot(&w.dagger())).collect();
            let cs2 = CorrectionSet::from_composed(cs.basis().clone(), conj).unwrap();
            let a = closed_form_stats(&cs, 0.9).unwrap();
            let b = closed_form_stats(&cs2, 0.9).unwrap();
            prop_assert!(close(a.f, b.f, 1e-12) && close(a.dev, b.dev, 1e-12));
        }
    }
}
