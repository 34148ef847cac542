//! Witness wedges on the `(F, D)` plane.
//!
//! A point certifies a resource class when it crosses the line
//! `F + D/s_d = threshold`. The classical line sits at `F_cl = 2/(d+1)`, the
//! Bell line at `F_max(p_bv)`. Both share the slope `−s_d`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cmatrix::round_sig;
use crate::error::{Error, Result};
use crate::metrics::slope;

/// Margins within this distance of zero do not cross.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Built-in Bell-violation visibilities.
pub fn builtin_p_bv(d: usize) -> Option<f64> {
    match d {
        2 => Some(std::f64::consts::FRAC_1_SQRT_2),
        3 => Some(0.696),
        4 => Some(0.691),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    PaperTable,
    UserSupplied,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VisibilityThresholds {
    pub d: usize,
    pub p_c: f64,
    pub p_bv: f64,
    pub p_bv_source: ThresholdSource,
}

/// `p_c = 1/(d+1)` and `p_bv` from the table or the override. The
/// override wins when given.
pub fn thresholds(d: usize, p_bv_override: Option<f64>) -> Result<VisibilityThresholds> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!("need d >= 2, got {d}")));
    }
    let p_c = 1.0 / (d as f64 + 1.0);
    let (p_bv, p_bv_source) = match p_bv_override {
        Some(p) => {
            if !(p > p_c && p <= 1.0) {
                return Err(Error::InvalidThreshold(format!(
                    "p_bv = {p} must lie in (p_c, 1] = ({p_c}, 1]"
                )));
            }
            (p, ThresholdSource::UserSupplied)
        }
        None => match builtin_p_bv(d) {
            Some(p) => (p, ThresholdSource::PaperTable),
            None => {
                return Err(Error::MissingThreshold(format!(
                    "no built-in p_bv for d = {d}; supply one explicitly"
                )))
            }
        },
    };
    Ok(VisibilityThresholds {
        d,
        p_c,
        p_bv,
        p_bv_source,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WedgeGeometry {
    pub d: usize,
    pub s_d: f64,
    /// `−s_d`
    pub slope: f64,
    #[serde(rename = "F_cl")]
    pub f_cl: f64,
    #[serde(rename = "F_bv_max")]
    pub f_bv_max: f64,
}

pub fn wedge_geometry(t: &VisibilityThresholds) -> WedgeGeometry {
    let d = t.d as f64;
    let s_d = slope(t.d);
    WedgeGeometry {
        d: t.d,
        s_d,
        slope: -s_d,
        f_cl: 2.0 / (d + 1.0),
        f_bv_max: t.p_bv + (1.0 - t.p_bv) / d,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    InsideClassicalWedge,
    TeleportationAdvantage,
    BellNonlocal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WitnessVerdict {
    pub classification: Classification,
    /// `F + D/s_d − F_cl`
    pub margin_cl: f64,
    /// `F + D/s_d − F_bv_max`
    pub margin_bv: f64,
    pub p_lower_bound: f64,
}

fn check_point(f: f64, dev: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::OutOfRange(format!("F = {f} not in [0, 1]")));
    }
    if !(0.0..=0.5).contains(&dev) {
        return Err(Error::OutOfRange(format!("D = {dev} not in [0, 1/2]")));
    }
    Ok(())
}

pub fn classify(f: f64, dev: f64, g: &WedgeGeometry) -> Result<WitnessVerdict> {
    check_point(f, dev)?;
    let score = f + dev / g.s_d;
    let margin_cl = score - g.f_cl;
    let margin_bv = score - g.f_bv_max;
    let classification = if margin_bv > BOUNDARY_TOL {
        Classification::BellNonlocal
    } else if margin_cl > BOUNDARY_TOL {
        Classification::TeleportationAdvantage
    } else {
        Classification::InsideClassicalWedge
    };
    Ok(WitnessVerdict {
        classification,
        margin_cl,
        margin_bv,
        p_lower_bound: visibility_lower_bound(f, dev, g.d)?,
    })
}

/// Smallest visibility consistent with the point: the `p` solving
/// `F_max(p) = F + D/s_d`, clipped to `[0, 1]`.
pub fn visibility_lower_bound(f: f64, dev: f64, d: usize) -> Result<f64> {
    check_point(f, dev)?;
    if d < 2 {
        return Err(Error::InvalidDimension(format!("need d >= 2, got {d}")));
    }
    let df = d as f64;
    let p = (df * (f + dev / slope(d)) - 1.0) / (df - 1.0);
    Ok(p.clamp(0.0, 1.0))
}

/// Fidelities at which a point with deviation `D0` starts to certify each
/// class: `(F_cl − D0/s_d, F_bv_max − D0/s_d)`.
pub fn certification_fidelities(d0: f64, g: &WedgeGeometry) -> Result<(f64, f64)> {
    if d0.is_nan() || d0 < 0.0 {
        return Err(Error::OutOfRange(format!("D0 = {d0} must be >= 0")));
    }
    let shift = d0 / g.s_d;
    Ok((g.f_cl - shift, g.f_bv_max - shift))
}

/// The Bell wedge lies strictly inside the classical one.
pub fn inclusion_check(g: &WedgeGeometry) -> bool {
    g.f_bv_max > g.f_cl
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundaryPoint {
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "D_classical_line")]
    pub d_cl: f64,
    #[serde(rename = "D_bell_line")]
    pub d_bv: f64,
}

/// `n_points` values of `F` spaced evenly on `[1/d, 1]`, with the deviation on
/// each witness line, clamped at 0.
pub fn wedge_boundary_points(g: &WedgeGeometry, n_points: usize) -> Result<Vec<BoundaryPoint>> {
    if n_points < 2 {
        return Err(Error::OutOfRange(format!(
            "need at least 2 points, got {n_points}"
        )));
    }
    let lo = 1.0 / g.d as f64;
    let step = (1.0 - lo) / (n_points - 1) as f64;
    Ok((0..n_points)
        .map(|i| {
            let f = if i + 1 == n_points {
                1.0
            } else {
                lo + step * i as f64
            };
            BoundaryPoint {
                f,
                d_cl: (g.s_d * (g.f_cl - f)).max(0.0),
                d_bv: (g.s_d * (g.f_bv_max - f)).max(0.0),
            }
        })
        .collect())
}

pub const CSV_HEADER: &str = "F,D_classical_line,D_bell_line";

/// Writes the table with 12 significant digits per value.
pub fn write_boundary_csv<W: Write>(points: &[BoundaryPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for pt in points {
        writeln!(
            out,
            "{},{},{}",
            round_sig(pt.f, 12),
            round_sig(pt.d_cl, 12),
            round_sig(pt.d_bv, 12)
        )?;
    }
    Ok(())
}
