//! Plausibility contours and their α-cuts.
//!
//! A contour is any function ϑ ↦ π(ϑ) ∈ [0, 1] that is maximal at a known
//! centre and non-increasing away from it. The 100(1−α)% prediction
//! interval is the super-level set {ϑ : π(ϑ) ≥ α}.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TargetKind;

/// Interval construction method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Oracle,
    StudentT,
    Satterthwaite,
    GenSatterthwaite,
    JointIm,
    AdjJointIm,
    GenIm,
    AdjGenIm,
    PlugInGenIm,
    ParametricBootstrap,
    NonparametricBootstrap,
    IidNormal,
    Contour,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::StudentT => "student-t",
            Method::Satterthwaite => "satterthwaite",
            Method::GenSatterthwaite => "gen-satterthwaite",
            Method::JointIm => "joint-im",
            Method::AdjJointIm => "adj-joint-im",
            Method::GenIm => "gen-im",
            Method::AdjGenIm => "adj-gen-im",
            Method::PlugInGenIm => "plug-in-gen-im",
            Method::ParametricBootstrap => "parametric-bootstrap",
            Method::NonparametricBootstrap => "nonparametric-bootstrap",
            Method::IidNormal => "iid-normal",
            Method::Contour => "contour",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|m| m.label() == s)
    }

    pub const ALL: [Method; 13] = [
        Method::Oracle,
        Method::StudentT,
        Method::Satterthwaite,
        Method::GenSatterthwaite,
        Method::JointIm,
        Method::AdjJointIm,
        Method::GenIm,
        Method::AdjGenIm,
        Method::PlugInGenIm,
        Method::ParametricBootstrap,
        Method::NonparametricBootstrap,
        Method::IidNormal,
        Method::Contour,
    ];
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Method-specific details attached to an interval.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failures: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cut_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_plausibility: Option<f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub grid_fallback: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// A method-tagged prediction interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub method: Method,
    pub kind: TargetKind,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub diagnostics: Diagnostics,
}

impl IntervalReport {
    pub fn new(method: Method, kind: TargetKind, level: f64, lower: f64, upper: f64) -> Self {
        debug_assert!(lower <= upper, "lower {lower} > upper {upper}");
        Self {
            method,
            kind,
            level,
            lower,
            upper,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn with_diagnostics(mut self, diagnostics: Diagnostics) -> Self {
        self.diagnostics = diagnostics;
        self
    }
}

/// Evaluable plausibility contour for a scalar target.
///
/// Implementations must be safe to evaluate concurrently.
pub trait Contour: Sync {
    fn plausibility(&self, theta: f64) -> f64;

    /// Point of maximal plausibility.
    fn center(&self) -> f64;

    /// Natural length scale, used to bracket the cut and set tolerances.
    fn scale(&self) -> f64;

    fn method(&self) -> Method {
        Method::Contour
    }

    fn kind(&self) -> TargetKind {
        TargetKind::GroupMean
    }

    /// Nuisance value attaining the plausibility, for contours that are
    /// maxima over a grid.
    fn argmax_rho(&self, _theta: f64) -> Option<f64> {
        None
    }
}

/// Contour backed by a closure, mostly useful in tests and for ad-hoc
/// contours.
pub struct FnContour<F> {
    pub f: F,
    pub center: f64,
    pub scale: f64,
}

impl<F: Fn(f64) -> f64 + Sync> Contour for FnContour<F> {
    fn plausibility(&self, theta: f64) -> f64 {
        (self.f)(theta)
    }
    fn center(&self) -> f64 {
        self.center
    }
    fn scale(&self) -> f64 {
        self.scale
    }
}

/// How the cut level relates to the reported nominal level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelMode {
    /// Cut at α, report 1−α.
    Nominal,
    /// Cut at 2α and report 1−α, treating the joint (θ, ρ) region as a
    /// product of two intervals.
    JointAdjusted,
}

const BISECTION_RTOL: f64 = 1e-12;
const MONOTONE_SAMPLES: usize = 48;
const FALLBACK_GRID: usize = 2001;

/// Reject α outside (0, 1).
pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha = {alpha} is not in (0, 1)")))
    }
}

/// The α-cut {ϑ : π(ϑ) ≥ α} of a unimodal contour.
///
/// Each endpoint is bracketed by doubling the distance from the centre until
/// the contour drops below the cut level, then refined by bisection. If the
/// contour is not monotone on the bracket, a tabulated grid is smoothed by
/// isotonic regression and cut instead; the report flags this.
pub fn alpha_cut<C: Contour + ?Sized>(
    contour: &C,
    alpha: f64,
    mode: LevelMode,
) -> Result<IntervalReport> {
    check_alpha(alpha)?;
    let cut = match mode {
        LevelMode::Nominal => alpha,
        LevelMode::JointAdjusted => 2.0 * alpha,
    };
    if cut >= 1.0 {
        return Err(Error::Domain(format!("cut level {cut} is not below 1")));
    }
    let center = contour.center();
    let max = contour.plausibility(center);
    if max < cut {
        return Err(Error::EmptyCut { alpha: cut, max });
    }
    let mut diagnostics = Diagnostics {
        cut_alpha: Some(cut),
        max_plausibility: Some(max),
        ..Diagnostics::default()
    };
    let scale = contour.scale();
    let (lower, upper) = if scale <= 0.0 || !scale.is_finite() {
        (center, center)
    } else {
        let left = bracket(contour, center, scale, -1.0, cut)?;
        let right = bracket(contour, center, scale, 1.0, cut)?;
        let monotone =
            is_monotone(contour, center, -1.0, left) && is_monotone(contour, center, 1.0, right);
        if monotone {
            (
                center - bisect(contour, center, scale, -1.0, cut, left),
                center + bisect(contour, center, scale, 1.0, cut, right),
            )
        } else {
            diagnostics.grid_fallback = true;
            diagnostics
                .warnings
                .push("contour not monotone on bracket; cut taken from smoothed grid".into());
            grid_cut(contour, center, cut, left, right)
        }
    };
    Ok(
        IntervalReport::new(contour.method(), contour.kind(), 1.0 - alpha, lower, upper)
            .with_diagnostics(diagnostics),
    )
}

/// Distance from the centre at which the contour is first seen below `cut`.
fn bracket<C: Contour + ?Sized>(
    contour: &C,
    center: f64,
    scale: f64,
    side: f64,
    cut: f64,
) -> Result<f64> {
    let mut d = scale;
    for _ in 0..200 {
        if contour.plausibility(center + side * d) < cut {
            return Ok(d);
        }
        d *= 2.0;
    }
    Err(Error::Bracket(format!(
        "plausibility stays above {cut} out to distance {d:e}"
    )))
}

fn is_monotone<C: Contour + ?Sized>(contour: &C, center: f64, side: f64, reach: f64) -> bool {
    let mut prev = contour.plausibility(center);
    for i in 1..=MONOTONE_SAMPLES {
        let d = reach * i as f64 / MONOTONE_SAMPLES as f64;
        let value = contour.plausibility(center + side * d);
        if value > prev + 1e-12 {
            return false;
        }
        prev = value;
    }
    true
}

fn bisect<C: Contour + ?Sized>(
    contour: &C,
    center: f64,
    scale: f64,
    side: f64,
    cut: f64,
    outside: f64,
) -> f64 {
    let (mut inside, mut outside) = (0.0, outside);
    let tol = BISECTION_RTOL * scale;
    while outside - inside > tol {
        let mid = 0.5 * (inside + outside);
        if mid <= inside || mid >= outside {
            break;
        }
        if contour.plausibility(center + side * mid) >= cut {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    inside
}

fn grid_cut<C: Contour + ?Sized>(
    contour: &C,
    center: f64,
    cut: f64,
    left: f64,
    right: f64,
) -> (f64, f64) {
    let half = FALLBACK_GRID / 2;
    let side_cut = |reach: f64, side: f64| {
        let dists: Vec<f64> = (0..=half).map(|i| reach * i as f64 / half as f64).collect();
        let raw: Vec<f64> = dists
            .iter()
            .map(|&d| contour.plausibility(center + side * d))
            .collect();
        let smooth = isotonic_decreasing(&raw);
        let mut last = 0;
        for (i, &v) in smooth.iter().enumerate() {
            if v >= cut {
                last = i;
            }
        }
        if last + 1 < smooth.len() && smooth[last] > smooth[last + 1] {
            let frac = (smooth[last] - cut) / (smooth[last] - smooth[last + 1]);
            dists[last] + frac.clamp(0.0, 1.0) * (dists[last + 1] - dists[last])
        } else {
            dists[last]
        }
    };
    (center - side_cut(left, -1.0), center + side_cut(right, 1.0))
}

/// Least-squares non-increasing fit (pool-adjacent-violators).
pub fn isotonic_decreasing(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, w2) = blocks[blocks.len() - 1];
            let (m1, w1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().unwrap() = ((m1 * w1 as f64 + m2 * w2 as f64) / w as f64, w);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, w)| std::iter::repeat_n(m, w))
        .collect()
}

/// One row of an exported contour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourRow {
    pub theta: f64,
    pub plausibility: f64,
    pub argmax_rho: Option<f64>,
}

/// Evaluate a contour on a grid, e.g. for export or plotting.
pub fn tabulate<C: Contour + ?Sized>(contour: &C, grid: &[f64]) -> Vec<ContourRow> {
    grid.iter()
        .map(|&theta| ContourRow {
            theta,
            plausibility: contour.plausibility(theta),
            argmax_rho: contour.argmax_rho(theta),
        })
        .collect()
}

/// Write rows as CSV with columns theta, plausibility, argmax_rho (empty
/// when not applicable).
pub fn write_contour_csv<W: std::io::Write>(writer: W, rows: &[ContourRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["theta", "plausibility", "argmax_rho"])?;
    for r in rows {
        w.write_record([
            r.theta.to_string(),
            r.plausibility.to_string(),
            r.argmax_rho.map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Equally spaced grid of `points` values spanning centre ± `half_widths`
/// scales. With an odd count the middle point is the centre.
pub fn default_grid<C: Contour + ?Sized>(contour: &C, half_widths: f64, points: usize) -> Vec<f64> {
    let c = contour.center();
    let s = contour.scale().max(f64::MIN_POSITIVE);
    let last = (points.max(2) - 1) as f64;
    // Written about the centre so an odd grid hits it exactly.
    (0..points)
        .map(|i| c + half_widths * s * (2.0 * i as f64 / last - 1.0))
        .collect()
}
