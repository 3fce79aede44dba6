//! Real-to-synthetic calibration of degradation levels.
//!
//! Both accuracy curves are first projected onto non-increasing sequences
//! (pool-adjacent-violators). Each real level's accuracy is then located on
//! the synthetic curve by piecewise-linear inversion, giving the synthetic
//! level expected to reproduce it. Gamma degrades on both sides of its
//! identity level 1.0, so its `g <= 1` and `g >= 1` branches are calibrated
//! as separate curves.

use serde::{Deserialize, Serialize};

use crate::degrade::Family;
use crate::error::{Error, Result};
use crate::lineup::{AccuracyCurve, CurvePoint};

/// Least-squares non-increasing fit of `ys` (equal weights).
pub fn pava_non_increasing(ys: &[f64]) -> Vec<f64> {
    // Blocks of (sum, count); merge while a later block's mean exceeds its predecessor's.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(ys.len());
    for &y in ys {
        blocks.push((y, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 >= s1 / c1 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s0 + s1, c0 + c1);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, c)| std::iter::repeat_n(s / c as f64, c))
        .collect()
}

/// Replaces accuracies with their non-increasing projection along severity.
pub fn fit_isotonic(curve: &AccuracyCurve) -> AccuracyCurve {
    let fitted = pava_non_increasing(&curve.accuracies());
    AccuracyCurve {
        points: curve
            .points
            .iter()
            .zip(fitted)
            .map(|(p, accuracy)| CurvePoint { accuracy, ..*p })
            .collect(),
        ..curve.clone()
    }
}

fn check_non_increasing(points: &[CurvePoint]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::param("cannot invert an empty curve"));
    }
    if let Some(w) = points.windows(2).find(|w| w[1].accuracy > w[0].accuracy) {
        return Err(Error::param(format!(
            "curve is not non-increasing: {} at level {} rises to {} at level {}",
            w[0].accuracy, w[0].level, w[1].accuracy, w[1].level
        )));
    }
    Ok(())
}

/// Level at which a non-increasing curve reaches accuracy `a`.
fn invert_points(points: &[CurvePoint], a: f64) -> Result<(f64, bool)> {
    check_non_increasing(points)?;
    let first = points[0];
    let last = points[points.len() - 1];
    if a > first.accuracy {
        return Ok((first.level, true));
    }
    if a < last.accuracy {
        return Ok((last.level, true));
    }
    // First knot at or below `a`; a flat run therefore resolves to its mildest level.
    let i = points
        .iter()
        .position(|p| p.accuracy <= a)
        .expect("a >= last accuracy");
    let p1 = points[i];
    if p1.accuracy == a || i == 0 {
        return Ok((p1.level, false));
    }
    let p0 = points[i - 1];
    let t = (a - p0.accuracy) / (p1.accuracy - p0.accuracy);
    Ok((p0.level + t * (p1.level - p0.level), false))
}

/// Inverts a non-increasing curve: the level whose interpolated accuracy is `a`.
///
/// Accuracies above the curve clamp to the first level, below it to the last.
pub fn invert_accuracy(curve: &AccuracyCurve, a: f64) -> Result<(f64, bool)> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::param(format!("accuracy {a} outside [0, 1]")));
    }
    invert_points(&curve.points, a)
}

/// Piecewise-linear accuracy at `level`, searching segments in severity order.
fn accuracy_at(points: &[CurvePoint], level: f64) -> Option<f64> {
    if let Some(p) = points.iter().find(|p| p.level == level) {
        return Some(p.accuracy);
    }
    points.windows(2).find_map(|w| {
        let (lo, hi) = (w[0].level.min(w[1].level), w[0].level.max(w[1].level));
        (lo < level && level < hi).then(|| {
            let t = (level - w[0].level) / (w[1].level - w[0].level);
            w[0].accuracy + t * (w[1].accuracy - w[0].accuracy)
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub real_level: f64,
    pub calibrated_level: f64,
    pub target_accuracy: f64,
    pub achieved_accuracy: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub family: Family,
    /// In the real curve's severity order.
    pub rows: Vec<CalibrationRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Whole,
    Below,
    Above,
}

/// Points of one severity branch, ordered mildest first.
fn branch_points(curve: &AccuracyCurve, branch: Branch) -> Vec<CurvePoint> {
    let mut pts: Vec<CurvePoint> = match branch {
        Branch::Whole => return curve.points.clone(),
        Branch::Below => curve.points.iter().filter(|p| p.level <= 1.0).copied().collect(),
        Branch::Above => curve.points.iter().filter(|p| p.level >= 1.0).copied().collect(),
    };
    match branch {
        Branch::Below => pts.sort_by(|a, b| b.level.total_cmp(&a.level)),
        _ => pts.sort_by(|a, b| a.level.total_cmp(&b.level)),
    }
    pts
}

fn branches(family: Family) -> &'static [Branch] {
    match family {
        Family::Gamma => &[Branch::Below, Branch::Above],
        _ => &[Branch::Whole],
    }
}

fn branch_of(family: Family, level: f64) -> Branch {
    match family {
        Family::Gamma if level < 1.0 => Branch::Below,
        Family::Gamma => Branch::Above,
        _ => Branch::Whole,
    }
}

fn project(points: Vec<CurvePoint>) -> Vec<CurvePoint> {
    let acc: Vec<f64> = points.iter().map(|p| p.accuracy).collect();
    points
        .into_iter()
        .zip(pava_non_increasing(&acc))
        .map(|(p, accuracy)| CurvePoint { accuracy, ..p })
        .collect()
}

/// Maps every real level to the synthetic level with matching accuracy.
pub fn build_table(real: &AccuracyCurve, synth: &AccuracyCurve) -> Result<CalibrationTable> {
    if real.family != synth.family {
        return Err(Error::param(format!(
            "cannot calibrate a {} curve against a {} curve",
            real.family, synth.family
        )));
    }
    real.validate()?;
    synth.validate()?;
    let family = real.family;

    let mut real_fit = Vec::new();
    let mut synth_fit = Vec::new();
    for &b in branches(family) {
        real_fit.push((b, project(branch_points(real, b))));
        synth_fit.push((b, project(branch_points(synth, b))));
    }
    let lookup = |fits: &[(Branch, Vec<CurvePoint>)], b: Branch| -> Vec<CurvePoint> {
        fits.iter().find(|(k, _)| *k == b).map(|(_, v)| v.clone()).unwrap_or_default()
    };

    let mut rows = Vec::with_capacity(real.points.len());
    for p in &real.points {
        let b = branch_of(family, p.level);
        let real_pts = lookup(&real_fit, b);
        let synth_pts = lookup(&synth_fit, b);
        if synth_pts.is_empty() {
            return Err(Error::param(format!(
                "synthetic {family} curve has no levels on the branch containing {}",
                p.level
            )));
        }
        let target = real_pts
            .iter()
            .find(|q| q.level == p.level)
            .map(|q| q.accuracy)
            .expect("real point lies on its own branch");
        let (level, clamped) = invert_points(&synth_pts, target)?;
        let achieved = accuracy_at(&synth_pts, level).expect("inverted level lies on the curve");
        rows.push(CalibrationRow {
            real_level: p.level,
            calibrated_level: level,
            target_accuracy: target,
            achieved_accuracy: achieved,
            clamped,
        });
    }
    Ok(CalibrationTable { family, rows })
}

/// Synthetic level for `real_level`, interpolating linearly between table rows.
pub fn apply_table(table: &CalibrationTable, real_level: f64) -> Result<f64> {
    let mut rows = table.rows.clone();
    rows.sort_by(|a, b| a.real_level.total_cmp(&b.real_level));
    let (Some(lo), Some(hi)) = (rows.first(), rows.last()) else {
        return Err(Error::Range("calibration table is empty".into()));
    };
    if !(lo.real_level..=hi.real_level).contains(&real_level) {
        return Err(Error::Range(format!(
            "{} level {real_level} outside calibrated range [{}, {}]",
            table.family, lo.real_level, hi.real_level
        )));
    }
    if let Some(r) = rows.iter().find(|r| r.real_level == real_level) {
        return Ok(r.calibrated_level);
    }
    let w = rows
        .windows(2)
        .find(|w| w[0].real_level < real_level && real_level < w[1].real_level)
        .expect("level within range and not a row");
    let t = (real_level - w[0].real_level) / (w[1].real_level - w[0].real_level);
    Ok(w[0].calibrated_level + t * (w[1].calibrated_level - w[0].calibrated_level))
}

impl CalibrationTable {
    /// The calibrated series: achieved synthetic accuracy at each real level.
    pub fn as_curve(&self, dataset_id: &str, n_probes: usize) -> AccuracyCurve {
        AccuracyCurve {
            family: self.family,
            dataset_id: dataset_id.to_string(),
            points: self
                .rows
                .iter()
                .map(|r| CurvePoint {
                    level: r.real_level,
                    accuracy: r.achieved_accuracy,
                    n_probes,
                })
                .collect(),
        }
    }
}
