//! CSV, JSON and SVG outputs. Every writer is a deterministic function of its
//! inputs and publishes files by write-to-temp then rename.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::CalibrationTable;
use crate::degrade::Family;
use crate::error::{Error, Result};
use crate::lineup::{AccuracyCurve, EvalResult, SubgroupRow};
use crate::stats::CHANCE;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::param(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Rounds half-to-even at 4 decimals.
pub fn round4(x: f64) -> f64 {
    (x * 1e4).round_ties_even() / 1e4
}

/// Accuracy as written to CSV.
pub fn fmt_acc(x: f64) -> String {
    format!("{:.4}", round4(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Series {
    Real,
    Synthetic,
    Calibrated,
}

impl Series {
    pub fn as_str(self) -> &'static str {
        match self {
            Series::Real => "real",
            Series::Synthetic => "synthetic",
            Series::Calibrated => "calibrated",
        }
    }

    fn colour(self) -> &'static str {
        match self {
            Series::Real => "#1f4fd1",
            Series::Synthetic => "#d62728",
            Series::Calibrated => "#c21dc2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedCurve {
    pub series: Series,
    pub curve: AccuracyCurve,
}

/// One row of the scene-condition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub condition: String,
    pub accuracy: f64,
    pub n: usize,
}

impl SceneRow {
    pub fn from_result(condition: impl Into<String>, r: &EvalResult) -> Self {
        Self {
            condition: condition.into(),
            accuracy: r.accuracy,
            n: r.n_probes,
        }
    }
}

/// Scene conditions in reporting order.
pub const SCENE_CONDITIONS: [&str; 5] = ["baseline", "occluded", "rotated", "low_light", "all_three"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub backend_id: String,
    pub curves: Vec<TaggedCurve>,
    pub subgroups: Vec<SubgroupRow>,
    pub scene: Vec<SceneRow>,
}

impl ReportBundle {
    pub fn families(&self) -> Vec<Family> {
        let mut f: Vec<Family> = self.curves.iter().map(|c| c.curve.family).collect();
        f.sort();
        f.dedup();
        f
    }

    /// Curves ordered by (series, family); points keep severity order.
    fn ordered(&self) -> Vec<&TaggedCurve> {
        let mut c: Vec<&TaggedCurve> = self.curves.iter().collect();
        c.sort_by_key(|t| (t.series, t.curve.family));
        c
    }
}

pub fn results_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("series,family,level,accuracy,n\n");
    for t in bundle.ordered() {
        for p in &t.curve.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                t.series.as_str(),
                t.curve.family,
                p.level,
                fmt_acc(p.accuracy),
                p.n_probes
            );
        }
    }
    out
}

/// `series,family,level,accuracy,n`, one row per curve point.
pub fn write_results_csv(bundle: &ReportBundle, path: &Path) -> Result<()> {
    atomic_write(path, results_csv(bundle).as_bytes())
}

pub fn subgroups_csv(rows: &[SubgroupRow]) -> String {
    let mut out = String::from("key,group,accuracy,n\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.key, r.group, fmt_acc(r.accuracy), r.n);
    }
    out
}

pub fn calibration_csv(tables: &[CalibrationTable]) -> String {
    let mut out = String::from("family,real_level,calibrated_level,target_acc,achieved_acc,clamped\n");
    for t in tables {
        for r in &t.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                t.family,
                r.real_level,
                r.calibrated_level,
                fmt_acc(r.target_accuracy),
                fmt_acc(r.achieved_accuracy),
                r.clamped
            );
        }
    }
    out
}

pub fn scene_csv(rows: &[SceneRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::param("scene table needs at least one condition"));
    }
    let mut out = String::from("condition,accuracy,n\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.condition, fmt_acc(r.accuracy), r.n);
    }
    Ok(out)
}

/// `condition,accuracy,n` for each condition, in the given order.
pub fn write_scene_table(rows: &[SceneRow], path: &Path) -> Result<()> {
    atomic_write(path, scene_csv(rows)?.as_bytes())
}

/// Parses the `accuracy` column of a CSV written by this module.
pub fn parse_accuracy_column(csv: &str) -> Result<Vec<f64>> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == "accuracy")
        .ok_or_else(|| Error::param("no accuracy column"))?;
    lines
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: i + 2,
                    message: "bad accuracy value".into(),
                })
        })
        .collect()
}

/// Plot geometry, in SVG user units.
pub mod layout {
    pub const WIDTH: f64 = 480.0;
    pub const HEIGHT: f64 = 360.0;
    pub const LEFT: f64 = 60.0;
    pub const RIGHT: f64 = 20.0;
    pub const TOP: f64 = 40.0;
    pub const BOTTOM: f64 = 50.0;

    pub fn plot_height() -> f64 {
        HEIGHT - TOP - BOTTOM
    }

    pub fn plot_width() -> f64 {
        WIDTH - LEFT - RIGHT
    }

    /// Vertical coordinate of an accuracy in `[0, 1]`.
    pub fn y_of(accuracy: f64) -> f64 {
        TOP + (1.0 - accuracy) * plot_height()
    }

    /// Inverse of [`y_of`].
    pub fn accuracy_of(y: f64) -> f64 {
        1.0 - (y - TOP) / plot_height()
    }

    /// Horizontal coordinate of severity index `i` among `n` ticks.
    pub fn x_of(i: usize, n: usize) -> f64 {
        if n <= 1 {
            LEFT + plot_width() / 2.0
        } else {
            LEFT + plot_width() * i as f64 / (n - 1) as f64
        }
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Accuracy against severity index for every series of `family`.
pub fn curves_svg(bundle: &ReportBundle, family: Family) -> Result<String> {
    use layout::*;
    let curves: Vec<&TaggedCurve> = bundle
        .ordered()
        .into_iter()
        .filter(|t| t.curve.family == family)
        .collect();
    let Some(axis) = curves
        .iter()
        .find(|t| t.series != Series::Calibrated)
        .or(curves.first())
    else {
        return Err(Error::param(format!("no {family} curve in report bundle")));
    };
    let ticks = axis.curve.levels();
    let n = curves
        .iter()
        .map(|t| t.curve.points.len())
        .max()
        .unwrap_or(0)
        .max(ticks.len());

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        esc(family.as_str())
    );
    // Axes.
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, y_of(0.0), y_of(1.0));
    let _ = writeln!(s, r#"<line class="axis" x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line class="axis" x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#);
    for k in 0..=5 {
        let a = k as f64 / 5.0;
        let y = y_of(a);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{a:.1}</text>"#, x0 - 6.0, y + 4.0);
    }
    for (i, level) in ticks.iter().enumerate() {
        let x = x_of(i, n);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 4.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{level}</text>"#, y0 + 16.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{} level</text>"#,
        LEFT + plot_width() / 2.0,
        HEIGHT - 8.0,
        esc(family.as_str())
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">accuracy</text>"#,
        TOP + plot_height() / 2.0,
        TOP + plot_height() / 2.0
    );
    // Chance.
    let yc = y_of(CHANCE);
    let _ = writeln!(
        s,
        r#"<line class="chance" x1="{x0:.2}" y1="{yc:.4}" x2="{x1:.2}" y2="{yc:.4}" stroke="gray" stroke-dasharray="6 4"/>"#
    );
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" fill="gray">chance</text>"#, x1, yc - 4.0);

    for (k, t) in curves.iter().enumerate() {
        let colour = t.series.colour();
        let pts: Vec<(f64, f64)> = t
            .curve
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (x_of(i, n), y_of(p.accuracy)))
            .collect();
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series-{}" points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            t.series.as_str(),
            coords.join(" ")
        );
        let fill = if t.series == Series::Calibrated { "none" } else { colour };
        for (x, y) in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{fill}" stroke="{colour}" stroke-width="1.5"/>"#
            );
        }
        let ly = TOP + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{fill}" stroke="{colour}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            x1 - 90.0,
            ly,
            x1 - 82.0,
            ly + 4.0,
            t.series.as_str()
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes the accuracy plot for `family` as SVG.
pub fn render_curves_svg(bundle: &ReportBundle, family: Family, path: &Path) -> Result<()> {
    atomic_write(path, curves_svg(bundle, family)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineup::CurvePoint;

    fn curve(family: Family, accs: &[f64]) -> AccuracyCurve {
        AccuracyCurve {
            family,
            dataset_id: "d".into(),
            points: family
                .default_levels()
                .into_iter()
                .zip(accs)
                .map(|(level, &accuracy)| CurvePoint { level, accuracy, n_probes: 160 })
                .collect(),
        }
    }

    fn bundle() -> ReportBundle {
        ReportBundle {
            backend_id: "b".into(),
            curves: vec![
                TaggedCurve { series: Series::Synthetic, curve: curve(Family::Blur, &[0.9, 0.8, 0.6, 0.4, 0.3]) },
                TaggedCurve { series: Series::Real, curve: curve(Family::Blur, &[0.8, 0.7, 0.5, 0.35, 0.25]) },
                TaggedCurve { series: Series::Real, curve: curve(Family::Jpeg, &[0.8, 0.7, 0.6, 0.5, 0.4]) },
            ],
            ..ReportBundle::default()
        }
    }

    #[test]
    fn empty_bundle_header_only() {
        assert_eq!(results_csv(&ReportBundle::default()), "series,family,level,accuracy,n\n");
    }

    #[test]
    fn results_rows_ordered() {
        let csv = results_csv(&bundle());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 15);
        assert_eq!(lines[1], "real,blur,1,0.8000,160");
        assert!(lines[6].starts_with("real,jpeg,0.9,"));
        assert!(lines[11].starts_with("synthetic,blur,1,"));
    }

    #[test]
    fn rounding_half_even() {
        assert_eq!(fmt_acc(0.5), "0.5000");
        assert_eq!(fmt_acc(2.0 / 3.0), "0.6667");
        assert_eq!(fmt_acc(0.123_45), "0.1234");
        assert_eq!(fmt_acc(0.123_55), "0.1236");
        assert_eq!(fmt_acc(1.0 / 6.0), "0.1667");
    }

    #[test]
    fn svg_chance_line_and_structure() {
        let mut b = bundle();
        b.curves.retain(|c| c.curve.family == Family::Jpeg);
        let svg = curves_svg(&b, Family::Jpeg).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let line = svg.lines().find(|l| l.contains(r#"class="chance""#)).unwrap();
        let y: f64 = line.split("y1=\"").nth(1).unwrap().split('"').next().unwrap().parse().unwrap();
        assert!((layout::accuracy_of(y) - 0.1667).abs() < 1e-4);
        assert!(line.contains("stroke-dasharray"));
        assert!(curves_svg(&b, Family::Blur).is_err());
        assert_eq!(curves_svg(&b, Family::Jpeg).unwrap(), svg);
    }

    #[test]
    fn svg_calibrated_markers_open() {
        let mut b = bundle();
        b.curves.push(TaggedCurve { series: Series::Calibrated, curve: curve(Family::Blur, &[0.8, 0.7, 0.5, 0.36, 0.2]) });
        let svg = curves_svg(&b, Family::Blur).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains(r##"fill="none" stroke="#c21dc2""##));
        assert!(svg.contains(r##"fill="#1f4fd1""##));
    }

    #[test]
    fn scene_table_format() {
        // FaceNet row values, as a layout fixture.
        let rows: Vec<SceneRow> = SCENE_CONDITIONS
            .iter()
            .zip([0.731, 0.682, 0.705, 0.751, 0.631])
            .map(|(c, a)| SceneRow { condition: c.to_string(), accuracy: a, n: 1000 })
            .collect();
        let csv = scene_csv(&rows).unwrap();
        assert_eq!(
            csv,
            "condition,accuracy,n\nbaseline,0.7310,1000\noccluded,0.6820,1000\nrotated,0.7050,1000\nlow_light,0.7510,1000\nall_three,0.6310,1000\n"
        );
        assert_eq!(parse_accuracy_column(&csv).unwrap(), vec![0.731, 0.682, 0.705, 0.751, 0.631]);
        assert_eq!(scene_csv(&rows[..1]).unwrap().lines().count(), 2);
        assert!(scene_csv(&[]).is_err());
    }

    #[test]
    fn subgroup_layout_fixture() {
        let rows = vec![SubgroupRow { key: "race".into(), group: "white".into(), accuracy: 0.810, n: 1659 }];
        assert_eq!(subgroups_csv(&rows), "key,group,accuracy,n\nrace,white,0.8100,1659\n");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.csv");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    proptest::proptest! {
        #[test]
        fn accuracy_round_trips_at_four_decimals(x in 0.0f64..=1.0) {
            let csv = scene_csv(&[SceneRow { condition: "c".into(), accuracy: x, n: 1 }]).unwrap();
            proptest::prop_assert_eq!(parse_accuracy_column(&csv).unwrap()[0], round4(x));
        }
    }
}
