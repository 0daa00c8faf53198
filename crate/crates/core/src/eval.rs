//! Trajectory evaluation: association, rigid alignment, absolute trajectory
//! error statistics, comparison tables and SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::associate_timestamps;
use crate::geometry::{fit_rigid, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("point sets are degenerate (fewer than 3 points or collinear)")]
    DegenerateGeometry,
    #[error("length mismatch: {0} estimated vs {1} ground-truth points")]
    LengthMismatch(usize, usize),
    #[error("only {0} associated pose pairs, need at least 3")]
    TooFewAssociations(usize),
    #[error("baseline RMSE must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("failed to write {path}: {detail}")]
    WriteFailure { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ATEStats {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub pair_count: usize,
}

/// Statistics over per-pose errors. The median of an even count is the
/// lower-middle element, and SD is the population standard deviation.
pub fn ate_statistics(errors: &[f64]) -> ATEStats {
    let n = errors.len();
    if n == 0 {
        return ATEStats {
            rmse: 0.0,
            mean: 0.0,
            median: 0.0,
            sd: 0.0,
            pair_count: 0,
        };
    }
    let nf = n as f64;
    let mean = errors.iter().sum::<f64>() / nf;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / nf).sqrt();
    let sd = (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / nf).sqrt();
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(n - 1) / 2];
    ATEStats {
        rmse,
        mean,
        median,
        sd,
        pair_count: n,
    }
}

/// Least-squares rigid transform (no scale) taking `est` onto `gt`.
pub fn align_rigid(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Pose, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch(est.len(), gt.len()));
    }
    if est.len() < 3 {
        return Err(EvalError::DegenerateGeometry);
    }
    fit_rigid(est, gt).ok_or(EvalError::DegenerateGeometry)
}

/// Everything computed on the way to [`ATEStats`].
#[derive(Debug, Clone, PartialEq)]
pub struct AteResult {
    pub stats: ATEStats,
    /// Maps estimated positions onto the ground-truth frame.
    pub alignment: Pose,
    /// `(index into est, index into gt)` per associated pair.
    pub pairs: Vec<(usize, usize)>,
    pub errors: Vec<f64>,
}

pub fn compute_ate_detailed(
    est: &[(f64, Pose)],
    gt: &[(f64, Pose)],
    max_difference: f64,
) -> Result<AteResult, EvalError> {
    let est_ts: Vec<f64> = est.iter().map(|(t, _)| *t).collect();
    let gt_ts: Vec<f64> = gt.iter().map(|(t, _)| *t).collect();
    let assoc = associate_timestamps(&est_ts, &gt_ts, max_difference);
    if assoc.len() < 3 {
        return Err(EvalError::TooFewAssociations(assoc.len()));
    }
    let pairs: Vec<(usize, usize)> = assoc.iter().map(|a| (a.index_a, a.index_b)).collect();
    let src: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| *est[i].1.translation()).collect();
    let dst: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| *gt[j].1.translation()).collect();
    let alignment = align_rigid(&src, &dst)?;
    let errors: Vec<f64> = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (alignment.transform_point(s) - d).norm())
        .collect();
    Ok(AteResult {
        stats: ate_statistics(&errors),
        alignment,
        pairs,
        errors,
    })
}

pub fn compute_ate(est: &[(f64, Pose)], gt: &[(f64, Pose)], max_difference: f64) -> Result<ATEStats, EvalError> {
    compute_ate_detailed(est, gt, max_difference).map(|r| r.stats)
}

/// Relative RMSE improvement in percent. A failed baseline (`None`) counts
/// as a full 100 % improvement.
pub fn rmse_boost(baseline_rmse: Option<f64>, candidate_rmse: f64) -> Result<f64, EvalError> {
    match baseline_rmse {
        None => Ok(100.0),
        Some(b) if !(b > 0.0) => Err(EvalError::NonPositiveBaseline(b)),
        Some(b) => Ok(100.0 * (b - candidate_rmse) / b),
    }
}

/// Rounds half away from zero at `decimals` places. The value is first
/// written with 9 decimals, so binary noise such as `4.7324999…93` rounds
/// like the decimal it stands for.
pub fn render_fixed(x: f64, decimals: u32) -> String {
    let d = decimals.min(9) as usize;
    let text = format!("{:.9}", x.abs());
    let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
    let mut digits: Vec<u8> = int_part
        .bytes()
        .chain(frac_part.bytes().take(d))
        .map(|b| b - b'0')
        .collect();
    if frac_part.as_bytes().get(d).is_some_and(|&b| b >= b'5') {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - d;
    let mut out = String::new();
    if x.is_sign_negative() && digits.iter().any(|&g| g != 0) {
        out.push('-');
    }
    out.extend(digits[..split].iter().map(|g| (g + b'0') as char));
    if d > 0 {
        out.push('.');
        out.extend(digits[split..].iter().map(|g| (g + b'0') as char));
    }
    out
}

pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    render_fixed(x, decimals).parse().unwrap_or(x)
}

/// One sequence of a baseline-versus-candidate comparison. `None` marks a
/// failed run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub sequence: String,
    pub baseline: Option<ATEStats>,
    pub candidate: Option<ATEStats>,
    pub rmse_boost_percent: Option<f64>,
}

impl ComparisonRow {
    pub fn new(sequence: impl Into<String>, baseline: Option<ATEStats>, candidate: Option<ATEStats>) -> Self {
        let rmse_boost_percent = candidate.and_then(|c| rmse_boost(baseline.map(|b| b.rmse), c.rmse).ok());
        Self {
            sequence: sequence.into(),
            baseline,
            candidate,
            rmse_boost_percent,
        }
    }

    /// Numeric cells in [`COMPARISON_COLUMNS`] order; unknown values are `None`.
    pub fn values(&self) -> [Option<f64>; 9] {
        let finite = |v: f64| v.is_finite().then_some(v);
        let stats = |s: Option<ATEStats>| match s {
            Some(s) => [finite(s.rmse), finite(s.mean), finite(s.median), finite(s.sd)],
            None => [None; 4],
        };
        let [b0, b1, b2, b3] = stats(self.baseline);
        let [c0, c1, c2, c3] = stats(self.candidate);
        [b0, b1, b2, b3, c0, c1, c2, c3, self.rmse_boost_percent]
    }
}

pub const COMPARISON_COLUMNS: [&str; 9] = [
    "base_rmse",
    "base_mean",
    "base_median",
    "base_sd",
    "cand_rmse",
    "cand_mean",
    "cand_median",
    "cand_sd",
    "rmse_boost",
];

/// Arithmetic mean of the present values; `None` when all are missing.
pub fn mean_present(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<ComparisonRow>,
    pub average: [Option<f64>; 9],
    /// `(column, sequence)` cells left out of the averages.
    pub excluded: Vec<(String, String)>,
}

/// Appends the average of every column over the rows that have a value.
pub fn summarize_table(rows: &[ComparisonRow]) -> SummaryTable {
    let mut average = [None; 9];
    let mut excluded = Vec::new();
    for (c, name) in COMPARISON_COLUMNS.iter().enumerate() {
        average[c] = mean_present(rows.iter().map(|r| r.values()[c]));
        for r in rows {
            if r.values()[c].is_none() {
                excluded.push((name.to_string(), r.sequence.clone()));
            }
        }
    }
    SummaryTable {
        rows: rows.to_vec(),
        average,
        excluded,
    }
}

fn cell(v: Option<f64>, decimals: u32) -> String {
    v.map_or_else(|| "x".to_string(), |x| render_fixed(x, decimals))
}

fn summary_cells(values: &[Option<f64>; 9]) -> Vec<String> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| cell(*v, if i == 8 { 2 } else { 3 }))
        .collect()
}

fn aligned_table(header: &[String], body: &[Vec<String>]) -> String {
    let cols = header.len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            body.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in std::iter::once(header).chain(body.iter().map(|r| r.as_slice())) {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{:<w$}", s, w = widths[c])
                } else {
                    format!("{:>w$}", s, w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

impl SummaryTable {
    fn body(&self) -> Vec<Vec<String>> {
        let mut body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut line = vec![r.sequence.clone()];
                line.extend(summary_cells(&r.values()));
                line
            })
            .collect();
        let mut avg = vec!["Avg.".to_string()];
        avg.extend(summary_cells(&self.average));
        body.push(avg);
        body
    }

    fn header() -> Vec<String> {
        std::iter::once("sequence")
            .chain(COMPARISON_COLUMNS)
            .map(str::to_string)
            .collect()
    }

    pub fn render_text(&self) -> String {
        let mut out = aligned_table(&Self::header(), &self.body());
        for (col, seq) in &self.excluded {
            let _ = writeln!(out, "note: {col} of {seq} failed and is excluded from Avg.");
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = Self::header().join(",");
        out.push('\n');
        for row in self.body() {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Systems × sequences RMSE grid with a per-system average column.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonMatrix {
    pub sequences: Vec<String>,
    pub systems: Vec<String>,
    /// `rmse[system][sequence]`, `None` for a failed run.
    pub rmse: Vec<Vec<Option<f64>>>,
}

impl ComparisonMatrix {
    pub fn system_averages(&self) -> Vec<Option<f64>> {
        self.rmse.iter().map(|row| mean_present(row.iter().copied())).collect()
    }

    fn body(&self) -> Vec<Vec<String>> {
        self.systems
            .iter()
            .zip(&self.rmse)
            .zip(self.system_averages())
            .map(|((name, row), avg)| {
                let mut line = vec![name.clone()];
                line.extend(row.iter().map(|v| cell(*v, 3)));
                line.push(cell(avg, 3));
                line
            })
            .collect()
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["system".to_string()];
        h.extend(self.sequences.iter().cloned());
        h.push("Avg.".to_string());
        h
    }

    pub fn render_text(&self) -> String {
        aligned_table(&self.header(), &self.body())
    }

    pub fn render_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for row in self.body() {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Aligned-column report of one ATE evaluation.
pub fn render_ate_report(stats: &ATEStats) -> String {
    format!(
        "pairs   {}\nrmse    {:.6} m\nmean    {:.6} m\nmedian  {:.6} m\nsd      {:.6} m\n",
        stats.pair_count, stats.rmse, stats.mean, stats.median, stats.sd
    )
}

const PLOT_SIZE: f64 = 600.0;
const PLOT_MARGIN: f64 = 60.0;

fn svg_points(points: &[(f64, f64)]) -> String {
    points
        .iter()
        .map(|(x, y)| format!("{x:.6},{y:.6}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Top-down (x–y) SVG of an estimate aligned onto its ground truth. The
/// polylines carry metric coordinates; a group transform maps them onto the
/// canvas. Without a usable ground truth the raw estimate is drawn alone.
pub fn render_trajectory_svg(est: &[(f64, Pose)], gt: &[(f64, Pose)], max_difference: f64) -> String {
    let (est_xy, gt_xy, notice): (Vec<(f64, f64)>, Vec<(f64, f64)>, Option<&str>) =
        match compute_ate_detailed(est, gt, max_difference) {
            Ok(r) => (
                est.iter()
                    .map(|(_, p)| {
                        let q = r.alignment.transform_point(p.translation());
                        (q.x, q.y)
                    })
                    .collect(),
                gt.iter().map(|(_, p)| (p.translation().x, p.translation().y)).collect(),
                None,
            ),
            Err(_) => (
                est.iter()
                    .map(|(_, p)| (p.translation().x, p.translation().y))
                    .collect(),
                Vec::new(),
                Some(if gt.is_empty() {
                    "no ground truth available"
                } else {
                    "ground truth could not be aligned"
                }),
            ),
        };

    let all: Vec<(f64, f64)> = est_xy.iter().chain(&gt_xy).copied().collect();
    let (mut min_x, mut max_x, mut min_y, mut max_y) = (0.0, 1.0, 0.0, 1.0);
    if !all.is_empty() {
        min_x = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        max_x = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        min_y = all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        max_y = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1e-6);
    let scale = (PLOT_SIZE - 2.0 * PLOT_MARGIN) / span;
    let tx = PLOT_MARGIN - min_x * scale;
    let ty = PLOT_SIZE - PLOT_MARGIN + min_y * scale;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{0}" viewBox="0 0 {0} {0}">"#,
        PLOT_SIZE
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r#"<g id="data" transform="translate({tx:.6},{ty:.6}) scale({scale:.6},{:.6})" fill="none" stroke-width="{:.6}">"#,
        -scale,
        2.0 / scale
    );
    if !gt_xy.is_empty() {
        let _ = writeln!(
            s,
            r##"<polyline id="ground-truth" stroke="#222222" points="{}"/>"##,
            svg_points(&gt_xy)
        );
    }
    let _ = writeln!(
        s,
        r##"<polyline id="estimate" stroke="#d62728" points="{}"/>"##,
        svg_points(&est_xy)
    );
    let _ = writeln!(s, "</g>");
    let bottom = PLOT_SIZE - PLOT_MARGIN;
    let _ = writeln!(
        s,
        r##"<rect x="{m}" y="{m}" width="{w}" height="{w}" fill="none" stroke="#999999"/>"##,
        m = PLOT_MARGIN,
        w = PLOT_SIZE - 2.0 * PLOT_MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">x [m]  ({:.3} to {:.3})</text>"#,
        PLOT_SIZE / 2.0,
        bottom + 35.0,
        min_x,
        min_x + span
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.1}" text-anchor="middle" font-size="14" transform="rotate(-90 20 {:.1})">y [m]  ({:.3} to {:.3})</text>"#,
        PLOT_SIZE / 2.0,
        PLOT_SIZE / 2.0,
        min_y,
        min_y + span
    );
    let _ = writeln!(s, r#"<g id="legend" font-size="13">"#);
    let mut y = 25.0;
    if !gt_xy.is_empty() {
        let _ = writeln!(
            s,
            r##"<line x1="70" y1="{y}" x2="100" y2="{y}" stroke="#222222" stroke-width="2"/><text x="106" y="{:.1}">ground truth</text>"##,
            y + 4.0
        );
        y += 20.0;
    }
    let _ = writeln!(
        s,
        r##"<line x1="70" y1="{y}" x2="100" y2="{y}" stroke="#d62728" stroke-width="2"/><text x="106" y="{:.1}">estimate</text>"##,
        y + 4.0
    );
    let _ = writeln!(s, "</g>");
    if let Some(n) = notice {
        let _ = writeln!(
            s,
            r##"<text id="notice" x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13" fill="#555555">{n}</text>"##,
            PLOT_SIZE / 2.0,
            PLOT_MARGIN - 10.0
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn plot_trajectory(
    est: &[(f64, Pose)],
    gt: &[(f64, Pose)],
    max_difference: f64,
    out_path: &Path,
) -> Result<(), EvalError> {
    std::fs::write(out_path, render_trajectory_svg(est, gt, max_difference)).map_err(|e| EvalError::WriteFailure {
        path: out_path.display().to_string(),
        detail: e.to_string(),
    })
}
