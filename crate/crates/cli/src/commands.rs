use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use vo_core::dataset::{convert_tartanair, load_tum_sequence, read_tum_trajectory, save_tum_trajectory};
use vo_core::eval::{
    compute_ate, plot_trajectory, render_ate_report, summarize_table, ATEStats, ComparisonMatrix, ComparisonRow,
};
use vo_core::frontend::{FeatureExtractor, GridDetector};
use vo_core::matcher::{FeatureMatcher, MutualNnMatcher};
use vo_core::model_runtime::{load_model, LearnedExtractor, LearnedMatcher, ModelKind};
use vo_core::tracker::{track_sequence, TrackStatus};

use crate::config::{Implementation, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_TRACKING_LOST: i32 = 2;

pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const TELEMETRY_FILE: &str = "telemetry.txt";
pub const METADATA_FILE: &str = "metadata.toml";
pub const PLOT_FILE: &str = "trajectory.svg";
pub const GROUND_TRUTH_FILE: &str = "groundtruth.txt";
pub const MAP_FILE: &str = "map_points.txt";

pub fn build_description() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("VO_BUILD_DESCRIBE"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub frames_processed: usize,
    pub poses: usize,
    pub keyframes: usize,
    pub final_status: TrackStatus,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.final_status == TrackStatus::Lost {
            EXIT_TRACKING_LOST
        } else {
            EXIT_OK
        }
    }
}

struct Pipeline {
    extractor: Box<dyn FeatureExtractor>,
    matcher: Box<dyn FeatureMatcher>,
    hashes: BTreeMap<String, String>,
}

fn build_pipeline(cfg: &RunConfig) -> Result<Pipeline> {
    let mut hashes = BTreeMap::new();
    let builtin_extractor = || Box::new(GridDetector::new(cfg.extractor.grid.clone())) as Box<dyn FeatureExtractor>;
    let extractor: Box<dyn FeatureExtractor> = match (&cfg.extractor.implementation, &cfg.extractor.model_path) {
        (Implementation::Model, Some(path)) if path.is_file() => {
            let h = load_model(path, ModelKind::Extractor, cfg.device)?;
            hashes.insert("extractor_sha256".to_string(), h.sha256.clone());
            Box::new(LearnedExtractor::new(Arc::new(h))?)
        }
        (Implementation::Model, path) => {
            log::warn!(
                "extractor model {} not found, using the builtin detector",
                path.as_deref().unwrap_or(Path::new("?")).display()
            );
            builtin_extractor()
        }
        (Implementation::Builtin, _) => builtin_extractor(),
    };
    let builtin_matcher = || {
        Box::new(MutualNnMatcher {
            ratio: cfg.matcher.ratio,
        }) as Box<dyn FeatureMatcher>
    };
    let matcher: Box<dyn FeatureMatcher> = match (&cfg.matcher.implementation, &cfg.matcher.model_path) {
        (Implementation::Model, Some(path)) if path.is_file() => {
            let h = load_model(path, ModelKind::Matcher, cfg.device)?;
            hashes.insert("matcher_sha256".to_string(), h.sha256.clone());
            Box::new(LearnedMatcher::new(Arc::new(h))?)
        }
        (Implementation::Model, path) => {
            log::warn!(
                "matcher model {} not found, using the builtin matcher",
                path.as_deref().unwrap_or(Path::new("?")).display()
            );
            builtin_matcher()
        }
        (Implementation::Builtin, _) => builtin_matcher(),
    };
    Ok(Pipeline {
        extractor,
        matcher,
        hashes,
    })
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
}

/// Runs odometry over the configured sequence and writes the run directory.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let k = cfg.intrinsics();
    let sequence = load_tum_sequence(&cfg.sequence, &k, cfg.max_difference)?;
    if sequence.is_empty() {
        bail!("sequence {} has no associated RGB-D frames", cfg.sequence.display());
    }
    let pipeline = build_pipeline(cfg)?;
    let mut tracker_cfg = cfg.tracker;
    tracker_cfg.min_match_confidence = cfg.matcher.min_confidence;

    let limit = if cfg.max_frames == 0 {
        usize::MAX
    } else {
        cfg.max_frames
    };
    let out = track_sequence(
        sequence.stream().take(limit),
        &k,
        &tracker_cfg,
        pipeline.extractor.as_ref(),
        pipeline.matcher.as_ref(),
    )?;

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    save_tum_trajectory(&dir.join(TRAJECTORY_FILE), &out.trajectory)?;
    let telemetry: String = out.telemetry.iter().map(|r| r.to_line() + "\n").collect();
    write(&dir.join(TELEMETRY_FILE), telemetry)?;
    let mut map_points = Vec::new();
    out.map.export_points(&mut map_points)?;
    write(&dir.join(MAP_FILE), map_points)?;

    let ground_truth = sequence.ground_truth();
    if !ground_truth.is_empty() {
        save_tum_trajectory(&dir.join(GROUND_TRUTH_FILE), &ground_truth)?;
    }
    plot_trajectory(&out.trajectory, &ground_truth, cfg.max_difference, &dir.join(PLOT_FILE))?;

    let summary = RunSummary {
        output_dir: dir.clone(),
        frames_processed: out.telemetry.len(),
        poses: out.trajectory.len(),
        keyframes: out.map.keyframe_count(),
        final_status: out.final_status,
    };

    let mut run = toml::Table::new();
    run.insert("build".into(), build_description().into());
    run.insert("extractor".into(), pipeline.extractor.name().into());
    run.insert("matcher".into(), pipeline.matcher.name().into());
    run.insert("frames_processed".into(), (summary.frames_processed as i64).into());
    run.insert("poses".into(), (summary.poses as i64).into());
    run.insert("keyframes".into(), (summary.keyframes as i64).into());
    run.insert("map_points".into(), (out.map.map_point_count() as i64).into());
    run.insert("final_status".into(), summary.final_status.to_string().into());
    if let Ok(stats) = compute_ate(&out.trajectory, &ground_truth, cfg.max_difference) {
        run.insert("ate_rmse".into(), stats.rmse.into());
    }
    let mut meta = toml::Table::new();
    meta.insert("run".into(), run.into());
    meta.insert(
        "models".into(),
        toml::Value::Table(pipeline.hashes.into_iter().map(|(k, v)| (k, v.into())).collect()),
    );
    meta.insert("config".into(), toml::Table::try_from(cfg)?.into());
    write(&dir.join(METADATA_FILE), toml::to_string(&meta)?)?;
    Ok(summary)
}

pub fn cmd_run(config_path: &Path) -> i32 {
    match RunConfig::load(config_path).and_then(|cfg| run(&cfg)) {
        Ok(s) => {
            println!(
                "{} frames, {} poses, {} keyframes, status {} -> {}",
                s.frames_processed,
                s.poses,
                s.keyframes,
                s.final_status,
                s.output_dir.display()
            );
            s.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

/// ATE of `est` against `gt`, as aligned text or a JSON record.
pub fn evaluate(
    est_path: &Path,
    gt_path: &Path,
    json: bool,
    plot: Option<&Path>,
    max_difference: f64,
) -> Result<String> {
    let est = read_tum_trajectory(est_path)?;
    let gt = read_tum_trajectory(gt_path)?;
    let stats = compute_ate(&est, &gt, max_difference)?;
    if let Some(p) = plot {
        plot_trajectory(&est, &gt, max_difference, p)?;
    }
    Ok(if json {
        serde_json::to_string(&stats)? + "\n"
    } else {
        render_ate_report(&stats)
    })
}

pub fn cmd_evaluate(est_path: &Path, gt_path: &Path, json: bool, plot: Option<&Path>, max_difference: f64) -> i32 {
    match evaluate(est_path, gt_path, json, plot, max_difference) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

/// One cell of a comparison manifest: either precomputed statistics or a
/// trajectory pair to evaluate. A failed run has neither.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub sequence: String,
    pub system: String,
    pub rmse: Option<f64>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub sd: Option<f64>,
    pub estimate: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub baseline: Option<String>,
    pub candidate: Option<String>,
    #[serde(default = "default_max_difference")]
    pub max_difference: f64,
    #[serde(default, rename = "entry")]
    pub entries: Vec<ManifestEntry>,
}

fn default_max_difference() -> f64 {
    vo_core::dataset::DEFAULT_MAX_DIFFERENCE
}

fn entry_stats(e: &ManifestEntry, base_dir: &Path, max_difference: f64) -> Result<Option<ATEStats>> {
    if e.failed {
        return Ok(None);
    }
    if let (Some(est), Some(gt)) = (&e.estimate, &e.ground_truth) {
        let est = read_tum_trajectory(&base_dir.join(est))?;
        let gt = read_tum_trajectory(&base_dir.join(gt))?;
        return match compute_ate(&est, &gt, max_difference) {
            Ok(s) => Ok(Some(s)),
            Err(err) => {
                log::warn!("{} / {}: {err}; reported as failed", e.system, e.sequence);
                Ok(None)
            }
        };
    }
    Ok(e.rmse.map(|rmse| ATEStats {
        rmse,
        mean: e.mean.unwrap_or(f64::NAN),
        median: e.median.unwrap_or(f64::NAN),
        sd: e.sd.unwrap_or(f64::NAN),
        pair_count: 0,
    }))
}

fn first_seen(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Renders the RMSE grid with per-system averages and, when the manifest
/// names a baseline and a candidate, the pairwise table with boost column.
pub fn compare(manifest_path: &Path, csv: Option<&Path>) -> Result<String> {
    let text = fs::read_to_string(manifest_path)
        .with_context(|| format!("cannot read manifest {}", manifest_path.display()))?;
    let manifest: Manifest = toml::from_str(&text).with_context(|| format!("in {}", manifest_path.display()))?;
    if manifest.entries.is_empty() {
        bail!("manifest {} lists no entries", manifest_path.display());
    }
    let base_dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let sequences = first_seen(manifest.entries.iter().map(|e| e.sequence.clone()));
    let systems = first_seen(manifest.entries.iter().map(|e| e.system.clone()));
    let mut cells: BTreeMap<(String, String), Option<ATEStats>> = BTreeMap::new();
    for e in &manifest.entries {
        cells.insert(
            (e.system.clone(), e.sequence.clone()),
            entry_stats(e, base_dir, manifest.max_difference)?,
        );
    }
    let lookup = |system: &str, seq: &str| cells.get(&(system.to_string(), seq.to_string())).copied().flatten();

    let matrix = ComparisonMatrix {
        sequences: sequences.clone(),
        systems: systems.clone(),
        rmse: systems
            .iter()
            .map(|sys| sequences.iter().map(|seq| lookup(sys, seq).map(|s| s.rmse)).collect())
            .collect(),
    };
    let mut out = matrix.render_text();
    let mut csv_body = matrix.render_csv();

    if let (Some(b), Some(c)) = (&manifest.baseline, &manifest.candidate) {
        for name in [b, c] {
            if !systems.contains(name) {
                bail!("system `{name}` does not appear in the manifest entries");
            }
        }
        let rows: Vec<ComparisonRow> = sequences
            .iter()
            .map(|seq| ComparisonRow::new(seq.clone(), lookup(b, seq), lookup(c, seq)))
            .collect();
        let table = summarize_table(&rows);
        out.push_str(&format!("\nbaseline: {b}\ncandidate: {c}\n"));
        out.push_str(&table.render_text());
        csv_body.push('\n');
        csv_body.push_str(&table.render_csv());
    }
    if let Some(path) = csv {
        write(path, csv_body)?;
    }
    Ok(out)
}

pub fn cmd_compare(manifest_path: &Path, csv: Option<&Path>) -> i32 {
    match compare(manifest_path, csv) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

pub fn cmd_convert_tartanair(in_path: &Path, out_path: &Path) -> i32 {
    match convert_tartanair(in_path, out_path) {
        Ok(report) => {
            println!("{report}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
