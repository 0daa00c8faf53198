//! Sequence ingestion: TUM RGB-D style directories (TUM, ICL-NUIM and
//! converted TartanAir), timestamp association, trajectory files and the
//! TartanAir to TUM-layout converter.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::thread::{self, JoinHandle};

use image::{ImageBuffer, Luma, RgbImage};
use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{ned_to_camera, rebase_trajectory, Intrinsics, Pose};

/// Default timestamp association tolerance, seconds.
pub const DEFAULT_MAX_DIFFERENCE: f64 = 0.02;
/// Number of decoded frames the loader may hold ahead of the consumer.
pub const READ_AHEAD: usize = 8;
/// Frame rate used to synthesize TartanAir timestamps.
pub const TARTANAIR_RATE_HZ: f64 = 30.0;
/// Raw depth units per meter written by the TartanAir converter.
pub const CONVERTED_DEPTH_FACTOR: f64 = 5000.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing index file {0}")]
    MissingIndexFile(PathBuf),
    #[error("{path}:{line_no}: malformed line: {detail}")]
    MalformedLine {
        path: PathBuf,
        line_no: usize,
        detail: String,
    },
    #[error("failed to decode image {path}: {detail}")]
    ImageDecodeError { path: PathBuf, detail: String },
    #[error("missing pose file {0}")]
    MissingPoseFile(PathBuf),
    #[error("frame count mismatch: {images} images, {poses} poses")]
    FrameCountMismatch { images: usize, poses: usize },
    #[error("depth count mismatch: {images} images, {depths} depth maps")]
    DepthCountMismatch { images: usize, depths: usize },
    #[error("timestamps in {path} are not strictly increasing at line {line_no}")]
    NonMonotonicTimestamps { path: PathBuf, line_no: usize },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> DatasetError {
    let context = context.into();
    move |source| DatasetError::Io { context, source }
}

/// Dense metric depth. Zero marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<f32>) -> Option<Self> {
        (data.len() == width as usize * height as usize).then_some(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, depth: f32) {
        self.data[y as usize * self.width as usize + x as usize] = depth;
    }

    /// Depth at the pixel nearest to a sub-pixel location; 0 when outside
    /// the map or invalid.
    pub fn sample_nearest(&self, u: f64, v: f64) -> f64 {
        let x = u.round();
        let y = v.round();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return 0.0;
        }
        let d = self.get(x as u32, y as u32) as f64;
        if d.is_finite() && d > 0.0 {
            d
        } else {
            0.0
        }
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// One RGB-D frame delivered by a sequence loader.
#[derive(Debug, Clone)]
pub struct SequenceFrame {
    /// Position in the delivered stream.
    pub index: usize,
    pub timestamp: f64,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub ground_truth: Option<Pose>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationPair {
    pub ts_a: f64,
    pub ts_b: f64,
    pub index_a: usize,
    pub index_b: usize,
}

/// Greedy one-to-one timestamp association in the style of the TUM benchmark
/// `associate.py`: candidate pairs within `max_difference` are taken in order
/// of increasing |dt| (ties by index), each record used at most once. The
/// result is sorted by `index_a`.
pub fn associate_timestamps(list_a: &[f64], list_b: &[f64], max_difference: f64) -> Vec<AssociationPair> {
    let mut candidates = Vec::new();
    for (i, &a) in list_a.iter().enumerate() {
        // Both lists are sorted, so only a window of b can be within range.
        let start = list_b.partition_point(|&b| b < a - max_difference);
        for (j, &b) in list_b.iter().enumerate().skip(start) {
            if b > a + max_difference {
                break;
            }
            let dt = (a - b).abs();
            if dt <= max_difference {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut used_a = vec![false; list_a.len()];
    let mut used_b = vec![false; list_b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        pairs.push(AssociationPair {
            ts_a: list_a[i],
            ts_b: list_b[j],
            index_a: i,
            index_b: j,
        });
    }
    pairs.sort_by_key(|p| p.index_a);
    pairs
}

/// A `timestamp path` record from `rgb.txt` / `depth.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub timestamp: f64,
    pub path: String,
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(format!("open {}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(format!("read {}", path.display())))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.to_string()));
    }
    Ok(out)
}

fn malformed(path: &Path, line_no: usize, detail: impl Into<String>) -> DatasetError {
    DatasetError::MalformedLine {
        path: path.to_path_buf(),
        line_no,
        detail: detail.into(),
    }
}

fn parse_f64(path: &Path, line_no: usize, field: &str) -> Result<f64, DatasetError> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| malformed(path, line_no, format!("not a number: {field:?}")))
}

/// Parses a TUM index file. Entries must be in strictly increasing time.
pub fn read_index_file(path: &Path) -> Result<Vec<IndexEntry>, DatasetError> {
    if !path.is_file() {
        return Err(DatasetError::MissingIndexFile(path.to_path_buf()));
    }
    let mut entries: Vec<IndexEntry> = Vec::new();
    for (line_no, line) in data_lines(path)? {
        let mut fields = line.split_whitespace();
        let (Some(ts), Some(file), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed(path, line_no, "expected `timestamp path`"));
        };
        let timestamp = parse_f64(path, line_no, ts)?;
        if let Some(last) = entries.last() {
            if timestamp <= last.timestamp {
                return Err(DatasetError::NonMonotonicTimestamps {
                    path: path.to_path_buf(),
                    line_no,
                });
            }
        }
        entries.push(IndexEntry {
            timestamp,
            path: file.to_string(),
        });
    }
    Ok(entries)
}

/// Reads a `timestamp tx ty tz qx qy qz qw` trajectory file.
pub fn read_tum_trajectory(path: &Path) -> Result<Vec<(f64, Pose)>, DatasetError> {
    if !path.is_file() {
        return Err(DatasetError::MissingIndexFile(path.to_path_buf()));
    }
    let mut out = Vec::new();
    for (line_no, line) in data_lines(path)? {
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 8 {
            return Err(malformed(
                path,
                line_no,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        let v = fields
            .iter()
            .map(|f| parse_f64(path, line_no, f))
            .collect::<Result<Vec<_>, _>>()?;
        let pose = Pose::from_wxyz(v[7], v[4], v[5], v[6], Vector3::new(v[1], v[2], v[3]))
            .ok_or_else(|| malformed(path, line_no, "zero quaternion"))?;
        out.push((v[0], pose));
    }
    Ok(out)
}

/// Formats one trajectory record in TUM order (quaternion x, y, z, w).
pub fn format_tum_pose(timestamp: f64, pose: &Pose) -> String {
    let t = pose.translation();
    let [w, x, y, z] = pose.quaternion_wxyz();
    format!(
        "{:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
        timestamp, t.x, t.y, t.z, x, y, z, w
    )
}

pub fn write_tum_trajectory<W: Write>(out: &mut W, trajectory: &[(f64, Pose)]) -> std::io::Result<()> {
    for (ts, pose) in trajectory {
        writeln!(out, "{}", format_tum_pose(*ts, pose))?;
    }
    Ok(())
}

pub fn save_tum_trajectory(path: &Path, trajectory: &[(f64, Pose)]) -> Result<(), DatasetError> {
    let file = fs::File::create(path).map_err(io_err(format!("create {}", path.display())))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# timestamp tx ty tz qx qy qz qw")
        .and_then(|_| write_tum_trajectory(&mut w, trajectory))
        .and_then(|_| w.flush())
        .map_err(io_err(format!("write {}", path.display())))
}

/// Decodes a 16-bit depth PNG into meters.
pub fn read_depth_png(path: &Path, depth_factor: f64) -> Result<DepthMap, DatasetError> {
    let decode_err = |detail: String| DatasetError::ImageDecodeError {
        path: path.to_path_buf(),
        detail,
    };
    let img = image::open(path).map_err(|e| decode_err(e.to_string()))?;
    let raw = match img {
        image::DynamicImage::ImageLuma16(raw) => raw,
        other => {
            return Err(decode_err(format!(
                "expected 16-bit single-channel depth, found {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = raw.dimensions();
    let data = raw
        .as_raw()
        .iter()
        .map(|&r| if r == 0 { 0.0 } else { (r as f64 / depth_factor) as f32 })
        .collect();
    Ok(DepthMap::from_raw(w, h, data).expect("buffer size matches dimensions"))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, DatasetError> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| DatasetError::ImageDecodeError {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
}

#[derive(Debug, Clone)]
struct FrameJob {
    index: usize,
    timestamp: f64,
    rgb: PathBuf,
    depth: PathBuf,
    ground_truth: Option<Pose>,
}

/// A TUM-layout sequence whose index files have been parsed and associated.
/// Image decoding happens when the sequence is streamed.
#[derive(Debug, Clone)]
pub struct TumSequence {
    root: PathBuf,
    depth_factor: f64,
    jobs: Vec<FrameJob>,
    has_ground_truth: bool,
}

/// Opens a TUM RGB-D directory (`rgb.txt`, `depth.txt`, optional
/// `groundtruth.txt`) and associates its records.
pub fn load_tum_sequence(root: &Path, k: &Intrinsics, max_difference: f64) -> Result<TumSequence, DatasetError> {
    let rgb = read_index_file(&root.join("rgb.txt"))?;
    let depth = read_index_file(&root.join("depth.txt"))?;
    let gt_path = root.join("groundtruth.txt");
    let ground_truth = if gt_path.is_file() {
        read_tum_trajectory(&gt_path)?
    } else {
        Vec::new()
    };

    let rgb_ts: Vec<f64> = rgb.iter().map(|e| e.timestamp).collect();
    let depth_ts: Vec<f64> = depth.iter().map(|e| e.timestamp).collect();
    let gt_ts: Vec<f64> = ground_truth.iter().map(|(t, _)| *t).collect();
    let pairs = associate_timestamps(&rgb_ts, &depth_ts, max_difference);
    let assoc_ts: Vec<f64> = pairs.iter().map(|p| p.ts_a).collect();
    let mut gt_for = vec![None; pairs.len()];
    for g in associate_timestamps(&assoc_ts, &gt_ts, max_difference) {
        gt_for[g.index_a] = Some(ground_truth[g.index_b].1);
    }

    let jobs = pairs
        .iter()
        .zip(gt_for)
        .enumerate()
        .map(|(index, (p, gt))| FrameJob {
            index,
            timestamp: p.ts_a,
            rgb: root.join(&rgb[p.index_a].path),
            depth: root.join(&depth[p.index_b].path),
            ground_truth: gt,
        })
        .collect();
    Ok(TumSequence {
        root: root.to_path_buf(),
        depth_factor: k.depth_factor,
        jobs,
        has_ground_truth: !ground_truth.is_empty(),
    })
}

impl TumSequence {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.has_ground_truth
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.jobs.iter().map(|j| j.timestamp).collect()
    }

    /// Ground truth attached to the associated frames, in stream order.
    pub fn ground_truth(&self) -> Vec<(f64, Pose)> {
        self.jobs
            .iter()
            .filter_map(|j| j.ground_truth.map(|p| (j.timestamp, p)))
            .collect()
    }

    /// Streams decoded frames. A background worker decodes at most
    /// [`READ_AHEAD`] frames ahead of the consumer.
    pub fn stream(&self) -> FrameStream {
        let (tx, rx) = mpsc::sync_channel(READ_AHEAD);
        let jobs = self.jobs.clone();
        let factor = self.depth_factor;
        let worker = thread::spawn(move || decode_worker(jobs, factor, tx));
        FrameStream {
            rx,
            worker: Some(worker),
        }
    }
}

fn decode_frame(job: &FrameJob, depth_factor: f64) -> Result<SequenceFrame, DatasetError> {
    let rgb = read_rgb(&job.rgb)?;
    let depth = read_depth_png(&job.depth, depth_factor)?;
    if rgb.dimensions() != (depth.width(), depth.height()) {
        return Err(DatasetError::ImageDecodeError {
            path: job.depth.clone(),
            detail: format!(
                "depth is {}x{} but color image is {}x{}",
                depth.width(),
                depth.height(),
                rgb.width(),
                rgb.height()
            ),
        });
    }
    Ok(SequenceFrame {
        index: job.index,
        timestamp: job.timestamp,
        rgb,
        depth,
        ground_truth: job.ground_truth,
    })
}

fn decode_worker(jobs: Vec<FrameJob>, depth_factor: f64, tx: SyncSender<Result<SequenceFrame, DatasetError>>) {
    for job in &jobs {
        let frame = decode_frame(job, depth_factor);
        let failed = frame.is_err();
        if tx.send(frame).is_err() || failed {
            return;
        }
    }
}

/// Ordered stream of decoded frames. Stops after the first decode error.
pub struct FrameStream {
    rx: Receiver<Result<SequenceFrame, DatasetError>>,
    worker: Option<JoinHandle<()>>,
}

impl Iterator for FrameStream {
    type Item = Result<SequenceFrame, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.rx.recv() {
            Ok(item) => Some(item),
            Err(_) => {
                if let Some(worker) = self.worker.take() {
                    let _ = worker.join();
                }
                None
            }
        }
    }
}

/// Writes a depth map as a 16-bit PNG at `depth_factor` raw units per meter.
/// Values that do not fit in 16 bits, or are non-finite or non-positive, are
/// written as 0 (invalid). Returns the number of such clamped pixels among the
/// non-zero inputs.
pub fn write_depth_png(path: &Path, depth: &DepthMap, depth_factor: f64) -> Result<usize, DatasetError> {
    let mut clamped = 0;
    let raw: Vec<u16> = depth
        .as_slice()
        .iter()
        .map(|&d| match quantize_depth(d as f64, depth_factor) {
            Some(r) => r,
            None => {
                if d != 0.0 {
                    clamped += 1;
                }
                0
            }
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width(), depth.height(), raw).expect("size matches");
    img.save(path).map_err(|e| DatasetError::Io {
        context: format!("write {}", path.display()),
        source: std::io::Error::other(e.to_string()),
    })?;
    Ok(clamped)
}

/// Raw 16-bit value for a metric depth, or `None` when it is not representable.
pub fn quantize_depth(meters: f64, depth_factor: f64) -> Option<u16> {
    if !meters.is_finite() || meters <= 0.0 {
        return None;
    }
    let raw = (meters * depth_factor).round();
    (raw >= 1.0 && raw <= u16::MAX as f64).then_some(raw as u16)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionReport {
    pub frames: usize,
    pub poses: usize,
    /// Depth pixels beyond the 16-bit range written as invalid.
    pub clamped_depth_pixels: usize,
    pub camera: &'static str,
    pub first_pose_ned: [f64; 3],
}

impl std::fmt::Display for ConversionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [x, y, z] = self.first_pose_ned;
        writeln!(f, "camera: {}", self.camera)?;
        writeln!(f, "frames: {}", self.frames)?;
        writeln!(f, "poses: {}", self.poses)?;
        writeln!(f, "clamped_depth_pixels: {}", self.clamped_depth_pixels)?;
        write!(f, "first_pose_ned: {x} {y} {z} (rebased to 0 0 0)")
    }
}

fn sorted_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>, DatasetError> {
    let rd = fs::read_dir(dir).map_err(io_err(format!("read {}", dir.display())))?;
    let mut files = Vec::new();
    for entry in rd {
        let path = entry.map_err(io_err(format!("read {}", dir.display())))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(extension) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads a TartanAir pose file: one `tx ty tz qx qy qz qw` NED pose per line.
pub fn read_tartanair_poses(path: &Path) -> Result<Vec<Pose>, DatasetError> {
    if !path.is_file() {
        return Err(DatasetError::MissingPoseFile(path.to_path_buf()));
    }
    let mut poses = Vec::new();
    for (line_no, line) in data_lines(path)? {
        let v = line
            .split_whitespace()
            .map(|f| parse_f64(path, line_no, f))
            .collect::<Result<Vec<_>, _>>()?;
        if v.len() != 7 {
            return Err(malformed(
                path,
                line_no,
                format!("expected 7 fields, found {}", v.len()),
            ));
        }
        let pose = Pose::from_wxyz(v[6], v[3], v[4], v[5], Vector3::new(v[0], v[1], v[2]))
            .ok_or_else(|| malformed(path, line_no, "zero quaternion"))?;
        poses.push(pose);
    }
    Ok(poses)
}

fn read_npy_depth(path: &Path) -> Result<DepthMap, DatasetError> {
    let decode_err = |detail: String| DatasetError::ImageDecodeError {
        path: path.to_path_buf(),
        detail,
    };
    let arr: ndarray::Array2<f32> = ndarray_npy::read_npy(path).map_err(|e| decode_err(e.to_string()))?;
    let (h, w) = arr.dim();
    let data: Vec<f32> = arr.iter().copied().collect();
    Ok(DepthMap::from_raw(w as u32, h as u32, data).expect("dimensions match"))
}

/// Converts a TartanAir trajectory directory (`image_left/*.png`,
/// `depth_left/*.npy`, `pose_left.txt`) into a TUM-layout directory: 16-bit
/// depth at factor 5000, synthetic 30 Hz timestamps, and ground truth moved
/// into the camera convention and rebased to start at the identity.
pub fn convert_tartanair(root: &Path, out: &Path) -> Result<ConversionReport, DatasetError> {
    let pose_path = root.join("pose_left.txt");
    let poses_ned = read_tartanair_poses(&pose_path)?;
    let images = sorted_files(&root.join("image_left"), "png")?;
    let depths = sorted_files(&root.join("depth_left"), "npy")?;
    if images.len() != poses_ned.len() {
        return Err(DatasetError::FrameCountMismatch {
            images: images.len(),
            poses: poses_ned.len(),
        });
    }
    if images.len() != depths.len() {
        return Err(DatasetError::DepthCountMismatch {
            images: images.len(),
            depths: depths.len(),
        });
    }
    let camera_poses: Vec<Pose> = poses_ned.iter().map(ned_to_camera).collect();
    let rebased = rebase_trajectory(&camera_poses).map_err(|_| DatasetError::FrameCountMismatch {
        images: images.len(),
        poses: 0,
    })?;

    for sub in ["rgb", "depth"] {
        fs::create_dir_all(out.join(sub)).map_err(io_err(format!("create {}", out.display())))?;
    }
    let mut rgb_index = String::from("# color images\n# timestamp filename\n");
    let mut depth_index = String::from("# depth maps\n# timestamp filename\n");
    let mut clamped = 0;
    let mut trajectory = Vec::with_capacity(rebased.len());
    for (i, ((image, depth), pose)) in images.iter().zip(&depths).zip(&rebased).enumerate() {
        let ts = i as f64 / TARTANAIR_RATE_HZ;
        let depth_map = read_npy_depth(depth)?;
        let (w, h) = image::image_dimensions(image).map_err(|e| DatasetError::ImageDecodeError {
            path: image.clone(),
            detail: e.to_string(),
        })?;
        if (w, h) != (depth_map.width(), depth_map.height()) {
            return Err(DatasetError::ImageDecodeError {
                path: depth.clone(),
                detail: format!("depth shape differs from image {w}x{h}"),
            });
        }
        let name = format!("{i:06}.png");
        fs::copy(image, out.join("rgb").join(&name)).map_err(io_err(format!("copy {}", image.display())))?;
        clamped += write_depth_png(&out.join("depth").join(&name), &depth_map, CONVERTED_DEPTH_FACTOR)?;
        rgb_index.push_str(&format!("{ts:.6} rgb/{name}\n"));
        depth_index.push_str(&format!("{ts:.6} depth/{name}\n"));
        trajectory.push((ts, *pose));
    }

    let write = |name: &str, body: &str| fs::write(out.join(name), body).map_err(io_err(format!("write {name}")));
    write("rgb.txt", &rgb_index)?;
    write("depth.txt", &depth_index)?;
    save_tum_trajectory(&out.join("groundtruth.txt"), &trajectory)?;

    let t0 = poses_ned[0].translation();
    let report = ConversionReport {
        frames: images.len(),
        poses: poses_ned.len(),
        clamped_depth_pixels: clamped,
        camera: "left",
        first_pose_ned: [t0.x, t0.y, t0.z],
    };
    write("conversion_report.txt", &format!("{report}\n"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_lists_pair_with_zero_dt() {
        let ts: Vec<f64> = (0..10).map(|i| i as f64 / 30.0).collect();
        let pairs = associate_timestamps(&ts, &ts, 0.02);
        assert_eq!(pairs.len(), 10);
        assert!(pairs.iter().all(|p| p.index_a == p.index_b && p.ts_a == p.ts_b));
    }

    #[test]
    fn gap_beyond_tolerance_is_not_paired() {
        assert!(associate_timestamps(&[0.0, 1.0], &[0.5], 0.02).is_empty());
        assert!(associate_timestamps(&[], &[0.5], 0.02).is_empty());
    }

    #[test]
    fn association_is_one_to_one() {
        let a = [0.0, 0.01, 0.02];
        let b = [0.011];
        let pairs = associate_timestamps(&a, &b, 0.02);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].index_a, 1);
    }

    #[test]
    fn depth_quantization() {
        assert_eq!(quantize_depth(2.5, 5000.0), Some(12500));
        assert_eq!(quantize_depth(1.0, 5000.0), Some(5000));
        assert_eq!(quantize_depth(13.2, 5000.0), None);
        assert_eq!(quantize_depth(f64::INFINITY, 5000.0), None);
        assert_eq!(quantize_depth(0.0, 5000.0), None);
    }

    #[test]
    fn trajectory_line_uses_xyzw_order() {
        let p = Pose::from_wxyz(0.0, 0.0, 0.0, 1.0, Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let line = format_tum_pose(1.5, &p);
        assert_eq!(
            line,
            "1.500000 1.000000000 2.000000000 3.000000000 0.000000000 0.000000000 1.000000000 0.000000000"
        );
    }

    #[test]
    fn sample_nearest_rejects_outside() {
        let mut d = DepthMap::new(4, 3);
        d.set(2, 1, 1.5);
        assert_eq!(d.sample_nearest(2.2, 0.9), 1.5);
        assert_eq!(d.sample_nearest(-1.0, 0.0), 0.0);
        assert_eq!(d.sample_nearest(3.6, 1.0), 0.0);
    }
}
