//! TUM RGB-D style input: 16-bit depth images, ground-truth trajectories,
//! projective TSDF fusion and sub-volume harvesting.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion};

use crate::block::{Block, BLOCK_EDGE};
use crate::error::{Error, Result};
use crate::shapes::DEFAULT_EMPTINESS_THRESHOLD;
use crate::volume::TsdfVolume;

/// Raw depth units per meter in TUM sequences.
pub const TUM_DEPTH_SCALE: f64 = 5000.0;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::Config(format!(
                "invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Camera-frame point for pixel `(u, v)` at depth `z`.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        Point3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    /// Continuous pixel coordinates of a camera-frame point with positive depth.
    pub fn project(&self, p: &Point3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// One depth image in meters; 0 marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFrame {
    pub timestamp: f64,
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub intrinsics: Intrinsics,
}

impl DepthFrame {
    pub fn new(
        timestamp: f64,
        width: usize,
        height: usize,
        depth: Vec<f32>,
        intrinsics: Intrinsics,
    ) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::Config(format!(
                "depth buffer of {} pixels for a {width}x{height} frame",
                depth.len()
            )));
        }
        if depth.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(Error::Config(
                "depth values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            timestamp,
            width,
            height,
            depth,
            intrinsics,
        })
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f32 {
        self.depth[v * self.width + u]
    }

    pub fn valid_pixels(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }
}

/// Reads a 16-bit single-channel PNG as depth, `meters = raw / depth_scale`.
///
/// The timestamp is taken from the file stem when it parses as a number
/// (TUM names depth images by capture time), and 0 otherwise.
pub fn load_depth_frame(
    path: impl AsRef<Path>,
    intrinsics: Intrinsics,
    depth_scale: f64,
) -> Result<DepthFrame> {
    let path = path.as_ref();
    if !(depth_scale > 0.0) {
        return Err(Error::Config(format!(
            "depth scale must be positive, got {depth_scale}"
        )));
    }
    let fmt_err = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(fmt_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(fmt_err)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::Format(format!(
            "{}: expected 16-bit grayscale, got {:?} {:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut depth = Vec::with_capacity(width * height);
    for row in buf[..info.buffer_size()].chunks_exact(info.line_size) {
        for px in row[..2 * width].chunks_exact(2) {
            let raw = u16::from_be_bytes([px[0], px[1]]);
            depth.push((raw as f64 / depth_scale) as f32);
        }
    }
    let timestamp = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse::<f64>().ok())
        .unwrap_or(0.0);
    DepthFrame::new(timestamp, width, height, depth, intrinsics)
}

/// Writes a depth frame as a 16-bit PNG with `raw = round(meters * depth_scale)`.
pub fn save_depth_frame(
    path: impl AsRef<Path>,
    frame: &DepthFrame,
    depth_scale: f64,
) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, frame.width as u32, frame.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let enc_err = |e: png::EncodingError| Error::Format(e.to_string());
    let mut writer = enc.write_header().map_err(enc_err)?;
    let mut data = Vec::with_capacity(frame.depth.len() * 2);
    for &d in &frame.depth {
        let raw = (d as f64 * depth_scale).round().clamp(0.0, u16::MAX as f64) as u16;
        data.extend_from_slice(&raw.to_be_bytes());
    }
    writer.write_image_data(&data).map_err(enc_err)?;
    writer.finish().map_err(enc_err)?;
    Ok(())
}

/// A camera pose (camera to world) with its capture time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampedPose {
    pub timestamp: f64,
    pub pose: Isometry3<f64>,
}

impl StampedPose {
    pub fn new(timestamp: f64, pose: Isometry3<f64>) -> Self {
        Self { timestamp, pose }
    }
}

/// Poses ordered by strictly increasing timestamp.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<StampedPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<StampedPose>) -> Result<Self> {
        if let Some(w) = poses
            .windows(2)
            .find(|w| !(w[1].timestamp > w[0].timestamp))
        {
            return Err(Error::Config(format!(
                "timestamps not strictly increasing: {} then {}",
                w[0].timestamp, w[1].timestamp
            )));
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[StampedPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Renders in TUM text layout, one `timestamp tx ty tz qx qy qz qw` row per pose.
    pub fn to_tum_string(&self) -> String {
        let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
        for p in &self.poses {
            let t = p.pose.translation.vector;
            let q = p.pose.rotation.coords;
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {}\n",
                p.timestamp, t.x, t.y, t.z, q.x, q.y, q.z, q.w
            ));
        }
        out
    }

    pub fn save_tum(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(self.to_tum_string().as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

/// Parses TUM trajectory text. `#` lines and blank lines are skipped and
/// quaternions are renormalized.
pub fn parse_trajectory_str(text: &str) -> Result<Trajectory> {
    let mut poses: Vec<StampedPose> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if fields.len() != 8 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: "non-finite value".into(),
            });
        }
        let q = Quaternion::new(fields[7], fields[4], fields[5], fields[6]);
        if q.norm() < 1e-12 {
            return Err(Error::Parse {
                line: line_no,
                message: "zero quaternion".into(),
            });
        }
        let pose = Isometry3::from_parts(
            Translation3::new(fields[1], fields[2], fields[3]),
            UnitQuaternion::from_quaternion(q),
        );
        if let Some(prev) = poses.last() {
            if !(fields[0] > prev.timestamp) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("timestamp {} does not follow {}", fields[0], prev.timestamp),
                });
            }
        }
        poses.push(StampedPose::new(fields[0], pose));
    }
    Ok(Trajectory { poses })
}

pub fn parse_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    parse_trajectory_str(&fs::read_to_string(path)?)
}

/// Nearest pose in time; on an exact tie the earlier pose wins.
pub fn associate(traj: &Trajectory, t: f64, max_dt: f64) -> Result<&StampedPose> {
    let poses = traj.poses();
    if poses.is_empty() {
        return Err(Error::Association("empty trajectory".into()));
    }
    let after = poses.partition_point(|p| p.timestamp < t);
    let mut best: Option<&StampedPose> = None;
    for cand in [after.checked_sub(1), Some(after)].into_iter().flatten() {
        if let Some(p) = poses.get(cand) {
            let better = match best {
                None => true,
                Some(b) => (p.timestamp - t).abs() < (b.timestamp - t).abs(),
            };
            if better {
                best = Some(p);
            }
        }
    }
    let best = best.expect("non-empty trajectory");
    if (best.timestamp - t).abs() <= max_dt {
        Ok(best)
    } else {
        Err(Error::Association(format!(
            "no pose within {max_dt} s of t={t} (nearest at {})",
            best.timestamp
        )))
    }
}

/// Weighted running-average fusion settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionParams {
    pub max_weight: f32,
    /// Depth readings outside `[min_depth, max_depth]` meters are ignored.
    pub min_depth: f32,
    pub max_depth: f32,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            max_weight: 100.0,
            min_depth: 0.3,
            max_depth: 6.0,
        }
    }
}

/// Integrates one depth frame with projective (along the optical axis)
/// truncated distances. `pose` maps camera to world.
pub fn fuse_frame(
    vol: &mut TsdfVolume,
    frame: &DepthFrame,
    pose: &Isometry3<f64>,
    params: &FusionParams,
) {
    let world_to_cam = pose.inverse();
    let (d_min, d_max) = (vol.d_min() as f64, vol.d_max() as f64);
    let [nx, ny, nz] = vol.dims();
    let k = &frame.intrinsics;
    for kz in 0..nz {
        for jy in 0..ny {
            for ix in 0..nx {
                let pc = world_to_cam * vol.voxel_center(ix, jy, kz);
                if pc.z <= 0.0 {
                    continue;
                }
                let (u, v) = k.project(&pc);
                let (u, v) = (u.round(), v.round());
                if u < 0.0 || v < 0.0 || u >= frame.width as f64 || v >= frame.height as f64 {
                    continue;
                }
                let depth = frame.at(u as usize, v as usize);
                if depth <= 0.0 || depth < params.min_depth || depth > params.max_depth {
                    continue;
                }
                let sdf = depth as f64 - pc.z;
                if sdf < d_min {
                    continue;
                }
                let obs = sdf.min(d_max);
                let idx = vol.linear_index(ix, jy, kz);
                let w = vol.weights()[idx] as f64;
                let value = (vol.values()[idx] as f64 * w + obs) / (w + 1.0);
                let weight = (w + 1.0).min(params.max_weight as f64);
                vol.set(ix, jy, kz, value as f32, weight as f32);
            }
        }
    }
}

/// Sub-volume sampling settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarvestParams {
    pub stride: usize,
    pub emptiness_threshold: f64,
    /// Upper bound on the fraction of returned blocks that are empty.
    pub empty_fraction: f64,
}

impl Default for HarvestParams {
    fn default() -> Self {
        Self {
            stride: 8,
            emptiness_threshold: DEFAULT_EMPTINESS_THRESHOLD,
            empty_fraction: 0.02,
        }
    }
}

/// Window offsets along one axis: `floor((dim - 16) / stride) + 1` of them.
fn window_starts(dim: usize, stride: usize) -> Vec<usize> {
    if dim < BLOCK_EDGE {
        return Vec::new();
    }
    (0..=(dim - BLOCK_EDGE) / stride)
        .map(|i| i * stride)
        .collect()
}

/// Every 16³ window at `stride` with its six axis-permuted variants, unfiltered.
pub fn harvest_windows(vol: &TsdfVolume, stride: usize) -> Result<Vec<Block>> {
    if stride == 0 {
        return Err(Error::Config("harvest stride must be positive".into()));
    }
    let dims = vol.dims();
    let (xs, ys, zs) = (
        window_starts(dims[0], stride),
        window_starts(dims[1], stride),
        window_starts(dims[2], stride),
    );
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len() * 6);
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                let block = vol.extract_window([x, y, z])?;
                for id in 0..6 {
                    out.push(block.permute_axes(id)?);
                }
            }
        }
    }
    Ok(out)
}

/// Harvested windows filtered like the synthetic set: non-empty blocks are
/// kept, plus the first empty ones in scan order up to `empty_fraction`.
pub fn harvest_subvolumes(vol: &TsdfVolume, params: &HarvestParams) -> Result<Vec<Block>> {
    if !(0.0..=1.0).contains(&params.empty_fraction) {
        return Err(Error::Config(format!(
            "empty fraction {} outside [0, 1]",
            params.empty_fraction
        )));
    }
    let (empty, non_empty): (Vec<Block>, Vec<Block>) = harvest_windows(vol, params.stride)?
        .into_iter()
        .partition(|b| b.mean() > params.emptiness_threshold);
    let keep_empty = if params.empty_fraction >= 1.0 {
        empty.len()
    } else {
        let f = params.empty_fraction;
        ((f * non_empty.len() as f64 / (1.0 - f)).floor() as usize).min(empty.len())
    };
    let mut out = non_empty;
    out.extend(empty.into_iter().take(keep_empty));
    Ok(out)
}

/// Depth index and ground truth of a TUM sequence directory.
#[derive(Clone, Debug)]
pub struct TumSequence {
    pub root: PathBuf,
    /// `(timestamp, relative path)` rows of `depth.txt`.
    pub depth_index: Vec<(f64, PathBuf)>,
    pub ground_truth: Trajectory,
}

impl TumSequence {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let text = fs::read_to_string(root.join("depth.txt"))?;
        let mut depth_index = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(ts), Some(file)) = (parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected `timestamp filename`".into(),
                });
            };
            let ts = ts.parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            depth_index.push((ts, PathBuf::from(file)));
        }
        let ground_truth = parse_trajectory(root.join("groundtruth.txt"))?;
        Ok(Self {
            root,
            depth_index,
            ground_truth,
        })
    }

    /// Loads up to `limit` frames (all when `None`), each stamped from `depth.txt`.
    pub fn load_frames(
        &self,
        intrinsics: Intrinsics,
        depth_scale: f64,
        limit: Option<usize>,
    ) -> Result<Vec<DepthFrame>> {
        let n = limit
            .unwrap_or(self.depth_index.len())
            .min(self.depth_index.len());
        self.depth_index[..n]
            .iter()
            .map(|(ts, rel)| {
                let mut f = load_depth_frame(self.root.join(rel), intrinsics, depth_scale)?;
                f.timestamp = *ts;
                Ok(f)
            })
            .collect()
    }
}

/// Writes frames and ground truth in TUM layout: `depth/<timestamp>.png`,
/// `depth.txt` and `groundtruth.txt`.
pub fn write_tum_sequence(
    root: impl AsRef<Path>,
    frames: &[DepthFrame],
    ground_truth: &Trajectory,
    depth_scale: f64,
) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root.join("depth"))?;
    let mut index = String::from("# timestamp filename\n");
    for f in frames {
        let rel = format!("depth/{:.6}.png", f.timestamp);
        save_depth_frame(root.join(&rel), f, depth_scale)?;
        index.push_str(&format!("{:.6} {rel}\n", f.timestamp));
    }
    fs::write(root.join("depth.txt"), index)?;
    ground_truth.save_tum(root.join("groundtruth.txt"))
}
