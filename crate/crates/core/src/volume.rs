//! Dense TSDF storage: trilinear sampling, block extraction and insertion, and
//! the Gaussian-blur baseline.
//!
//! Values live at voxel centers; voxel `(i, j, k)` sits at
//! `origin + voxel_size * (i, j, k)` in world coordinates.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::binio::{self, expect_eof};
use crate::block::{Block, BlockIndex, BLOCK_EDGE, BLOCK_LEN};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TSDF";
const VERSION: u32 = 1;
const FLAG_WEIGHTS: u32 = 1;

/// Truncation interval used throughout the synthetic data pipeline, in meters.
pub const DEFAULT_TRUNCATION: (f32, f32) = (-0.04, 0.1);

/// A uniform lattice of truncated signed distances with fusion weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    dims: [usize; 3],
    voxel_size: f32,
    origin: [f32; 3],
    d_min: f32,
    d_max: f32,
    values: Vec<f32>,
    weights: Vec<f32>,
}

impl TsdfVolume {
    /// An unobserved volume: every voxel holds `d_max` with weight 0.
    pub fn new(
        dims: [usize; 3],
        voxel_size: f32,
        origin: [f32; 3],
        d_min: f32,
        d_max: f32,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "volume dims must be positive, got {dims:?}"
            )));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::Config(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        if !(d_min < 0.0 && d_max > 0.0) {
            return Err(Error::Config(format!(
                "truncation needs d_min < 0 < d_max, got [{d_min}, {d_max}]"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Config("volume origin must be finite".into()));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::Config(format!("volume dims {dims:?} overflow")))?;
        Ok(Self {
            dims,
            voxel_size,
            origin,
            d_min,
            d_max,
            values: vec![d_max; n],
            weights: vec![0.0; n],
        })
    }

    /// Samples a signed distance function at every voxel center, truncating
    /// into `[d_min, d_max]`. All voxels are marked observed.
    pub fn from_sdf(
        dims: [usize; 3],
        voxel_size: f32,
        origin: [f32; 3],
        d_min: f32,
        d_max: f32,
        sdf: impl Fn(&Point3<f64>) -> f64,
    ) -> Result<Self> {
        let mut vol = Self::new(dims, voxel_size, origin, d_min, d_max)?;
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = vol.voxel_center(i, j, k);
                    let d = sdf(&p).clamp(d_min as f64, d_max as f64) as f32;
                    let idx = vol.linear_index(i, j, k);
                    vol.values[idx] = d;
                    vol.weights[idx] = 1.0;
                }
            }
        }
        Ok(vol)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f32 {
        self.voxel_size
    }

    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }

    pub fn d_min(&self) -> f32 {
        self.d_min
    }

    pub fn d_max(&self) -> f32 {
        self.d_max
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when both volumes share dims, voxel size, origin and truncation bit for bit.
    pub fn same_geometry(&self, other: &TsdfVolume) -> bool {
        self.dims == other.dims
            && self.voxel_size.to_bits() == other.voxel_size.to_bits()
            && self
                .origin
                .iter()
                .zip(other.origin.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.d_min.to_bits() == other.d_min.to_bits()
            && self.d_max.to_bits() == other.d_max.to_bits()
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.linear_index(i, j, k)]
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize, k: usize) -> f32 {
        self.weights[self.linear_index(i, j, k)]
    }

    /// Writes a voxel, clamping the value into the truncation interval.
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f32, weight: f32) {
        let idx = self.linear_index(i, j, k);
        self.values[idx] = value.clamp(self.d_min, self.d_max);
        self.weights[idx] = weight.max(0.0);
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        let s = self.voxel_size as f64;
        Point3::new(
            self.origin[0] as f64 + s * i as f64,
            self.origin[1] as f64 + s * j as f64,
            self.origin[2] as f64 + s * k as f64,
        )
    }

    /// Continuous lattice coordinates of a world point.
    pub fn to_grid(&self, p: &Point3<f64>) -> Vector3<f64> {
        let s = self.voxel_size as f64;
        Vector3::new(
            (p.x - self.origin[0] as f64) / s,
            (p.y - self.origin[1] as f64) / s,
            (p.z - self.origin[2] as f64) / s,
        )
    }

    /// Trilinear interpolation of the eight voxels around `p`.
    ///
    /// Returns `None` when `p` is outside the interpolable interior (the convex
    /// hull of the voxel centers).
    pub fn sample_trilinear(&self, p: &Point3<f64>) -> Option<f64> {
        let g = self.to_grid(p);
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let d = self.dims[a];
            if d < 2 || !(g[a] >= 0.0 && g[a] <= (d - 1) as f64) {
                return None;
            }
            let i0 = (g[a].floor() as usize).min(d - 2);
            base[a] = i0;
            frac[a] = g[a] - i0 as f64;
        }
        let [i, j, k] = base;
        let [tx, ty, tz] = frac;
        let v = |di: usize, dj: usize, dk: usize| self.get(i + di, j + dj, k + dk) as f64;
        let c00 = v(0, 0, 0) * (1.0 - tx) + v(1, 0, 0) * tx;
        let c10 = v(0, 1, 0) * (1.0 - tx) + v(1, 1, 0) * tx;
        let c01 = v(0, 0, 1) * (1.0 - tx) + v(1, 0, 1) * tx;
        let c11 = v(0, 1, 1) * (1.0 - tx) + v(1, 1, 1) * tx;
        let c0 = c00 * (1.0 - ty) + c10 * ty;
        let c1 = c01 * (1.0 - ty) + c11 * ty;
        Some(c0 * (1.0 - tz) + c1 * tz)
    }

    /// Central-difference gradient of the trilinear field with step `voxel_size`.
    ///
    /// Returns `None` unless all six probe points are interpolable.
    pub fn gradient(&self, p: &Point3<f64>) -> Option<Vector3<f64>> {
        let h = self.voxel_size as f64;
        let mut g = Vector3::zeros();
        for a in 0..3 {
            let mut step = Vector3::zeros();
            step[a] = h;
            let fwd = self.sample_trilinear(&(p + step))?;
            let bwd = self.sample_trilinear(&(p - step))?;
            g[a] = (fwd - bwd) / (2.0 * h);
        }
        Some(g)
    }

    /// Number of full blocks along each axis; trailing partial blocks are ignored.
    pub fn block_grid(&self) -> [usize; 3] {
        [
            self.dims[0] / BLOCK_EDGE,
            self.dims[1] / BLOCK_EDGE,
            self.dims[2] / BLOCK_EDGE,
        ]
    }

    /// All full-block indices, x fastest.
    pub fn block_indices(&self) -> Vec<BlockIndex> {
        let [nx, ny, nz] = self.block_grid();
        let mut out = Vec::with_capacity(nx * ny * nz);
        for bz in 0..nz {
            for by in 0..ny {
                for bx in 0..nx {
                    out.push(BlockIndex::new(bx, by, bz));
                }
            }
        }
        out
    }

    fn check_window(&self, origin: [usize; 3]) -> Result<()> {
        for a in 0..3 {
            if origin[a] + BLOCK_EDGE > self.dims[a] {
                return Err(Error::Range(format!(
                    "16^3 window at voxel {origin:?} exceeds volume dims {:?}",
                    self.dims
                )));
            }
        }
        Ok(())
    }

    /// Normalized block at a block index.
    pub fn extract_block(&self, idx: BlockIndex) -> Result<Block> {
        self.extract_window(idx.voxel_origin())
    }

    /// Normalized 16³ window starting at an arbitrary voxel offset.
    pub fn extract_window(&self, origin: [usize; 3]) -> Result<Block> {
        self.check_window(origin)?;
        let lo = self.d_min as f64;
        let range = self.d_max as f64 - lo;
        let mut values = Vec::with_capacity(BLOCK_LEN);
        for z in 0..BLOCK_EDGE {
            for y in 0..BLOCK_EDGE {
                let row = self.linear_index(origin[0], origin[1] + y, origin[2] + z);
                for &v in &self.values[row..row + BLOCK_EDGE] {
                    values.push(((v as f64 - lo) / range).clamp(0.0, 1.0) as f32);
                }
            }
        }
        Block::new(values)
    }

    /// Denormalizes a block into the volume. Weights are left untouched.
    pub fn insert_block(&mut self, idx: BlockIndex, block: &Block) -> Result<()> {
        let origin = idx.voxel_origin();
        self.check_window(origin)?;
        let lo = self.d_min as f64;
        let range = self.d_max as f64 - lo;
        let values = block.values();
        for z in 0..BLOCK_EDGE {
            for y in 0..BLOCK_EDGE {
                let row = self.linear_index(origin[0], origin[1] + y, origin[2] + z);
                let src = &values[BLOCK_EDGE * (y + BLOCK_EDGE * z)..][..BLOCK_EDGE];
                for (dst, &b) in self.values[row..row + BLOCK_EDGE].iter_mut().zip(src) {
                    *dst = ((b as f64 * range + lo) as f32).clamp(self.d_min, self.d_max);
                }
            }
        }
        Ok(())
    }

    /// Sets every voxel weight of a block.
    pub fn set_block_weight(&mut self, idx: BlockIndex, weight: f32) -> Result<()> {
        let origin = idx.voxel_origin();
        self.check_window(origin)?;
        for z in 0..BLOCK_EDGE {
            for y in 0..BLOCK_EDGE {
                let row = self.linear_index(origin[0], origin[1] + y, origin[2] + z);
                self.weights[row..row + BLOCK_EDGE].fill(weight);
            }
        }
        Ok(())
    }

    /// Separable Gaussian blur with clamp-to-edge borders; the result is
    /// re-clamped into the truncation interval and keeps the input weights.
    pub fn gaussian_blur(&self, kernel_size: usize, sigma: f64) -> Result<TsdfVolume> {
        if kernel_size % 2 == 0 || kernel_size == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {kernel_size}"
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::Config(format!(
                "blur sigma must be positive, got {sigma}"
            )));
        }
        if self.dims.iter().any(|&d| d < kernel_size) {
            return Err(Error::Size(format!(
                "volume dims {:?} smaller than blur kernel {kernel_size}",
                self.dims
            )));
        }
        let kernel = gaussian_kernel(kernel_size, sigma);
        let blurred = blur_values(&self.values, self.dims, &kernel);
        let mut out = self.clone();
        for (dst, v) in out.values.iter_mut().zip(blurred) {
            *dst = (v as f32).clamp(self.d_min, self.d_max);
        }
        Ok(out)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        binio::write_magic(w, MAGIC, VERSION)?;
        for &d in &self.dims {
            binio::write_u32(w, d as u32)?;
        }
        binio::write_f32(w, self.voxel_size)?;
        for &o in &self.origin {
            binio::write_f32(w, o)?;
        }
        binio::write_f32(w, self.d_min)?;
        binio::write_f32(w, self.d_max)?;
        binio::write_u32(w, FLAG_WEIGHTS)?;
        binio::write_f32s(w, &self.values)?;
        binio::write_f32s(w, &self.weights)?;
        Ok(())
    }

    /// Reads a volume. Files without a weight section get weight 1 on every
    /// voxel below `d_max` and 0 elsewhere.
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        binio::read_magic(r, MAGIC, VERSION)?;
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            *d = binio::read_u32(r)? as usize;
        }
        let voxel_size = binio::read_f32(r)?;
        let mut origin = [0f32; 3];
        for o in origin.iter_mut() {
            *o = binio::read_f32(r)?;
        }
        let d_min = binio::read_f32(r)?;
        let d_max = binio::read_f32(r)?;
        let flags = binio::read_u32(r)?;
        if flags & !FLAG_WEIGHTS != 0 {
            return Err(Error::Format(format!("unknown volume flags {flags:#x}")));
        }
        let mut vol = Self::new(dims, voxel_size, origin, d_min, d_max)
            .map_err(|e| Error::Format(format!("invalid volume header: {e}")))?;
        let n = vol.len();
        let values = binio::read_f32s(r, n)?;
        if values.iter().any(|v| !(d_min..=d_max).contains(v)) {
            return Err(Error::Format(
                "volume value outside truncation interval".into(),
            ));
        }
        vol.weights = if flags & FLAG_WEIGHTS != 0 {
            let w = binio::read_f32s(r, n)?;
            if w.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::Format("negative or NaN volume weight".into()));
            }
            w
        } else {
            values
                .iter()
                .map(|&v| if v < d_max { 1.0 } else { 0.0 })
                .collect()
        };
        vol.values = values;
        expect_eof(r)?;
        Ok(vol)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

/// Normalized 1D Gaussian taps centered on the middle element.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Three 1D convolution passes with clamp-to-edge, no output clamping.
pub(crate) fn blur_values(values: &[f32], dims: [usize; 3], kernel: &[f64]) -> Vec<f64> {
    let mut buf: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0f64; buf.len()];
    let half = (kernel.len() / 2) as isize;
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis] as isize;
        let stride = strides[axis];
        for (idx, out) in tmp.iter_mut().enumerate() {
            let pos = ((idx / stride) % dims[axis]) as isize;
            let base = idx - pos as usize * stride;
            let mut acc = 0.0;
            for (t, &w) in kernel.iter().enumerate() {
                let q = (pos + t as isize - half).clamp(0, n - 1) as usize;
                acc += w * buf[base + q * stride];
            }
            *out = acc;
        }
        std::mem::swap(&mut buf, &mut tmp);
    }
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vol_with(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f32) -> TsdfVolume {
        let mut v = TsdfVolume::new(dims, 0.02, [0.0; 3], -0.04, 0.1).unwrap();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    v.set(i, j, k, f(i, j, k), 1.0);
                }
            }
        }
        v
    }

    #[test]
    fn new_volume_is_unobserved_free_space() {
        let v = TsdfVolume::new([4, 5, 6], 0.02, [0.0; 3], -0.04, 0.1).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.1));
        assert!(v.weights().iter().all(|&w| w == 0.0));
        assert!(TsdfVolume::new([4, 5, 6], 0.02, [0.0; 3], 0.04, 0.1).is_err());
    }

    #[test]
    fn trilinear_of_constant_field() {
        let v = vol_with([6, 6, 6], |_, _, _| 0.1);
        let p = Point3::new(0.0331, 0.051, 0.0777);
        assert!((v.sample_trilinear(&p).unwrap() - 0.1).abs() < 1e-7);
    }

    #[test]
    fn trilinear_exact_at_voxel_center() {
        let mut v = vol_with([6, 6, 6], |_, _, _| 0.05);
        v.set(2, 3, 4, -0.04, 1.0);
        let p = v.voxel_center(2, 3, 4);
        assert!((v.sample_trilinear(&p).unwrap() + 0.04).abs() < 1e-7);
    }

    #[test]
    fn trilinear_midpoint_of_ramp() {
        let v = vol_with([4, 4, 4], |i, _, _| if i <= 1 { 0.0 } else { 0.1 });
        let a = v.voxel_center(1, 1, 1);
        let b = v.voxel_center(2, 1, 1);
        let mid = Point3::from((a.coords + b.coords) / 2.0);
        assert!((v.sample_trilinear(&mid).unwrap() - 0.05).abs() < 1e-7);
    }

    #[test]
    fn trilinear_outside_is_none() {
        let v = vol_with([4, 4, 4], |_, _, _| 0.0);
        assert!(v
            .sample_trilinear(&Point3::new(-0.001, 0.02, 0.02))
            .is_none());
        assert!(v
            .sample_trilinear(&Point3::new(0.02, 0.0601, 0.02))
            .is_none());
        assert!(v.sample_trilinear(&v.voxel_center(3, 3, 3)).is_some());
    }

    #[test]
    fn gradient_of_plane_field() {
        let c = 0.13;
        let v = TsdfVolume::from_sdf([12, 12, 12], 0.02, [0.0; 3], -0.5, 0.5, |p| p.z - c).unwrap();
        for p in [Point3::new(0.1, 0.1, 0.1), Point3::new(0.05, 0.17, 0.08)] {
            let g = v.gradient(&p).unwrap();
            assert!((g - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-5, "{g}");
        }
    }

    #[test]
    fn gradient_of_constant_is_zero_and_margin_checked() {
        let v = vol_with([8, 8, 8], |_, _, _| 0.03);
        assert!(v.gradient(&Point3::new(0.07, 0.07, 0.07)).unwrap().norm() < 1e-9);
        assert!(v.gradient(&Point3::new(0.01, 0.07, 0.07)).is_none());
    }

    #[test]
    fn mirrored_field_negates_x_gradient() {
        let f = |i: usize, j: usize, k: usize| {
            ((i * i) as f32 * 0.002 + j as f32 * 0.001 - k as f32 * 0.003).clamp(-0.04, 0.1)
        };
        let v = vol_with([9, 9, 9], f);
        let m = vol_with([9, 9, 9], |i, j, k| f(8 - i, j, k));
        let p = Point3::new(0.05, 0.09, 0.1);
        let pm = Point3::new(0.16 - p.x, p.y, p.z);
        let g = v.gradient(&p).unwrap();
        let gm = m.gradient(&pm).unwrap();
        assert!((g.x + gm.x).abs() < 1e-6);
        assert!((g.y - gm.y).abs() < 1e-6 && (g.z - gm.z).abs() < 1e-6);
    }

    #[test]
    fn extract_block_normalization() {
        let v = vol_with([16, 16, 16], |_, _, _| 0.1);
        assert!(v
            .extract_block(BlockIndex::new(0, 0, 0))
            .unwrap()
            .values()
            .iter()
            .all(|&x| x == 1.0));
        let v = vol_with([16, 16, 16], |_, _, _| -0.04);
        assert!(v
            .extract_block(BlockIndex::new(0, 0, 0))
            .unwrap()
            .values()
            .iter()
            .all(|&x| x == 0.0));
        let v = vol_with([16, 16, 16], |_, _, _| 0.03);
        let b = v.extract_block(BlockIndex::new(0, 0, 0)).unwrap();
        assert!(b.values().iter().all(|&x| (x - 0.5).abs() < 1e-6));
    }

    #[test]
    fn block_index_range_errors() {
        let mut v = vol_with([20, 32, 16], |_, _, _| 0.0);
        assert_eq!(v.block_grid(), [1, 2, 1]);
        assert!(matches!(
            v.extract_block(BlockIndex::new(1, 0, 0)),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            v.insert_block(BlockIndex::new(0, 2, 0), &Block::filled(0.5)),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn insert_block_denormalizes() {
        let mut v = vol_with([16, 16, 16], |_, _, _| 0.0);
        let idx = BlockIndex::new(0, 0, 0);
        v.insert_block(idx, &Block::filled(1.0)).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.1));
        v.insert_block(idx, &Block::filled(0.5)).unwrap();
        assert!(v.values().iter().all(|&x| (x - 0.03).abs() < 1e-7));
    }

    #[test]
    fn gaussian_taps_sum_to_one() {
        let k = gaussian_kernel(9, 4.0 / 3.0);
        assert_eq!(k.len(), 9);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((k[0] - k[8]).abs() < 1e-15 && k[4] > k[3]);
    }

    #[test]
    fn blur_keeps_constant_volume() {
        let v = vol_with([10, 11, 12], |_, _, _| 0.042);
        let b = v.gaussian_blur(9, 4.0 / 3.0).unwrap();
        for (x, y) in v.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_preserves_interior_spike_mass() {
        let v = vol_with([21, 21, 21], |i, j, k| {
            if (i, j, k) == (10, 10, 10) {
                0.09
            } else {
                0.0
            }
        });
        let b = v.gaussian_blur(9, 4.0 / 3.0).unwrap();
        let before: f64 = v.values().iter().map(|&x| x as f64).sum();
        let after: f64 = b.values().iter().map(|&x| x as f64).sum();
        assert!((before - after).abs() < 1e-4, "{before} vs {after}");
    }

    #[test]
    fn blur_rejects_small_volume() {
        let v = vol_with([8, 16, 16], |_, _, _| 0.0);
        assert!(matches!(v.gaussian_blur(9, 4.0 / 3.0), Err(Error::Size(_))));
    }

    #[test]
    fn blur_commutes_with_offsets_before_clamping() {
        let dims = [9, 10, 11];
        let vals: Vec<f32> = (0..990).map(|i| ((i * 37 % 101) as f32) / 1000.0).collect();
        let shifted: Vec<f32> = vals.iter().map(|v| v + 0.25).collect();
        let k = gaussian_kernel(9, 4.0 / 3.0);
        let a = blur_values(&vals, dims, &k);
        let b = blur_values(&shifted, dims, &k);
        for (x, y) in a.iter().zip(&b) {
            assert!((x + 0.25 - y).abs() < 1e-6);
        }
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let mut v = vol_with([17, 16, 18], |i, j, k| {
            ((i + 2 * j + 3 * k) as f32 * 0.003 - 0.04).min(0.1)
        });
        v.set(1, 2, 3, 0.1, 0.0);
        let mut bytes = Vec::new();
        v.write_to(&mut bytes).unwrap();
        let back = TsdfVolume::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, v);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn read_rejects_garbage() {
        assert!(matches!(
            TsdfVolume::read_from(&mut &b"NOPE0000"[..]),
            Err(Error::Format(_))
        ));
        let v = vol_with([2, 2, 2], |_, _, _| 0.0);
        let mut bytes = Vec::new();
        v.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            TsdfVolume::read_from(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }

    proptest! {
        #[test]
        fn extract_insert_round_trip(seed in 0u64..1000, bx in 0usize..2, bz in 0usize..2) {
            let f = move |i: usize, j: usize, k: usize| {
                let h = (i as u64 * 73856093) ^ (j as u64 * 19349663) ^ (k as u64 * 83492791) ^ seed;
                -0.04 + 0.14 * ((h % 1000) as f32 / 999.0)
            };
            let mut v = vol_with([32, 16, 40], f);
            let before = v.clone();
            let idx = BlockIndex::new(bx, 0, bz);
            let b = v.extract_block(idx).unwrap();
            v.insert_block(idx, &b).unwrap();
            for (x, y) in v.values().iter().zip(before.values()) {
                prop_assert!((x - y).abs() <= 1e-7);
            }
        }

        #[test]
        fn trilinear_bounded_by_support(
            x in 0.0f64..0.1, y in 0.0f64..0.1, z in 0.0f64..0.1, seed in 0u64..100
        ) {
            let f = move |i: usize, j: usize, k: usize| {
                let h = (i as u64 * 31 + j as u64 * 17 + k as u64 * 7 + seed) % 29;
                -0.04 + h as f32 * 0.005
            };
            let v = vol_with([6, 6, 6], f);
            let p = Point3::new(x, y, z);
            let s = v.sample_trilinear(&p).unwrap();
            let g = v.to_grid(&p);
            let (i, j, k) = ((g.x.floor() as usize).min(4), (g.y.floor() as usize).min(4), (g.z.floor() as usize).min(4));
            let mut lo = f64::MAX;
            let mut hi = f64::MIN;
            for dk in 0..2 { for dj in 0..2 { for di in 0..2 {
                let c = v.get(i + di, j + dj, k + dk) as f64;
                lo = lo.min(c);
                hi = hi.max(c);
            }}}
            prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
        }
    }
}
