//! Analytic signed-distance primitives and the synthetic training-set generator.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::binio;
use crate::block::{inverse_permutation, Block, BLOCK_EDGE, BLOCK_LEN};
use crate::error::{Error, Result};
use crate::volume::DEFAULT_TRUNCATION;

/// Default voxel edge of synthetic windows, meters.
pub const DEFAULT_VOXEL_SIZE: f32 = 0.02;
/// Blocks whose mean normalized distance exceeds this are mostly free space.
pub const DEFAULT_EMPTINESS_THRESHOLD: f64 = 0.85;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    Cuboid,
    Cylinder,
    Barrel,
    ConcaveCorner,
    Plane,
    Empty,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Cuboid,
        Category::Cylinder,
        Category::Barrel,
        Category::ConcaveCorner,
        Category::Plane,
        Category::Empty,
    ];
}

/// Shape geometry in its local frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// Axis-aligned box centered at the origin.
    Cuboid { half_extents: Vector3<f64> },
    /// Capped cylinder along z, centered at the origin.
    Cylinder { radius: f64, half_height: f64 },
    /// Sphere of `radius` cut by the slab `|z| <= half_height`: curved staves, flat caps.
    Barrel { radius: f64, half_height: f64 },
    /// Solid everywhere except the open octant `x, y, z > 0`.
    ConcaveCorner,
    /// Solid half-space `z < 0`.
    Plane,
    /// No surface at all.
    Empty,
}

impl Primitive {
    pub fn category(&self) -> Category {
        match self {
            Primitive::Cuboid { .. } => Category::Cuboid,
            Primitive::Cylinder { .. } => Category::Cylinder,
            Primitive::Barrel { .. } => Category::Barrel,
            Primitive::ConcaveCorner => Category::ConcaveCorner,
            Primitive::Plane => Category::Plane,
            Primitive::Empty => Category::Empty,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Cuboid { half_extents } => half_extents.iter().all(|&e| e > 0.0),
            Primitive::Cylinder {
                radius,
                half_height,
            }
            | Primitive::Barrel {
                radius,
                half_height,
            } => radius > 0.0 && half_height > 0.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "non-positive shape parameter in {self:?}"
            )))
        }
    }

    /// Signed distance in the local frame, negative inside.
    pub fn local_sdf(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Primitive::Cuboid { half_extents } => {
                let q = p.abs() - half_extents;
                q.sup(&Vector3::zeros()).norm() + q.max().min(0.0)
            }
            Primitive::Cylinder {
                radius,
                half_height,
            } => {
                let dx = p.xy().norm() - radius;
                let dz = p.z.abs() - half_height;
                dx.max(dz).min(0.0) + (dx.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt()
            }
            Primitive::Barrel {
                radius,
                half_height,
            } => (p.norm() - radius).max(p.z.abs() - half_height),
            Primitive::ConcaveCorner => {
                if p.x > 0.0 && p.y > 0.0 && p.z > 0.0 {
                    p.min()
                } else {
                    -p.inf(&Vector3::zeros()).norm()
                }
            }
            Primitive::Plane => p.z,
            Primitive::Empty => f64::INFINITY,
        }
    }
}

/// A primitive placed in the world by a rigid pose (local to world).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeSpec {
    pub primitive: Primitive,
    pub pose: Isometry3<f64>,
}

impl ShapeSpec {
    pub fn new(primitive: Primitive, pose: Isometry3<f64>) -> Result<Self> {
        primitive.validate()?;
        Ok(Self { primitive, pose })
    }

    pub fn category(&self) -> Category {
        self.primitive.category()
    }

    /// Signed distance of a world point, negative inside.
    pub fn sdf_eval(&self, p: &Point3<f64>) -> f64 {
        let local = self.pose.inverse_transform_point(p);
        self.primitive.local_sdf(&local.coords)
    }
}

/// Union of shapes; its distance is the minimum over members.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub shapes: Vec<ShapeSpec>,
}

impl Scene {
    pub fn new(shapes: Vec<ShapeSpec>) -> Self {
        Self { shapes }
    }

    pub fn sdf_eval(&self, p: &Point3<f64>) -> f64 {
        self.shapes
            .iter()
            .map(|s| s.sdf_eval(p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Samples any distance function on a 16³ lattice starting at `window_origin`
/// (the center of voxel (0,0,0)), truncates and normalizes.
pub fn sample_block(
    sdf: impl Fn(&Point3<f64>) -> f64,
    window_origin: &Point3<f64>,
    voxel_size: f64,
    truncation: (f32, f32),
) -> Block {
    let (lo, hi) = (truncation.0 as f64, truncation.1 as f64);
    Block::from_fn(|x, y, z| {
        let p = window_origin + Vector3::new(x as f64, y as f64, z as f64) * voxel_size;
        let d = sdf(&p).clamp(lo, hi);
        ((d - lo) / (hi - lo)) as f32
    })
}

/// One shape sampled into a block with the default truncation.
pub fn sample_shape_block(
    shape: &ShapeSpec,
    window_origin: &Point3<f64>,
    voxel_size: f64,
) -> Block {
    sample_block(
        |p| shape.sdf_eval(p),
        window_origin,
        voxel_size,
        DEFAULT_TRUNCATION,
    )
}

/// Re-indexes a block by one of the six axis orderings (0 = identity).
pub fn reflect_block(block: &Block, permutation_id: usize) -> Result<Block> {
    block.permute_axes(permutation_id)
}

/// Permutation id undoing `permutation_id`.
pub fn reflection_inverse(permutation_id: usize) -> Result<usize> {
    inverse_permutation(permutation_id)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub sample_count: usize,
    pub rng_seed: u64,
    /// Fraction of the returned blocks that may be (intentionally kept) empty ones.
    pub empty_fraction: f64,
    pub emptiness_threshold: f64,
    pub truncation: (f32, f32),
    pub voxel_size: f32,
}

impl DatasetSpec {
    pub fn new(sample_count: usize, rng_seed: u64) -> Self {
        Self {
            sample_count,
            rng_seed,
            empty_fraction: 0.02,
            emptiness_threshold: DEFAULT_EMPTINESS_THRESHOLD,
            truncation: DEFAULT_TRUNCATION,
            voxel_size: DEFAULT_VOXEL_SIZE,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::Config("sample count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.empty_fraction) {
            return Err(Error::Config(format!(
                "empty fraction {} outside [0, 1]",
                self.empty_fraction
            )));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::Config("voxel size must be positive".into()));
        }
        if !(self.truncation.0 < 0.0 && self.truncation.1 > 0.0) {
            return Err(Error::Config("truncation needs d_min < 0 < d_max".into()));
        }
        Ok(())
    }
}

/// Bookkeeping from a generator run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GenerationStats {
    /// Shapes drawn per category, in `Category::ALL` order (kept or not).
    pub drawn: [usize; 6],
    pub kept_empty: usize,
    pub kept_nonempty: usize,
    pub draws: usize,
}

/// The 24 proper rotations mapping coordinate axes onto coordinate axes.
fn axis_aligned_rotations() -> Vec<Rotation3<f64>> {
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut out = Vec::with_capacity(24);
    for p in perms {
        for signs in 0..8u32 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(Rotation3::from_matrix_unchecked(m));
            }
        }
    }
    out
}

fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let q = nalgebra::Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    UnitQuaternion::from_quaternion(q)
}

/// Draws one random shape placed around a window center.
///
/// Extents and radii are uniform in [0.1, 1.0] m; the translation is uniform
/// within half a window of the center; rotations are uniform over SO(3), except
/// that planes and concave corners are axis aligned one time in four.
pub fn random_shape(
    rng: &mut impl Rng,
    window_center: &Point3<f64>,
    half_window: f64,
) -> ShapeSpec {
    let category = Category::ALL[rng.random_range(0..Category::ALL.len())];
    let mut extent = || rng.random_range(0.1..=1.0);
    let primitive = match category {
        Category::Cuboid => Primitive::Cuboid {
            half_extents: Vector3::new(extent(), extent(), extent()),
        },
        Category::Cylinder => Primitive::Cylinder {
            radius: extent(),
            half_height: extent(),
        },
        Category::Barrel => Primitive::Barrel {
            radius: extent(),
            half_height: extent(),
        },
        Category::ConcaveCorner => Primitive::ConcaveCorner,
        Category::Plane => Primitive::Plane,
        Category::Empty => Primitive::Empty,
    };
    let axis_alignable = matches!(category, Category::Plane | Category::ConcaveCorner);
    let rotation = if axis_alignable && rng.random_bool(0.25) {
        let table = axis_aligned_rotations();
        UnitQuaternion::from_rotation_matrix(&table[rng.random_range(0..table.len())])
    } else {
        random_rotation(rng)
    };
    let offset = Vector3::new(
        rng.random_range(-half_window..=half_window),
        rng.random_range(-half_window..=half_window),
        rng.random_range(-half_window..=half_window),
    );
    let pose = Isometry3::from_parts(Translation3::from(window_center.coords + offset), rotation);
    ShapeSpec { primitive, pose }
}

/// Per-sample RNG: one ChaCha stream per draw index.
fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates exactly `spec.sample_count` synthetic blocks.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<Block>> {
    generate_dataset_with_stats(spec).map(|(blocks, _)| blocks)
}

pub fn generate_dataset_with_stats(spec: &DatasetSpec) -> Result<(Vec<Block>, GenerationStats)> {
    spec.validate()?;
    let m = spec.sample_count;
    let target_empty = ((spec.empty_fraction * m as f64).round() as usize).min(m);
    let target_nonempty = m - target_empty;
    let budget = 50 * m + 1000;

    let vs = spec.voxel_size as f64;
    let window_origin = Point3::origin();
    let center = Point3::from(Vector3::repeat(vs * (BLOCK_EDGE - 1) as f64 / 2.0));
    let half_window = vs * BLOCK_EDGE as f64 / 2.0;

    let mut stats = GenerationStats::default();
    let mut blocks = Vec::with_capacity(m);
    while blocks.len() < m {
        if stats.draws >= budget {
            return Err(Error::Generation(format!(
                "only {} of {m} blocks after {budget} draws ({} empty, {} non-empty)",
                blocks.len(),
                stats.kept_empty,
                stats.kept_nonempty
            )));
        }
        let mut rng = sample_rng(spec.rng_seed, stats.draws as u64);
        stats.draws += 1;
        let shape = random_shape(&mut rng, &center, half_window);
        let cat = Category::ALL
            .iter()
            .position(|c| *c == shape.category())
            .unwrap();
        stats.drawn[cat] += 1;
        let block = sample_block(|p| shape.sdf_eval(p), &window_origin, vs, spec.truncation);
        if block.mean() > spec.emptiness_threshold {
            if stats.kept_empty < target_empty {
                stats.kept_empty += 1;
                blocks.push(block);
            }
        } else if stats.kept_nonempty < target_nonempty {
            stats.kept_nonempty += 1;
            blocks.push(block);
        }
    }
    Ok((blocks, stats))
}

const DATASET_MAGIC: &[u8; 4] = b"TBLK";
const DATASET_VERSION: u32 = 1;

pub fn write_blocks(w: &mut impl Write, blocks: &[Block]) -> Result<()> {
    binio::write_magic(w, DATASET_MAGIC, DATASET_VERSION)?;
    binio::write_u64(w, blocks.len() as u64)?;
    binio::write_u32(w, BLOCK_EDGE as u32)?;
    for b in blocks {
        binio::write_f32s(w, b.values())?;
    }
    Ok(())
}

pub fn read_blocks(r: &mut impl Read) -> Result<Vec<Block>> {
    binio::read_magic(r, DATASET_MAGIC, DATASET_VERSION)?;
    let count = binio::read_u64(r)? as usize;
    let edge = binio::read_u32(r)? as usize;
    if edge != BLOCK_EDGE {
        return Err(Error::Format(format!("unsupported block edge {edge}")));
    }
    let mut blocks = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let values = binio::read_f32s(r, BLOCK_LEN)?;
        blocks.push(Block::new(values).map_err(|e| Error::Format(e.to_string()))?);
    }
    binio::expect_eof(r)?;
    Ok(blocks)
}

pub fn save_blocks(path: impl AsRef<Path>, blocks: &[Block]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_blocks(&mut w, blocks)?;
    w.flush()?;
    Ok(())
}

pub fn load_blocks(path: impl AsRef<Path>) -> Result<Vec<Block>> {
    read_blocks(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_cube() -> ShapeSpec {
        ShapeSpec::new(
            Primitive::Cuboid {
                half_extents: Vector3::repeat(0.5),
            },
            Isometry3::identity(),
        )
        .unwrap()
    }

    #[test]
    fn cuboid_distances() {
        let c = unit_cube();
        assert!((c.sdf_eval(&Point3::new(1.0, 0.0, 0.0)) - 0.5).abs() < 1e-12);
        assert!((c.sdf_eval(&Point3::origin()) + 0.5).abs() < 1e-12);
        assert!((c.sdf_eval(&Point3::new(1.0, 1.0, 0.0)) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let bad = Primitive::Cylinder {
            radius: 0.0,
            half_height: 1.0,
        };
        assert!(ShapeSpec::new(bad, Isometry3::identity()).is_err());
    }

    #[test]
    fn corner_and_cylinder_distances() {
        let corner = ShapeSpec::new(Primitive::ConcaveCorner, Isometry3::identity()).unwrap();
        assert!((corner.sdf_eval(&Point3::new(0.3, 0.2, 0.5)) - 0.2).abs() < 1e-12);
        assert!((corner.sdf_eval(&Point3::new(-0.3, -0.4, 0.5)) + 0.5).abs() < 1e-12);
        let cyl = ShapeSpec::new(
            Primitive::Cylinder {
                radius: 0.5,
                half_height: 1.0,
            },
            Isometry3::identity(),
        )
        .unwrap();
        assert!((cyl.sdf_eval(&Point3::new(0.0, 0.9, 0.0)) - 0.4).abs() < 1e-12);
        assert!((cyl.sdf_eval(&Point3::new(0.0, 0.0, 1.5)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_shape_samples_to_free_space() {
        let e = ShapeSpec::new(Primitive::Empty, Isometry3::identity()).unwrap();
        let b = sample_shape_block(&e, &Point3::origin(), 0.02);
        assert!(b.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn horizontal_plane_block_ramps_along_z() {
        let vs = 0.02;
        let center_z = 7.5 * vs;
        let plane =
            ShapeSpec::new(Primitive::Plane, Isometry3::translation(0.0, 0.0, center_z)).unwrap();
        let b = sample_shape_block(&plane, &Point3::origin(), vs);
        // Normalized level of the zero crossing.
        let (lo, hi) = DEFAULT_TRUNCATION;
        let zero_level = (-lo / (hi - lo)) as f32;
        for z in 0..BLOCK_EDGE {
            for y in 0..BLOCK_EDGE {
                for x in 0..BLOCK_EDGE {
                    let v = b.get(x, y, z);
                    if z < 8 {
                        assert!(v < zero_level);
                    } else {
                        assert!(v > zero_level);
                    }
                    if z > 0 {
                        assert!(v >= b.get(x, y, z - 1));
                    }
                }
            }
        }
    }

    #[test]
    fn dataset_is_seeded_and_sized() {
        let spec = DatasetSpec::new(100, 7);
        let a = generate_dataset(&spec).unwrap();
        let b = generate_dataset(&spec).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        let other = generate_dataset(&DatasetSpec::new(100, 8)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn no_empty_blocks_without_empty_fraction() {
        let mut spec = DatasetSpec::new(150, 3);
        spec.empty_fraction = 0.0;
        let blocks = generate_dataset(&spec).unwrap();
        assert!(blocks.iter().all(|b| b.mean() <= spec.emptiness_threshold));
    }

    #[test]
    fn empty_fraction_is_honored() {
        let mut spec = DatasetSpec::new(200, 5);
        spec.empty_fraction = 0.1;
        let (blocks, stats) = generate_dataset_with_stats(&spec).unwrap();
        assert_eq!(stats.kept_empty, 20);
        assert_eq!(
            blocks
                .iter()
                .filter(|b| b.mean() > spec.emptiness_threshold)
                .count(),
            20
        );
    }

    #[test]
    fn unreachable_request_reports_error() {
        let mut spec = DatasetSpec::new(20, 1);
        spec.emptiness_threshold = -1.0;
        spec.empty_fraction = 0.0;
        assert!(matches!(generate_dataset(&spec), Err(Error::Generation(_))));
    }

    #[test]
    fn category_draws_are_uniform() {
        let (_, stats) = generate_dataset_with_stats(&DatasetSpec::new(3000, 11)).unwrap();
        let n = stats.draws as f64;
        let p = 1.0 / 6.0;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for &c in &stats.drawn {
            assert!((c as f64 - n * p).abs() <= 3.0 * sigma, "{:?}", stats.drawn);
        }
    }

    #[test]
    fn axis_aligned_rotation_table() {
        let t = axis_aligned_rotations();
        assert_eq!(t.len(), 24);
        for r in &t {
            assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_file_round_trip() {
        let blocks = generate_dataset(&DatasetSpec::new(5, 2)).unwrap();
        let mut bytes = Vec::new();
        write_blocks(&mut bytes, &blocks).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 8 + 4 + 5 * BLOCK_LEN * 4);
        let back = read_blocks(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, blocks);
        let mut again = Vec::new();
        write_blocks(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
    }

    fn exact_shape(kind: u8, a: f64, b: f64, c: f64) -> ShapeSpec {
        let primitive = match kind % 4 {
            0 => Primitive::Cuboid {
                half_extents: Vector3::new(a, b, c),
            },
            1 => Primitive::Cylinder {
                radius: a,
                half_height: b,
            },
            2 => Primitive::ConcaveCorner,
            _ => Primitive::Plane,
        };
        let pose = Isometry3::new(Vector3::new(c, -a, b) * 0.3, Vector3::new(a, b, -c));
        ShapeSpec::new(primitive, pose).unwrap()
    }

    fn arb_point() -> impl Strategy<Value = Point3<f64>> {
        (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn exact_shapes_are_one_lipschitz(
            kind in 0u8..4, a in 0.1f64..1.0, b in 0.1f64..1.0, c in 0.1f64..1.0,
            p in arb_point(), q in arb_point()
        ) {
            let s = exact_shape(kind, a, b, c);
            prop_assert!((s.sdf_eval(&p) - s.sdf_eval(&q)).abs() <= (p - q).norm() + 1e-9);
        }

        #[test]
        fn barrel_is_one_lipschitz(r in 0.1f64..1.0, h in 0.1f64..1.0, p in arb_point(), q in arb_point()) {
            let s = ShapeSpec::new(Primitive::Barrel { radius: r, half_height: h }, Isometry3::identity()).unwrap();
            prop_assert!((s.sdf_eval(&p) - s.sdf_eval(&q)).abs() <= (p - q).norm() + 1e-9);
        }

        #[test]
        fn joint_rigid_motion_preserves_distance(
            kind in 0u8..4, a in 0.1f64..1.0, b in 0.1f64..1.0, c in 0.1f64..1.0,
            p in arb_point(), t in arb_point(), axis in arb_point()
        ) {
            let s = exact_shape(kind, a, b, c);
            let motion = Isometry3::new(t.coords, axis.coords);
            let moved = ShapeSpec::new(s.primitive, motion * s.pose).unwrap();
            prop_assert!((moved.sdf_eval(&(motion * p)) - s.sdf_eval(&p)).abs() < 1e-9);
        }

        #[test]
        fn surface_offsets_have_consistent_sign(
            kind in 0u8..4, a in 0.1f64..1.0, b in 0.1f64..1.0, c in 0.1f64..1.0, p in arb_point()
        ) {
            let s = exact_shape(kind, a, b, c);
            let h = 1e-6;
            let grad = Vector3::new(
                s.sdf_eval(&(p + Vector3::x() * h)) - s.sdf_eval(&(p - Vector3::x() * h)),
                s.sdf_eval(&(p + Vector3::y() * h)) - s.sdf_eval(&(p - Vector3::y() * h)),
                s.sdf_eval(&(p + Vector3::z() * h)) - s.sdf_eval(&(p - Vector3::z() * h)),
            ) / (2.0 * h);
            prop_assume!((grad.norm() - 1.0).abs() < 1e-3);
            let n = grad.normalize();
            let surface = p - n * s.sdf_eval(&p);
            prop_assume!(s.sdf_eval(&surface).abs() < 1e-9);
            prop_assert!(s.sdf_eval(&(surface - n * 1e-3)) < 0.0);
            prop_assert!(s.sdf_eval(&(surface + n * 1e-3)) > 0.0);
        }

        #[test]
        fn sampled_blocks_are_in_unit_range(seed in 0u64..500) {
            let mut rng = sample_rng(seed, 0);
            let s = random_shape(&mut rng, &Point3::new(0.15, 0.15, 0.15), 0.16);
            let b = sample_shape_block(&s, &Point3::origin(), 0.02);
            prop_assert!(b.values().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(reflect_block(&b, 3).is_ok());
        }
    }
}
