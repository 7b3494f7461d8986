//! Synthetic depth images: sphere tracing of analytic scenes and ray casting
//! of the zero level set of a volume.

use nalgebra::{Isometry3, Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ingest::{DepthFrame, Intrinsics};
use crate::shapes::Scene;
use crate::volume::TsdfVolume;

/// Image size, intrinsics and depth range of a virtual camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Camera {
    /// A `width × height` camera with focal length `focal` pixels, centered principal point.
    pub fn new(width: usize, height: usize, focal: f64) -> Result<Self> {
        let intrinsics = Intrinsics::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
        )?;
        Ok(Self {
            width,
            height,
            intrinsics,
            min_depth: 0.1,
            max_depth: 8.0,
        })
    }

    /// Camera-frame ray through pixel `(u, v)`, scaled so its z component is 1.
    fn ray(&self, u: usize, v: usize) -> Vector3<f64> {
        let k = &self.intrinsics;
        Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0)
    }

    fn render_with(
        &self,
        timestamp: f64,
        pose: &Isometry3<f64>,
        mut hit: impl FnMut(&Point3<f64>, &Vector3<f64>) -> Option<f64>,
    ) -> DepthFrame {
        let origin = Point3::from(pose.translation.vector);
        let mut depth = vec![0.0f32; self.width * self.height];
        for v in 0..self.height {
            for u in 0..self.width {
                let ray = self.ray(u, v);
                let dir = pose.rotation * ray.normalize();
                if let Some(t) = hit(&origin, &dir) {
                    // Depth is the optical-axis coordinate of the hit.
                    let z = t / ray.norm();
                    if z >= self.min_depth && z <= self.max_depth {
                        depth[v * self.width + u] = z as f32;
                    }
                }
            }
        }
        DepthFrame::new(timestamp, self.width, self.height, depth, self.intrinsics)
            .expect("rendered depth is finite and non-negative")
    }

    /// Sphere traces an analytic scene from a camera-to-world pose.
    pub fn render_scene(&self, scene: &Scene, pose: &Isometry3<f64>, timestamp: f64) -> DepthFrame {
        let t_max = self.max_depth * 2.0;
        self.render_with(timestamp, pose, |o, dir| {
            let mut t = 0.0;
            for _ in 0..512 {
                let d = scene.sdf_eval(&(o + dir * t));
                if d.abs() < 1e-7 {
                    return Some(t);
                }
                if d < 0.0 {
                    return None;
                }
                t += d;
                if t > t_max {
                    return None;
                }
            }
            None
        })
    }

    /// Casts rays against the zero crossings (positive to negative) of a
    /// volume's trilinear field; hits are refined by bisection.
    pub fn render_volume(
        &self,
        vol: &TsdfVolume,
        pose: &Isometry3<f64>,
        timestamp: f64,
    ) -> DepthFrame {
        let vs = vol.voxel_size() as f64;
        let t_max = self.max_depth * 2.0;
        self.render_with(timestamp, pose, |o, dir| {
            let mut t = 0.0;
            let mut prev: Option<(f64, f64)> = None;
            let mut entered = false;
            while t <= t_max {
                match vol.sample_trilinear(&(o + dir * t)) {
                    None => {
                        if entered {
                            return None;
                        }
                        prev = None;
                        t += vs;
                    }
                    Some(d) => {
                        entered = true;
                        if let Some((tp, dp)) = prev {
                            if dp > 0.0 && d <= 0.0 {
                                return Some(bisect(vol, o, dir, tp, t));
                            }
                        }
                        prev = Some((t, d));
                        t += if d > 0.0 {
                            (0.8 * d).max(0.25 * vs)
                        } else {
                            0.25 * vs
                        };
                    }
                }
            }
            None
        })
    }
}

fn bisect(vol: &TsdfVolume, o: &Point3<f64>, dir: &Vector3<f64>, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        match vol.sample_trilinear(&(o + dir * mid)) {
            Some(d) if d > 0.0 => lo = mid,
            _ => hi = mid,
        }
    }
    0.5 * (lo + hi)
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma` meters to every
/// valid pixel; results that drop to zero or below become invalid.
pub fn add_depth_noise(frame: &DepthFrame, sigma: f64, seed: u64) -> Result<DepthFrame> {
    let normal =
        Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("noise sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = frame.clone();
    for d in out.depth.iter_mut() {
        if *d > 0.0 {
            let noisy = *d as f64 + normal.sample(&mut rng);
            *d = if noisy > 0.0 { noisy as f32 } else { 0.0 };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{Primitive, ShapeSpec};

    fn floor_scene() -> Scene {
        Scene::new(vec![ShapeSpec::new(
            Primitive::Plane,
            Isometry3::identity(),
        )
        .unwrap()])
    }

    /// Camera 1 m above the floor looking straight down (+z_cam is -z_world).
    fn looking_down() -> Isometry3<f64> {
        let rot =
            nalgebra::UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
        Isometry3::from_parts(nalgebra::Translation3::new(0.0, 0.0, 1.0), rot)
    }

    #[test]
    fn floor_seen_from_above_has_constant_depth() {
        let cam = Camera::new(32, 24, 30.0).unwrap();
        let frame = cam.render_scene(&floor_scene(), &looking_down(), 0.0);
        assert!(
            frame.depth.iter().all(|&d| (d - 1.0).abs() < 1e-5),
            "{:?}",
            &frame.depth[..4]
        );
    }

    #[test]
    fn volume_render_matches_analytic_render() {
        let scene = floor_scene();
        let vol = TsdfVolume::from_sdf([40, 40, 40], 0.02, [-0.4, -0.4, -0.3], -0.04, 0.1, |p| {
            scene.sdf_eval(p)
        })
        .unwrap();
        let cam = Camera::new(16, 12, 20.0).unwrap();
        let pose = Isometry3::from_parts(
            nalgebra::Translation3::new(0.0, 0.0, 0.45),
            looking_down().rotation,
        );
        let a = cam.render_scene(&scene, &pose, 0.0);
        let b = cam.render_volume(&vol, &pose, 0.0);
        for (x, y) in a.depth.iter().zip(&b.depth) {
            assert!(*y > 0.0);
            assert!((x - y).abs() < 1e-4, "{x} vs {y}");
        }
    }

    #[test]
    fn noise_is_seeded_and_keeps_invalid_pixels() {
        let intr = Intrinsics::new(10.0, 10.0, 1.0, 1.0).unwrap();
        let f = DepthFrame::new(0.0, 2, 2, vec![1.0, 0.0, 2.0, 3.0], intr).unwrap();
        let a = add_depth_noise(&f, 0.01, 5).unwrap();
        assert_eq!(a, add_depth_noise(&f, 0.01, 5).unwrap());
        assert_eq!(a.depth[1], 0.0);
        assert!(a.depth[0] != 1.0 && (a.depth[0] - 1.0).abs() < 0.1);
    }
}
