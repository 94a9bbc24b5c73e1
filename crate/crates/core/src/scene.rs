//! The optimizable 3D Gaussian set and its covariance geometry.
//!
//! Parameters are stored pre-activation so the optimizer works in
//! unconstrained space: sigmoid for opacity and grayscale color, exp for
//! scale, normalization for the rotation quaternion.

use crate::camera::CameraView;
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

/// Low-pass floor added to the diagonal of every projected 2D covariance so
/// each splat covers at least about one pixel and stays invertible.
pub const COV2D_FLOOR: f64 = 0.3;

/// Camera-space depth below which a Gaussian is culled.
pub const NEAR_PLANE: f64 = 0.01;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic 3D Gaussian primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    /// World-space mean.
    pub position: Vector3<f64>,
    /// Grayscale radiance coefficient, pre-sigmoid.
    pub color: f64,
    /// Opacity, pre-sigmoid.
    pub opacity_logit: f64,
    /// Rotation quaternion (w, x, y, z); normalized before use.
    pub rotation: Vector4<f64>,
    /// Per-axis scale factors, pre-exp.
    pub log_scale: Vector3<f64>,
}

impl Gaussian {
    pub fn activated_opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn activated_color(&self) -> f64 {
        sigmoid(self.color)
    }

    pub fn activated_scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.color.is_finite()
            && self.opacity_logit.is_finite()
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
    }
}

/// Rotation matrix of a quaternion (w, x, y, z), normalizing first.
pub fn quaternion_to_rotation(q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    let n = q.norm();
    if n < 1e-12 {
        return Err(Error::InvalidArgument("zero quaternion".into()));
    }
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Symmetric positive semi-definite 3x3 world-space covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3(pub Matrix3<f64>);

/// Builds the world covariance R S S^T R^T from a rotation quaternion and
/// positive per-axis scales.
pub fn build_covariance(rotation: &Vector4<f64>, scales: &Vector3<f64>) -> Result<Covariance3> {
    let r = quaternion_to_rotation(rotation)?;
    let d = Matrix3::from_diagonal(&scales.map(|s| s * s));
    Ok(Covariance3(r * d * r.transpose()))
}

/// Pinhole projection Jacobian at a camera-space point.
pub fn projection_jacobian(fx: f64, fy: f64, mean_cam: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
    let (x, y, z) = (mean_cam.x, mean_cam.y, mean_cam.z);
    nalgebra::Matrix2x3::new(
        fx / z,
        0.0,
        -fx * x / (z * z),
        0.0,
        fy / z,
        -fy * y / (z * z),
    )
}

/// Projects a world covariance to the image plane: the 2x2 matrix
/// J W Sigma W^T J^T plus the diagonal low-pass floor. Rejects points at or
/// behind the near plane.
pub fn project_covariance(
    sigma: &Covariance3,
    view: &CameraView,
    mean_cam: &Vector3<f64>,
) -> Result<Matrix2<f64>> {
    if mean_cam.z <= NEAR_PLANE {
        return Err(Error::InvalidArgument(format!(
            "depth {} at or behind near plane",
            mean_cam.z
        )));
    }
    let j = projection_jacobian(view.intrinsics.fx, view.intrinsics.fy, mean_cam);
    let sigma_cam = view.rotation * sigma.0 * view.rotation.transpose();
    let mut s2 = j * sigma_cam * j.transpose();
    s2[(0, 0)] += COV2D_FLOOR;
    s2[(1, 1)] += COV2D_FLOOR;
    Ok(s2)
}

/// exp(-1/2 d^T Sigma'^-1 d) for a 2D offset from the splat center.
pub fn eval_gaussian_2d(sigma2: &Matrix2<f64>, delta: &Vector2<f64>) -> Result<f64> {
    let det = sigma2[(0, 0)] * sigma2[(1, 1)] - sigma2[(0, 1)] * sigma2[(1, 0)];
    if det.abs() < 1e-300 {
        return Err(Error::InvalidArgument("singular 2D covariance".into()));
    }
    let inv = Matrix2::new(
        sigma2[(1, 1)] / det,
        -sigma2[(0, 1)] / det,
        -sigma2[(1, 0)] / det,
        sigma2[(0, 0)] / det,
    );
    let q = delta.dot(&(inv * delta));
    Ok((-0.5 * q).exp())
}

/// Axis-aligned world-space box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Bounds {
    pub fn cube(half_extent: f64) -> Self {
        Bounds {
            min: Vector3::repeat(-half_extent),
            max: Vector3::repeat(half_extent),
        }
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Smallest box containing all positions, used when a checkpoint is
    /// loaded and the original initialization bounds are gone.
    pub fn of_positions<'a>(positions: impl Iterator<Item = &'a Vector3<f64>>) -> Self {
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        for p in positions {
            for i in 0..3 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        Bounds { min, max }
    }
}

/// The optimizable scene: a growable list of Gaussians plus the box used for
/// random initialization (which also defines the scene extent for density
/// control).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    pub bounds: Bounds,
}

impl GaussianScene {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Uniform random initialization inside `bounds`: activated opacity 0.1,
    /// mid-gray color, identity rotations, isotropic scale at 2% of the box
    /// diagonal. Deterministic for a given seed.
    pub fn random_init(count: usize, bounds: Bounds, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("count must be >= 1".into()));
        }
        let extent = bounds.max - bounds.min;
        if !(extent.x > 0.0 && extent.y > 0.0 && extent.z > 0.0) {
            return Err(Error::InvalidArgument("degenerate bounds".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let log_scale = Vector3::repeat((0.02 * bounds.diagonal()).ln());
        let opacity_logit = logit(0.1);
        let gaussians = (0..count)
            .map(|_| {
                let position = Vector3::new(
                    rng.gen_range(bounds.min.x..bounds.max.x),
                    rng.gen_range(bounds.min.y..bounds.max.y),
                    rng.gen_range(bounds.min.z..bounds.max.z),
                );
                Gaussian {
                    position,
                    color: 0.0, // sigmoid(0) = 0.5, mid-gray
                    opacity_logit,
                    rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
                    log_scale,
                }
            })
            .collect();
        Ok(GaussianScene { gaussians, bounds })
    }

    /// Scene extent used by density control: the initialization box diagonal.
    pub fn extent(&self) -> f64 {
        self.bounds.diagonal()
    }
}

// Checkpoint format: little-endian; magic "SWGS", version u32, count u64,
// then one 14-float32 record per Gaussian:
// 3 position, 1 color, 1 opacity_logit, 4 quaternion, 3 log_scale, 2 reserved.
const CHECKPOINT_MAGIC: &[u8; 4] = b"SWGS";
const CHECKPOINT_VERSION: u32 = 1;

impl GaussianScene {
    pub fn write_checkpoint_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u64::<LittleEndian>(self.gaussians.len() as u64)?;
        for g in &self.gaussians {
            for i in 0..3 {
                w.write_f32::<LittleEndian>(g.position[i] as f32)?;
            }
            w.write_f32::<LittleEndian>(g.color as f32)?;
            w.write_f32::<LittleEndian>(g.opacity_logit as f32)?;
            for i in 0..4 {
                w.write_f32::<LittleEndian>(g.rotation[i] as f32)?;
            }
            for i in 0..3 {
                w.write_f32::<LittleEndian>(g.log_scale[i] as f32)?;
            }
            w.write_f32::<LittleEndian>(0.0)?;
            w.write_f32::<LittleEndian>(0.0)?;
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("create {}", path.display()), e))?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_checkpoint_to(&mut buf)
            .and_then(|_| buf.into_inner().map(|_| ()).map_err(|e| e.into_error()))
            .map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    pub fn read_checkpoint_from(mut r: impl Read, path: &Path) -> Result<Self> {
        let bad = |detail: &str, offset: u64| Error::BadFormat {
            path: path.to_path_buf(),
            detail: detail.into(),
            offset,
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated magic", 0))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic, expected \"SWGS\"", 0));
        }
        let version = r
            .read_u32::<LittleEndian>()
            .map_err(|_| bad("truncated version", 4))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}"), 4));
        }
        let count = r
            .read_u64::<LittleEndian>()
            .map_err(|_| bad("truncated count", 8))?;
        let mut gaussians = Vec::with_capacity(count.min(1 << 24) as usize);
        for i in 0..count {
            let offset = 16 + i * 14 * 4;
            let mut rec = [0f32; 14];
            for v in rec.iter_mut() {
                *v = r
                    .read_f32::<LittleEndian>()
                    .map_err(|_| bad(&format!("truncated record {i}"), offset))?;
            }
            gaussians.push(Gaussian {
                position: Vector3::new(rec[0] as f64, rec[1] as f64, rec[2] as f64),
                color: rec[3] as f64,
                opacity_logit: rec[4] as f64,
                rotation: Vector4::new(
                    rec[5] as f64,
                    rec[6] as f64,
                    rec[7] as f64,
                    rec[8] as f64,
                ),
                log_scale: Vector3::new(rec[9] as f64, rec[10] as f64, rec[11] as f64),
            });
        }
        let bounds = if gaussians.is_empty() {
            Bounds::cube(0.5)
        } else {
            Bounds::of_positions(gaussians.iter().map(|g| &g.position))
        };
        Ok(GaussianScene { gaussians, bounds })
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("open {}", path.display()), e))?;
        Self::read_checkpoint_from(std::io::BufReader::new(file), path)
    }
}

/// Seeded cluster of Gaussians used as the synthetic ground-truth object in
/// simulations and tests: varied colors and anisotropic shapes inside a box
/// around the origin, well inside the unit turntable orbit.
pub fn random_test_scene(count: usize, seed: u64) -> GaussianScene {
    let bounds = Bounds::cube(0.35);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..count)
        .map(|_| {
            let position = Vector3::new(
                rng.gen_range(bounds.min.x..bounds.max.x),
                rng.gen_range(bounds.min.y..bounds.max.y),
                rng.gen_range(bounds.min.z..bounds.max.z),
            );
            let axis = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let half = rng.gen_range(0.0..std::f64::consts::PI);
            let rotation = if axis.norm() > 1e-6 {
                let a = axis.normalize() * (half / 2.0).sin();
                Vector4::new((half / 2.0).cos(), a.x, a.y, a.z)
            } else {
                Vector4::new(1.0, 0.0, 0.0, 0.0)
            };
            Gaussian {
                position,
                color: rng.gen_range(-1.5..2.5),
                opacity_logit: rng.gen_range(0.5..2.5),
                rotation,
                log_scale: Vector3::new(
                    rng.gen_range(0.03f64..0.10).ln(),
                    rng.gen_range(0.03f64..0.10).ln(),
                    rng.gen_range(0.03f64..0.10).ln(),
                ),
            }
        })
        .collect();
    GaussianScene { gaussians, bounds }
}
