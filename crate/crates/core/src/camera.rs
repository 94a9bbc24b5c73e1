//! Pinhole intrinsics and constant-speed sweep trajectories.
//!
//! Pose convention: `world_to_cam` maps world points into a camera frame with
//! +z forward, +x right, +y down. World coordinates are z-up and scene units
//! are defined so the default turntable radius is 1.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector2, Vector3};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let it = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        it.validate()?;
        Ok(it)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be > 0".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64)
            || !(self.cy > 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::InvalidArgument(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    /// Sensor-matching default: 346x260, f = 300 px, centered principal point.
    pub fn default_sensor() -> Self {
        Intrinsics {
            fx: 300.0,
            fy: 300.0,
            cx: 173.0,
            cy: 130.0,
            width: 346,
            height: 260,
        }
    }

    /// Small desk-scale camera used throughout the tests.
    pub fn desk(width: u32, height: u32, focal: f64) -> Self {
        Intrinsics {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }
}

/// A posed pinhole camera at a point in time.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    /// Rotation block of the world-to-camera rigid transform.
    pub rotation: Matrix3<f64>,
    /// Translation of the world-to-camera rigid transform.
    pub translation: Vector3<f64>,
    /// Microseconds.
    pub timestamp: u64,
    pub intrinsics: Intrinsics,
}

impl CameraView {
    #[inline]
    pub fn world_to_cam(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Camera position in world coordinates.
    pub fn position(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Projects a world point to continuous pixel coordinates and returns the
    /// camera-space depth. Depth may be <= 0; culling is the caller's job.
    pub fn world_to_pixel(&self, point: &Vector3<f64>) -> (Vector2<f64>, f64) {
        let pc = self.world_to_cam(point);
        let it = &self.intrinsics;
        let px = Vector2::new(
            it.fx * pc.x / pc.z + it.cx,
            it.fy * pc.y / pc.z + it.cy,
        );
        (px, pc.z)
    }
}

/// Builds the world-to-camera rotation for a camera at `position` looking at
/// `target`, with world +z as the up reference.
pub fn look_at_rotation(position: &Vector3<f64>, target: &Vector3<f64>) -> Matrix3<f64> {
    let forward = (target - position).normalize();
    let mut up = Vector3::new(0.0, 0.0, 1.0);
    if forward.cross(&up).norm() < 1e-9 {
        up = Vector3::new(0.0, 1.0, 0.0);
    }
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right).normalize();
    Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryKind {
    /// Camera orbits `center` at fixed radius and elevation, always looking
    /// at the center. Azimuth advances linearly from `start_azimuth_deg`
    /// through `arc_deg` over the sweep duration.
    TurntableArc {
        center: Vector3<f64>,
        radius: f64,
        elevation_deg: f64,
        start_azimuth_deg: f64,
        arc_deg: f64,
    },
    /// Camera translates at constant speed with a fixed orientation, which is
    /// the look-at orientation computed at the start position.
    LinearTranslation {
        start: Vector3<f64>,
        displacement: Vector3<f64>,
        look_at: Vector3<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTrajectory {
    pub kind: TrajectoryKind,
    /// Sweep duration in microseconds.
    pub duration_us: u64,
    /// Number of evenly spaced sample views, endpoints included.
    pub frame_count: u32,
    pub intrinsics: Intrinsics,
}

impl SweepTrajectory {
    pub fn validate(&self) -> Result<()> {
        if self.duration_us == 0 {
            return Err(Error::InvalidArgument("duration must be > 0".into()));
        }
        if self.frame_count < 2 {
            return Err(Error::InvalidArgument("frame_count must be >= 2".into()));
        }
        self.intrinsics.validate()?;
        if let TrajectoryKind::TurntableArc { radius, .. } = self.kind {
            if !(radius > 0.0) {
                return Err(Error::InvalidArgument("orbit radius must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Pose at time `t` microseconds into the sweep.
    pub fn pose_at(&self, t: u64) -> Result<CameraView> {
        if t > self.duration_us {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside sweep [0, {}]",
                self.duration_us
            )));
        }
        let frac = t as f64 / self.duration_us as f64;
        let (position, rotation) = match &self.kind {
            TrajectoryKind::TurntableArc {
                center,
                radius,
                elevation_deg,
                start_azimuth_deg,
                arc_deg,
            } => {
                let az = (start_azimuth_deg + arc_deg * frac).to_radians();
                let el = elevation_deg.to_radians();
                let position = center
                    + Vector3::new(
                        radius * el.cos() * az.cos(),
                        radius * el.cos() * az.sin(),
                        radius * el.sin(),
                    );
                (position, look_at_rotation(&position, center))
            }
            TrajectoryKind::LinearTranslation {
                start,
                displacement,
                look_at,
            } => {
                let position = start + displacement * frac;
                (position, look_at_rotation(start, look_at))
            }
        };
        Ok(CameraView {
            rotation,
            translation: -(rotation * position),
            timestamp: t,
            intrinsics: self.intrinsics,
        })
    }

    /// `frame_count` evenly spaced timestamps from 0 to the duration,
    /// endpoints included, strictly increasing.
    pub fn sample_view_times(&self) -> Vec<u64> {
        let n = self.frame_count as u64;
        (0..n)
            .map(|k| (self.duration_us as u128 * k as u128 / (n - 1) as u128) as u64)
            .collect()
    }
}
