//! Synthetic stereo event and IMU data with ground truth.

pub mod dataset;
pub mod events;
pub mod imu;
pub mod scene;
pub mod trajectory;

pub use dataset::{export_dataset, read_imu_csv, write_imu_csv, DatasetMeta, SimConfig};
pub use events::{generate_events, EventSimulator, SimEvents};
pub use imu::{generate_imu, gravity};
pub use scene::{Scene, SceneSpec, Segment};
pub use trajectory::{sample_pose, Kinematics, TrajectoryKind, TrajectorySpec};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msckf::{CameraParams, NoiseParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Spurious events per second per pixel.
    pub spurious_rate: f64,
    /// Relative standard deviation of the per-pixel contrast threshold.
    pub threshold_jitter: f64,
    pub imu: NoiseParams,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            spurious_rate: 0.0,
            threshold_jitter: 0.0,
            imu: NoiseParams::default(),
        }
    }
}

impl NoiseSpec {
    /// No spurious events, no jitter and noiseless IMU.
    pub fn zero() -> Self {
        Self {
            spurious_rate: 0.0,
            threshold_jitter: 0.0,
            imu: NoiseParams {
                gyro_noise: 0.0,
                accel_noise: 0.0,
                gyro_walk: 0.0,
                accel_walk: 0.0,
                ..NoiseParams::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.imu;
        let vals = [
            self.spurious_rate,
            self.threshold_jitter,
            p.gyro_noise,
            p.accel_noise,
            p.gyro_walk,
            p.accel_walk,
        ];
        if vals.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("noise parameters must be finite and non-negative: {self:?}")))
        }
    }
}

/// Forward-looking stereo pair on a forward-left-up IMU: camera z is IMU x,
/// camera x is IMU −y, and the left camera sits `baseline/2` to the IMU's left.
pub fn stereo_rig(focal: f64, width: u32, height: u32, baseline: f64) -> [CameraParams; 2] {
    let r_ci = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let rot_ci = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r_ci));
    let cam = |offset_left: f64| {
        let centre_i = Vector3::new(0.0, offset_left, 0.0);
        CameraParams {
            rot_ci,
            p_ci: -(r_ci * centre_i),
            ..CameraParams::pinhole(focal, width, height)
        }
    };
    [cam(0.5 * baseline), cam(-0.5 * baseline)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rig_geometry() {
        let [l, r] = stereo_rig(320.0, 640, 480, 0.1);
        let (rot_wc, c_l) = l.pose_in(&Matrix3::identity(), &Vector3::zeros());
        let (_, c_r) = r.pose_in(&Matrix3::identity(), &Vector3::zeros());
        assert!((c_l - Vector3::new(0.0, 0.05, 0.0)).norm() < 1e-12);
        assert!((c_r - Vector3::new(0.0, -0.05, 0.0)).norm() < 1e-12);
        assert!((rot_wc * Vector3::z() - Vector3::x()).norm() < 1e-12);
        // A point ahead projects with positive disparity.
        let p = Vector3::new(2.0, 0.0, 0.0);
        let ul = l.project(&(l.rot_ci * p + l.p_ci), 0.1).unwrap().pixel.x;
        let ur = r.project(&(r.rot_ci * p + r.p_ci), 0.1).unwrap().pixel.x;
        assert!((ul - ur - 320.0 * 0.1 / 2.0).abs() < 1e-9);
    }
}
