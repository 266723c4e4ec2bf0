//! Closed-form body trajectories with exact derivatives.
//!
//! Orientation is `Rz(yaw)·Ry(pitch)·Rx(roll)` of a forward-left-up body in a
//! z-up world.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Horizontal circle of radius `amplitude`, heading along the velocity.
    Circle,
    /// Figure-eight-like curve in three axes with yaw and pitch oscillation.
    Lissajous,
    /// Constant velocity `amplitude·omega` along world x with sinusoidal yaw.
    StraightWithYaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// Radius or amplitude (m).
    pub amplitude: f64,
    /// rad/s
    pub omega: f64,
    /// s
    pub duration: f64,
    /// Yaw oscillation amplitude (rad); unused by `circle`.
    pub yaw_amplitude: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Circle,
            amplitude: 1.0,
            omega: 0.5,
            duration: 30.0,
            yaw_amplitude: 0.3,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::Config(format!(
                "trajectory duration must be positive, got {}",
                self.duration
            )));
        }
        if !self.amplitude.is_finite() || !self.omega.is_finite() || !self.yaw_amplitude.is_finite() {
            return Err(Error::Config("trajectory parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Pose and its derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub t: f64,
    /// Body to world.
    pub rot: UnitQuaternion<f64>,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// World-frame acceleration (gravity not included).
    pub a: Vector3<f64>,
    /// Body-frame angular rate.
    pub omega: Vector3<f64>,
}

/// `value, first derivative, second derivative` of `amp·sin(freq·t + phase)`.
fn sine(amp: f64, freq: f64, phase: f64, t: f64) -> [f64; 3] {
    let (s, c) = (freq * t + phase).sin_cos();
    [amp * s, amp * freq * c, -amp * freq * freq * s]
}

pub fn sample_pose(spec: &TrajectorySpec, t: f64) -> Result<Kinematics> {
    if !(t >= -1e-9 && t <= spec.duration + 1e-9) {
        return Err(Error::TimeOutOfRange {
            t,
            duration: spec.duration,
        });
    }
    let (r, w) = (spec.amplitude, spec.omega);
    let zero = [0.0; 3];
    // Per axis and angle: value, rate, second derivative.
    let (pos, angles): ([[f64; 3]; 3], [[f64; 3]; 3]) = match spec.kind {
        TrajectoryKind::Circle => (
            [sine(r, w, std::f64::consts::FRAC_PI_2, t), sine(r, w, 0.0, t), zero],
            [[w * t + std::f64::consts::FRAC_PI_2, w, 0.0], zero, zero],
        ),
        TrajectoryKind::Lissajous => (
            [sine(r, w, 0.0, t), sine(0.5 * r, 2.0 * w, 0.0, t), sine(0.25 * r, 3.0 * w, 0.0, t)],
            [
                sine(spec.yaw_amplitude, w, 0.0, t),
                sine(0.5 * spec.yaw_amplitude, 2.0 * w, 0.0, t),
                zero,
            ],
        ),
        TrajectoryKind::StraightWithYaw => (
            [[r * w * t, r * w, 0.0], zero, zero],
            [sine(spec.yaw_amplitude, w, 0.0, t), zero, zero],
        ),
    };
    let [yaw, pitch, roll] = angles;
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw[0]);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), pitch[0]);
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), roll[0]);
    let rot: Matrix3<f64> = (rz * ry * rx).into_inner();
    let omega_world = Vector3::z() * yaw[1] + rz * (Vector3::y() * pitch[1]) + (rz * ry) * (Vector3::x() * roll[1]);
    Ok(Kinematics {
        t,
        rot: UnitQuaternion::from_matrix(&rot),
        p: Vector3::new(pos[0][0], pos[1][0], pos[2][0]),
        v: Vector3::new(pos[0][1], pos[1][1], pos[2][1]),
        a: Vector3::new(pos[0][2], pos[1][2], pos[2][2]),
        omega: rot.transpose() * omega_world,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: TrajectoryKind) -> TrajectorySpec {
        TrajectorySpec {
            kind,
            ..Default::default()
        }
    }

    #[test]
    fn circle_start() {
        let s = TrajectorySpec {
            omega: 1.0,
            ..spec(TrajectoryKind::Circle)
        };
        let k = sample_pose(&s, 0.0).unwrap();
        assert!((k.p - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((k.v.norm() - 1.0).abs() < 1e-12);
        // Heading along the velocity.
        assert!((k.rot * Vector3::x() - k.v.normalize()).norm() < 1e-12);
    }

    #[test]
    fn straight_without_yaw_has_no_rotation() {
        let s = TrajectorySpec {
            yaw_amplitude: 0.0,
            ..spec(TrajectoryKind::StraightWithYaw)
        };
        for k in 0..30 {
            assert_eq!(sample_pose(&s, k as f64).unwrap().omega, Vector3::zeros());
        }
    }

    #[test]
    fn out_of_range_time() {
        let s = spec(TrajectoryKind::Circle);
        assert!(matches!(sample_pose(&s, -0.1), Err(Error::TimeOutOfRange { .. })));
        assert!(sample_pose(&s, 30.5).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for kind in [TrajectoryKind::Circle, TrajectoryKind::Lissajous, TrajectoryKind::StraightWithYaw] {
            let s = spec(kind);
            for &t in &[0.5, 3.3, 11.0, 29.0] {
                let k = sample_pose(&s, t).unwrap();
                let (a, b) = (sample_pose(&s, t - h).unwrap(), sample_pose(&s, t + h).unwrap());
                assert!(((b.p - a.p) / (2.0 * h) - k.v).norm() < 1e-6, "{kind:?} v");
                assert!(((b.v - a.v) / (2.0 * h) - k.a).norm() < 1e-6, "{kind:?} a");
                let w = (a.rot.inverse() * b.rot).scaled_axis() / (2.0 * h);
                assert!((w - k.omega).norm() < 1e-6, "{kind:?} omega {w} vs {}", k.omega);
            }
        }
    }
}
