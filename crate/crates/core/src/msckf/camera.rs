//! Pinhole camera with radial-tangential distortion and IMU extrinsics.

use nalgebra::{Matrix2, Matrix2x3, Matrix2x4, Matrix3, UnitQuaternion, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

/// Calibration of one camera. `rot_ci` and `p_ci` map IMU-frame coordinates into
/// the camera frame: `x_c = R_ci·x_i + p_ci`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub rot_ci: UnitQuaternion<f64>,
    pub p_ci: Vector3<f64>,
    /// `(fx, fy)`, estimated.
    pub focal: Vector2<f64>,
    /// `(cx, cy)`, held fixed.
    pub principal: Vector2<f64>,
    /// `(k1, k2, p1, p2)`.
    pub distortion: Vector4<f64>,
    pub width: u32,
    pub height: u32,
}

/// Pixel prediction plus its partial derivatives.
#[derive(Debug, Clone)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub d_point: Matrix2x3<f64>,
    pub d_focal: Matrix2<f64>,
    pub d_distortion: Matrix2x4<f64>,
}

impl CameraParams {
    pub fn pinhole(focal: f64, width: u32, height: u32) -> Self {
        Self {
            rot_ci: UnitQuaternion::identity(),
            p_ci: Vector3::zeros(),
            focal: Vector2::new(focal, focal),
            principal: Vector2::new(0.5 * width as f64, 0.5 * height as f64),
            distortion: Vector4::zeros(),
            width,
            height,
        }
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.focal.x + self.focal.y)
    }

    /// Camera orientation and centre in a frame where the IMU has pose `(rot_wi, p_wi)`.
    pub fn pose_in(&self, rot_wi: &Matrix3<f64>, p_wi: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
        let r_ic = self.rot_ci.to_rotation_matrix().into_inner().transpose();
        (rot_wi * r_ic, p_wi - rot_wi * r_ic * self.p_ci)
    }

    fn distort_with_jacobians(&self, n: &Vector2<f64>) -> (Vector2<f64>, Matrix2<f64>, Matrix2x4<f64>) {
        let (k1, k2, p1, p2) = (self.distortion[0], self.distortion[1], self.distortion[2], self.distortion[3]);
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let c = 1.0 + k1 * r2 + k2 * r2 * r2;
        let dcdx = 2.0 * k1 * x + 4.0 * k2 * r2 * x;
        let dcdy = 2.0 * k1 * y + 4.0 * k2 * r2 * y;
        let xd = x * c + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
        let yd = y * c + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
        let d_n = Matrix2::new(
            c + x * dcdx + 2.0 * p1 * y + 6.0 * p2 * x,
            x * dcdy + 2.0 * p1 * x + 2.0 * p2 * y,
            y * dcdx + 2.0 * p1 * x + 2.0 * p2 * y,
            c + y * dcdy + 6.0 * p1 * y + 2.0 * p2 * x,
        );
        let d_d = Matrix2x4::new(
            x * r2,
            x * r2 * r2,
            2.0 * x * y,
            r2 + 2.0 * x * x,
            y * r2,
            y * r2 * r2,
            r2 + 2.0 * y * y,
            2.0 * x * y,
        );
        (Vector2::new(xd, yd), d_n, d_d)
    }

    pub fn distort(&self, n: &Vector2<f64>) -> Vector2<f64> {
        self.distort_with_jacobians(n).0
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project(&self, p_c: &Vector3<f64>, min_depth: f64) -> Option<Projection> {
        if !(p_c.z > min_depth) {
            return None;
        }
        let iz = 1.0 / p_c.z;
        let n = Vector2::new(p_c.x * iz, p_c.y * iz);
        let (d, dd_dn, dd_dd) = self.distort_with_jacobians(&n);
        let f = Matrix2::from_diagonal(&self.focal);
        let dn_dp = Matrix2x3::new(iz, 0.0, -p_c.x * iz * iz, 0.0, iz, -p_c.y * iz * iz);
        Some(Projection {
            pixel: Vector2::new(self.focal.x * d.x + self.principal.x, self.focal.y * d.y + self.principal.y),
            d_point: f * dd_dn * dn_dp,
            d_focal: Matrix2::from_diagonal(&d),
            d_distortion: f * dd_dd,
        })
    }

    /// Normalised, undistorted image coordinates of a pixel.
    pub fn undistort(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        let target = Vector2::new(
            (pixel.x - self.principal.x) / self.focal.x,
            (pixel.y - self.principal.y) / self.focal.y,
        );
        if self.distortion == Vector4::zeros() {
            return target;
        }
        let mut n = target;
        for _ in 0..20 {
            let (d, jac, _) = self.distort_with_jacobians(&n);
            let err = d - target;
            if err.norm() < 1e-14 {
                break;
            }
            match jac.try_inverse() {
                Some(inv) => n -= inv * err,
                None => break,
            }
        }
        n
    }

    pub fn in_image(&self, pixel: &Vector2<f64>, margin: f64) -> bool {
        pixel.x >= margin
            && pixel.y >= margin
            && pixel.x <= self.width as f64 - 1.0 - margin
            && pixel.y <= self.height as f64 - 1.0 - margin
    }
}
