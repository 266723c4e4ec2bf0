//! Rotation helpers. Hamilton quaternions, right-multiplied perturbations:
//! `R ⊞ r = R·Exp(r)` and `R1 ⊟ R2 = Log(R2ᵀ·R1)`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn exp(r: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta2 = r.norm_squared();
    let (w, s) = if theta2 < 1e-16 {
        (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
    } else {
        let theta = theta2.sqrt();
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    UnitQuaternion::new_normalize(Quaternion::new(w, s * r.x, s * r.y, s * r.z))
}

pub fn exp_mat(r: &Vector3<f64>) -> Matrix3<f64> {
    exp(r).to_rotation_matrix().into_inner()
}

/// Principal-branch logarithm; the result has norm in `[0, π]`.
pub fn log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = q.quaternion();
    let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let n = v.norm();
    let scale = if n < 1e-8 {
        2.0 / w * (1.0 - n * n / (3.0 * w * w))
    } else {
        2.0 * n.atan2(w) / n
    };
    v * scale
}

pub fn right_jacobian(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let k = skew(r);
    if theta2 < 1e-10 {
        return Matrix3::identity() - 0.5 * k + k * k / 6.0;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() - (1.0 - theta.cos()) / theta2 * k + (theta - theta.sin()) / (theta2 * theta) * k * k
}

pub fn boxplus(q: &UnitQuaternion<f64>, r: &Vector3<f64>) -> UnitQuaternion<f64> {
    let out = q * exp(r);
    UnitQuaternion::new_normalize(out.into_inner())
}

pub fn boxminus(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> Vector3<f64> {
    log(&(b.inverse() * a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_increment_is_identity() {
        let q = UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1);
        assert_eq!(boxplus(&q, &Vector3::zeros()), q);
    }

    #[test]
    fn quarter_turn_about_x() {
        let r = Vector3::new(PI / 2.0, 0.0, 0.0);
        let q = boxplus(&UnitQuaternion::identity(), &r);
        let m = q.to_rotation_matrix();
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((m.matrix() - expected).abs().max() < 1e-15);
        assert!((boxminus(&q, &UnitQuaternion::identity()) - r).norm() < 1e-15);
    }

    #[test]
    fn log_is_accurate_for_tiny_angles() {
        let r = Vector3::new(1e-9, -2e-9, 3e-9);
        assert!((log(&exp(&r)) - r).norm() < 1e-20);
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        let r = Vector3::new(0.4, -0.7, 0.2);
        let jr = right_jacobian(&r);
        let h = 1e-6;
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = h;
            // Exp(r + d) ≈ Exp(r)·Exp(Jr d)
            let col = (boxminus(&exp(&(r + d)), &exp(&r)) - boxminus(&exp(&(r - d)), &exp(&r))) / (2.0 * h);
            assert!((col - jr.column(k)).norm() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn round_trip(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
                      rx in -1.0f64..1.0, ry in -1.0f64..1.0, rz in -1.0f64..1.0, mag in 0.0f64..(PI - 1e-3)) {
            let q = exp(&(Vector3::new(ax, ay, az) * 3.0));
            let dir = Vector3::new(rx, ry, rz);
            prop_assume!(dir.norm() > 1e-6);
            let r = dir.normalize() * mag;
            let back = boxminus(&boxplus(&q, &r), &q);
            prop_assert!((back - r).norm() < 1e-10);
        }
    }
}
