//! Perspective measurement model of a global point seen from a clone.
//!
//! The IMU orientation at image time is the clone orientation advanced by the
//! clone's angular rate over the camera–IMU time shift: `R' = R·Exp(ω·t_d)`.

use nalgebra::{Matrix2x3, Matrix2x6, SMatrix, Vector2, Vector3};

use super::so3::{self, skew};
use super::state::FullState;

pub type Matrix2x12 = SMatrix<f64, 2, 12>;

/// Predicted pixel and Jacobians of one observation.
#[derive(Debug, Clone)]
pub struct ObservationJacobian {
    pub pixel: Vector2<f64>,
    /// w.r.t. the observing clone `[δθ, δp]`.
    pub d_clone: Matrix2x6<f64>,
    /// w.r.t. the global point.
    pub d_point: Matrix2x3<f64>,
    /// w.r.t. the observing camera's calibration block.
    pub d_camera: Matrix2x12,
    /// w.r.t. the time shift.
    pub d_time_shift: Vector2<f64>,
}

/// Why an observation could not be linearised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// Point at or behind the near plane.
    Depth,
}

pub fn predict(state: &FullState, clone: usize, cam: usize, point: &Vector3<f64>, min_depth: f64) -> Result<Vector2<f64>, Rejection> {
    measurement_jacobian(state, clone, cam, point, min_depth).map(|j| j.pixel)
}

pub fn measurement_jacobian(
    state: &FullState,
    clone: usize,
    cam: usize,
    point: &Vector3<f64>,
    min_depth: f64,
) -> Result<ObservationJacobian, Rejection> {
    let c = &state.clones[clone];
    let camera = &state.cams[cam];
    let e = so3::exp_mat(&(c.omega * state.time_shift));
    let r_wi = c.rot.to_rotation_matrix().into_inner();
    let r_img = r_wi * e;
    let a = r_wi.transpose() * (point - c.p);
    let p_i = e.transpose() * a;
    let r_ci = camera.rot_ci.to_rotation_matrix().into_inner();
    let p_c = r_ci * p_i + camera.p_ci;
    let proj = camera.project(&p_c, min_depth).ok_or(Rejection::Depth)?;

    let dz_dpi = proj.d_point * r_ci;
    let mut d_clone = Matrix2x6::zeros();
    d_clone.fixed_columns_mut::<3>(0).copy_from(&(dz_dpi * e.transpose() * skew(&a)));
    d_clone.fixed_columns_mut::<3>(3).copy_from(&(-dz_dpi * r_img.transpose()));

    let mut d_camera = Matrix2x12::zeros();
    d_camera.fixed_columns_mut::<3>(0).copy_from(&(-proj.d_point * r_ci * skew(&p_i)));
    d_camera.fixed_columns_mut::<3>(3).copy_from(&proj.d_point);
    d_camera.fixed_columns_mut::<2>(6).copy_from(&proj.d_focal);
    d_camera.fixed_columns_mut::<4>(8).copy_from(&proj.d_distortion);

    Ok(ObservationJacobian {
        pixel: proj.pixel,
        d_clone,
        d_point: dz_dpi * r_img.transpose(),
        d_camera,
        d_time_shift: dz_dpi * skew(&p_i) * c.omega,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msckf::state::tests::random_state;
    use nalgebra::{DVector, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Places a point in front of camera `cam` of clone `clone`.
    fn visible_point(state: &FullState, clone: usize, cam: usize, rng: &mut impl Rng) -> Vector3<f64> {
        let c = &state.clones[clone];
        let (r_wc, p_wc) = state.cams[cam].pose_in(&c.rot.to_rotation_matrix().into_inner(), &c.p);
        let local = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.8..0.8), rng.random_range(1.5..6.0));
        r_wc * local + p_wc
    }

    #[test]
    fn zero_rate_gives_zero_time_shift_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = random_state(&mut rng, 1, 0);
        s.clones[0].omega = Vector3::zeros();
        let p = visible_point(&s, 0, 0, &mut rng);
        let j = measurement_jacobian(&s, 0, 0, &p, 0.1).unwrap();
        assert_eq!(j.d_time_shift, Vector2::zeros());
    }

    #[test]
    fn blocks_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = 1e-6;
        for _ in 0..50 {
            let mut s = random_state(&mut rng, 2, 1);
            s.time_shift = rng.random_range(-0.01..0.01);
            s.cams[1].distortion = Vector4::new(-0.05, 0.01, 1e-3, -1e-3);
            let cam = rng.random_range(0..2);
            let p = visible_point(&s, 1, cam, &mut rng);
            s.points[0].p = p;
            let j = measurement_jacobian(&s, 1, cam, &p, 0.1).unwrap();
            let n = s.dim();
            let mut analytic = nalgebra::DMatrix::<f64>::zeros(2, n);
            analytic.view_mut((0, s.clone_offset(1)), (2, 6)).copy_from(&j.d_clone);
            analytic.view_mut((0, s.point_offset(0)), (2, 3)).copy_from(&j.d_point);
            analytic.view_mut((0, s.cam_offset(cam)), (2, 12)).copy_from(&j.d_camera);
            analytic.view_mut((0, s.time_shift_offset()), (2, 1)).copy_from(&j.d_time_shift);
            for k in 0..n {
                let mut d = DVector::zeros(n);
                d[k] = h;
                let (mut a, mut b) = (s.clone(), s.clone());
                a.boxplus(&d);
                b.boxplus(&(-&d));
                let za = predict(&a, 1, cam, &a.points[0].p, 0.1).unwrap();
                let zb = predict(&b, 1, cam, &b.points[0].p, 0.1).unwrap();
                let fd = (za - zb) / (2.0 * h);
                let err = (fd - analytic.column(k)).amax();
                assert!(err < 1e-5 * analytic.amax().max(1.0), "column {k}: {err}");
            }
        }
    }
}
