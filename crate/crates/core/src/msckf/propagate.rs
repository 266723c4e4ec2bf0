//! Inertial propagation of the mean and the error-state covariance.
//!
//! Measurements are held constant over each IMU interval. Under that assumption
//! the kinematics have the closed-form solution
//!
//! ```text
//! R' = R·Exp(ω·dt)
//! v' = v + g·dt + R·∫₀^dt Exp(ω·s)·a ds
//! p' = p + v·dt + ½g·dt² + R·∫₀^dt (dt − s)·Exp(ω·s)·a ds
//! ```
//!
//! with `ω = ω_m − b_g`, `a = a_m − b_a`. The two integrals are evaluated with
//! four-point Gauss–Legendre quadrature, and the transition matrix is the exact
//! derivative of that discrete map, so it agrees with finite differences of the
//! mean propagation to round-off.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::so3::{self, skew};
use super::state::{idx, InertialState, INERTIAL_DIM};
use super::Filter;
use crate::error::{Error, Result};

pub type Matrix15 = SMatrix<f64, INERTIAL_DIM, INERTIAL_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// Specific force in the IMU frame (m/s²).
    pub accel: Vector3<f64>,
    /// Angular rate in the IMU frame (rad/s).
    pub gyro: Vector3<f64>,
}

/// Continuous-time noise densities plus the image measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// rad/s/√Hz
    pub gyro_noise: f64,
    /// m/s²/√Hz
    pub accel_noise: f64,
    /// rad/s²/√Hz
    pub gyro_walk: f64,
    /// m/s³/√Hz
    pub accel_walk: f64,
    /// px
    pub pixel_sigma: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            gyro_noise: 1.7e-4,
            accel_noise: 2.0e-3,
            gyro_walk: 2.0e-5,
            accel_walk: 3.0e-3,
            pixel_sigma: 1.0,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gyro_noise, self.accel_noise, self.gyro_walk, self.accel_walk, self.pixel_sigma];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("noise parameters must be positive: {self:?}")))
        }
    }
}

const GL_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_8,
    0.652_145_154_862_546_2,
    0.652_145_154_862_546_2,
    0.347_854_845_137_453_8,
];

fn quadrature(dt: f64) -> impl Iterator<Item = (f64, f64)> {
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS.iter())
        .map(move |(&x, &w)| (0.5 * dt * (1.0 + x), 0.5 * dt * w))
}

/// Mean propagation over one zero-order-hold interval.
pub fn integrate_step(s: &InertialState, gyro: &Vector3<f64>, accel: &Vector3<f64>, dt: f64, gravity: &Vector3<f64>) -> InertialState {
    let w = gyro - s.bg;
    let a = accel - s.ba;
    let mut dv = Vector3::zeros();
    let mut dp = Vector3::zeros();
    for (si, wi) in quadrature(dt) {
        let ea = so3::exp_mat(&(w * si)) * a;
        dv += wi * ea;
        dp += wi * (dt - si) * ea;
    }
    let r = s.rot_mat();
    InertialState {
        rot: so3::boxplus(&s.rot, &(w * dt)),
        p: s.p + s.v * dt + 0.5 * gravity * dt * dt + r * dp,
        v: s.v + gravity * dt + r * dv,
        bg: s.bg,
        ba: s.ba,
    }
}

/// Error-state transition of [`integrate_step`] and the discrete process noise.
pub fn step_transition(s: &InertialState, gyro: &Vector3<f64>, accel: &Vector3<f64>, dt: f64, noise: &NoiseParams) -> (Matrix15, Matrix15) {
    let w = gyro - s.bg;
    let a = accel - s.ba;
    let r = s.rot_mat();
    let a_x = skew(&a);

    let mut sv = Vector3::zeros();
    let mut sp = Vector3::zeros();
    let mut gv = Matrix3::zeros();
    let mut gp = Matrix3::zeros();
    let mut bv = Matrix3::zeros();
    let mut bp = Matrix3::zeros();
    for (si, wi) in quadrature(dt) {
        let e = so3::exp_mat(&(w * si));
        let d_omega = e * a_x * so3::right_jacobian(&(w * si)) * si;
        sv += wi * e * a;
        sp += wi * (dt - si) * e * a;
        gv += wi * e;
        gp += wi * (dt - si) * e;
        bv += wi * d_omega;
        bp += wi * (dt - si) * d_omega;
    }

    let mut phi = Matrix15::identity();
    let set = |m: &mut Matrix15, r0: usize, c0: usize, b: Matrix3<f64>| m.fixed_view_mut::<3, 3>(r0, c0).copy_from(&b);
    set(&mut phi, idx::THETA, idx::THETA, so3::exp_mat(&(w * dt)).transpose());
    set(&mut phi, idx::THETA, idx::BG, -so3::right_jacobian(&(w * dt)) * dt);
    set(&mut phi, idx::VEL, idx::THETA, -r * skew(&sv));
    set(&mut phi, idx::VEL, idx::BG, r * bv);
    set(&mut phi, idx::VEL, idx::BA, -r * gv);
    set(&mut phi, idx::POS, idx::THETA, -r * skew(&sp));
    set(&mut phi, idx::POS, idx::VEL, Matrix3::identity() * dt);
    set(&mut phi, idx::POS, idx::BG, r * bp);
    set(&mut phi, idx::POS, idx::BA, -r * gp);

    // White measurement noise enters exactly like a bias error held over the
    // step, except that it does not persist in the bias states.
    let mut g_gyro = phi.fixed_columns::<3>(idx::BG).into_owned();
    let mut g_accel = phi.fixed_columns::<3>(idx::BA).into_owned();
    for g in [&mut g_gyro, &mut g_accel] {
        g.fixed_rows_mut::<6>(idx::BG).fill(0.0);
    }
    let mut q =
        g_gyro * g_gyro.transpose() * (noise.gyro_noise.powi(2) / dt) + g_accel * g_accel.transpose() * (noise.accel_noise.powi(2) / dt);
    for k in 0..3 {
        q[(idx::BG + k, idx::BG + k)] += noise.gyro_walk.powi(2) * dt;
        q[(idx::BA + k, idx::BA + k)] += noise.accel_walk.powi(2) * dt;
    }
    (phi, q)
}

impl Filter {
    /// Propagates the inertial state to `t_target` with the given samples.
    ///
    /// Each sample is held from its timestamp until the next one. Samples after
    /// `t_target` are ignored; an empty slice is a no-op.
    pub fn propagate(&mut self, samples: &[ImuSample], t_target: f64) -> Result<()> {
        for (i, pair) in samples.windows(2).enumerate() {
            if !(pair[1].t > pair[0].t) {
                return Err(Error::ImuOrder {
                    index: i + 1,
                    t: pair[1].t,
                });
            }
        }
        let Some(first) = samples.first() else { return Ok(()) };
        let mut held = self.last_imu.unwrap_or(*first);
        let mut t = self.state.t;
        let mut phi_total = Matrix15::identity();
        let mut q_total = Matrix15::zeros();

        let mut advance = |filter: &mut Filter, held: &ImuSample, t_to: f64, t: &mut f64| {
            let dt = t_to - *t;
            if dt <= 0.0 {
                return;
            }
            let (phi, q) = step_transition(&filter.state.imu, &held.gyro, &held.accel, dt, &filter.noise);
            filter.state.imu = integrate_step(&filter.state.imu, &held.gyro, &held.accel, dt, &filter.gravity);
            phi_total = phi * phi_total;
            q_total = phi * q_total * phi.transpose() + q;
            *t = t_to;
        };

        for s in samples {
            if s.t > t_target {
                break;
            }
            if s.t > t {
                advance(self, &held, s.t, &mut t);
            }
            held = *s;
        }
        if t_target > t {
            advance(self, &held, t_target, &mut t);
        }
        self.state.t = t.max(self.state.t);
        self.last_imu = Some(held);
        self.apply_inertial_transition(&phi_total, &q_total);
        Ok(())
    }

    fn apply_inertial_transition(&mut self, phi: &Matrix15, q: &Matrix15) {
        let n = self.cov.nrows();
        let p_ii = self.cov.view((0, 0), (INERTIAL_DIM, INERTIAL_DIM)).into_owned();
        let new_ii = phi * p_ii * phi.transpose() + q;
        if n > INERTIAL_DIM {
            let rest = n - INERTIAL_DIM;
            let cross = phi * self.cov.view((0, INERTIAL_DIM), (INERTIAL_DIM, rest));
            self.cov.view_mut((0, INERTIAL_DIM), (INERTIAL_DIM, rest)).copy_from(&cross);
            self.cov
                .view_mut((INERTIAL_DIM, 0), (rest, INERTIAL_DIM))
                .copy_from(&cross.transpose());
        }
        self.cov.view_mut((0, 0), (INERTIAL_DIM, INERTIAL_DIM)).copy_from(&new_ii);
        self.symmetrize();
    }

    /// Latest bias-corrected angular rate.
    pub fn angular_rate(&self) -> Vector3<f64> {
        self.last_imu.map(|s| s.gyro - self.state.imu.bg).unwrap_or_else(Vector3::zeros)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msckf::state::tests::random_state;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const G: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

    #[test]
    fn transition_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..50 {
            let s = random_state(&mut rng, 0, 0).imu;
            let gyro = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let accel = Vector3::from_fn(|_, _| rng.random_range(-15.0..15.0));
            let dt = rng.random_range(1e-3..2e-2);
            let (phi, _) = step_transition(&s, &gyro, &accel, dt, &NoiseParams::default());
            let base = integrate_step(&s, &gyro, &accel, dt, &G);
            for k in 0..INERTIAL_DIM {
                let mut d = [0.0; INERTIAL_DIM];
                d[k] = h;
                let plus = integrate_step(&s.boxplus(&d), &gyro, &accel, dt, &G).boxminus(&base);
                d[k] = -h;
                let minus = integrate_step(&s.boxplus(&d), &gyro, &accel, dt, &G).boxminus(&base);
                for r in 0..INERTIAL_DIM {
                    let fd = (plus[r] - minus[r]) / (2.0 * h);
                    assert!(
                        (fd - phi[(r, k)]).abs() < 1e-6 * phi.amax().max(1.0),
                        "({r},{k}) fd {fd} vs {}",
                        phi[(r, k)]
                    );
                }
            }
        }
    }

    #[test]
    fn process_noise_matches_densities() {
        let noise = NoiseParams::default();
        let s = InertialState::at_rest(UnitQuaternion::identity(), Vector3::zeros());
        let (dt, steps) = (0.005, 200);
        let total = dt * steps as f64;
        let mut p = Matrix15::zeros();
        for _ in 0..steps {
            let (phi, q) = step_transition(&s, &Vector3::zeros(), &(-G), dt, &noise);
            p = phi * p * phi.transpose() + q;
        }
        for k in 0..3 {
            let bg = p[(idx::BG + k, idx::BG + k)];
            let ba = p[(idx::BA + k, idx::BA + k)];
            assert!((bg / (noise.gyro_walk.powi(2) * total) - 1.0).abs() < 1e-9, "bg {bg}");
            assert!((ba / (noise.accel_walk.powi(2) * total) - 1.0).abs() < 1e-9, "ba {ba}");
        }
        // Vertical velocity is untouched by attitude error.
        let vz = p[(idx::VEL + 2, idx::VEL + 2)];
        let expected = noise.accel_noise.powi(2) * total + noise.accel_walk.powi(2) * total.powi(3) / 3.0;
        assert!((vz / expected - 1.0).abs() < 0.01, "vz {vz} vs {expected}");
    }

    #[test]
    fn stationary_is_a_fixed_point() {
        let rot = UnitQuaternion::from_euler_angles(0.2, -0.1, 0.7);
        let s = InertialState::at_rest(rot, Vector3::new(1.0, 2.0, 3.0));
        let accel = rot.inverse() * (-G);
        let mut cur = s.clone();
        for _ in 0..200 {
            cur = integrate_step(&cur, &Vector3::zeros(), &accel, 0.005, &G);
        }
        assert!((cur.p - s.p).norm() < 1e-12);
        assert!(cur.v.norm() < 1e-12);
    }
}
