//! Inertial measurements along an analytic trajectory.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::trajectory::{sample_pose, TrajectorySpec};
use super::NoiseSpec;
use crate::error::{Error, Result};
use crate::msckf::ImuSample;

/// World gravity used by the simulator.
pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -9.81)
}

/// Samples at `k / rate_hz` for every `k` with `k / rate_hz ≤ duration`. White
/// noise densities are discretised as `σ/√Δt`; biases start at zero and walk
/// with `σ_walk·√Δt` per sample.
pub fn generate_imu(spec: &TrajectorySpec, noise: &NoiseSpec, rate_hz: f64, seed: u64) -> Result<Vec<ImuSample>> {
    spec.validate()?;
    if !(rate_hz > 0.0) {
        return Err(Error::Config(format!("imu rate must be positive, got {rate_hz}")));
    }
    let dt = 1.0 / rate_hz;
    let n = (spec.duration * rate_hz + 1e-9).floor() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut gauss = || Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
    let p = &noise.imu;
    let (mut bg, mut ba) = (Vector3::zeros(), Vector3::zeros());
    let g = gravity();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * dt;
        let kin = sample_pose(spec, t.min(spec.duration))?;
        let accel = kin.rot.inverse() * (kin.a - g) + ba + gauss() * (p.accel_noise / dt.sqrt());
        let gyro = kin.omega + bg + gauss() * (p.gyro_noise / dt.sqrt());
        out.push(ImuSample { t, accel, gyro });
        bg += gauss() * (p.gyro_walk * dt.sqrt());
        ba += gauss() * (p.accel_walk * dt.sqrt());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trajectory::TrajectoryKind;

    #[test]
    fn stationary_reads_gravity() {
        let spec = TrajectorySpec {
            kind: TrajectoryKind::StraightWithYaw,
            amplitude: 0.0,
            yaw_amplitude: 0.0,
            duration: 2.0,
            ..Default::default()
        };
        let imu = generate_imu(&spec, &NoiseSpec::zero(), 200.0, 0).unwrap();
        assert_eq!(imu.len(), 401);
        for s in &imu {
            assert!((s.accel - Vector3::new(0.0, 0.0, 9.81)).norm() < 1e-12);
            assert_eq!(s.gyro, Vector3::zeros());
        }
    }

    #[test]
    fn gyro_variance_matches_density() {
        let spec = TrajectorySpec {
            duration: 60.0,
            ..Default::default()
        };
        let mut noise = NoiseSpec::zero();
        noise.imu.gyro_noise = 0.01;
        let rate = 200.0;
        let clean = generate_imu(&spec, &NoiseSpec::zero(), rate, 5).unwrap();
        let noisy = generate_imu(&spec, &noise, rate, 5).unwrap();
        let expected = 0.01f64.powi(2) * rate;
        for axis in 0..3 {
            let d: Vec<f64> = noisy.iter().zip(&clean).map(|(a, b)| a.gyro[axis] - b.gyro[axis]).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
            assert!((var / expected - 1.0).abs() < 0.1, "axis {axis}: {var} vs {expected}");
        }
    }

    #[test]
    fn zero_rate_is_rejected() {
        assert!(generate_imu(&TrajectorySpec::default(), &NoiseSpec::zero(), 0.0, 0).is_err());
    }
}
