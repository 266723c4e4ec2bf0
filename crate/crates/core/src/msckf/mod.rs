//! Error-state Kalman filter with a sliding window of pose clones, optional
//! in-state map points and online camera calibration.

pub mod camera;
pub mod keyframe;
pub mod measurement;
pub mod propagate;
pub mod so3;
pub mod state;
pub mod triangulate;
pub mod update;

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub use camera::CameraParams;
pub use keyframe::{mean_parallax, KeyframeDecision};
pub use propagate::{ImuSample, NoiseParams};
pub use state::{FullState, InertialState, PoseClone, StatePoint};
pub use update::{FeatureOutcome, MapPointMeasurement, UpdateReport};

use crate::error::{Error, Result};
use crate::{FeatureId, FrameId};
use state::{insertion_map, reindex, removal_map, CAMERA_DIM, CLONE_DIM, POINT_DIM};

/// A pixel measurement of some feature taken in a clone's image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelObservation {
    pub frame_id: FrameId,
    /// 0 = left, 1 = right.
    pub cam: usize,
    pub pixel: Vector2<f64>,
}

/// All window observations of one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureObservations {
    pub feature_id: FeatureId,
    pub observations: Vec<PixelObservation>,
}

impl FeatureObservations {
    /// Number of distinct frames the feature was seen in.
    pub fn covisibility(&self) -> usize {
        let mut frames: Vec<FrameId> = self.observations.iter().map(|o| o.frame_id).collect();
        frames.sort_unstable();
        frames.dedup();
        frames.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSettings {
    pub max_clones: usize,
    /// Features used per map-free update.
    pub top_n: usize,
    pub gate_probability: f64,
    pub min_baseline_deg: f64,
    pub min_depth: f64,
    /// Lower bound on the per-axis variance of a point entering the state (m²).
    pub point_variance_floor: f64,
    /// Largest tolerated position standard deviation before the run is declared diverged (m).
    pub max_position_sigma: f64,
    pub estimate_calibration: bool,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            max_clones: 10,
            top_n: 30,
            gate_probability: 0.95,
            min_baseline_deg: 1.0,
            min_depth: 0.1,
            point_variance_floor: 0.01,
            max_position_sigma: 100.0,
            estimate_calibration: true,
        }
    }
}

/// Initial standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialUncertainty {
    pub rot: f64,
    pub pos: f64,
    pub vel: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
    pub cam_rot: f64,
    pub cam_pos: f64,
    pub focal: f64,
    pub distortion: f64,
    pub time_shift: f64,
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        Self {
            rot: 1e-3,
            pos: 1e-3,
            vel: 1e-2,
            gyro_bias: 1e-3,
            accel_bias: 1e-2,
            cam_rot: 1e-4,
            cam_pos: 1e-4,
            focal: 1e-2,
            distortion: 1e-5,
            time_shift: 1e-5,
        }
    }
}

#[derive(Clone)]
pub struct Filter {
    pub state: FullState,
    pub cov: DMatrix<f64>,
    pub noise: NoiseParams,
    pub gravity: Vector3<f64>,
    pub settings: FilterSettings,
    pub(crate) last_imu: Option<ImuSample>,
    chi2: Vec<f64>,
}

impl Filter {
    pub fn new(state: FullState, noise: NoiseParams, settings: FilterSettings, init: &InitialUncertainty) -> Self {
        assert!(
            state.clones.is_empty() && state.points.is_empty(),
            "filter must start without clones or points"
        );
        let n = state.dim();
        let mut cov = DMatrix::zeros(n, n);
        let mut set = |o: usize, len: usize, sigma: f64| {
            for k in o..o + len {
                cov[(k, k)] = sigma * sigma;
            }
        };
        set(state::idx::THETA, 3, init.rot);
        set(state::idx::POS, 3, init.pos);
        set(state::idx::VEL, 3, init.vel);
        set(state::idx::BG, 3, init.gyro_bias);
        set(state::idx::BA, 3, init.accel_bias);
        for c in 0..2 {
            let o = state.cam_offset(c);
            set(o + state::cam_idx::ROT, 3, init.cam_rot);
            set(o + state::cam_idx::POS, 3, init.cam_pos);
            set(o + state::cam_idx::FOCAL, 2, init.focal);
            set(o + state::cam_idx::DIST, 4, init.distortion);
        }
        set(state.time_shift_offset(), 1, init.time_shift);
        Self {
            state,
            cov,
            noise,
            gravity: Vector3::new(0.0, 0.0, -9.81),
            settings,
            last_imu: None,
            chi2: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.state.dim()
    }

    pub fn symmetrize(&mut self) {
        let n = self.cov.nrows();
        for j in 0..n {
            for i in j + 1..n {
                let m = 0.5 * (self.cov[(i, j)] + self.cov[(j, i)]);
                self.cov[(i, j)] = m;
                self.cov[(j, i)] = m;
            }
        }
    }

    /// 95 %-style chi-square threshold for `dof` degrees of freedom.
    pub(crate) fn chi2_threshold(&mut self, dof: usize) -> f64 {
        if self.chi2.len() <= dof {
            let p = self.settings.gate_probability;
            for k in self.chi2.len()..=dof {
                let v = if k == 0 {
                    0.0
                } else {
                    ChiSquared::new(k as f64).map(|d| d.inverse_cdf(p)).unwrap_or(f64::INFINITY)
                };
                self.chi2.push(v);
            }
        }
        self.chi2[dof]
    }

    /// Clones the current IMU pose into the window.
    pub fn augment_clone(&mut self, frame_id: FrameId) {
        if let Some(last) = self.state.clones.last() {
            assert!(frame_id > last.frame_id, "clone frame ids must increase");
        }
        let at = self.state.clone_offset(self.state.clones.len());
        let n_old = self.cov.nrows();
        let mut cov = reindex(&self.cov, &insertion_map(n_old, at, CLONE_DIM));
        let n = n_old + CLONE_DIM;
        // The clone Jacobian is identity on (δθ, δp), which sit at 0..6.
        for j in 0..n {
            let src = if (at..at + CLONE_DIM).contains(&j) { j - at } else { j };
            for k in 0..CLONE_DIM {
                let v = cov[(k, src)];
                cov[(at + k, j)] = v;
                cov[(j, at + k)] = v;
            }
        }
        self.cov = cov;
        let omega = self.angular_rate();
        self.state.clones.push(PoseClone {
            frame_id,
            t: self.state.t,
            rot: self.state.imu.rot,
            p: self.state.imu.p,
            omega,
        });
        debug_assert_eq!(self.cov.nrows(), self.state.dim());
    }

    /// Removes a clone and its covariance rows/columns.
    pub fn remove_clone(&mut self, index: usize) {
        let at = self.state.clone_offset(index);
        self.cov = reindex(&self.cov, &removal_map(self.cov.nrows(), at, CLONE_DIM));
        self.state.clones.remove(index);
    }

    /// Drops the oldest clones until the window holds at most `max_clones`.
    pub fn enforce_window(&mut self) -> Vec<FrameId> {
        let mut dropped = Vec::new();
        while self.state.clones.len() > self.settings.max_clones {
            dropped.push(self.state.clones[0].frame_id);
            self.remove_clone(0);
        }
        dropped
    }

    /// Appends a point with the given covariance and cross-covariance to the rest
    /// of the current state (`cross` is `3 × dim` before insertion).
    pub fn append_point(&mut self, feature_id: FeatureId, p: Vector3<f64>, p_ff: &Matrix3<f64>, cross: &DMatrix<f64>) -> Result<()> {
        if self.state.point_index(feature_id).is_some() {
            return Err(Error::DuplicateFeature(feature_id));
        }
        let n_old = self.cov.nrows();
        assert_eq!(cross.shape(), (POINT_DIM, n_old));
        let at = self.state.point_offset(self.state.points.len());
        let map = insertion_map(n_old, at, POINT_DIM);
        let mut cov = reindex(&self.cov, &map);
        for (j, src) in map.iter().enumerate() {
            if let Some(s) = *src {
                for k in 0..POINT_DIM {
                    cov[(at + k, j)] = cross[(k, s)];
                    cov[(j, at + k)] = cross[(k, s)];
                }
            }
        }
        cov.view_mut((at, at), (POINT_DIM, POINT_DIM)).copy_from(p_ff);
        self.cov = cov;
        self.state.points.push(StatePoint { feature_id, p });
        self.symmetrize();
        Ok(())
    }

    pub fn remove_point(&mut self, feature_id: FeatureId) -> Result<Vector3<f64>> {
        let j = self.state.point_index(feature_id).ok_or(Error::UnknownFeature(feature_id))?;
        let at = self.state.point_offset(j);
        self.cov = reindex(&self.cov, &removal_map(self.cov.nrows(), at, POINT_DIM));
        Ok(self.state.points.remove(j).p)
    }

    /// Covariance of the IMU pose error `[δθ, δp]`.
    pub fn pose_covariance(&self) -> Matrix6<f64> {
        self.cov.fixed_view::<6, 6>(0, 0).into_owned()
    }

    /// Normalised estimation error squared of the IMU pose against a reference.
    pub fn pose_nees(&self, rot: &nalgebra::UnitQuaternion<f64>, p: &Vector3<f64>) -> f64 {
        let mut e = nalgebra::Vector6::zeros();
        e.fixed_rows_mut::<3>(0).copy_from(&so3::boxminus(rot, &self.state.imu.rot));
        e.fixed_rows_mut::<3>(3).copy_from(&(p - self.state.imu.p));
        match self.pose_covariance().cholesky() {
            Some(c) => e.dot(&c.solve(&e)),
            None => f64::INFINITY,
        }
    }

    /// Fails when the estimate is no longer usable.
    pub fn check_health(&self) -> Result<()> {
        let s = &self.state;
        let finite = s.imu.p.iter().chain(s.imu.v.iter()).all(|v| v.is_finite()) && self.cov.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Diverged("non-finite state or covariance".into()));
        }
        let max_var = (3..6).map(|k| self.cov[(k, k)]).fold(0.0, f64::max);
        if max_var.sqrt() > self.settings.max_position_sigma {
            return Err(Error::Diverged(format!("position sigma {:.1} m", max_var.sqrt())));
        }
        if (0..self.cov.nrows()).any(|k| self.cov[(k, k)] < -1e-9) {
            return Err(Error::Diverged("negative variance".into()));
        }
        if s.imu.v.norm() > 100.0 {
            return Err(Error::Diverged(format!("speed {:.1} m/s", s.imu.v.norm())));
        }
        Ok(())
    }

    /// Indices of the calibration block (both cameras and the time shift).
    pub(crate) fn calibration_columns(&self) -> Vec<usize> {
        if !self.settings.estimate_calibration {
            return Vec::new();
        }
        let o = self.state.cam_offset(0);
        (o..o + 2 * CAMERA_DIM + 1).collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::msckf::state::tests::random_state;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_psd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() * 1e-2 + DMatrix::identity(n, n) * 1e-4
    }

    fn min_eig(m: &DMatrix<f64>) -> f64 {
        m.clone().symmetric_eigen().eigenvalues.min()
    }

    #[test]
    fn clone_copies_pose_and_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = random_state(&mut rng, 0, 0);
            let mut f = Filter::new(s, NoiseParams::default(), FilterSettings::default(), &InitialUncertainty::default());
            f.cov = random_psd(&mut rng, f.dim());
            f.augment_clone(1);
            f.augment_clone(2);
            let c = &f.state.clones[1];
            assert_eq!(c.rot, f.state.imu.rot);
            assert_eq!(c.p, f.state.imu.p);
            let o = f.state.clone_offset(1);
            assert_eq!(f.cov.view((o, o), (6, 6)), f.cov.view((0, 0), (6, 6)));
            assert_eq!(f.cov.view((o, 6), (6, 9)), f.cov.view((0, 6), (6, 9)));
            assert_eq!(f.cov.nrows(), f.state.dim());
            assert!(min_eig(&f.cov) > -1e-9);
            assert!((&f.cov - f.cov.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn remove_clone_restores_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_state(&mut rng, 0, 0);
        let mut f = Filter::new(s, NoiseParams::default(), FilterSettings::default(), &InitialUncertainty::default());
        f.cov = random_psd(&mut rng, f.dim());
        let before = f.cov.clone();
        f.augment_clone(7);
        f.remove_clone(0);
        assert_eq!(f.cov, before);
    }

    #[test]
    fn window_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_state(&mut rng, 0, 0);
        let settings = FilterSettings {
            max_clones: 3,
            ..Default::default()
        };
        let mut f = Filter::new(s, NoiseParams::default(), settings, &InitialUncertainty::default());
        for id in 0..6 {
            f.augment_clone(id);
            f.enforce_window();
        }
        let ids: Vec<_> = f.state.clones.iter().map(|c| c.frame_id).collect();
        assert_eq!(ids, vec![3, 4, 5]);
        assert_eq!(f.cov.nrows(), f.state.dim());
    }

    #[test]
    fn append_and_remove_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_state(&mut rng, 0, 0);
        let mut f = Filter::new(s, NoiseParams::default(), FilterSettings::default(), &InitialUncertainty::default());
        f.augment_clone(0);
        let before = f.cov.clone();
        let cross = DMatrix::zeros(3, f.dim());
        f.append_point(9, Vector3::new(1.0, 2.0, 3.0), &(Matrix3::identity() * 0.04), &cross)
            .unwrap();
        assert!(f
            .append_point(9, Vector3::zeros(), &Matrix3::identity(), &DMatrix::zeros(3, f.dim()))
            .is_err());
        let o = f.state.point_offset(0);
        assert_eq!(f.cov[(o + 1, o + 1)], 0.04);
        assert_eq!(f.remove_point(9).unwrap(), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(f.cov, before);
        assert!(f.remove_point(9).is_err());
    }

    #[test]
    fn chi2_thresholds() {
        let s = random_state(&mut ChaCha8Rng::seed_from_u64(1), 0, 0);
        let mut f = Filter::new(s, NoiseParams::default(), FilterSettings::default(), &InitialUncertainty::default());
        assert!((f.chi2_threshold(1) - 3.841_458_820_694_124).abs() < 1e-6);
        assert!((f.chi2_threshold(2) - 5.991_464_547_107_979).abs() < 1e-6);
    }
}
