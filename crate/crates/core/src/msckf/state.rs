//! Filter state and error-state layout.
//!
//! The error state is ordered as
//! `[inertial(15) | clones(6 each) | map points(3 each) | cam0(12) | cam1(12) | time shift(1)]`
//! where the inertial block is `[δθ, δp, δv, δb_g, δb_a]`, a clone is `[δθ, δp]`
//! and a camera block is `[δθ_ci, δp_ci, δf(2), δD(4)]`.

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};

use super::camera::CameraParams;
use super::so3;
use crate::{FeatureId, FrameId};

pub const INERTIAL_DIM: usize = 15;
pub const CLONE_DIM: usize = 6;
pub const POINT_DIM: usize = 3;
pub const CAMERA_DIM: usize = 12;

/// Offsets inside the inertial block.
pub mod idx {
    pub const THETA: usize = 0;
    pub const POS: usize = 3;
    pub const VEL: usize = 6;
    pub const BG: usize = 9;
    pub const BA: usize = 12;
}

/// Offsets inside a camera block.
pub mod cam_idx {
    pub const ROT: usize = 0;
    pub const POS: usize = 3;
    pub const FOCAL: usize = 6;
    pub const DIST: usize = 8;
}

#[derive(Debug, Clone, PartialEq)]
pub struct InertialState {
    /// Orientation of the IMU in the global frame (maps IMU vectors to global).
    pub rot: UnitQuaternion<f64>,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub bg: Vector3<f64>,
    pub ba: Vector3<f64>,
}

impl InertialState {
    pub fn at_rest(rot: UnitQuaternion<f64>, p: Vector3<f64>) -> Self {
        Self {
            rot,
            p,
            v: Vector3::zeros(),
            bg: Vector3::zeros(),
            ba: Vector3::zeros(),
        }
    }

    pub fn rot_mat(&self) -> Matrix3<f64> {
        self.rot.to_rotation_matrix().into_inner()
    }

    pub fn boxplus(&self, d: &[f64]) -> Self {
        let v3 = |o: usize| Vector3::new(d[o], d[o + 1], d[o + 2]);
        Self {
            rot: so3::boxplus(&self.rot, &v3(idx::THETA)),
            p: self.p + v3(idx::POS),
            v: self.v + v3(idx::VEL),
            bg: self.bg + v3(idx::BG),
            ba: self.ba + v3(idx::BA),
        }
    }

    pub fn boxminus(&self, other: &Self) -> [f64; INERTIAL_DIM] {
        let mut out = [0.0; INERTIAL_DIM];
        let blocks = [
            so3::boxminus(&self.rot, &other.rot),
            self.p - other.p,
            self.v - other.v,
            self.bg - other.bg,
            self.ba - other.ba,
        ];
        for (b, block) in blocks.iter().enumerate() {
            out[3 * b..3 * b + 3].copy_from_slice(block.as_slice());
        }
        out
    }
}

/// Stochastic clone of the IMU pose at a keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseClone {
    pub frame_id: FrameId,
    pub t: f64,
    pub rot: UnitQuaternion<f64>,
    pub p: Vector3<f64>,
    /// Bias-corrected angular rate at clone time; drives the time-shift model.
    pub omega: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatePoint {
    pub feature_id: FeatureId,
    pub p: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub t: f64,
    pub imu: InertialState,
    pub clones: Vec<PoseClone>,
    pub points: Vec<StatePoint>,
    pub cams: [CameraParams; 2],
    /// Camera clock minus IMU clock (s).
    pub time_shift: f64,
}

impl FullState {
    pub fn new(t: f64, imu: InertialState, cams: [CameraParams; 2]) -> Self {
        Self {
            t,
            imu,
            clones: Vec::new(),
            points: Vec::new(),
            cams,
            time_shift: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        INERTIAL_DIM + CLONE_DIM * self.clones.len() + POINT_DIM * self.points.len() + 2 * CAMERA_DIM + 1
    }

    pub fn clone_offset(&self, i: usize) -> usize {
        INERTIAL_DIM + CLONE_DIM * i
    }

    pub fn point_offset(&self, j: usize) -> usize {
        INERTIAL_DIM + CLONE_DIM * self.clones.len() + POINT_DIM * j
    }

    pub fn cam_offset(&self, c: usize) -> usize {
        INERTIAL_DIM + CLONE_DIM * self.clones.len() + POINT_DIM * self.points.len() + CAMERA_DIM * c
    }

    pub fn time_shift_offset(&self) -> usize {
        self.dim() - 1
    }

    pub fn clone_index(&self, frame_id: FrameId) -> Option<usize> {
        self.clones.iter().position(|c| c.frame_id == frame_id)
    }

    pub fn point_index(&self, feature_id: FeatureId) -> Option<usize> {
        self.points.iter().position(|p| p.feature_id == feature_id)
    }

    /// Applies an error-state increment in place.
    pub fn boxplus(&mut self, dx: &DVector<f64>) {
        assert_eq!(dx.len(), self.dim(), "error-state dimension mismatch");
        let d = dx.as_slice();
        let v3 = |o: usize| Vector3::new(d[o], d[o + 1], d[o + 2]);
        self.imu = self.imu.boxplus(&d[..INERTIAL_DIM]);
        for i in 0..self.clones.len() {
            let o = self.clone_offset(i);
            let c = &mut self.clones[i];
            c.rot = so3::boxplus(&c.rot, &v3(o));
            c.p += v3(o + 3);
        }
        for j in 0..self.points.len() {
            let o = self.point_offset(j);
            self.points[j].p += v3(o);
        }
        for c in 0..2 {
            let o = self.cam_offset(c);
            let cam = &mut self.cams[c];
            cam.rot_ci = so3::boxplus(&cam.rot_ci, &v3(o + cam_idx::ROT));
            cam.p_ci += v3(o + cam_idx::POS);
            cam.focal.x += d[o + cam_idx::FOCAL];
            cam.focal.y += d[o + cam_idx::FOCAL + 1];
            for k in 0..4 {
                cam.distortion[k] += d[o + cam_idx::DIST + k];
            }
        }
        let o = self.time_shift_offset();
        self.time_shift += d[o];
    }

    /// Error-state difference `self ⊟ other`; both must share the same structure.
    pub fn boxminus(&self, other: &Self) -> DVector<f64> {
        assert_eq!(self.dim(), other.dim(), "state structures differ");
        let mut out = DVector::zeros(self.dim());
        out.as_mut_slice()[..INERTIAL_DIM].copy_from_slice(&self.imu.boxminus(&other.imu));
        fn put(out: &mut DVector<f64>, o: usize, v: Vector3<f64>) {
            out.rows_mut(o, 3).copy_from(&v);
        }
        for (i, (a, b)) in self.clones.iter().zip(&other.clones).enumerate() {
            let o = self.clone_offset(i);
            put(&mut out, o, so3::boxminus(&a.rot, &b.rot));
            put(&mut out, o + 3, a.p - b.p);
        }
        for (j, (a, b)) in self.points.iter().zip(&other.points).enumerate() {
            put(&mut out, self.point_offset(j), a.p - b.p);
        }
        for c in 0..2 {
            let o = self.cam_offset(c);
            let (a, b) = (&self.cams[c], &other.cams[c]);
            put(&mut out, o + cam_idx::ROT, so3::boxminus(&a.rot_ci, &b.rot_ci));
            put(&mut out, o + cam_idx::POS, a.p_ci - b.p_ci);
            out[o + cam_idx::FOCAL] = a.focal.x - b.focal.x;
            out[o + cam_idx::FOCAL + 1] = a.focal.y - b.focal.y;
            for k in 0..4 {
                out[o + cam_idx::DIST + k] = a.distortion[k] - b.distortion[k];
            }
        }
        let o = self.time_shift_offset();
        out[o] = self.time_shift - other.time_shift;
        out
    }
}

/// Re-lays out a covariance: entry `(i, j)` of the result is `old[(src[i], src[j])]`,
/// or zero where `src` is `None`.
pub(crate) fn reindex(old: &DMatrix<f64>, src: &[Option<usize>]) -> DMatrix<f64> {
    let n = src.len();
    let mut out = DMatrix::zeros(n, n);
    for (j, sj) in src.iter().enumerate() {
        let Some(sj) = *sj else { continue };
        for (i, si) in src.iter().enumerate() {
            if let Some(si) = *si {
                out[(i, j)] = old[(si, sj)];
            }
        }
    }
    out
}

/// Index map that inserts `count` fresh rows/columns at `at`.
pub(crate) fn insertion_map(n_old: usize, at: usize, count: usize) -> Vec<Option<usize>> {
    (0..at)
        .map(Some)
        .chain(std::iter::repeat_n(None, count))
        .chain((at..n_old).map(Some))
        .collect()
}

/// Index map that deletes `count` rows/columns starting at `at`.
pub(crate) fn removal_map(n_old: usize, at: usize, count: usize) -> Vec<Option<usize>> {
    (0..at).chain(at + count..n_old).map(Some).collect()
}
