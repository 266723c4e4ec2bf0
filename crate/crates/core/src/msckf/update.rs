//! The two measurement updates of a frame.
//!
//! The map-free update triangulates the most co-visible feature tracks, removes
//! the dependence on the feature position by projecting each feature's residual
//! onto the left nullspace of its position Jacobian, gates, stacks and applies
//! one EKF step. The map update then refines the whole state, including map
//! points held in the state, with the current frame's observations of the
//! selected map points.
//!
//! Jacobians are assembled over a compact subset of columns; the gain still
//! spans the full state, so every variable correlated with the observed ones is
//! corrected.

use nalgebra::{DMatrix, DVector, Dim, Matrix, Matrix3, Vector3, U2};

use super::measurement::{measurement_jacobian, Rejection};
use super::state::{CLONE_DIM, POINT_DIM};
use super::triangulate::{triangulate, Triangulation, TriangulationFailure, TriangulationSettings, View};
use super::{so3, FeatureObservations, Filter, PixelObservation};
use crate::error::{Error, Result};
use crate::FeatureId;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureStatus {
    Used,
    /// Not among the `top_n` most co-visible candidates.
    NotSelected,
    /// Fewer than two usable observations in the window.
    TooFewObservations,
    Triangulation(TriangulationFailure),
    BehindCamera,
    Gated {
        chi2: f64,
        threshold: f64,
    },
}

#[derive(Debug, Clone)]
pub struct FeatureOutcome {
    pub feature_id: FeatureId,
    pub status: FeatureStatus,
    /// Triangulated (map-free) or initial (map) position.
    pub triangulation: Option<Triangulation>,
}

impl FeatureOutcome {
    fn new(feature_id: FeatureId, status: FeatureStatus) -> Self {
        Self {
            feature_id,
            status,
            triangulation: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct UpdateReport {
    pub features: Vec<FeatureOutcome>,
    /// Measurement rows applied after projection and compression.
    pub rows: usize,
}

impl UpdateReport {
    pub fn used(&self) -> impl Iterator<Item = &FeatureOutcome> {
        self.features.iter().filter(|f| f.status == FeatureStatus::Used)
    }
}

/// Input of the map update for one selected map point.
#[derive(Debug, Clone)]
pub struct MapPointMeasurement {
    pub feature_id: FeatureId,
    /// Stored global position, used when the point is not yet in the state.
    pub position: Vector3<f64>,
    /// Stored covariance, used when the window holds no usable observations.
    pub covariance: Matrix3<f64>,
    /// Past window observations, used to initialise a point entering the state.
    pub history: Vec<PixelObservation>,
    /// Observations in the current frame.
    pub current: Vec<PixelObservation>,
}

/// Subset of state columns a Jacobian is expressed over.
struct Columns {
    list: Vec<usize>,
    lookup: Vec<Option<usize>>,
}

impl Columns {
    fn new(n: usize, blocks: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut used = vec![false; n];
        for (start, len) in blocks {
            used[start..start + len].iter_mut().for_each(|u| *u = true);
        }
        let list: Vec<usize> = (0..n).filter(|&i| used[i]).collect();
        let mut lookup = vec![None; n];
        for (c, &i) in list.iter().enumerate() {
            lookup[i] = Some(c);
        }
        Self { list, lookup }
    }

    fn len(&self) -> usize {
        self.list.len()
    }

    fn add<C: Dim, S: nalgebra::RawStorage<f64, U2, C>>(
        &self,
        h: &mut DMatrix<f64>,
        row: usize,
        start: usize,
        block: &Matrix<f64, U2, C, S>,
    ) {
        for k in 0..block.ncols() {
            if let Some(c) = self.lookup[start + k] {
                h[(row, c)] += block[(0, k)];
                h[(row + 1, c)] += block[(1, k)];
            }
        }
    }
}

struct Linearized {
    hx: DMatrix<f64>,
    hf: DMatrix<f64>,
    r: DVector<f64>,
}

/// Rotates `hf` to upper-triangular form with Givens rotations, applying the
/// same rotations to `hx` and `r`, and returns the rows below the first three:
/// the projection onto the left nullspace of `hf`.
fn nullspace_project(mut lin: Linearized) -> (DMatrix<f64>, DVector<f64>) {
    let m = lin.hf.nrows();
    let nf = lin.hf.ncols();
    for col in 0..nf {
        for row in (col + 1..m).rev() {
            let (a, b) = (lin.hf[(row - 1, col)], lin.hf[(row, col)]);
            if b == 0.0 {
                continue;
            }
            let rho = a.hypot(b);
            let (c, s) = (a / rho, b / rho);
            let rotate = |mat: &mut DMatrix<f64>, from: usize| {
                for k in from..mat.ncols() {
                    let (x, y) = (mat[(row - 1, k)], mat[(row, k)]);
                    mat[(row - 1, k)] = c * x + s * y;
                    mat[(row, k)] = -s * x + c * y;
                }
            };
            rotate(&mut lin.hf, col);
            rotate(&mut lin.hx, 0);
            let (x, y) = (lin.r[row - 1], lin.r[row]);
            lin.r[row - 1] = c * x + s * y;
            lin.r[row] = -s * x + c * y;
        }
    }
    let keep = m.saturating_sub(nf);
    (lin.hx.rows(nf, keep).into_owned(), lin.r.rows(nf, keep).into_owned())
}

impl Filter {
    fn triangulation_settings(&self) -> TriangulationSettings {
        TriangulationSettings {
            min_baseline_deg: self.settings.min_baseline_deg,
            min_depth: self.settings.min_depth,
            pixel_sigma: self.noise.pixel_sigma,
            ..Default::default()
        }
    }

    /// Pairs each observation with its clone index, dropping those whose frame left the window.
    fn in_window<'a>(&self, obs: &'a [PixelObservation]) -> Vec<(usize, &'a PixelObservation)> {
        obs.iter()
            .filter_map(|o| self.state.clone_index(o.frame_id).map(|i| (i, o)))
            .collect()
    }

    fn views(&self, obs: &[(usize, &PixelObservation)]) -> Vec<View> {
        obs.iter()
            .map(|&(ci, o)| {
                let c = &self.state.clones[ci];
                let cam = &self.state.cams[o.cam];
                let r_img = c.rot.to_rotation_matrix().into_inner() * so3::exp_mat(&(c.omega * self.state.time_shift));
                let (rot_wc, center) = cam.pose_in(&r_img, &c.p);
                View {
                    rot_wc,
                    center,
                    bearing: cam.undistort(&o.pixel),
                    focal: cam.mean_focal(),
                }
            })
            .collect()
    }

    /// Residuals and Jacobians of a feature's observations at `point`. When
    /// `point_start` is given the point columns are also filled into `hx`.
    fn linearize(
        &self,
        obs: &[(usize, &PixelObservation)],
        point: &Vector3<f64>,
        cols: &Columns,
        point_start: Option<usize>,
    ) -> std::result::Result<Linearized, Rejection> {
        let rows = 2 * obs.len();
        let mut lin = Linearized {
            hx: DMatrix::zeros(rows, cols.len()),
            hf: DMatrix::zeros(rows, POINT_DIM),
            r: DVector::zeros(rows),
        };
        for (k, &(ci, o)) in obs.iter().enumerate() {
            let j = measurement_jacobian(&self.state, ci, o.cam, point, self.settings.min_depth)?;
            let row = 2 * k;
            lin.r.fixed_rows_mut::<2>(row).copy_from(&(o.pixel - j.pixel));
            cols.add(&mut lin.hx, row, self.state.clone_offset(ci), &j.d_clone);
            cols.add(&mut lin.hx, row, self.state.cam_offset(o.cam), &j.d_camera);
            cols.add(&mut lin.hx, row, self.state.time_shift_offset(), &j.d_time_shift);
            if let Some(ps) = point_start {
                cols.add(&mut lin.hx, row, ps, &j.d_point);
            }
            lin.hf.fixed_view_mut::<2, 3>(row, 0).copy_from(&j.d_point);
        }
        Ok(lin)
    }

    fn calibration_blocks(&self) -> Vec<(usize, usize)> {
        let c = self.calibration_columns();
        c.first().map(|&s| vec![(s, c.len())]).unwrap_or_default()
    }

    /// Mahalanobis distance of a residual under the compact Jacobian.
    fn mahalanobis(&self, cols: &Columns, h: &DMatrix<f64>, r: &DVector<f64>) -> Option<f64> {
        // Only the columns the Jacobian touches contribute.
        let nz: Vec<usize> = (0..h.ncols()).filter(|&c| h.column(c).iter().any(|v| *v != 0.0)).collect();
        let global: Vec<usize> = nz.iter().map(|&c| cols.list[c]).collect();
        let h = h.select_columns(nz.iter());
        let p_cc = self.cov.select_rows(global.iter()).select_columns(global.iter());
        let var = self.noise.pixel_sigma.powi(2);
        let s = &h * p_cc * h.transpose() + DMatrix::identity(h.nrows(), h.nrows()) * var;
        s.cholesky().map(|c| r.dot(&c.solve(r)))
    }

    /// EKF step with a Jacobian over `cols`, isotropic pixel noise.
    fn ekf_step(&mut self, cols: &Columns, h: &DMatrix<f64>, r: &DVector<f64>) -> Result<()> {
        if h.nrows() == 0 {
            return Ok(());
        }
        // Compression only pays off when it removes a sizeable share of rows.
        let (h, r) = if 2 * h.nrows() > 3 * h.ncols() {
            // Thin QR keeps the same information with at most `ncols` rows.
            let qr = h.clone().qr();
            let q = qr.q();
            (qr.r(), q.transpose() * r)
        } else {
            (h.clone(), r.clone())
        };
        let var = self.noise.pixel_sigma.powi(2);
        let pht = self.cov.select_columns(cols.list.iter()) * h.transpose();
        let s = &h * pht.select_rows(cols.list.iter()) + DMatrix::identity(h.nrows(), h.nrows()) * var;
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Diverged("innovation covariance not positive definite".into()))?;
        let kt = chol.solve(&pht.transpose());
        let dx = kt.transpose() * &r;
        self.cov -= &pht * &kt;
        self.symmetrize();
        if dx.iter().any(|v| *v != 0.0) {
            self.state.boxplus(&dx);
        }
        Ok(())
    }

    /// Triangulates a feature from its observations in window clones.
    pub fn triangulate_observations(&self, obs: &[PixelObservation]) -> std::result::Result<Triangulation, TriangulationFailure> {
        let obs = self.in_window(obs);
        if obs.len() < 2 {
            return Err(TriangulationFailure::TooFewViews);
        }
        triangulate(&self.views(&obs), &self.triangulation_settings())
    }

    /// Map-free update with the given candidate tracks. Map points in the state
    /// are not observed here but are corrected through their correlations.
    pub fn update_without_map(&mut self, candidates: &[FeatureObservations]) -> Result<UpdateReport> {
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (&candidates[a], &candidates[b]);
            fb.covisibility()
                .cmp(&fa.covisibility())
                .then(fb.observations.len().cmp(&fa.observations.len()))
                .then(fa.feature_id.cmp(&fb.feature_id))
        });

        let n = self.dim();
        let mut blocks: Vec<(usize, usize)> = (0..self.state.clones.len())
            .map(|i| (self.state.clone_offset(i), CLONE_DIM))
            .collect();
        blocks.extend(self.calibration_blocks());
        let cols = Columns::new(n, blocks);
        let tri_settings = self.triangulation_settings();

        let mut report = UpdateReport::default();
        let mut stacked_h: Vec<DMatrix<f64>> = Vec::new();
        let mut stacked_r: Vec<DVector<f64>> = Vec::new();
        for (rank, &i) in order.iter().enumerate() {
            let f = &candidates[i];
            if rank >= self.settings.top_n {
                report.features.push(FeatureOutcome::new(f.feature_id, FeatureStatus::NotSelected));
                continue;
            }
            let obs = self.in_window(&f.observations);
            if obs.len() < 2 {
                report
                    .features
                    .push(FeatureOutcome::new(f.feature_id, FeatureStatus::TooFewObservations));
                continue;
            }
            let tri = match triangulate(&self.views(&obs), &tri_settings) {
                Ok(t) => t,
                Err(e) => {
                    report
                        .features
                        .push(FeatureOutcome::new(f.feature_id, FeatureStatus::Triangulation(e)));
                    continue;
                }
            };
            let mut outcome = FeatureOutcome::new(f.feature_id, FeatureStatus::Used);
            match self.linearize(&obs, &tri.point, &cols, None) {
                Err(Rejection::Depth) => outcome.status = FeatureStatus::BehindCamera,
                Ok(lin) => {
                    let (h, r) = nullspace_project(lin);
                    let threshold = self.chi2_threshold(r.len());
                    let chi2 = self.mahalanobis(&cols, &h, &r).unwrap_or(f64::INFINITY);
                    if chi2 > threshold {
                        outcome.status = FeatureStatus::Gated { chi2, threshold };
                    } else {
                        stacked_h.push(h);
                        stacked_r.push(r);
                    }
                }
            }
            outcome.triangulation = Some(tri);
            report.features.push(outcome);
        }

        let rows: usize = stacked_r.iter().map(|r| r.len()).sum();
        if rows == 0 {
            return Ok(report);
        }
        let mut h = DMatrix::zeros(rows, cols.len());
        let mut r = DVector::zeros(rows);
        let mut row = 0;
        for (hi, ri) in stacked_h.iter().zip(&stacked_r) {
            h.rows_mut(row, hi.nrows()).copy_from(hi);
            r.rows_mut(row, ri.len()).copy_from(ri);
            row += hi.nrows();
        }
        report.rows = rows.min(cols.len());
        self.ekf_step(&cols, &h, &r)?;
        Ok(report)
    }

    /// Adds a map point to the state. With at least two window observations the
    /// point is initialised to first order from them, correlated with the
    /// observing clones; otherwise the stored covariance is used as is.
    pub fn initialize_point(&mut self, m: &MapPointMeasurement) -> Result<Vector3<f64>> {
        let n = self.dim();
        let floor = self.settings.point_variance_floor;
        let apply_floor = |p: &mut Matrix3<f64>| {
            for k in 0..3 {
                if p[(k, k)] < floor {
                    p[(k, k)] = floor;
                }
            }
        };
        let obs = self.in_window(&m.history);
        let mut blocks: Vec<(usize, usize)> = obs.iter().map(|(ci, _)| (self.state.clone_offset(*ci), CLONE_DIM)).collect();
        blocks.extend(self.calibration_blocks());
        let cols = Columns::new(n, blocks);
        let first_order = if obs.len() >= 2 {
            self.linearize(&obs, &m.position, &cols, None).ok().and_then(|lin| {
                let hth = lin.hf.transpose() * &lin.hf;
                let inv = hth.clone().cholesky()?.inverse();
                let a = -&inv * lin.hf.transpose() * &lin.hx;
                let dp = &inv * lin.hf.transpose() * &lin.r;
                Some((a, inv, dp))
            })
        } else {
            None
        };
        let (p, mut p_ff, cross) = match first_order {
            Some((a, inv, dp)) => {
                let p_c = self.cov.select_rows(cols.list.iter());
                let cross = &a * p_c;
                let p_ff = &cross.select_columns(cols.list.iter()) * a.transpose() + inv * self.noise.pixel_sigma.powi(2);
                let p_ff: Matrix3<f64> = p_ff.fixed_view::<3, 3>(0, 0).into_owned();
                (m.position + Vector3::new(dp[0], dp[1], dp[2]), p_ff, cross)
            }
            None => (m.position, m.covariance, DMatrix::zeros(POINT_DIM, n)),
        };
        apply_floor(&mut p_ff);
        self.append_point(m.feature_id, p, &p_ff, &cross)?;
        Ok(p)
    }

    /// Map update with the current frame's observations of the selected points.
    /// Points not yet in the state are initialised first; points failing the
    /// gate are dropped again if they were only just added.
    pub fn update_with_map(&mut self, points: &[MapPointMeasurement]) -> Result<UpdateReport> {
        let mut report = UpdateReport::default();
        let mut fresh = Vec::new();
        for m in points {
            if self.in_window(&m.current).is_empty() {
                report
                    .features
                    .push(FeatureOutcome::new(m.feature_id, FeatureStatus::TooFewObservations));
                continue;
            }
            if self.state.point_index(m.feature_id).is_none() {
                self.initialize_point(m)?;
                fresh.push(m.feature_id);
            }
        }

        let n = self.dim();
        let mut active: Vec<&MapPointMeasurement> = Vec::new();
        let mut blocks: Vec<(usize, usize)> = Vec::new();
        for m in points {
            if let Some(j) = self.state.point_index(m.feature_id) {
                if report.features.iter().any(|f| f.feature_id == m.feature_id) {
                    continue;
                }
                for (ci, _) in self.in_window(&m.current) {
                    blocks.push((self.state.clone_offset(ci), CLONE_DIM));
                }
                blocks.push((self.state.point_offset(j), POINT_DIM));
                active.push(m);
            }
        }
        blocks.extend(self.calibration_blocks());
        let cols = Columns::new(n, blocks);

        let mut stacked_h: Vec<DMatrix<f64>> = Vec::new();
        let mut stacked_r: Vec<DVector<f64>> = Vec::new();
        let mut rejected = Vec::new();
        for m in active {
            let j = self.state.point_index(m.feature_id).expect("point present");
            let obs = self.in_window(&m.current);
            let p = self.state.points[j].p;
            let mut outcome = FeatureOutcome::new(m.feature_id, FeatureStatus::Used);
            match self.linearize(&obs, &p, &cols, Some(self.state.point_offset(j))) {
                Err(Rejection::Depth) => outcome.status = FeatureStatus::BehindCamera,
                Ok(lin) => {
                    let threshold = self.chi2_threshold(lin.r.len());
                    let chi2 = self.mahalanobis(&cols, &lin.hx, &lin.r).unwrap_or(f64::INFINITY);
                    if chi2 > threshold {
                        outcome.status = FeatureStatus::Gated { chi2, threshold };
                    } else {
                        stacked_h.push(lin.hx);
                        stacked_r.push(lin.r);
                    }
                }
            }
            if outcome.status != FeatureStatus::Used {
                rejected.push(m.feature_id);
            }
            report.features.push(outcome);
        }

        let rows: usize = stacked_r.iter().map(|r| r.len()).sum();
        if rows > 0 {
            let mut h = DMatrix::zeros(rows, cols.len());
            let mut r = DVector::zeros(rows);
            let mut row = 0;
            for (hi, ri) in stacked_h.iter().zip(&stacked_r) {
                h.rows_mut(row, hi.nrows()).copy_from(hi);
                r.rows_mut(row, ri.len()).copy_from(ri);
                row += hi.nrows();
            }
            report.rows = rows.min(cols.len());
            self.ekf_step(&cols, &h, &r)?;
        }
        for id in rejected.into_iter().filter(|id| fresh.contains(id)) {
            self.remove_point(id)?;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msckf::state::{FullState, InertialState};
    use crate::msckf::{CameraParams, FilterSettings, InitialUncertainty, NoiseParams};
    use nalgebra::{UnitQuaternion, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stereo_filter() -> Filter {
        let mut left = CameraParams::pinhole(320.0, 640, 480);
        // IMU x forward maps to camera z.
        left.rot_ci = UnitQuaternion::from_matrix(&nalgebra::Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0));
        let mut right = left.clone();
        left.p_ci = Vector3::new(0.05, 0.0, 0.0);
        right.p_ci = Vector3::new(-0.05, 0.0, 0.0);
        let state = FullState::new(
            0.0,
            InertialState::at_rest(UnitQuaternion::identity(), Vector3::zeros()),
            [left, right],
        );
        Filter::new(
            state,
            NoiseParams::default(),
            FilterSettings::default(),
            &InitialUncertainty::default(),
        )
    }

    fn observe(f: &Filter, ci: usize, p: &Vector3<f64>) -> Vec<PixelObservation> {
        (0..2)
            .filter_map(|cam| {
                let z = crate::msckf::measurement::predict(&f.state, ci, cam, p, 0.1).ok()?;
                Some(PixelObservation {
                    frame_id: f.state.clones[ci].frame_id,
                    cam,
                    pixel: z,
                })
            })
            .collect()
    }

    fn with_clones(n: usize) -> Filter {
        let mut f = stereo_filter();
        for i in 0..n {
            f.state.imu.p = Vector3::new(0.0, 0.3 * i as f64, 0.05 * i as f64);
            f.augment_clone(i as u64);
        }
        f
    }

    #[test]
    fn nullspace_rows_are_orthogonal_to_feature_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hf = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
        let hx = DMatrix::identity(8, 8);
        let (q2t, r) = nullspace_project(Linearized {
            hx,
            hf: hf.clone(),
            r: DVector::zeros(8),
        });
        assert_eq!(q2t.nrows(), 5);
        assert!((&q2t * &hf).amax() < 1e-12);
        assert!((&q2t * q2t.transpose() - DMatrix::identity(5, 5)).amax() < 1e-12);
        assert_eq!(r.len(), 5);
    }

    #[test]
    fn zero_residual_keeps_mean_and_shrinks_covariance() {
        let mut f = with_clones(3);
        let p = Vector3::new(3.0, 0.4, 0.2);
        let obs: Vec<_> = (0..3).flat_map(|i| observe(&f, i, &p)).collect();
        let before = f.state.clone();
        let trace = f.cov.trace();
        let report = f
            .update_without_map(&[FeatureObservations {
                feature_id: 1,
                observations: obs,
            }])
            .unwrap();
        assert_eq!(report.used().count(), 1);
        assert!(f.state.boxminus(&before).amax() < 1e-9);
        assert!(f.cov.trace() < trace);
        assert_eq!(f.dim(), before.dim());
    }

    #[test]
    fn large_residual_is_gated() {
        let mut f = with_clones(3);
        let p = Vector3::new(3.0, 0.4, 0.2);
        let mut obs: Vec<_> = (0..3).flat_map(|i| observe(&f, i, &p)).collect();
        obs[2].pixel.x += 50.0;
        let before = f.cov.clone();
        let report = f
            .update_without_map(&[FeatureObservations {
                feature_id: 1,
                observations: obs,
            }])
            .unwrap();
        assert!(matches!(
            report.features[0].status,
            FeatureStatus::Gated { .. } | FeatureStatus::Triangulation(_)
        ));
        assert_eq!(f.cov, before);
    }

    #[test]
    fn top_n_prefers_covisible_tracks() {
        let mut f = with_clones(3);
        f.settings.top_n = 1;
        let p = Vector3::new(3.0, 0.4, 0.2);
        let long: Vec<_> = (0..3).flat_map(|i| observe(&f, i, &p)).collect();
        let short: Vec<_> = (1..3).flat_map(|i| observe(&f, i, &p)).collect();
        let report = f
            .update_without_map(&[
                FeatureObservations {
                    feature_id: 1,
                    observations: short,
                },
                FeatureObservations {
                    feature_id: 2,
                    observations: long,
                },
            ])
            .unwrap();
        let status = |id| report.features.iter().find(|o| o.feature_id == id).unwrap().status.clone();
        assert_eq!(status(2), FeatureStatus::Used);
        assert_eq!(status(1), FeatureStatus::NotSelected);
    }

    #[test]
    fn map_update_on_axis_point_matches_scalar_kalman() {
        let mut f = with_clones(1);
        f.settings.estimate_calibration = false;
        // Camera centre of the left camera for clone 0 sits at (0, 0.05·…); put the
        // point on its optical axis.
        let (r_wc, c) = f.state.cams[0].pose_in(&nalgebra::Matrix3::identity(), &f.state.clones[0].p);
        let depth = 4.0;
        let p = c + r_wc * Vector3::new(0.0, 0.0, depth);
        let n = f.dim();
        f.cov = DMatrix::zeros(n, n);
        let s2 = 0.09;
        f.append_point(5, p, &(Matrix3::identity() * s2), &DMatrix::zeros(3, n)).unwrap();
        let dz = Vector2::new(1.0, -2.0);
        let z = crate::msckf::measurement::predict(&f.state, 0, 0, &p, 0.1).unwrap() + dz;
        let m = MapPointMeasurement {
            feature_id: 5,
            position: p,
            covariance: Matrix3::identity(),
            history: vec![],
            current: vec![PixelObservation {
                frame_id: 0,
                cam: 0,
                pixel: z,
            }],
        };
        f.update_with_map(&[m]).unwrap();
        // Camera axes are (−y, −z, x) in the global frame: a pixel offset along u is
        // a displacement along −y, along v a displacement along −z.
        let g = 320.0 / depth;
        let sigma2 = f.noise.pixel_sigma.powi(2);
        let k = s2 * g / (g * g * s2 + sigma2);
        let post = s2 - k * g * s2;
        let q = f.state.points[0].p;
        assert!((q.y - (p.y - k * dz.x)).abs() < 1e-12);
        assert!((q.z - (p.z - k * dz.y)).abs() < 1e-12);
        assert!((q.x - p.x).abs() < 1e-12);
        let o = f.state.point_offset(0);
        assert!((f.cov[(o + 1, o + 1)] - post).abs() < 1e-12);
        assert!((f.cov[(o + 2, o + 2)] - post).abs() < 1e-12);
        assert!((f.cov[(o, o)] - s2).abs() < 1e-12);
    }

    #[test]
    fn map_update_with_zero_innovation_keeps_mean() {
        let mut f = with_clones(2);
        let p = Vector3::new(3.0, -0.3, 0.1);
        let obs = observe(&f, 1, &p);
        let n = f.dim();
        f.append_point(3, p, &(Matrix3::identity() * 0.01), &DMatrix::zeros(3, n)).unwrap();
        let before = f.state.clone();
        let m = MapPointMeasurement {
            feature_id: 3,
            position: p,
            covariance: Matrix3::identity(),
            history: vec![],
            current: obs,
        };
        let report = f.update_with_map(&[m]).unwrap();
        assert_eq!(report.used().count(), 1);
        assert_eq!(f.state, before);
    }

    #[test]
    fn initialization_matches_first_order_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut f = with_clones(3);
        let n = f.dim();
        f.cov = crate::msckf::tests::random_psd(&mut rng, n) * 1e-2;
        let p = Vector3::new(3.0, 0.2, -0.1);
        let history: Vec<_> = (0..2).flat_map(|i| observe(&f, i, &p)).collect();
        let m = MapPointMeasurement {
            feature_id: 4,
            position: p,
            covariance: Matrix3::identity(),
            history: history.clone(),
            current: observe(&f, 2, &p),
        };
        let p0 = f.cov.clone();
        f.initialize_point(&m).unwrap();

        // Reference with dense full-width Jacobians.
        let mut hx = DMatrix::zeros(2 * history.len(), n);
        let mut hf = DMatrix::zeros(2 * history.len(), 3);
        for (k, o) in history.iter().enumerate() {
            let ci = f.state.clone_index(o.frame_id).unwrap();
            let j = measurement_jacobian(&f.state, ci, o.cam, &p, 0.1).unwrap();
            hx.view_mut((2 * k, f.state.clone_offset(ci)), (2, 6)).copy_from(&j.d_clone);
            // The point now sits before the camera blocks; use pre-insertion offsets.
            let cam_o = f.state.cam_offset(o.cam) - 3;
            hx.view_mut((2 * k, cam_o), (2, 12)).copy_from(&j.d_camera);
            hx.view_mut((2 * k, n - 1), (2, 1)).copy_from(&j.d_time_shift);
            hf.view_mut((2 * k, 0), (2, 3)).copy_from(&j.d_point);
        }
        let inv = (hf.transpose() * &hf).try_inverse().unwrap();
        let a = -&inv * hf.transpose() * &hx;
        let mut p_ff = &a * &p0 * a.transpose() + &inv * f.noise.pixel_sigma.powi(2);
        for k in 0..3 {
            p_ff[(k, k)] = p_ff[(k, k)].max(f.settings.point_variance_floor);
        }
        let cross = &a * &p0;
        let o = f.state.point_offset(0);
        assert!((f.cov.view((o, o), (3, 3)) - &p_ff).amax() < 1e-12);
        assert!((f.cov.view((o, 0), (3, o)) - cross.columns(0, o)).amax() < 1e-12);
        assert!((f.cov.view((o, o + 3), (3, n - o)) - cross.columns(o, n - o)).amax() < 1e-12);
        assert!((f.state.points[0].p - p).norm() < 1e-9);
        assert!(f.cov.clone().symmetric_eigen().eigenvalues.min() > -1e-9);
    }
}
