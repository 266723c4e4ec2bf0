//! Per-frame filtering and map maintenance on tracked features.
//!
//! Every pixel observation feeds at most one update. Tracks that end, or that
//! were seen in the clone about to leave the window, go to the map-free update
//! and their window observations are then discarded. Points held in the state
//! are only observed through the map update, which uses the current frame.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use nalgebra::{Vector2, Vector3};

use crate::error::Result;
use crate::msckf::keyframe::{decide, mean_parallax, KeyframeDecision};
use crate::msckf::{FeatureObservations, Filter, ImuSample, MapPointMeasurement, PixelObservation};
use crate::voxel::{CameraFrustum, MapPoint, VoxelMap};
use crate::{FeatureId, FrameId};

/// Which voxel-map features are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Map points are taken in registration order instead of by voxel.
    NoSelection,
    /// Candidates enter the map without the insertion filters.
    NoManagement,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSelection => "no_selection",
            Variant::NoManagement => "no_management",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Variant::Full),
            "no_selection" => Ok(Variant::NoSelection),
            "no_management" => Ok(Variant::NoManagement),
            _ => Err(format!("unknown variant `{s}` (expected full, no_selection or no_management)")),
        }
    }
}

/// A feature tracked into the current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedFeature {
    pub feature_id: FeatureId,
    pub left: Vector2<f64>,
    pub right: Option<Vector2<f64>>,
    /// Frames the feature has been tracked for, this one included.
    pub track_length: usize,
}

/// Tracking output of one stereo frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservations {
    pub frame_id: FrameId,
    pub t: f64,
    pub features: Vec<TrackedFeature>,
    /// Tracks that ended before this frame.
    pub lost: Vec<FeatureId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    pub budget: usize,
    /// Points outside the state are not initialised once this many are held.
    pub max_state_points: usize,
    pub parallax_threshold_px: f64,
    pub frustum_far: f64,
    pub variant: Variant,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameReport {
    pub keyframe: bool,
    pub map_free_used: usize,
    pub map_used: usize,
    pub inserted: usize,
    pub state_points: usize,
    /// Time spent on filtering (ms).
    pub odometry_ms: f64,
    /// Time spent on map selection, insertion and upkeep (ms).
    pub voxel_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct RunStats {
    pub frames: usize,
    pub keyframes: usize,
    pub map_free_features: usize,
    pub map_point_updates: usize,
    pub inserted: usize,
    pub max_state_points: usize,
}

impl RunStats {
    fn add(&mut self, r: &FrameReport) {
        self.frames += 1;
        self.keyframes += r.keyframe as usize;
        self.map_free_features += r.map_free_used;
        self.map_point_updates += r.map_used;
        self.inserted += r.inserted;
        self.max_state_points = self.max_state_points.max(r.state_points);
    }
}

pub struct Estimator {
    pub filter: Filter,
    pub map: VoxelMap,
    pub stats: RunStats,
    settings: EstimatorSettings,
    /// Unused window observations per feature.
    book: BTreeMap<FeatureId, Vec<PixelObservation>>,
    keyframe_pixels: HashMap<FeatureId, Vector2<f64>>,
    /// Consecutive keyframes without an observation, per point in the state.
    untracked: BTreeMap<FeatureId, usize>,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl Estimator {
    pub fn new(filter: Filter, map: VoxelMap, settings: EstimatorSettings) -> Self {
        Self {
            filter,
            map,
            stats: RunStats::default(),
            settings,
            book: BTreeMap::new(),
            keyframe_pixels: HashMap::new(),
            untracked: BTreeMap::new(),
        }
    }

    pub fn settings(&self) -> &EstimatorSettings {
        &self.settings
    }

    fn in_state(&self, id: FeatureId) -> bool {
        self.filter.state.point_index(id).is_some()
    }

    /// Propagates to the frame time and runs both updates, window management
    /// and map maintenance.
    pub fn process(&mut self, frame: &FrameObservations, imu: &[ImuSample]) -> Result<FrameReport> {
        let mut report = FrameReport::default();
        let start = Instant::now();
        let fid = frame.frame_id;
        self.filter.propagate(imu, frame.t)?;
        self.filter.augment_clone(fid);
        let current: BTreeMap<FeatureId, &TrackedFeature> = frame.features.iter().map(|f| (f.feature_id, f)).collect();
        let current_obs = |f: &TrackedFeature| {
            let mut v = vec![PixelObservation {
                frame_id: fid,
                cam: 0,
                pixel: f.left,
            }];
            if let Some(r) = f.right {
                v.push(PixelObservation {
                    frame_id: fid,
                    cam: 1,
                    pixel: r,
                });
            }
            v
        };
        for f in &frame.features {
            if !self.in_state(f.feature_id) {
                self.book.entry(f.feature_id).or_default().extend(current_obs(f));
            }
        }

        let left: Vec<(FeatureId, Vector2<f64>)> = frame.features.iter().map(|f| (f.feature_id, f.left)).collect();
        let decision = decide(mean_parallax(&self.keyframe_pixels, &left), self.settings.parallax_threshold_px);
        report.keyframe = decision == KeyframeDecision::Keyframe;

        // Map-free update on ended tracks and on tracks seen in the clone that
        // is about to be marginalized.
        let leaving = (report.keyframe && self.filter.state.clones.len() > self.filter.settings.max_clones)
            .then(|| self.filter.state.clones[0].frame_id);
        let lost: BTreeSet<FeatureId> = frame.lost.iter().copied().collect();
        let candidates: Vec<FeatureObservations> = self
            .book
            .iter()
            .filter(|(id, obs)| lost.contains(id) || leaving.is_some_and(|l| obs.iter().any(|o| o.frame_id == l)))
            .map(|(&feature_id, obs)| FeatureObservations {
                feature_id,
                observations: obs.clone(),
            })
            .collect();
        let free = self.filter.update_without_map(&candidates)?;
        let mut consumed: BTreeSet<FeatureId> = BTreeSet::new();
        for f in free.used() {
            consumed.insert(f.feature_id);
            self.book.remove(&f.feature_id);
        }
        report.map_free_used = consumed.len();
        for id in &lost {
            self.book.remove(id);
        }
        // A point whose track ended can never be observed again; dropping it
        // now is exact and frees its slot.
        for id in &lost {
            if self.in_state(*id) {
                self.filter.remove_point(*id)?;
                self.untracked.remove(id);
            }
        }
        let mut odometry_ms = ms_since(start);

        // Selection around fresh stereo triangulations.
        let t_sel = Instant::now();
        let seeds: Vec<Vector3<f64>> = frame
            .features
            .iter()
            .filter(|f| f.right.is_some())
            .filter_map(|f| self.filter.triangulate_observations(&current_obs(f)).ok().map(|t| t.point))
            .collect();
        let eligible = |id: &FeatureId| current.contains_key(id) && !consumed.contains(id);
        let ranked = match self.settings.variant {
            Variant::NoSelection => self.map.select_sequential(self.settings.budget),
            _ => {
                let frusta = self.frusta()?;
                self.map.select_points(&seeds, &frusta, self.settings.budget)
            }
        };
        // Points enter the state only with enough unused history to be
        // initialised jointly with the poses that observed them.
        let mut room = self.settings.max_state_points.saturating_sub(self.filter.state.points.len());
        let mut measurements: Vec<MapPointMeasurement> = Vec::new();
        for id in ranked.into_iter().filter(eligible) {
            let history: Vec<PixelObservation> = self
                .book
                .get(&id)
                .map(|o| o.iter().filter(|o| o.frame_id != fid).copied().collect())
                .unwrap_or_default();
            if !self.in_state(id) {
                if room == 0 || history.len() < 2 {
                    continue;
                }
                room -= 1;
            }
            let p = self.map.get(id).expect("selected point is stored");
            measurements.push(MapPointMeasurement {
                feature_id: id,
                position: p.global_value,
                covariance: p.covariance,
                history,
                current: current_obs(current[&id]),
            });
        }
        let mut voxel_ms = ms_since(t_sel);

        let t_upd = Instant::now();
        let mapped = self.filter.update_with_map(&measurements)?;
        report.map_used = mapped.used().count();
        for p in &self.filter.state.points {
            self.book.remove(&p.feature_id);
            self.untracked.entry(p.feature_id).or_insert(0);
        }
        self.filter.check_health()?;
        odometry_ms += ms_since(t_upd);

        let t_map = Instant::now();
        self.sync_map()?;
        voxel_ms += ms_since(t_map);

        let t_win = Instant::now();
        if report.keyframe {
            self.keyframe_pixels = left.iter().copied().collect();
            for dropped in self.filter.enforce_window() {
                self.drop_frame(dropped);
            }
        } else {
            let last = self.filter.state.clones.len() - 1;
            self.filter.remove_clone(last);
            self.drop_frame(fid);
        }
        let mut retired = Vec::new();
        if report.keyframe {
            for (id, n) in self.untracked.iter_mut() {
                *n = if current.contains_key(id) { 0 } else { *n + 1 };
                if *n >= self.filter.settings.max_clones {
                    retired.push(*id);
                }
            }
        }
        for id in &retired {
            self.untracked.remove(id);
            self.filter.remove_point(*id)?;
        }
        odometry_ms += ms_since(t_win);

        let t_ins = Instant::now();
        if report.keyframe {
            report.inserted = self.insert_landmarks(frame)?;
        }
        // Points neither tracked nor in the state can never be observed again.
        let stale: Vec<FeatureId> = lost
            .iter()
            .chain(&retired)
            .copied()
            .filter(|id| self.map.contains(*id) && !self.in_state(*id))
            .collect();
        self.map.remove_points(&stale)?;
        voxel_ms += ms_since(t_ins);

        report.state_points = self.filter.state.points.len();
        report.odometry_ms = odometry_ms;
        report.voxel_ms = voxel_ms;
        self.stats.add(&report);
        Ok(report)
    }

    fn frusta(&self) -> Result<Vec<CameraFrustum>> {
        let imu = &self.filter.state.imu;
        let rot = imu.rot_mat();
        self.filter
            .state
            .cams
            .iter()
            .map(|cam| {
                let (rot_wc, center) = cam.pose_in(&rot, &imu.p);
                CameraFrustum::new(cam, rot_wc, center, self.filter.settings.min_depth, self.settings.frustum_far)
            })
            .collect()
    }

    fn drop_frame(&mut self, frame_id: FrameId) {
        self.book.retain(|_, obs| {
            obs.retain(|o| o.frame_id != frame_id);
            !obs.is_empty()
        });
    }

    /// Copies in-state positions and uncertainties into the map.
    fn sync_map(&mut self) -> Result<()> {
        let mut updates = Vec::new();
        for (j, p) in self.filter.state.points.iter().enumerate() {
            if self.map.contains(p.feature_id) {
                updates.push((p.feature_id, p.p));
                let o = self.filter.state.point_offset(j);
                let cov = self.filter.cov.fixed_view::<3, 3>(o, o).into_owned();
                let mp = self.map.get_mut(p.feature_id).expect("contained");
                mp.covariance = cov;
                mp.in_state = true;
            }
        }
        self.map.update_global_values(&updates)?;
        let out: Vec<FeatureId> = self
            .map
            .iter()
            .filter(|p| p.in_state && !self.in_state(p.feature_id))
            .map(|p| p.feature_id)
            .collect();
        for id in out {
            self.map.get_mut(id).expect("listed").in_state = false;
        }
        Ok(())
    }

    /// Triangulates tracked features that are not yet mapped and offers them
    /// to the map.
    fn insert_landmarks(&mut self, frame: &FrameObservations) -> Result<usize> {
        let voxel_size = self.map.voxel_size();
        let mut inserted = 0;
        for f in &frame.features {
            let id = f.feature_id;
            if self.map.contains(id) || self.in_state(id) {
                continue;
            }
            let Some(obs) = self.book.get(&id) else { continue };
            let Ok(tri) = self.filter.triangulate_observations(obs) else {
                continue;
            };
            let mut candidate = MapPoint::new(
                id,
                tri.point,
                frame.frame_id,
                f.track_length.min(u32::MAX as usize) as u32,
                voxel_size,
            )?;
            candidate.covariance = tri.covariance;
            let accepted = match self.settings.variant {
                Variant::NoManagement => {
                    self.map.insert_unfiltered(candidate)?;
                    true
                }
                _ => self.map.insert_point(candidate)?.is_accepted(),
            };
            inserted += accepted as usize;
        }
        Ok(inserted)
    }
}
