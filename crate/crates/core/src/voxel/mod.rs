//! Spatially hashed map of 3D points with capacity-limited voxels.
//!
//! Points enter through a cascade of three filters (track length, distance to
//! points already in the voxel, voxel capacity). Selection for the filter update
//! starts at the voxels hit by fresh triangulations, grows to their neighbours
//! and keeps only voxels that intersect a camera frustum.

pub mod frustum;

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::hash::BuildHasherDefault;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use frustum::CameraFrustum;

use crate::error::{Error, Result};
use crate::{FeatureId, FrameId};

type Deterministic = BuildHasherDefault<DefaultHasher>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelKey {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl VoxelKey {
    pub const fn new(ix: i64, iy: i64, iz: i64) -> Self {
        Self { ix, iy, iz }
    }

    pub fn chebyshev(&self, other: &Self) -> i64 {
        (self.ix - other.ix)
            .abs()
            .max((self.iy - other.iy).abs())
            .max((self.iz - other.iz).abs())
    }

    /// Axis-aligned bounds of the voxel.
    pub fn bounds(&self, voxel_size: f64) -> (Vector3<f64>, Vector3<f64>) {
        let min = Vector3::new(self.ix as f64, self.iy as f64, self.iz as f64) * voxel_size;
        (min, min + Vector3::repeat(voxel_size))
    }
}

pub fn voxel_index(p: &Vector3<f64>, voxel_size: f64) -> Result<VoxelKey> {
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let q = |v: f64| (v / voxel_size).floor() as i64;
    Ok(VoxelKey::new(q(p.x), q(p.y), q(p.z)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub feature_id: FeatureId,
    pub global_value: Vector3<f64>,
    /// Position uncertainty at registration, refreshed while the point is in the filter.
    pub covariance: Matrix3<f64>,
    pub host_frame: FrameId,
    pub host_voxel: VoxelKey,
    /// Frames in which the feature has been observed.
    pub track_length: u32,
    pub in_state: bool,
    /// Registration order, assigned by the map.
    pub seq: u64,
}

impl MapPoint {
    pub fn new(feature_id: FeatureId, global_value: Vector3<f64>, host_frame: FrameId, track_length: u32, voxel_size: f64) -> Result<Self> {
        Ok(Self {
            feature_id,
            global_value,
            covariance: Matrix3::identity() * 0.01,
            host_frame,
            host_voxel: voxel_index(&global_value, voxel_size)?,
            track_length,
            in_state: false,
            seq: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    /// Reject candidates tracked for fewer than `min_track_length` frames.
    Threshold,
    /// A full voxel admits a candidate only if it was tracked longer than the
    /// weakest evictable resident, which it then replaces.
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Accepted,
    /// Accepted in rank mode by evicting a weaker point.
    Replaced {
        evicted: FeatureId,
    },
    RejectedTemporal,
    RejectedProximity,
    RejectedCapacity,
}

impl InsertOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Self::Accepted | Self::Replaced { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoxelConfig {
    pub voxel_size: f64,
    pub capacity_per_voxel: usize,
    /// Defaults to `0.2 · voxel_size` when absent.
    pub min_point_separation: Option<f64>,
    pub min_track_length: u32,
    /// Chebyshev radius of the neighbourhood around seed voxels.
    pub neighbor_order: i64,
    pub temporal_mode: TemporalMode,
}

impl Default for VoxelConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.5,
            capacity_per_voxel: 5,
            min_point_separation: None,
            min_track_length: 4,
            neighbor_order: 2,
            temporal_mode: TemporalMode::Threshold,
        }
    }
}

impl VoxelConfig {
    pub fn separation(&self) -> f64 {
        self.min_point_separation.unwrap_or(0.2 * self.voxel_size)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::Config(format!("voxel_size must be positive, got {}", self.voxel_size)));
        }
        if self.capacity_per_voxel == 0 {
            return Err(Error::Config("capacity_per_voxel must be at least 1".into()));
        }
        if self.separation() < 0.0 || self.neighbor_order < 0 {
            return Err(Error::Config("separation and neighbor_order must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    config: VoxelConfig,
    cells: HashMap<VoxelKey, Vec<MapPoint>, Deterministic>,
    index: HashMap<FeatureId, VoxelKey, Deterministic>,
    next_seq: u64,
}

impl VoxelMap {
    pub fn new(config: VoxelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            cells: HashMap::default(),
            index: HashMap::default(),
            next_seq: 0,
        })
    }

    pub fn config(&self) -> &VoxelConfig {
        &self.config
    }

    pub fn voxel_size(&self) -> f64 {
        self.config.voxel_size
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, key: &VoxelKey) -> &[MapPoint] {
        self.cells.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn cells(&self) -> impl Iterator<Item = (&VoxelKey, &[MapPoint])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn contains(&self, id: FeatureId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn get(&self, id: FeatureId) -> Option<&MapPoint> {
        let key = self.index.get(&id)?;
        self.cells[key].iter().find(|p| p.feature_id == id)
    }

    pub fn get_mut(&mut self, id: FeatureId) -> Option<&mut MapPoint> {
        let key = self.index.get(&id)?;
        self.cells.get_mut(key)?.iter_mut().find(|p| p.feature_id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MapPoint> {
        self.cells.values().flatten()
    }

    /// Runs the three insertion filters and stores the candidate if it passes.
    pub fn insert_point(&mut self, mut candidate: MapPoint) -> Result<InsertOutcome> {
        if self.contains(candidate.feature_id) {
            return Err(Error::DuplicateFeature(candidate.feature_id));
        }
        let key = voxel_index(&candidate.global_value, self.config.voxel_size)?;
        candidate.host_voxel = key;
        let cell = self.cell(&key);

        // Weakest resident that may be replaced in rank mode.
        let evictable = cell
            .iter()
            .filter(|p| !p.in_state)
            .min_by(|a, b| a.track_length.cmp(&b.track_length).then(b.feature_id.cmp(&a.feature_id)));
        let full = cell.len() >= self.config.capacity_per_voxel;
        match self.config.temporal_mode {
            TemporalMode::Threshold => {
                if candidate.track_length < self.config.min_track_length {
                    return Ok(InsertOutcome::RejectedTemporal);
                }
            }
            TemporalMode::Rank => {
                let weaker = evictable.is_some_and(|e| e.track_length < candidate.track_length);
                if candidate.track_length < 2 || (full && evictable.is_some() && !weaker) {
                    return Ok(InsertOutcome::RejectedTemporal);
                }
            }
        }
        let sep2 = self.config.separation().powi(2);
        if cell.iter().any(|p| (p.global_value - candidate.global_value).norm_squared() < sep2) {
            return Ok(InsertOutcome::RejectedProximity);
        }
        let mut outcome = InsertOutcome::Accepted;
        if full {
            match (self.config.temporal_mode, evictable) {
                (TemporalMode::Rank, Some(e)) => {
                    let evicted = e.feature_id;
                    self.remove_one(evicted);
                    outcome = InsertOutcome::Replaced { evicted };
                }
                _ => return Ok(InsertOutcome::RejectedCapacity),
            }
        }
        self.store(candidate);
        Ok(outcome)
    }

    /// Stores a point without any filtering.
    pub fn insert_unfiltered(&mut self, mut candidate: MapPoint) -> Result<()> {
        if self.contains(candidate.feature_id) {
            return Err(Error::DuplicateFeature(candidate.feature_id));
        }
        candidate.host_voxel = voxel_index(&candidate.global_value, self.config.voxel_size)?;
        self.store(candidate);
        Ok(())
    }

    fn store(&mut self, mut p: MapPoint) {
        p.seq = self.next_seq;
        self.next_seq += 1;
        self.index.insert(p.feature_id, p.host_voxel);
        self.cells.entry(p.host_voxel).or_default().push(p);
    }

    fn remove_one(&mut self, id: FeatureId) -> Option<MapPoint> {
        let key = self.index.remove(&id)?;
        let cell = self.cells.get_mut(&key)?;
        let pos = cell.iter().position(|p| p.feature_id == id)?;
        let p = cell.remove(pos);
        if cell.is_empty() {
            self.cells.remove(&key);
        }
        Some(p)
    }

    /// Removes all given points; fails without changes if any is unknown.
    pub fn remove_points(&mut self, ids: &[FeatureId]) -> Result<Vec<MapPoint>> {
        if let Some(&bad) = ids.iter().find(|id| !self.contains(**id)) {
            return Err(Error::UnknownFeature(bad));
        }
        Ok(ids.iter().filter_map(|&id| self.remove_one(id)).collect())
    }

    /// Moves points to corrected positions, re-homing them when they cross a
    /// voxel boundary. Capacity and separation are not enforced here.
    pub fn update_global_values(&mut self, updates: &[(FeatureId, Vector3<f64>)]) -> Result<()> {
        for (id, p) in updates {
            if !self.contains(*id) {
                return Err(Error::UnknownFeature(*id));
            }
            voxel_index(p, self.config.voxel_size)?;
        }
        for &(id, p) in updates {
            let key = voxel_index(&p, self.config.voxel_size)?;
            if self.index[&id] == key {
                self.get_mut(id).expect("indexed").global_value = p;
            } else {
                let mut point = self.remove_one(id).expect("indexed");
                point.global_value = p;
                point.host_voxel = key;
                self.index.insert(id, key);
                self.cells.entry(key).or_default().push(point);
            }
        }
        Ok(())
    }

    fn visible(&self, key: &VoxelKey, frusta: &[CameraFrustum]) -> bool {
        let (min, max) = key.bounds(self.config.voxel_size);
        frusta.iter().any(|f| f.intersects_aabb(&min, &max))
    }

    /// Points from voxels within `neighbor_order` of a seed voxel that intersect
    /// a frustum, nearest tier first, then longest-tracked, then lowest id.
    pub fn select_points(&self, seeds: &[Vector3<f64>], frusta: &[CameraFrustum], budget: usize) -> Vec<FeatureId> {
        let seed_keys: HashSet<VoxelKey, Deterministic> =
            seeds.iter().filter_map(|s| voxel_index(s, self.config.voxel_size).ok()).collect();
        if seed_keys.is_empty() || self.cells.is_empty() || budget == 0 {
            return Vec::new();
        }
        let r = self.config.neighbor_order;
        let tier = |k: &VoxelKey| seed_keys.iter().map(|s| s.chebyshev(k)).min().unwrap_or(i64::MAX);

        let neighbourhood = (2 * r + 1).pow(3) as usize * seed_keys.len();
        let mut candidates: Vec<(i64, &VoxelKey)> = if neighbourhood < self.cells.len() {
            let mut seen = HashSet::<VoxelKey, Deterministic>::default();
            for s in &seed_keys {
                for dx in -r..=r {
                    for dy in -r..=r {
                        for dz in -r..=r {
                            seen.insert(VoxelKey::new(s.ix + dx, s.iy + dy, s.iz + dz));
                        }
                    }
                }
            }
            self.cells.keys().filter(|k| seen.contains(k)).map(|k| (tier(k), k)).collect()
        } else {
            self.cells.keys().map(|k| (tier(k), k)).filter(|(t, _)| *t <= r).collect()
        };
        candidates.retain(|(_, k)| self.visible(k, frusta));

        let mut points: Vec<(i64, &MapPoint)> = candidates
            .iter()
            .flat_map(|(t, k)| self.cells[*k].iter().map(move |p| (*t, p)))
            .collect();
        points.sort_by(|(ta, a), (tb, b)| {
            ta.cmp(tb)
                .then(b.track_length.cmp(&a.track_length))
                .then(a.feature_id.cmp(&b.feature_id))
        });
        points.into_iter().take(budget).map(|(_, p)| p.feature_id).collect()
    }

    /// The `budget` earliest registered points, regardless of location.
    pub fn select_sequential(&self, budget: usize) -> Vec<FeatureId> {
        let mut all: Vec<&MapPoint> = self.iter().collect();
        all.sort_by_key(|p| p.seq);
        all.into_iter().take(budget).map(|p| p.feature_id).collect()
    }

    /// Plain-text listing, one point per line:
    /// `feature_id ix iy iz x y z track_length host_frame`, ordered by id.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut all: Vec<&MapPoint> = self.iter().collect();
        all.sort_by_key(|p| p.feature_id);
        for p in all {
            let k = p.host_voxel;
            let g = p.global_value;
            writeln!(
                out,
                "{} {} {} {} {} {} {} {} {}",
                p.feature_id, k.ix, k.iy, k.iz, g.x, g.y, g.z, p.track_length, p.host_frame
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point(id: FeatureId, p: Vector3<f64>, track: u32) -> MapPoint {
        MapPoint::new(id, p, 0, track, 0.5).unwrap()
    }

    #[test]
    fn floor_convention() {
        assert_eq!(voxel_index(&Vector3::new(0.05, 0.05, 0.05), 0.1).unwrap(), VoxelKey::new(0, 0, 0));
        assert_eq!(voxel_index(&Vector3::new(-0.05, 0.15, 0.0), 0.1).unwrap(), VoxelKey::new(-1, 1, 0));
        assert!(voxel_index(&Vector3::new(f64::NAN, 0.0, 0.0), 0.1).is_err());
    }

    proptest! {
        #[test]
        fn index_matches_scalar_floor(x in -100.0..100.0f64, y in -100.0..100.0f64, z in -100.0..100.0f64, s in 0.01..5.0f64) {
            let k = voxel_index(&Vector3::new(x, y, z), s).unwrap();
            for (v, i) in [(x, k.ix), (y, k.iy), (z, k.iz)] {
                prop_assert!(i as f64 * s <= v + 1e-9 * s && v < (i + 1) as f64 * s + 1e-9 * s);
            }
        }
    }

    #[test]
    fn filters_apply_in_order() {
        let mut m = VoxelMap::new(VoxelConfig::default()).unwrap();
        assert_eq!(
            m.insert_point(point(1, Vector3::new(0.1, 0.1, 0.1), 2)).unwrap(),
            InsertOutcome::RejectedTemporal
        );
        assert_eq!(
            m.insert_point(point(1, Vector3::new(0.1, 0.1, 0.1), 5)).unwrap(),
            InsertOutcome::Accepted
        );
        // Separation is 0.1 m; 0.05 m away is too close.
        assert_eq!(
            m.insert_point(point(2, Vector3::new(0.15, 0.1, 0.1), 5)).unwrap(),
            InsertOutcome::RejectedProximity
        );
        assert!(m.insert_point(point(1, Vector3::new(0.4, 0.4, 0.4), 5)).is_err());
    }

    #[test]
    fn fifth_point_fills_voxel() {
        let mut m = VoxelMap::new(VoxelConfig::default()).unwrap();
        let spots = [(0.05, 0.05), (0.25, 0.05), (0.45, 0.05), (0.05, 0.25), (0.25, 0.25)];
        for (i, (x, y)) in spots.iter().enumerate() {
            assert_eq!(
                m.insert_point(point(i as u64, Vector3::new(*x, *y, 0.1), 4)).unwrap(),
                InsertOutcome::Accepted
            );
        }
        assert_eq!(m.cell(&VoxelKey::new(0, 0, 0)).len(), 5);
        assert_eq!(
            m.insert_point(point(9, Vector3::new(0.45, 0.45, 0.45), 4)).unwrap(),
            InsertOutcome::RejectedCapacity
        );
    }

    #[test]
    fn rank_mode_replaces_weakest() {
        let config = VoxelConfig {
            temporal_mode: TemporalMode::Rank,
            capacity_per_voxel: 2,
            ..Default::default()
        };
        let mut m = VoxelMap::new(config).unwrap();
        m.insert_point(point(1, Vector3::new(0.05, 0.05, 0.05), 3)).unwrap();
        m.insert_point(point(2, Vector3::new(0.45, 0.05, 0.05), 6)).unwrap();
        assert_eq!(
            m.insert_point(point(3, Vector3::new(0.05, 0.45, 0.05), 3)).unwrap(),
            InsertOutcome::RejectedTemporal
        );
        assert_eq!(
            m.insert_point(point(4, Vector3::new(0.05, 0.45, 0.05), 4)).unwrap(),
            InsertOutcome::Replaced { evicted: 1 }
        );
        assert!(!m.contains(1));
        m.get_mut(4).unwrap().in_state = true;
        m.get_mut(2).unwrap().in_state = true;
        assert_eq!(
            m.insert_point(point(5, Vector3::new(0.45, 0.45, 0.45), 9)).unwrap(),
            InsertOutcome::RejectedCapacity
        );
    }

    #[test]
    fn update_rehomes_across_faces() {
        let mut m = VoxelMap::new(VoxelConfig::default()).unwrap();
        m.insert_point(point(1, Vector3::new(0.1, 0.1, 0.1), 4)).unwrap();
        m.update_global_values(&[(1, Vector3::new(0.2, 0.1, 0.1))]).unwrap();
        assert_eq!(m.get(1).unwrap().host_voxel, VoxelKey::new(0, 0, 0));
        m.update_global_values(&[(1, Vector3::new(0.6, 0.1, 0.1))]).unwrap();
        assert_eq!(m.cell(&VoxelKey::new(0, 0, 0)).len(), 0);
        assert_eq!(m.cell(&VoxelKey::new(1, 0, 0)).len(), 1);
        assert_eq!(m.cell_count(), 1);
        assert!(m.update_global_values(&[(7, Vector3::zeros())]).is_err());
    }

    #[test]
    fn random_updates_match_rebuild() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = VoxelMap::new(VoxelConfig::default()).unwrap();
        for id in 0..200 {
            let p = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            m.insert_unfiltered(point(id, p, 4)).unwrap();
        }
        for _ in 0..500 {
            let id = rng.random_range(0..200);
            let p = m.get(id).unwrap().global_value + Vector3::from_fn(|_, _| rng.random_range(-0.4..0.4));
            m.update_global_values(&[(id, p)]).unwrap();
        }
        for (key, cell) in m.cells() {
            for p in cell {
                assert_eq!(voxel_index(&p.global_value, 0.5).unwrap(), *key);
                assert_eq!(p.host_voxel, *key);
            }
        }
        assert_eq!(m.len(), 200);
    }

    #[test]
    fn remove_erases_empty_cells() {
        let mut m = VoxelMap::new(VoxelConfig::default()).unwrap();
        m.insert_point(point(1, Vector3::new(0.1, 0.1, 0.1), 4)).unwrap();
        m.remove_points(&[1]).unwrap();
        assert_eq!(m.cell_count(), 0);
        assert!(m.remove_points(&[1]).is_err());
        assert_eq!(
            m.insert_point(point(1, Vector3::new(0.1, 0.1, 0.1), 4)).unwrap(),
            InsertOutcome::Accepted
        );
    }

    fn forward_frustum() -> CameraFrustum {
        let cam = crate::msckf::CameraParams::pinhole(320.0, 640, 480);
        CameraFrustum::new(&cam, Matrix3::identity(), Vector3::zeros(), 0.1, 10.0).unwrap()
    }

    #[test]
    fn selection_tiers_and_culling() {
        let mut m = VoxelMap::new(VoxelConfig::default()).unwrap();
        assert!(m.select_points(&[Vector3::new(0.1, 0.1, 3.1)], &[forward_frustum()], 10).is_empty());
        // Seed voxel (0,0,6); points in it, at distance 2 and 3 along z, and one behind the camera.
        m.insert_unfiltered(point(1, Vector3::new(0.1, 0.1, 3.1), 4)).unwrap();
        m.insert_unfiltered(point(2, Vector3::new(0.2, 0.2, 3.2), 9)).unwrap();
        m.insert_unfiltered(point(3, Vector3::new(0.1, 0.1, 4.1), 9)).unwrap();
        m.insert_unfiltered(point(4, Vector3::new(0.1, 0.1, 4.6), 9)).unwrap();
        let sel = m.select_points(&[Vector3::new(0.1, 0.1, 3.1)], &[forward_frustum()], 10);
        assert_eq!(sel, vec![2, 1, 3]);
        assert_eq!(m.select_points(&[Vector3::new(0.1, 0.1, 3.1)], &[forward_frustum()], 1), vec![2]);

        let mut behind = VoxelMap::new(VoxelConfig::default()).unwrap();
        behind.insert_unfiltered(point(5, Vector3::new(0.1, 0.1, -0.7), 9)).unwrap();
        assert!(behind
            .select_points(&[Vector3::new(0.1, 0.1, 0.1)], &[forward_frustum()], 10)
            .is_empty());
    }

    #[test]
    fn sequential_take_follows_registration_order() {
        let mut m = VoxelMap::new(VoxelConfig::default()).unwrap();
        for id in [5, 3, 9] {
            m.insert_unfiltered(point(id, Vector3::new(id as f64, 0.0, 0.0), 4)).unwrap();
        }
        assert_eq!(m.select_sequential(2), vec![5, 3]);
    }

    #[test]
    fn snapshot_lists_points() {
        let mut m = VoxelMap::new(VoxelConfig::default()).unwrap();
        m.insert_unfiltered(point(2, Vector3::new(0.75, -0.25, 1.0), 4)).unwrap();
        let mut buf = Vec::new();
        m.write_snapshot(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "2 1 -1 2 0.75 -0.25 1 4 0\n");
    }
}
