//! Corner tracking on time surfaces: temporal KLT on the left camera, stereo
//! KLT from left to right, and detection of new corners where tracks are
//! missing.

pub mod detect;
pub mod image;
pub mod klt;
pub mod ransac;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{StereoEventFrame, TimeSurface};
use crate::{FeatureId, FrameId};
use detect::DetectParams;
use image::{Image, Pyramid};
use klt::KltParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub max_features: usize,
    pub pyramid_levels: usize,
    pub patch_half_width: usize,
    pub klt_max_iters: usize,
    pub klt_eps: f64,
    /// Mean absolute surface difference above which a converged match is rejected.
    pub klt_max_residual: f64,
    pub min_corner_quality: f64,
    pub mask_radius: f64,
    pub max_stereo_vertical_disparity: f64,
    pub ransac: bool,
    pub ransac_threshold_px: f64,
    pub ransac_iterations: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            max_features: 120,
            pyramid_levels: 3,
            patch_half_width: 10,
            klt_max_iters: 30,
            klt_eps: 0.03,
            klt_max_residual: 0.25,
            min_corner_quality: 0.05,
            mask_radius: 20.0,
            max_stereo_vertical_disparity: 2.0,
            ransac: true,
            ransac_threshold_px: 1.0,
            ransac_iterations: 100,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.klt_eps,
            self.klt_max_residual,
            self.min_corner_quality,
            self.mask_radius,
            self.max_stereo_vertical_disparity,
            self.ransac_threshold_px,
        ];
        if self.max_features == 0
            || self.pyramid_levels == 0
            || self.patch_half_width == 0
            || self.klt_max_iters == 0
            || !positive.iter().all(|v| v.is_finite() && *v > 0.0)
        {
            return Err(Error::Config(format!("tracker parameters must be positive: {self:?}")));
        }
        Ok(())
    }

    fn klt(&self) -> KltParams {
        KltParams {
            half_width: self.patch_half_width,
            max_iters: self.klt_max_iters,
            eps: self.klt_eps as f32,
            max_residual: self.klt_max_residual as f32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackObservation {
    pub frame_id: FrameId,
    /// 0 = left, 1 = right.
    pub cam: usize,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub feature_id: FeatureId,
    pub observations: Vec<TrackObservation>,
    pub alive: bool,
    /// Frames with a left observation, including pruned ones.
    frames: usize,
}

impl FeatureTrack {
    pub fn new(feature_id: FeatureId, frame_id: FrameId, pixel: Vector2<f64>) -> Self {
        Self {
            feature_id,
            observations: vec![TrackObservation { frame_id, cam: 0, pixel }],
            alive: true,
            frames: 1,
        }
    }

    pub fn observation(&self, frame_id: FrameId, cam: usize) -> Option<Vector2<f64>> {
        self.observations
            .iter()
            .rev()
            .find(|o| o.frame_id == frame_id && o.cam == cam)
            .map(|o| o.pixel)
    }

    pub fn last_left(&self) -> Option<&TrackObservation> {
        self.observations.iter().rev().find(|o| o.cam == 0)
    }

    /// Number of frames with a left observation, unaffected by pruning.
    pub fn length(&self) -> usize {
        self.frames
    }

    fn push(&mut self, frame_id: FrameId, cam: usize, pixel: Vector2<f64>) {
        debug_assert!(self.observation(frame_id, cam).is_none(), "duplicate observation");
        self.observations.push(TrackObservation { frame_id, cam, pixel });
        if cam == 0 {
            self.frames += 1;
        }
    }

    /// Displacement between the two most recent left observations, if consecutive.
    fn velocity(&self) -> Vector2<f64> {
        let mut left = self.observations.iter().rev().filter(|o| o.cam == 0);
        match (left.next(), left.next()) {
            (Some(a), Some(b)) if a.frame_id == b.frame_id + 1 => a.pixel - b.pixel,
            _ => Vector2::zeros(),
        }
    }
}

fn pyramid(s: &TimeSurface, cfg: &TrackerConfig) -> Pyramid {
    Pyramid::new(Image::from_surface(s), cfg.pyramid_levels)
}

fn detect_params(cfg: &TrackerConfig, max_new: usize) -> DetectParams {
    DetectParams {
        max_new,
        min_quality: cfg.min_corner_quality as f32,
        mask_radius: cfg.mask_radius,
        border: cfg.patch_half_width + 1,
    }
}

/// Temporal KLT of every alive track's last left observation into `frame_id`;
/// tracks that fail (or are RANSAC outliers) are marked dead.
fn track_temporal_pyr(prev: &Pyramid, cur: &Pyramid, tracks: &mut [FeatureTrack], frame_id: FrameId, cfg: &TrackerConfig) {
    let params = cfg.klt();
    let mut matched: Vec<(usize, Vector2<f64>, Vector2<f64>)> = Vec::new();
    for (i, t) in tracks.iter_mut().enumerate() {
        if !t.alive {
            continue;
        }
        let Some(last) = t.last_left().copied() else {
            t.alive = false;
            continue;
        };
        if last.frame_id >= frame_id {
            continue;
        }
        match klt::track(prev, cur, last.pixel, t.velocity(), &params) {
            Some(q) => matched.push((i, last.pixel, q)),
            None => t.alive = false,
        }
    }
    let keep = if cfg.ransac {
        let a: Vec<_> = matched.iter().map(|m| m.1).collect();
        let b: Vec<_> = matched.iter().map(|m| m.2).collect();
        ransac::ransac_inliers(&a, &b, cfg.ransac_threshold_px, cfg.ransac_iterations, frame_id)
    } else {
        vec![true; matched.len()]
    };
    for ((i, _, q), ok) in matched.into_iter().zip(keep) {
        if ok {
            tracks[i].push(frame_id, 0, q);
        } else {
            tracks[i].alive = false;
        }
    }
}

/// Left→right KLT of each point, starting from the paired disparity guess.
fn match_stereo_pyr(
    left: &Pyramid,
    right: &Pyramid,
    points: &[(Vector2<f64>, Vector2<f64>)],
    cfg: &TrackerConfig,
) -> Vec<Option<Vector2<f64>>> {
    let params = cfg.klt();
    points
        .iter()
        .map(|(p, guess)| {
            let q = klt::track(left, right, *p, *guess, &params)?;
            ((q.y - p.y).abs() <= cfg.max_stereo_vertical_disparity).then_some(q)
        })
        .collect()
}

/// Tracks every alive feature from `prev_left` to `cur_left`, appending a left
/// observation for `frame_id` or marking the track dead.
pub fn track_temporal(
    prev_left: &TimeSurface,
    cur_left: &TimeSurface,
    tracks: &mut [FeatureTrack],
    frame_id: FrameId,
    cfg: &TrackerConfig,
) {
    track_temporal_pyr(&pyramid(prev_left, cfg), &pyramid(cur_left, cfg), tracks, frame_id, cfg);
}

/// New corners at least `mask_radius` from `existing`, up to the free budget.
pub fn detect_features(surface: &TimeSurface, existing: &[Vector2<f64>], cfg: &TrackerConfig) -> Vec<Vector2<f64>> {
    let free = cfg.max_features.saturating_sub(existing.len());
    detect::detect(&Image::from_surface(surface), existing, &detect_params(cfg, free))
}

/// Left→right correspondences; points that fail to converge or violate the
/// vertical-disparity check are left out.
pub fn match_stereo(
    cur_left: &TimeSurface,
    cur_right: &TimeSurface,
    left_points: &[Vector2<f64>],
    cfg: &TrackerConfig,
) -> Vec<(Vector2<f64>, Vector2<f64>)> {
    let seeds: Vec<_> = left_points.iter().map(|p| (*p, Vector2::zeros())).collect();
    let m = match_stereo_pyr(&pyramid(cur_left, cfg), &pyramid(cur_right, cfg), &seeds, cfg);
    left_points.iter().zip(m).filter_map(|(p, q)| q.map(|q| (*p, q))).collect()
}

/// Result of processing one stereo frame.
#[derive(Debug, Clone, Default)]
pub struct FrameTracks {
    pub frame_id: FrameId,
    /// Tracks that ended at this frame; their last observation is in an earlier frame.
    pub lost: Vec<FeatureTrack>,
    pub new_ids: Vec<FeatureId>,
}

/// Stateful front end owning the alive tracks.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<FeatureTrack>,
    prev_left: Option<Pyramid>,
    next_id: FeatureId,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            prev_left: None,
            next_id: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[FeatureTrack] {
        &self.tracks
    }

    pub fn track(&self, id: FeatureId) -> Option<&FeatureTrack> {
        self.tracks.iter().find(|t| t.feature_id == id)
    }

    /// Temporal tracking, replenishment and stereo matching for one frame.
    pub fn process(&mut self, frame: &StereoEventFrame) -> FrameTracks {
        let cfg = self.config;
        let left = pyramid(&frame.left, &cfg);
        let right = pyramid(&frame.right, &cfg);
        if let Some(prev) = &self.prev_left {
            track_temporal_pyr(prev, &left, &mut self.tracks, frame.frame_id, &cfg);
        } else {
            self.tracks.iter_mut().for_each(|t| t.alive = false);
        }
        let (alive, lost): (Vec<_>, Vec<_>) = std::mem::take(&mut self.tracks).into_iter().partition(|t| t.alive);
        self.tracks = alive;
        let new_ids = self.replenish_pyr(&left, &right, frame.frame_id);
        self.prev_left = Some(left);
        FrameTracks {
            frame_id: frame.frame_id,
            lost,
            new_ids,
        }
    }

    fn replenish_pyr(&mut self, left: &Pyramid, right: &Pyramid, frame_id: FrameId) -> Vec<FeatureId> {
        let cfg = self.config;
        let mut new_ids = Vec::new();
        if self.tracks.len() < cfg.max_features {
            let existing: Vec<_> = self.tracks.iter().filter_map(|t| t.observation(frame_id, 0)).collect();
            let free = cfg.max_features - self.tracks.len();
            let base = &left.levels[0];
            for p in detect::detect_with_gradients(&base.gx, &base.gy, &existing, &detect_params(&cfg, free)) {
                let id = self.next_id;
                self.next_id += 1;
                self.tracks.push(FeatureTrack::new(id, frame_id, p));
                new_ids.push(id);
            }
        }
        let points: Vec<_> = self
            .tracks
            .iter()
            .map(|t| {
                let p = t.observation(frame_id, 0).expect("left observation");
                let prev = frame_id
                    .checked_sub(1)
                    .and_then(|f| Some(t.observation(f, 1)? - t.observation(f, 0)?));
                (p, prev.unwrap_or_else(Vector2::zeros))
            })
            .collect();
        for (t, q) in self.tracks.iter_mut().zip(match_stereo_pyr(left, right, &points, &cfg)) {
            if let Some(q) = q {
                t.push(frame_id, 1, q);
            }
        }
        new_ids
    }

    /// Drops history older than `frame_id` from every alive track.
    pub fn prune_before(&mut self, frame_id: FrameId) {
        for t in &mut self.tracks {
            let keep_from = t
                .observations
                .iter()
                .position(|o| o.frame_id >= frame_id)
                .unwrap_or(t.observations.len());
            if keep_from > 0 {
                t.observations.drain(..keep_from);
            }
        }
    }
}
