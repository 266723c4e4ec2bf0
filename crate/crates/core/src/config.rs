//! Flat key/value pipeline configuration.
//!
//! Every tunable lives at the top level of a single TOML file. Keys given on
//! the command line as `key=value` override the file; dotted keys reach into
//! nested tables of other configuration types.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msckf::{FilterSettings, NoiseParams};
use crate::sim::dataset::DatasetPaths;
use crate::tracking::TrackerConfig;
use crate::voxel::{TemporalMode, VoxelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    // Event processing.
    pub frame_rate_hz: f64,
    /// Time-surface decay constant (s).
    pub eta: f64,
    /// Background-activity filter window (s); 0 disables the filter.
    pub activity_window: f64,

    // Tracking.
    pub max_features: usize,
    pub pyramid_levels: usize,
    pub patch_half_width: usize,
    pub klt_max_iters: usize,
    pub klt_eps: f64,
    pub klt_max_residual: f64,
    pub min_corner_quality: f64,
    pub mask_radius: f64,
    pub max_stereo_vertical_disparity: f64,
    pub ransac: bool,
    pub ransac_threshold_px: f64,
    pub ransac_iterations: usize,

    // Voxel map.
    pub voxel_size: f64,
    pub capacity_per_voxel: usize,
    pub min_point_separation: Option<f64>,
    pub min_track_length: u32,
    pub neighbor_order: i64,
    pub temporal_mode: TemporalMode,

    // Filter.
    pub max_clones: usize,
    pub top_n: usize,
    /// Map points used per map update.
    pub budget: usize,
    pub max_state_points: usize,
    pub parallax_threshold_px: f64,
    pub gate_probability: f64,
    pub min_baseline_deg: f64,
    pub min_depth: f64,
    pub point_variance_floor: f64,
    pub max_position_sigma: f64,
    pub estimate_calibration: bool,
    /// Far plane of the selection frusta (m).
    pub frustum_far: f64,

    // Noise.
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub gyro_walk: f64,
    pub accel_walk: f64,
    pub pixel_sigma: f64,
    /// Magnitude of gravity along global −z (m/s²).
    pub gravity: f64,

    // Inputs and outputs.
    /// Dataset directory; individual paths below override its file names.
    pub input_dir: Option<PathBuf>,
    pub left_events: Option<PathBuf>,
    pub right_events: Option<PathBuf>,
    pub imu: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Calibration and initial state (`meta.json` layout).
    pub calibration: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Seed of synthetic data generation.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = TrackerConfig::default();
        let v = VoxelConfig::default();
        let f = FilterSettings::default();
        let n = NoiseParams::default();
        Self {
            frame_rate_hz: 30.0,
            eta: 0.03,
            activity_window: 0.01,
            max_features: t.max_features,
            pyramid_levels: t.pyramid_levels,
            patch_half_width: t.patch_half_width,
            klt_max_iters: t.klt_max_iters,
            klt_eps: t.klt_eps,
            klt_max_residual: t.klt_max_residual,
            min_corner_quality: t.min_corner_quality,
            mask_radius: t.mask_radius,
            max_stereo_vertical_disparity: t.max_stereo_vertical_disparity,
            ransac: t.ransac,
            ransac_threshold_px: t.ransac_threshold_px,
            ransac_iterations: t.ransac_iterations,
            voxel_size: v.voxel_size,
            capacity_per_voxel: v.capacity_per_voxel,
            min_point_separation: v.min_point_separation,
            min_track_length: v.min_track_length,
            neighbor_order: v.neighbor_order,
            temporal_mode: v.temporal_mode,
            max_clones: f.max_clones,
            top_n: f.top_n,
            budget: 40,
            max_state_points: 40,
            parallax_threshold_px: 20.0,
            gate_probability: f.gate_probability,
            min_baseline_deg: f.min_baseline_deg,
            min_depth: f.min_depth,
            point_variance_floor: f.point_variance_floor,
            max_position_sigma: f.max_position_sigma,
            estimate_calibration: f.estimate_calibration,
            frustum_far: 20.0,
            gyro_noise: n.gyro_noise,
            accel_noise: n.accel_noise,
            gyro_walk: n.gyro_walk,
            accel_walk: n.accel_walk,
            pixel_sigma: n.pixel_sigma,
            gravity: 9.81,
            input_dir: None,
            left_events: None,
            right_events: None,
            imu: None,
            ground_truth: None,
            calibration: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back to
/// a bare string so paths need no quoting.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `key` (dotted for nested tables) to the parsed `value`.
fn apply_override(table: &mut toml::Table, entry: &str) -> Result<()> {
    let (key, value) = entry
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{entry}` is not of the form key=value")))?;
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::Config(format!("override `{entry}` has an empty key")))?;
    let mut node = table;
    for part in parts {
        let child = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = child
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{entry}`: `{part}` is not a table")))?;
    }
    node.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}

/// Parses TOML text into `T`, then applies `key=value` overrides in order.
pub fn parse_toml<T: DeserializeOwned>(text: &str, overrides: &[String]) -> Result<T> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
}

/// Reads the TOML file at `path` (empty when `None`) into `T` with overrides.
pub fn load_toml<T: DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    parse_toml(&text, overrides)
}

impl PipelineConfig {
    /// Parses TOML text, then applies `key=value` overrides in order.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let cfg: Self = parse_toml(text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file at `path` (defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let cfg: Self = load_toml(path, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            max_features: self.max_features,
            pyramid_levels: self.pyramid_levels,
            patch_half_width: self.patch_half_width,
            klt_max_iters: self.klt_max_iters,
            klt_eps: self.klt_eps,
            klt_max_residual: self.klt_max_residual,
            min_corner_quality: self.min_corner_quality,
            mask_radius: self.mask_radius,
            max_stereo_vertical_disparity: self.max_stereo_vertical_disparity,
            ransac: self.ransac,
            ransac_threshold_px: self.ransac_threshold_px,
            ransac_iterations: self.ransac_iterations,
        }
    }

    pub fn voxel(&self) -> VoxelConfig {
        VoxelConfig {
            voxel_size: self.voxel_size,
            capacity_per_voxel: self.capacity_per_voxel,
            min_point_separation: self.min_point_separation,
            min_track_length: self.min_track_length,
            neighbor_order: self.neighbor_order,
            temporal_mode: self.temporal_mode,
        }
    }

    pub fn filter(&self) -> FilterSettings {
        FilterSettings {
            max_clones: self.max_clones,
            top_n: self.top_n,
            gate_probability: self.gate_probability,
            min_baseline_deg: self.min_baseline_deg,
            min_depth: self.min_depth,
            point_variance_floor: self.point_variance_floor,
            max_position_sigma: self.max_position_sigma,
            estimate_calibration: self.estimate_calibration,
        }
    }

    pub fn noise(&self) -> NoiseParams {
        NoiseParams {
            gyro_noise: self.gyro_noise,
            accel_noise: self.accel_noise,
            gyro_walk: self.gyro_walk,
            accel_walk: self.accel_walk,
            pixel_sigma: self.pixel_sigma,
        }
    }

    /// Input files, resolved from `input_dir` and the per-file overrides.
    pub fn dataset_paths(&self) -> Result<DatasetPaths> {
        let base = self.input_dir.as_deref().map(DatasetPaths::in_dir);
        let pick = |explicit: &Option<PathBuf>, from_dir: fn(&DatasetPaths) -> &PathBuf, key: &str| {
            explicit
                .clone()
                .or_else(|| base.as_ref().map(|b| from_dir(b).clone()))
                .ok_or_else(|| Error::Config(format!("no input given for `{key}` (set `input_dir` or `{key}`)")))
        };
        Ok(DatasetPaths {
            left: pick(&self.left_events, |b| &b.left, "left_events")?,
            right: pick(&self.right_events, |b| &b.right, "right_events")?,
            imu: pick(&self.imu, |b| &b.imu, "imu")?,
            gt: pick(&self.ground_truth, |b| &b.gt, "ground_truth").unwrap_or_default(),
            meta: pick(&self.calibration, |b| &b.meta, "calibration")?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz.is_finite()) {
            return bad(format!("frame_rate_hz must be positive, got {}", self.frame_rate_hz));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.activity_window >= 0.0 && self.activity_window.is_finite()) {
            return bad(format!("activity_window must be non-negative, got {}", self.activity_window));
        }
        if self.max_clones < 2 {
            return bad(format!("max_clones must be at least 2, got {}", self.max_clones));
        }
        if self.top_n == 0 {
            return bad("top_n must be at least 1".into());
        }
        if !(self.parallax_threshold_px >= 0.0) {
            return bad(format!(
                "parallax_threshold_px must be non-negative, got {}",
                self.parallax_threshold_px
            ));
        }
        if !(self.gate_probability > 0.0 && self.gate_probability < 1.0) {
            return bad(format!("gate_probability must lie in (0, 1), got {}", self.gate_probability));
        }
        if !(self.min_depth > 0.0 && self.frustum_far > self.min_depth) {
            return bad(format!(
                "need 0 < min_depth < frustum_far, got {} and {}",
                self.min_depth, self.frustum_far
            ));
        }
        if !(self.point_variance_floor > 0.0 && self.max_position_sigma > 0.0 && self.min_baseline_deg >= 0.0) {
            return bad("point_variance_floor and max_position_sigma must be positive, min_baseline_deg non-negative".into());
        }
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return bad(format!("gravity must be positive, got {}", self.gravity));
        }
        self.tracker().validate()?;
        self.voxel().validate()?;
        self.noise().validate()
    }
}
