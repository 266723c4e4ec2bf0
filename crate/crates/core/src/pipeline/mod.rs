//! Frame-by-frame orchestration: event ingestion, time-surface rendering,
//! tracking, filtering and voxel-map maintenance.

pub mod estimator;
pub mod nees;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

pub use estimator::{Estimator, EstimatorSettings, FrameObservations, FrameReport, RunStats, TrackedFeature, Variant};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{ate_rmse, Metrics, StampedPose, Trajectory, DEFAULT_MAX_DT};
use crate::eval::{timing_report, Stage, StageTimes, TimingReport};
use crate::event::{make_stereo_frame, ActivityFilter, Event, EventReader, LastEventMap};
use crate::msckf::{CameraParams, Filter, FullState, ImuSample, InertialState, InitialUncertainty};
use crate::sim::dataset::{read_imu_csv, DatasetMeta, InitialState};
use crate::sim::EventSimulator;
use crate::tracking::Tracker;
use crate::voxel::VoxelMap;
use crate::FrameId;

/// Supplies both cameras' events in time order.
pub trait EventSource {
    /// Appends every event with timestamp up to `t` not yet delivered.
    fn fill_until(&mut self, t: f64, out: &mut [Vec<Event>; 2]) -> Result<()>;
}

/// Events streamed from a pair of files.
pub struct FileEvents {
    readers: [EventReader; 2],
}

impl FileEvents {
    pub fn open(left: &Path, right: &Path) -> Result<Self> {
        Ok(Self {
            readers: [EventReader::open(left)?, EventReader::open(right)?],
        })
    }
}

impl EventSource for FileEvents {
    fn fill_until(&mut self, t: f64, out: &mut [Vec<Event>; 2]) -> Result<()> {
        for (r, o) in self.readers.iter_mut().zip(out.iter_mut()) {
            r.read_until(t, o)?;
        }
        Ok(())
    }
}

impl EventSource for EventSimulator {
    fn fill_until(&mut self, t: f64, out: &mut [Vec<Event>; 2]) -> Result<()> {
        if t <= self.time() {
            return Ok(());
        }
        for (s, o) in self.advance(t)?.into_iter().zip(out.iter_mut()) {
            o.extend(s.events);
        }
        Ok(())
    }
}

/// Everything the pipeline consumes besides the configuration.
pub struct PipelineInputs<S> {
    pub events: S,
    pub imu: Vec<ImuSample>,
    pub cameras: [CameraParams; 2],
    pub initial: InitialState,
    /// Frames are produced up to this time (and no later than the last IMU sample).
    pub duration: f64,
}

pub struct PipelineOutput {
    pub trajectory: Trajectory,
    pub times: StageTimes,
    pub timing: TimingReport,
    pub map: VoxelMap,
    pub stats: RunStats,
}

/// Renders time surfaces and tracks features.
pub struct Frontend {
    filters: Option<[ActivityFilter; 2]>,
    maps: [LastEventMap; 2],
    tracker: Tracker,
    eta: f64,
}

impl Frontend {
    pub fn new(config: &PipelineConfig, cameras: &[CameraParams; 2]) -> Result<Self> {
        let map = |c: &CameraParams| LastEventMap::new(c.width, c.height);
        let filter = |c: &CameraParams| ActivityFilter::new(c.width, c.height, config.activity_window);
        Ok(Self {
            filters: (config.activity_window > 0.0).then(|| [filter(&cameras[0]), filter(&cameras[1])]),
            maps: [map(&cameras[0]), map(&cameras[1])],
            tracker: Tracker::new(config.tracker())?,
            eta: config.eta,
        })
    }

    /// Filters (when enabled) and folds both batches into the last-event maps.
    pub fn ingest(&mut self, events: &mut [Vec<Event>; 2]) -> Result<()> {
        if let Some(filters) = &mut self.filters {
            filters[0].retain(&mut events[0]);
            filters[1].retain(&mut events[1]);
        }
        self.maps[0].ingest(&events[0])?;
        self.maps[1].ingest(&events[1])
    }

    /// Renders both time surfaces at `t` and tracks into them; also returns
    /// the milliseconds spent tracking.
    pub fn track(&mut self, t: f64, frame_id: FrameId) -> Result<(FrameObservations, f64)> {
        let frame = make_stereo_frame(&self.maps[0], &self.maps[1], t, self.eta, frame_id)?;
        let start = Instant::now();
        let out = self.tracker.process(&frame);
        let features = self
            .tracker
            .tracks()
            .iter()
            .filter_map(|tr| {
                Some(TrackedFeature {
                    feature_id: tr.feature_id,
                    left: tr.observation(frame_id, 0)?,
                    right: tr.observation(frame_id, 1),
                    track_length: tr.length(),
                })
            })
            .collect();
        self.tracker.prune_before(frame_id.saturating_sub(1));
        let obs = FrameObservations {
            frame_id,
            t,
            features,
            lost: out.lost.iter().map(|l| l.feature_id).collect(),
        };
        Ok((obs, start.elapsed().as_secs_f64() * 1e3))
    }
}

pub fn initial_inertial(init: &InitialState) -> Result<InertialState> {
    let [x, y, z, w] = init.q_xyzw;
    let q = Quaternion::new(w, x, y, z);
    if !(q.norm() > 0.5 && init.p.iter().chain(&init.v).all(|v| v.is_finite())) {
        return Err(Error::Config(format!("invalid initial state {init:?}")));
    }
    Ok(InertialState {
        v: Vector3::from(init.v),
        ..InertialState::at_rest(UnitQuaternion::from_quaternion(q), Vector3::from(init.p))
    })
}

pub fn build_estimator(
    config: &PipelineConfig,
    cameras: &[CameraParams; 2],
    initial: &InitialState,
    variant: Variant,
) -> Result<Estimator> {
    config.validate()?;
    let state = FullState::new(initial.t, initial_inertial(initial)?, cameras.clone());
    let mut filter = Filter::new(state, config.noise(), config.filter(), &InitialUncertainty::default());
    filter.gravity = Vector3::new(0.0, 0.0, -config.gravity);
    let map = VoxelMap::new(config.voxel())?;
    let settings = EstimatorSettings {
        budget: config.budget,
        max_state_points: config.max_state_points,
        parallax_threshold_px: config.parallax_threshold_px,
        frustum_far: config.frustum_far,
        variant,
    };
    Ok(Estimator::new(filter, map, settings))
}

/// Runs the pipeline on in-memory inputs.
pub fn run_with_source<S: EventSource>(config: &PipelineConfig, mut inputs: PipelineInputs<S>, variant: Variant) -> Result<PipelineOutput> {
    let mut frontend = Frontend::new(config, &inputs.cameras)?;
    let mut est = build_estimator(config, &inputs.cameras, &inputs.initial, variant)?;
    let t0 = inputs.initial.t;
    let t_end = inputs.imu.last().map_or(t0, |s| s.t).min(t0 + inputs.duration);
    let dt = 1.0 / config.frame_rate_hz;
    let n_frames = ((t_end - t0) / dt + 1e-9).floor() as u64;

    let mut times = StageTimes::new();
    let mut trajectory = Trajectory::new();
    let mut imu_cursor = 0;
    let mut batch: [Vec<Event>; 2] = [Vec::new(), Vec::new()];
    for k in 1..=n_frames {
        let t = t0 + k as f64 * dt;
        batch[0].clear();
        batch[1].clear();
        inputs.events.fill_until(t, &mut batch)?;
        let start = Instant::now();
        frontend.ingest(&mut batch)?;
        let (obs, tracking_ms) = frontend.track(t, k)?;
        let ab_ms = start.elapsed().as_secs_f64() * 1e3;

        let end = imu_cursor + inputs.imu[imu_cursor..].partition_point(|s| s.t <= t);
        let report = est.process(&obs, &inputs.imu[imu_cursor..end])?;
        imu_cursor = end.saturating_sub(1);

        times.record(Stage::EventProcessing, ab_ms - tracking_ms);
        times.record(Stage::Tracking, tracking_ms);
        times.record(Stage::Odometry, report.odometry_ms);
        times.record(Stage::VoxelMap, report.voxel_ms);
        times.record_total(start.elapsed().as_secs_f64() * 1e3);
        let imu = &est.filter.state.imu;
        trajectory.push(StampedPose { t, p: imu.p, q: imu.rot })?;
        log::debug!(
            "frame {k} t={t:.3} features={} kf={} free={} map={} ins={} pts={}",
            obs.features.len(),
            report.keyframe,
            report.map_free_used,
            report.map_used,
            report.inserted,
            report.state_points
        );
    }
    Ok(PipelineOutput {
        trajectory,
        timing: timing_report(&times),
        times,
        stats: est.stats,
        map: est.map,
    })
}

/// Files written by [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub trajectory: PathBuf,
    pub map: PathBuf,
    pub timing: PathBuf,
    pub metrics: Option<PathBuf>,
    pub ate_rmse_m: Option<f64>,
    pub timing_report: TimingReport,
}

pub fn write_outputs(out: &PipelineOutput, out_dir: &Path, gt: Option<&Trajectory>) -> Result<RunArtifacts> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let traj_path = out_dir.join("est.tum");
    out.trajectory.write_tum(&traj_path)?;
    let map_path = out_dir.join("map_final.txt");
    let mut buf = Vec::new();
    out.map.write_snapshot(&mut buf).expect("writing to memory");
    fs::write(&map_path, buf).map_err(|e| Error::io(&map_path, e))?;
    let timing_path = out_dir.join("timing.txt");
    fs::write(&timing_path, format!("{}\n", out.timing)).map_err(|e| Error::io(&timing_path, e))?;

    let mut metrics_path = None;
    let mut ate = None;
    if let Some(gt) = gt {
        let r = ate_rmse(&out.trajectory, gt, DEFAULT_MAX_DT)?;
        let m = Metrics {
            ate_rmse_m: Some(r.rmse),
            n_pairs: Some(r.n_pairs),
            trajectory_length_m: Some(gt.path_length()),
            timing: out.timing,
        };
        let p = out_dir.join("metrics.json");
        m.write_json(&p)?;
        metrics_path = Some(p);
        ate = Some(r.rmse);
    }
    Ok(RunArtifacts {
        trajectory: traj_path,
        map: map_path,
        timing: timing_path,
        metrics: metrics_path,
        ate_rmse_m: ate,
        timing_report: out.timing,
    })
}

/// Runs the pipeline on the files named by the configuration and writes
/// `est.tum`, `map_final.txt`, `timing.txt` and, when ground truth is
/// available, `metrics.json` into `out_dir`.
pub fn run_pipeline(config: &PipelineConfig, variant: Variant, out_dir: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    let paths = config.dataset_paths()?;
    let meta = DatasetMeta::read(&paths.meta)?;
    let imu = read_imu_csv(&paths.imu)?;
    if imu.is_empty() {
        return Err(Error::Config(format!("{} holds no samples", paths.imu.display())));
    }
    let gt = if config.ground_truth.is_some() || paths.gt.is_file() {
        Some(Trajectory::read_tum(&paths.gt)?)
    } else {
        None
    };
    let inputs = PipelineInputs {
        events: FileEvents::open(&paths.left, &paths.right)?,
        imu,
        cameras: meta.cameras,
        initial: meta.initial_state,
        duration: meta.duration,
    };
    let out = run_with_source(config, inputs, variant)?;
    write_outputs(&out, out_dir, gt.as_ref())
}
