//! On-disk synthetic datasets.
//!
//! Layout: `left.evt`, `right.evt` (binary event files), `imu.csv`,
//! `gt.tum`, `noise_mask.csv` (indices of spurious events per camera) and
//! `meta.json`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::events::EventSimulator;
use super::imu::{generate_imu, gravity};
use super::scene::{Scene, SceneSpec};
use super::trajectory::{sample_pose, TrajectorySpec};
use super::{stereo_rig, NoiseSpec};
use crate::error::{Error, Result};
use crate::eval::{StampedPose, Trajectory};
use crate::event::EventWriter;
use crate::msckf::{CameraParams, ImuSample};

pub const LEFT_EVENTS: &str = "left.evt";
pub const RIGHT_EVENTS: &str = "right.evt";
pub const IMU_FILE: &str = "imu.csv";
pub const GT_FILE: &str = "gt.tum";
pub const NOISE_MASK_FILE: &str = "noise_mask.csv";
pub const META_FILE: &str = "meta.json";

/// Length of the noise-free run used to calibrate `spurious_fraction`.
const PILOT_SECONDS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub trajectory: TrajectorySpec,
    pub scene: SceneSpec,
    pub noise: NoiseSpec,
    /// When set, replaces `noise.spurious_rate` by the rate that makes this
    /// fraction of all events spurious.
    pub spurious_fraction: Option<f64>,
    pub imu_rate_hz: f64,
    pub gt_rate_hz: f64,
    pub contrast_threshold: f64,
    /// s
    pub micro_step: f64,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// m
    pub baseline: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trajectory: TrajectorySpec::default(),
            scene: SceneSpec::default(),
            noise: NoiseSpec::default(),
            spurious_fraction: None,
            imu_rate_hz: 200.0,
            gt_rate_hz: 100.0,
            contrast_threshold: 0.2,
            micro_step: 5e-5,
            width: 640,
            height: 480,
            focal: 320.0,
            baseline: 0.1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.trajectory.validate()?;
        self.noise.validate()?;
        if let Some(f) = self.spurious_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("spurious_fraction must lie in [0, 1), got {f}")));
            }
        }
        if !(self.imu_rate_hz > 0.0 && self.gt_rate_hz > 0.0 && self.focal > 0.0 && self.baseline > 0.0) {
            return Err(Error::Config("rates, focal length and baseline must be positive".into()));
        }
        if self.width < 16 || self.height < 16 || self.width > u16::MAX as u32 || self.height > u16::MAX as u32 {
            return Err(Error::Config(format!("unsupported resolution {}x{}", self.width, self.height)));
        }
        Ok(())
    }

    pub fn cameras(&self) -> [CameraParams; 2] {
        stereo_rig(self.focal, self.width, self.height, self.baseline)
    }

    pub fn build_scene(&self) -> Result<Scene> {
        Scene::room(&self.scene, self.seed)
    }

    /// Noise with `spurious_fraction` turned into a per-pixel rate, estimated
    /// from a short noise-free run at the start of the trajectory.
    pub fn resolve_noise(&self) -> Result<NoiseSpec> {
        let mut noise = self.noise;
        let Some(f) = self.spurious_fraction else {
            return Ok(noise);
        };
        let pilot_traj = TrajectorySpec {
            duration: self.trajectory.duration.min(PILOT_SECONDS),
            ..self.trajectory
        };
        let quiet = NoiseSpec {
            spurious_rate: 0.0,
            ..noise
        };
        let mut sim = EventSimulator::new(
            self.build_scene()?,
            pilot_traj,
            self.cameras(),
            &quiet,
            self.contrast_threshold,
            self.micro_step,
            self.seed,
        )?;
        let out = sim.advance(pilot_traj.duration)?;
        let signal = (out[0].len() + out[1].len()) as f64 / 2.0;
        let per_pixel = signal / (pilot_traj.duration * (self.width * self.height) as f64);
        noise.spurious_rate = f / (1.0 - f) * per_pixel;
        Ok(noise)
    }

    pub fn simulator(&self, noise: &NoiseSpec) -> Result<EventSimulator> {
        EventSimulator::new(
            self.build_scene()?,
            self.trajectory,
            self.cameras(),
            noise,
            self.contrast_threshold,
            self.micro_step,
            self.seed,
        )
    }

    pub fn imu(&self, noise: &NoiseSpec) -> Result<Vec<ImuSample>> {
        generate_imu(&self.trajectory, noise, self.imu_rate_hz, self.seed)
    }

    pub fn ground_truth(&self) -> Result<Trajectory> {
        let n = (self.trajectory.duration * self.gt_rate_hz + 1e-9).floor() as usize;
        let mut out = Trajectory::new();
        for k in 0..=n {
            let t = k as f64 / self.gt_rate_hz;
            let kin = sample_pose(&self.trajectory, t)?;
            out.push(StampedPose { t, p: kin.p, q: kin.rot })?;
        }
        Ok(out)
    }

    pub fn initial_state(&self) -> Result<InitialState> {
        let k = sample_pose(&self.trajectory, 0.0)?;
        let q = k.rot.quaternion();
        Ok(InitialState {
            t: 0.0,
            q_xyzw: [q.i, q.j, q.k, q.w],
            p: k.p.into(),
            v: k.v.into(),
        })
    }
}

/// Pose and velocity the estimator starts from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub t: f64,
    pub q_xyzw: [f64; 4],
    pub p: [f64; 3],
    pub v: [f64; 3],
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub cameras: [CameraParams; 2],
    pub contrast_threshold: f64,
    pub gravity: [f64; 3],
    /// Spurious rate actually used (events/s/pixel).
    pub spurious_rate: f64,
    pub duration: f64,
    pub initial_state: InitialState,
    pub event_counts: [usize; 2],
    pub noise_counts: [usize; 2],
    pub config: SimConfig,
}

impl DatasetMeta {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

/// Generates the dataset and writes it to `out_dir`, streaming events.
pub fn export_dataset(cfg: &SimConfig, out_dir: &Path) -> Result<DatasetMeta> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let noise = cfg.resolve_noise()?;
    let mut sim = cfg.simulator(&noise)?;

    let mut writers = [
        EventWriter::create(&out_dir.join(LEFT_EVENTS))?,
        EventWriter::create(&out_dir.join(RIGHT_EVENTS))?,
    ];
    let mask_path = out_dir.join(NOISE_MASK_FILE);
    let mut mask = BufWriter::new(File::create(&mask_path).map_err(|e| Error::io(&mask_path, e))?);
    writeln!(mask, "camera,index").map_err(|e| Error::io(&mask_path, e))?;
    let mut counts = [0usize; 2];
    let mut noise_counts = [0usize; 2];
    let chunk = 0.1;
    let mut t = 0.0;
    while !sim.finished() {
        t += chunk;
        let out = sim.advance(t)?;
        for (c, s) in out.iter().enumerate() {
            writers[c].write(&s.events)?;
            for (i, _) in s.is_noise.iter().enumerate().filter(|(_, n)| **n) {
                writeln!(mask, "{},{}", c, counts[c] + i).map_err(|e| Error::io(&mask_path, e))?;
            }
            counts[c] += s.len();
            noise_counts[c] += s.noise_count();
        }
    }
    for w in writers {
        w.finish()?;
    }
    mask.flush().map_err(|e| Error::io(&mask_path, e))?;

    write_imu_csv(&out_dir.join(IMU_FILE), &cfg.imu(&noise)?)?;
    cfg.ground_truth()?.write_tum(&out_dir.join(GT_FILE))?;

    let meta = DatasetMeta {
        seed: cfg.seed,
        cameras: cfg.cameras(),
        contrast_threshold: cfg.contrast_threshold,
        gravity: gravity().into(),
        spurious_rate: noise.spurious_rate,
        duration: cfg.trajectory.duration,
        initial_state: cfg.initial_state()?,
        event_counts: counts,
        noise_counts,
        config: SimConfig { noise, ..*cfg },
    };
    let meta_path = out_dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("meta serialises");
    fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;
    Ok(meta)
}

/// Writes `t ax ay az wx wy wz` rows with a header line.
pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "t,ax,ay,az,wx,wy,wz")?;
        for s in samples {
            let (a, g) = (s.accel, s.gyro);
            writeln!(w, "{},{},{},{},{},{},{}", s.t, a.x, a.y, a.z, g.x, g.y, g.z)?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Reads IMU rows separated by commas or whitespace; lines that do not start
/// with a number are skipped as headers or comments.
pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<ImuSample> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || !line.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '.') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if vals.len() != 7 {
            return Err(Error::parse(path, i + 1, format!("expected 7 columns, found {}", vals.len())));
        }
        if let Some(prev) = out.last() {
            if vals[0] <= prev.t {
                return Err(Error::parse(path, i + 1, "timestamps must increase"));
            }
        }
        out.push(ImuSample {
            t: vals[0],
            accel: Vector3::new(vals[1], vals[2], vals[3]),
            gyro: Vector3::new(vals[4], vals[5], vals[6]),
        });
    }
    Ok(out)
}

/// Paths of the files making up a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub left: PathBuf,
    pub right: PathBuf,
    pub imu: PathBuf,
    pub gt: PathBuf,
    pub meta: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            left: dir.join(LEFT_EVENTS),
            right: dir.join(RIGHT_EVENTS),
            imu: dir.join(IMU_FILE),
            gt: dir.join(GT_FILE),
            meta: dir.join(META_FILE),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ate_rmse;
    use crate::event::read_events;

    fn short(duration: f64) -> SimConfig {
        SimConfig {
            trajectory: TrajectorySpec {
                duration,
                ..Default::default()
            },
            noise: NoiseSpec {
                spurious_rate: 0.2,
                ..Default::default()
            },
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = short(0.2);
        let meta = export_dataset(&cfg, dir.path()).unwrap();
        let paths = DatasetPaths::in_dir(dir.path());
        for p in [
            &paths.left,
            &paths.right,
            &paths.imu,
            &paths.gt,
            &paths.meta,
            &dir.path().join(NOISE_MASK_FILE),
        ] {
            assert!(p.exists(), "{}", p.display());
        }
        // Events on disk equal an in-memory run.
        let mem = cfg.simulator(&cfg.resolve_noise().unwrap()).unwrap().advance(0.2).unwrap();
        assert_eq!(read_events(&paths.left).unwrap(), mem[0].events);
        assert_eq!(read_events(&paths.right).unwrap(), mem[1].events);
        assert_eq!(meta.event_counts, [mem[0].len(), mem[1].len()]);
        let mask = fs::read_to_string(dir.path().join(NOISE_MASK_FILE)).unwrap();
        assert_eq!(mask.lines().count() - 1, meta.noise_counts[0] + meta.noise_counts[1]);

        assert_eq!(read_imu_csv(&paths.imu).unwrap(), cfg.imu(&cfg.noise).unwrap());
        let gt = Trajectory::read_tum(&paths.gt).unwrap();
        assert!(ate_rmse(&gt, &gt, 0.01).unwrap().rmse < 1e-12);
        assert_eq!(DatasetMeta::read(&paths.meta).unwrap(), meta);
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = short(0.1);
        export_dataset(&cfg, a.path()).unwrap();
        export_dataset(&cfg, b.path()).unwrap();
        for f in [LEFT_EVENTS, RIGHT_EVENTS, IMU_FILE, GT_FILE, NOISE_MASK_FILE, META_FILE] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn sizes_scale_with_duration() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        export_dataset(&short(0.2), a.path()).unwrap();
        export_dataset(&short(0.4), b.path()).unwrap();
        let size = |d: &Path, f: &str| fs::metadata(d.join(f)).unwrap().len() as f64;
        for f in [IMU_FILE, GT_FILE] {
            let r = size(b.path(), f) / size(a.path(), f);
            assert!((r - 2.0).abs() < 0.1, "{f}: {r}");
        }
        let r = size(b.path(), LEFT_EVENTS) / size(a.path(), LEFT_EVENTS);
        assert!((r - 2.0).abs() < 0.4, "events: {r}");
    }

    #[test]
    fn zero_duration_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(export_dataset(&short(0.0), dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn spurious_fraction_is_met() {
        let cfg = SimConfig {
            spurious_fraction: Some(0.2),
            ..short(0.3)
        };
        let noise = cfg.resolve_noise().unwrap();
        let out = cfg.simulator(&noise).unwrap().advance(0.3).unwrap();
        for s in &out {
            let frac = s.noise_count() as f64 / s.len() as f64;
            assert!((frac - 0.2).abs() < 0.03, "{frac}");
        }
    }

    #[test]
    fn missing_imu_file_names_path() {
        let err = read_imu_csv(Path::new("/nonexistent/imu.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/imu.csv"));
    }
}
