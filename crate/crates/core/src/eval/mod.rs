//! Trajectory files, rigid alignment and absolute trajectory error.

mod timing;

pub use timing::{timing_report, Stage, StageTimes, TimingReport};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};

/// Association tolerance used when none is given.
pub const DEFAULT_MAX_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedPose {
    pub t: f64,
    pub p: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
}

/// Poses with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<StampedPose>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_poses(poses: Vec<StampedPose>) -> Result<Self> {
        let mut out = Self::new();
        for p in poses {
            out.push(p)?;
        }
        Ok(out)
    }

    pub fn push(&mut self, pose: StampedPose) -> Result<()> {
        if !pose.t.is_finite() || !pose.p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some(last) = self.poses.last() {
            if pose.t <= last.t {
                return Err(Error::Config(format!("trajectory timestamp {} does not follow {}", pose.t, last.t)));
            }
        }
        self.poses.push(pose);
        Ok(())
    }

    pub fn poses(&self) -> &[StampedPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Sum of distances between consecutive positions.
    pub fn path_length(&self) -> f64 {
        self.poses.windows(2).map(|w| (w[1].p - w[0].p).norm()).sum()
    }

    /// Applies `x ↦ R·x + t` to every pose.
    pub fn transformed(&self, rot: &UnitQuaternion<f64>, trans: &Vector3<f64>) -> Self {
        Self {
            poses: self
                .poses
                .iter()
                .map(|s| StampedPose {
                    t: s.t,
                    p: rot * s.p + trans,
                    q: rot * s.q,
                })
                .collect(),
        }
    }

    /// Reads `t x y z qx qy qz qw` lines; `#` starts a comment.
    pub fn read_tum(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            if vals.len() != 8 {
                return Err(Error::parse(path, i + 1, format!("expected 8 columns, found {}", vals.len())));
            }
            let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
            if q.norm() < 1e-9 {
                return Err(Error::parse(path, i + 1, "zero quaternion"));
            }
            out.push(StampedPose {
                t: vals[0],
                p: Vector3::new(vals[1], vals[2], vals[3]),
                q: UnitQuaternion::from_quaternion(q),
            })
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        Ok(out)
    }

    pub fn write_tum(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let res = (|| -> std::io::Result<()> {
            for s in &self.poses {
                let q = s.q.quaternion();
                writeln!(
                    w,
                    "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
                    s.t, s.p.x, s.p.y, s.p.z, q.i, q.j, q.k, q.w
                )?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }
}

/// Pairs each estimate with the closest reference stamp within `max_dt`, using
/// every reference sample at most once. Returned as `(est, ref)` index pairs
/// in increasing estimate order.
pub fn associate(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> Result<Vec<(usize, usize)>> {
    if !(max_dt > 0.0) {
        return Err(Error::Config(format!("max_dt must be positive, got {max_dt}")));
    }
    let rt: Vec<f64> = reference.poses.iter().map(|p| p.t).collect();
    let mut candidates = Vec::new();
    for (i, e) in est.poses.iter().enumerate() {
        let k = rt.partition_point(|&t| t < e.t);
        for j in [k.wrapping_sub(1), k] {
            if let Some(&t) = rt.get(j) {
                let dt = (t - e.t).abs();
                if dt <= max_dt {
                    candidates.push((dt, i, j));
                }
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut est_used = vec![false; est.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !est_used[i] && !ref_used[j] {
            est_used[i] = true;
            ref_used[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoAssociation { max_dt });
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// `x ↦ rot·x + trans`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

impl RigidTransform {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rot * x + self.trans
    }
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]` (no scale).
pub fn umeyama_align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidTransform> {
    let n = src.len();
    if n < 3 || n != dst.len() {
        return Err(Error::Degenerate(format!("alignment needs at least 3 pairs, got {n}")));
    }
    let mu_s = src.iter().sum::<Vector3<f64>>() / n as f64;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    let mut spread = 0.0;
    for (s, d) in src.iter().zip(dst) {
        cov += (d - mu_d) * (s - mu_s).transpose();
        spread += (s - mu_s).norm_squared();
    }
    cov /= n as f64;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let scale = spread / n as f64;
    if scale < 1e-18 || sv[1] <= 1e-10 * sv[0].max(1e-300) {
        return Err(Error::Degenerate("point sets are coincident or collinear".into()));
    }
    let mut s = Matrix3::identity();
    if u.determinant() * vt.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rot = u * s * vt;
    Ok(RigidTransform {
        rot,
        trans: mu_d - rot * mu_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AteResult {
    pub rmse: f64,
    pub n_pairs: usize,
    #[serde(skip)]
    pub alignment: RigidTransform,
}

/// RMSE of position residuals after aligning `est` onto `reference`.
pub fn ate_rmse(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> Result<AteResult> {
    let pairs = associate(est, reference, max_dt)?;
    let src: Vec<_> = pairs.iter().map(|&(i, _)| est.poses[i].p).collect();
    let dst: Vec<_> = pairs.iter().map(|&(_, j)| reference.poses[j].p).collect();
    let alignment = umeyama_align(&src, &dst)?;
    let sse: f64 = src.iter().zip(&dst).map(|(s, d)| (alignment.apply(s) - d).norm_squared()).sum();
    Ok(AteResult {
        rmse: (sse / pairs.len() as f64).sqrt(),
        n_pairs: pairs.len(),
        alignment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub ate_rmse_m: Option<f64>,
    pub n_pairs: Option<usize>,
    pub trajectory_length_m: Option<f64>,
    pub timing: TimingReport,
}

impl Metrics {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("metrics serialise");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
