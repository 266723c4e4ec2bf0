//! Monte-Carlo consistency check on exact feature projections.
//!
//! Landmarks scattered over the room walls are projected into both cameras
//! along the true trajectory and fed to the estimator as tracks, while the IMU
//! carries the configured noise. Averaging the pose NEES over runs gives the
//! usual chi-square envelope test.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::build_estimator;
use super::estimator::{FrameObservations, TrackedFeature, Variant};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::msckf::CameraParams;
use crate::sim::{generate_imu, sample_pose, SimConfig};
use crate::FeatureId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeesSettings {
    pub runs: usize,
    pub duration: f64,
    pub landmarks: usize,
    pub max_tracks: usize,
    /// Standard deviation of Gaussian noise added to the projections (px).
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for NeesSettings {
    fn default() -> Self {
        Self {
            runs: 50,
            duration: 10.0,
            landmarks: 600,
            max_tracks: 120,
            pixel_noise: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeesSummary {
    /// Mean over frames of the run-averaged pose NEES.
    pub mean_anees: f64,
    /// Two-sided 95 % bounds of the run-averaged NEES (6 degrees of freedom).
    pub lower: f64,
    pub upper: f64,
    /// Run-averaged NEES per frame.
    pub anees: Vec<f64>,
    pub runs: usize,
}

/// Points on the four walls, floor and ceiling of the room.
fn wall_points(half: Vector3<f64>, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| {
            let mut p = Vector3::new(
                rng.random_range(-half.x..half.x),
                rng.random_range(-half.y..half.y),
                rng.random_range(-half.z..half.z),
            );
            let axis = rng.random_range(0..3);
            p[axis] = if rng.random::<bool>() { half[axis] } else { -half[axis] };
            p
        })
        .collect()
}

fn project(cam: &CameraParams, rot_wi: &nalgebra::Matrix3<f64>, p_wi: &Vector3<f64>, x: &Vector3<f64>) -> Option<Vector2<f64>> {
    let (rot_wc, c) = cam.pose_in(rot_wi, p_wi);
    let pix = cam.project(&(rot_wc.transpose() * (x - c)), 0.2)?.pixel;
    cam.in_image(&pix, 2.0).then_some(pix)
}

fn perturb(p: Vector2<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> Vector2<f64> {
    if sigma == 0.0 {
        return p;
    }
    p + Vector2::from_fn(|_, _| StandardNormal.sample(rng)) * sigma
}

/// Pose NEES per frame of one run.
pub fn nees_run(config: &PipelineConfig, sim: &SimConfig, settings: &NeesSettings, run: u64) -> Result<Vec<f64>> {
    let mut sim = *sim;
    sim.seed = settings.seed.wrapping_add(run);
    sim.trajectory.duration = settings.duration;
    let cams = sim.cameras();
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    rng.set_stream(20);
    let points = wall_points(Vector3::from(sim.scene.half_extent), settings.landmarks, &mut rng);
    let imu = generate_imu(&sim.trajectory, &sim.noise, sim.imu_rate_hz, sim.seed)?;
    let mut est = build_estimator(config, &cams, &sim.initial_state()?, Variant::Full)?;

    // Track id and length per landmark while it stays visible.
    let mut active: Vec<Option<(FeatureId, usize)>> = vec![None; points.len()];
    let mut next_id: FeatureId = 0;
    let dt = 1.0 / config.frame_rate_hz;
    let n_frames = (settings.duration / dt + 1e-9).floor() as u64;
    let mut cursor = 0;
    let mut out = Vec::with_capacity(n_frames as usize);
    for k in 1..=n_frames {
        let t = k as f64 * dt;
        let truth = sample_pose(&sim.trajectory, t)?;
        let rot = truth.rot.to_rotation_matrix().into_inner();
        let mut features = Vec::new();
        let mut lost = Vec::new();
        let n_active = active.iter().filter(|a| a.is_some()).count();
        let mut budget = settings.max_tracks.saturating_sub(n_active);
        for (i, x) in points.iter().enumerate() {
            let left = project(&cams[0], &rot, &truth.p, x);
            match (&mut active[i], left) {
                (Some(_), None) => {
                    lost.push(active[i].take().expect("active").0);
                    continue;
                }
                (Some((_, len)), Some(_)) => *len += 1,
                (None, Some(_)) if budget > 0 => {
                    budget -= 1;
                    active[i] = Some((next_id, 1));
                    next_id += 1;
                }
                _ => continue,
            }
            let (id, len) = active[i].expect("active");
            let sigma = settings.pixel_noise;
            features.push(TrackedFeature {
                feature_id: id,
                left: perturb(left.expect("visible"), sigma, &mut rng),
                right: project(&cams[1], &rot, &truth.p, x).map(|r| perturb(r, sigma, &mut rng)),
                track_length: len,
            });
        }
        lost.sort_unstable();
        let frame = FrameObservations {
            frame_id: k,
            t,
            features,
            lost,
        };
        let end = cursor + imu[cursor..].partition_point(|s| s.t <= t);
        let r = est.process(&frame, &imu[cursor..end])?;
        log::trace!(
            "k={k} feats={} lost={} free={} map={} pts={} sigma_p={:.4} err_p={:.4}",
            frame.features.len(),
            frame.lost.len(),
            r.map_free_used,
            r.map_used,
            r.state_points,
            (est.filter.cov[(3, 3)] + est.filter.cov[(4, 4)] + est.filter.cov[(5, 5)]).sqrt(),
            (est.filter.state.imu.p - truth.p).norm()
        );
        cursor = end.saturating_sub(1);
        out.push(est.filter.pose_nees(&truth.rot, &truth.p));
    }
    log::debug!("nees run {run}: {:?}", est.stats);
    Ok(out)
}

pub fn monte_carlo(config: &PipelineConfig, sim: &SimConfig, settings: &NeesSettings) -> Result<NeesSummary> {
    if settings.runs == 0 {
        return Err(Error::Config("at least one run is needed".into()));
    }
    let mut sum: Vec<f64> = Vec::new();
    for run in 0..settings.runs as u64 {
        let nees = nees_run(config, sim, settings, run)?;
        if sum.is_empty() {
            sum = vec![0.0; nees.len()];
        }
        sum.iter_mut().zip(&nees).for_each(|(s, v)| *s += v);
    }
    let n = settings.runs as f64;
    let anees: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let chi2 = ChiSquared::new(6.0 * n).map_err(|e| Error::Config(e.to_string()))?;
    Ok(NeesSummary {
        mean_anees: anees.iter().sum::<f64>() / anees.len().max(1) as f64,
        lower: chi2.inverse_cdf(0.025) / n,
        upper: chi2.inverse_cdf(0.975) / n,
        anees,
        runs: settings.runs,
    })
}
