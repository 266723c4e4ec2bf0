//! Ideal event-camera model driven by moving wireframe edges.
//!
//! Poses are sampled on a fixed micro-step grid. For every edge the projected
//! line is remembered from the last time it was rasterised; once either
//! endpoint has moved by half a pixel (or the requested interval ends) the
//! region swept between the two lines is scanned and every pixel centre that the
//! line crossed receives the edge contrast at the interpolated crossing time.
//! Each pixel keeps a log-intensity accumulator that fires an event per
//! threshold crossing.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use super::scene::Scene;
use super::trajectory::{sample_pose, TrajectorySpec};
use super::NoiseSpec;
use crate::error::{Error, Result};
use crate::event::{Event, Polarity};
use crate::msckf::CameraParams;

/// Events of one camera plus the hidden spurious-event flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimEvents {
    pub events: Vec<Event>,
    pub is_noise: Vec<bool>,
}

impl SimEvents {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn noise_count(&self) -> usize {
        self.is_noise.iter().filter(|n| **n).count()
    }

    pub fn extend(&mut self, other: SimEvents) {
        self.events.extend(other.events);
        self.is_noise.extend(other.is_noise);
    }
}

/// Smallest spacing enforced between consecutive timestamps of one camera.
const MIN_EVENT_SPACING: f64 = 1e-9;
const MAX_SWEEP_PX: f64 = 0.5;
/// Micro-steps per generation block; output never depends on how callers chunk.
const BLOCK_STEPS: u64 = 200;
const NEAR: f64 = 0.05;

type Line = [Vector2<f64>; 2];

#[derive(Debug, Clone, Copy)]
struct Anchor {
    t: f64,
    line: Option<Line>,
}

#[derive(Debug, Clone, Copy)]
struct Crossing {
    t: f64,
    pixel: u32,
    delta: f32,
}

#[derive(Debug, Clone)]
struct CameraState {
    acc: Vec<f32>,
    thresholds: Vec<f32>,
    rng: ChaCha8Rng,
    noise: Option<Exp<f64>>,
    next_noise: f64,
    last_t: f64,
    anchors: Vec<Anchor>,
    crossings: Vec<Crossing>,
}

#[derive(Debug, Clone)]
pub struct EventSimulator {
    scene: Scene,
    traj: TrajectorySpec,
    cams: [CameraParams; 2],
    micro_step: f64,
    step: u64,
    last_step: u64,
    emitted: f64,
    pending: [SimEvents; 2],
    state: [CameraState; 2],
}

impl EventSimulator {
    pub fn new(
        scene: Scene,
        traj: TrajectorySpec,
        cams: [CameraParams; 2],
        noise: &NoiseSpec,
        contrast_threshold: f64,
        micro_step: f64,
        seed: u64,
    ) -> Result<Self> {
        traj.validate()?;
        noise.validate()?;
        if !(contrast_threshold > 0.0) {
            return Err(Error::Config(format!(
                "contrast threshold must be positive, got {contrast_threshold}"
            )));
        }
        if !(micro_step > 0.0 && micro_step <= 1e-4) {
            return Err(Error::Config(format!("micro-step must lie in (0, 0.1 ms], got {micro_step}")));
        }
        if cams.iter().any(|c| c.distortion != nalgebra::Vector4::zeros()) {
            return Err(Error::Config("the event simulator renders undistorted pinhole cameras only".into()));
        }
        let t0 = 0.0;
        let mut state = Vec::with_capacity(2);
        for (c, cam) in cams.iter().enumerate() {
            let n = (cam.width * cam.height) as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(10 + c as u64);
            let thresholds = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (contrast_threshold * (1.0 + noise.threshold_jitter * z)).max(0.1 * contrast_threshold) as f32
                })
                .collect();
            let total_rate = noise.spurious_rate * n as f64;
            let exp = (total_rate > 0.0).then(|| Exp::new(total_rate).expect("positive rate"));
            let next_noise = exp.map_or(f64::INFINITY, |e| t0 + e.sample(&mut rng));
            state.push(CameraState {
                acc: vec![0.0; n],
                thresholds,
                rng,
                noise: exp,
                next_noise,
                last_t: f64::NEG_INFINITY,
                anchors: Vec::new(),
                crossings: Vec::new(),
            });
        }
        let last_step = (traj.duration / micro_step + 1e-9).floor() as u64;
        let mut sim = Self {
            scene,
            traj,
            cams,
            micro_step,
            step: 0,
            last_step,
            emitted: 0.0,
            pending: Default::default(),
            state: state.try_into().expect("two cameras"),
        };
        let lines = sim.project_all(0.0)?;
        for (s, l) in sim.state.iter_mut().zip(lines) {
            s.anchors = l.into_iter().map(|line| Anchor { t: 0.0, line }).collect();
        }
        Ok(sim)
    }

    pub fn cameras(&self) -> &[CameraParams; 2] {
        &self.cams
    }

    /// Time up to which events have been returned.
    pub fn time(&self) -> f64 {
        self.emitted
    }

    pub fn duration(&self) -> f64 {
        self.traj.duration
    }

    pub fn finished(&self) -> bool {
        self.step >= self.last_step && self.emitted >= self.last_step as f64 * self.micro_step
    }

    fn project_all(&self, t: f64) -> Result<[Vec<Option<Line>>; 2]> {
        let kin = sample_pose(&self.traj, t)?;
        let rot_wi = kin.rot.to_rotation_matrix().into_inner();
        let mut out: [Vec<Option<Line>>; 2] = Default::default();
        for (c, cam) in self.cams.iter().enumerate() {
            let (rot_wc, p_wc) = cam.pose_in(&rot_wi, &kin.p);
            let rot_cw = rot_wc.transpose();
            out[c] = self
                .scene
                .segments
                .iter()
                .map(|s| project_segment(cam, &rot_cw, &p_wc, &s.a, &s.b))
                .collect();
        }
        Ok(out)
    }

    /// Simulates one block of micro-steps into `pending`.
    fn run_block(&mut self) -> Result<()> {
        let t_start = self.step as f64 * self.micro_step;
        let k_end = (self.step + BLOCK_STEPS).min(self.last_step);
        for k in self.step + 1..=k_end {
            let t = k as f64 * self.micro_step;
            let lines = self.project_all(t)?;
            for (c, cam_lines) in lines.into_iter().enumerate() {
                let (w, h) = (self.cams[c].width, self.cams[c].height);
                let st = &mut self.state[c];
                for (i, line) in cam_lines.into_iter().enumerate() {
                    let anchor = st.anchors[i];
                    let (Some(prev), Some(cur)) = (anchor.line, line) else {
                        st.anchors[i] = Anchor { t, line };
                        continue;
                    };
                    let moved = (cur[0] - prev[0]).norm().max((cur[1] - prev[1]).norm());
                    if moved >= MAX_SWEEP_PX || k == k_end {
                        if moved > 0.0 {
                            sweep(
                                &prev,
                                &cur,
                                anchor.t,
                                t,
                                self.scene.segments[i].contrast as f32,
                                w,
                                h,
                                &mut st.crossings,
                            );
                        }
                        st.anchors[i] = Anchor { t, line };
                    }
                }
            }
        }
        self.step = k_end;
        let t_stop = k_end as f64 * self.micro_step;
        for (c, st) in self.state.iter_mut().enumerate() {
            let block = st.drain(self.cams[c].width, t_start, t_stop);
            self.pending[c].extend(block);
        }
        Ok(())
    }

    /// Returns all events with timestamps in `(time(), t_end]`; `t_end` is
    /// clamped to the trajectory duration.
    pub fn advance(&mut self, t_end: f64) -> Result<[SimEvents; 2]> {
        let t_end = t_end.min(self.last_step as f64 * self.micro_step);
        while self.step < self.last_step && (self.step as f64 * self.micro_step) < t_end {
            self.run_block()?;
        }
        if self.step >= self.last_step && t_end >= self.last_step as f64 * self.micro_step {
            // Nudged timestamps may sit marginally past the final step.
            return Ok(self.take_until(f64::INFINITY));
        }
        Ok(self.take_until(t_end))
    }

    fn take_until(&mut self, t_end: f64) -> [SimEvents; 2] {
        self.emitted = self.emitted.max(t_end.min(self.last_step as f64 * self.micro_step));
        let mut out: [SimEvents; 2] = Default::default();
        for (o, p) in out.iter_mut().zip(self.pending.iter_mut()) {
            let n = p.events.partition_point(|e| e.t <= t_end);
            o.events = p.events.drain(..n).collect();
            o.is_noise = p.is_noise.drain(..n).collect();
        }
        out
    }
}

impl CameraState {
    fn drain(&mut self, width: u32, t_start: f64, t_stop: f64) -> SimEvents {
        let mut crossings = std::mem::take(&mut self.crossings);
        crossings.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.pixel.cmp(&b.pixel)));
        let mut raw: Vec<(f64, u32, i8, bool)> = Vec::new();
        for c in &crossings {
            let i = c.pixel as usize;
            let th = self.thresholds[i];
            self.acc[i] += c.delta;
            while self.acc[i] >= th {
                raw.push((c.t, c.pixel, 1, false));
                self.acc[i] -= th;
            }
            while self.acc[i] <= -th {
                raw.push((c.t, c.pixel, -1, false));
                self.acc[i] += th;
            }
        }
        crossings.clear();
        self.crossings = crossings;
        if let Some(exp) = self.noise {
            let n = self.acc.len() as u32;
            while self.next_noise <= t_stop {
                let pixel = self.rng.random_range(0..n);
                let p = if self.rng.random::<bool>() { 1 } else { -1 };
                raw.push((self.next_noise.max(t_start), pixel, p, true));
                self.next_noise += exp.sample(&mut self.rng);
            }
        }
        raw.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.3.cmp(&b.3)));
        let mut out = SimEvents {
            events: Vec::with_capacity(raw.len()),
            is_noise: Vec::with_capacity(raw.len()),
        };
        for (t, pixel, p, noise) in raw {
            let t = t.max(self.last_t + MIN_EVENT_SPACING);
            self.last_t = t;
            let polarity = if p > 0 { Polarity::On } else { Polarity::Off };
            out.events
                .push(Event::new((pixel % width) as u16, (pixel / width) as u16, t, polarity));
            out.is_noise.push(noise);
        }
        out
    }
}

/// Clips the segment to the region in front of the camera and projects it.
fn project_segment(cam: &CameraParams, rot_cw: &Matrix3<f64>, p_wc: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Option<Line> {
    let mut ca = rot_cw * (a - p_wc);
    let mut cb = rot_cw * (b - p_wc);
    if ca.z < NEAR && cb.z < NEAR {
        return None;
    }
    if ca.z < NEAR {
        ca += (cb - ca) * ((NEAR - ca.z) / (cb.z - ca.z));
    } else if cb.z < NEAR {
        cb += (ca - cb) * ((NEAR - cb.z) / (ca.z - cb.z));
    }
    let proj = |p: &Vector3<f64>| Vector2::new(cam.focal.x * p.x / p.z + cam.principal.x, cam.focal.y * p.y / p.z + cam.principal.y);
    Some([proj(&ca), proj(&cb)])
}

/// Records every pixel centre crossed while the line moves from `l0` (at `t0`)
/// to `l1` (at `t1`), assuming linear motion in between.
#[allow(clippy::too_many_arguments)]
fn sweep(l0: &Line, l1: &Line, t0: f64, t1: f64, contrast: f32, width: u32, height: u32, out: &mut Vec<Crossing>) {
    let (d0, d1) = (l0[1] - l0[0], l1[1] - l1[0]);
    let steep = d0.y.abs() + d1.y.abs() >= d0.x.abs() + d1.x.abs();
    // Work in (minor, major) coordinates; the swap mirrors orientation.
    let flip = |v: &Vector2<f64>| if steep { *v } else { Vector2::new(v.y, v.x) };
    let (a0, b0, a1, b1) = (flip(&l0[0]), flip(&l0[1]), flip(&l1[0]), flip(&l1[1]));
    let (n_major, n_minor) = if steep { (height, width) } else { (width, height) };
    let (dy0, dy1) = (b0.y - a0.y, b1.y - a1.y);
    if dy0.abs() < 1e-9 || dy1.abs() < 1e-9 {
        return;
    }
    let lo = a0.y.min(b0.y).max(a1.y.min(b1.y)).max(0.0);
    let hi = a0.y.max(b0.y).min(a1.y.max(b1.y)).min(n_major as f64 - 1.0);
    if lo > hi {
        return;
    }
    let orient = if steep { 1.0 } else { -1.0 };
    for j in lo.ceil() as i64..=hi.floor() as i64 {
        let y = j as f64;
        let x0 = a0.x + (y - a0.y) * (b0.x - a0.x) / dy0;
        let x1 = a1.x + (y - a1.y) * (b1.x - a1.x) / dy1;
        if x0 == x1 {
            continue;
        }
        let sign = if -dy0 * (x1 - x0) * orient > 0.0 { 1.0 } else { -1.0 };
        let delta = sign * contrast;
        let (xl, xh) = (x0.min(x1), x0.max(x1));
        let u_lo = (xl.ceil() as i64).max(0);
        let u_hi = (xh.ceil() as i64 - 1).min(n_minor as i64 - 1);
        for u in u_lo..=u_hi {
            let frac = (u as f64 - x0) / (x1 - x0);
            let (px, py) = if steep { (u as u32, j as u32) } else { (j as u32, u as u32) };
            out.push(Crossing {
                t: t0 + frac * (t1 - t0),
                pixel: py * width + px,
                delta,
            });
        }
    }
}

/// Runs the simulator over the full trajectory.
pub fn generate_events(
    scene: &Scene,
    traj: &TrajectorySpec,
    cams: &[CameraParams; 2],
    noise: &NoiseSpec,
    contrast_threshold: f64,
    micro_step: f64,
    seed: u64,
) -> Result<[SimEvents; 2]> {
    let mut sim = EventSimulator::new(scene.clone(), *traj, cams.clone(), noise, contrast_threshold, micro_step, seed)?;
    sim.advance(traj.duration)
}
