//! Inputs shared by the benchmarks.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evio_core::event::{make_stereo_frame, Event, LastEventMap, Polarity, StereoEventFrame};
use evio_core::msckf::{measurement::predict, PixelObservation};
use evio_core::msckf::{
    CameraParams, Filter, FilterSettings, FullState, InertialState, InitialUncertainty, MapPointMeasurement, NoiseParams,
};
use evio_core::sim::SimConfig;
use evio_core::voxel::frustum::CameraFrustum;
use evio_core::voxel::{MapPoint, VoxelConfig, VoxelMap};

/// `n` time-ordered events spread uniformly over a `w × h` sensor within one second.
pub fn random_events(w: u16, h: u16, n: usize, seed: u64) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let pol = if rng.random() { Polarity::On } else { Polarity::Off };
            Event::new(rng.random_range(0..w), rng.random_range(0..h), k as f64 / n as f64, pol)
        })
        .collect()
}

/// Stereo time surfaces of the default synthetic scene at 30 Hz.
pub fn simulated_frames(seconds: f64, eta: f64) -> Vec<StereoEventFrame> {
    let mut sim = SimConfig::default();
    sim.trajectory.duration = seconds;
    let noise = sim.resolve_noise().expect("valid noise");
    let mut events = sim.simulator(&noise).expect("valid simulator");
    let cams = sim.cameras();
    let mut maps = cams.clone().map(|c| LastEventMap::new(c.width, c.height));
    let frames = (seconds * 30.0).floor() as u64;
    (1..=frames)
        .map(|k| {
            let t = k as f64 / 30.0;
            for (m, s) in maps.iter_mut().zip(events.advance(t).expect("simulation")) {
                m.ingest(&s.events).expect("ordered events");
            }
            make_stereo_frame(&maps[0], &maps[1], t, eta, k).expect("renderable")
        })
        .collect()
}

/// Points scattered uniformly in a cube of half-width `extent`.
pub fn random_points(n: usize, extent: f64, seed: u64) -> Vec<MapPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = VoxelConfig::default().voxel_size;
    (0..n as u64)
        .map(|id| {
            let p = Vector3::from_fn(|_, _| rng.random_range(-extent..extent));
            MapPoint::new(id, p, 0, rng.random_range(2..12), size).expect("finite point")
        })
        .collect()
}

pub fn filled_map(points: &[MapPoint]) -> VoxelMap {
    let mut map = VoxelMap::new(VoxelConfig::default()).expect("default config");
    for p in points {
        map.insert_point(p.clone()).expect("unique ids");
    }
    map
}

/// A forward-looking frustum pair at the origin.
pub fn frusta() -> Vec<CameraFrustum> {
    let cam = CameraParams::pinhole(320.0, 640, 480);
    [-0.05, 0.05]
        .iter()
        .map(|x| CameraFrustum::new(&cam, Matrix3::identity(), Vector3::new(*x, 0.0, 0.0), 0.1, 20.0).expect("valid frustum"))
        .collect()
}

/// A filter with `clones` pose clones and `points` map points in the state,
/// plus one noisy current-frame observation pair per point.
pub fn filter_with_points(clones: usize, points: usize) -> (Filter, Vec<MapPointMeasurement>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cams = evio_core::sim::stereo_rig(320.0, 640, 480, 0.1);
    let state = FullState::new(0.0, InertialState::at_rest(Default::default(), Vector3::zeros()), cams);
    let mut f = Filter::new(
        state,
        NoiseParams::default(),
        FilterSettings::default(),
        &InitialUncertainty::default(),
    );
    for i in 0..clones {
        f.state.imu.p = Vector3::new(0.05 * i as f64, 0.02 * i as f64, 0.0);
        f.augment_clone(i as u64);
    }
    let last = clones - 1;
    let (rot_wc, center) = f.state.cams[0].pose_in(&f.state.clones[last].rot.to_rotation_matrix().into_inner(), &f.state.clones[last].p);
    let mut measurements = Vec::new();
    for j in 0..points {
        let ray = Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.5..0.5), 1.0);
        let p = center + rot_wc * ray * rng.random_range(2.0..5.0);
        let n = f.dim();
        f.append_point(1000 + j as u64, p, &(Matrix3::identity() * 0.01), &nalgebra::DMatrix::zeros(3, n))
            .expect("new point");
        let current = (0..2)
            .filter_map(|cam| {
                let z = predict(&f.state, last, cam, &p, 0.1).ok()?;
                let noise = nalgebra::Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
                Some(PixelObservation {
                    frame_id: last as u64,
                    cam,
                    pixel: z + noise,
                })
            })
            .collect();
        measurements.push(MapPointMeasurement {
            feature_id: 1000 + j as u64,
            position: p,
            covariance: Matrix3::identity() * 0.01,
            history: vec![],
            current,
        });
    }
    (f, measurements)
}
