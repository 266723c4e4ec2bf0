//! Wireframe scenes made of straight intensity edges.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Straight step edge; `contrast` is the signed log-intensity jump seen when the
/// edge sweeps over a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub segments: Vec<Segment>,
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    /// Half side lengths of the room box centred at the origin (m).
    pub half_extent: [f64; 3],
    pub interior_segments: usize,
    /// Interior segments keep at least this horizontal distance from the z axis (m).
    pub clearance: f64,
    pub min_length: f64,
    pub max_length: f64,
    /// Contrast magnitude range of interior edges.
    pub contrast: [f64; 2],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            half_extent: [3.0, 3.0, 1.5],
            interior_segments: 30,
            clearance: 1.8,
            min_length: 0.4,
            max_length: 1.2,
            contrast: [0.3, 0.6],
        }
    }
}

impl Scene {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        for (i, s) in segments.iter().enumerate() {
            if !s.a.iter().chain(s.b.iter()).all(|v| v.is_finite()) || !s.contrast.is_finite() {
                return Err(Error::NonFinite);
            }
            if (s.b - s.a).norm() < 1e-9 || s.contrast == 0.0 {
                return Err(Error::Config(format!("segment {i} has zero length or contrast")));
            }
            min = min.inf(&s.a.inf(&s.b));
            max = max.sup(&s.a.sup(&s.b));
        }
        Ok(Self { segments, min, max })
    }

    /// The twelve box edges plus random interior segments.
    pub fn room(spec: &SceneSpec, seed: u64) -> Result<Self> {
        let h = Vector3::from(spec.half_extent);
        if !h.iter().all(|v| *v > 0.0) || spec.clearance < 0.0 || !(spec.min_length > 0.0 && spec.max_length >= spec.min_length) {
            return Err(Error::Config(format!("invalid scene spec {spec:?}")));
        }
        if spec.clearance >= h.x.min(h.y) {
            return Err(Error::Config("scene clearance leaves no room for segments".into()));
        }
        let corner = |i: usize| {
            Vector3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        };
        let mut segments = Vec::new();
        for i in 0..8 {
            for bit in [1, 2, 4] {
                if i & bit == 0 {
                    segments.push(Segment {
                        a: corner(i),
                        b: corner(i | bit),
                        contrast: if segments.len() % 2 == 0 { 0.5 } else { -0.5 },
                    });
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let inner = h * 0.95;
        while segments.len() < 12 + spec.interior_segments {
            let mid = Vector3::new(
                rng.random_range(-inner.x..inner.x),
                rng.random_range(-inner.y..inner.y),
                rng.random_range(-inner.z..inner.z),
            );
            if mid.xy().norm() < spec.clearance {
                continue;
            }
            let dir = loop {
                let d = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n = d.norm();
                if n > 0.1 && n <= 1.0 {
                    break d / n;
                }
            };
            let len = rng.random_range(spec.min_length..=spec.max_length);
            let (a, b) = (mid - dir * (0.5 * len), mid + dir * (0.5 * len));
            let inside = |p: &Vector3<f64>| (0..3).all(|k| p[k].abs() <= inner[k]) && p.xy().norm() >= spec.clearance;
            if !inside(&a) || !inside(&b) {
                continue;
            }
            let mag = rng.random_range(spec.contrast[0]..=spec.contrast[1]);
            let contrast = if rng.random::<bool>() { mag } else { -mag };
            segments.push(Segment { a, b, contrast });
        }
        Self::new(segments)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_room_layout() {
        let spec = SceneSpec::default();
        let s = Scene::room(&spec, 7).unwrap();
        assert_eq!(s.segments.len(), 42);
        assert!((s.max - Vector3::new(3.0, 3.0, 1.5)).norm() < 1e-12);
        for seg in &s.segments[..12] {
            let len = (seg.b - seg.a).norm();
            assert!([6.0, 3.0].iter().any(|l| (len - l).abs() < 1e-12));
        }
        for seg in &s.segments[12..] {
            let len = (seg.b - seg.a).norm();
            assert!(len >= spec.min_length - 1e-12 && len <= spec.max_length + 1e-12);
            assert!(seg.a.xy().norm() >= spec.clearance && seg.b.xy().norm() >= spec.clearance);
        }
    }

    #[test]
    fn seeds_are_deterministic() {
        let spec = SceneSpec::default();
        assert_eq!(Scene::room(&spec, 3).unwrap(), Scene::room(&spec, 3).unwrap());
        assert_ne!(Scene::room(&spec, 3).unwrap(), Scene::room(&spec, 4).unwrap());
    }

    #[test]
    fn zero_length_segment_is_rejected() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert!(Scene::new(vec![Segment { a: p, b: p, contrast: 0.5 }]).is_err());
    }
}
