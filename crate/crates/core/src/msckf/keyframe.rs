//! Parallax-based keyframe selection.

use std::collections::HashMap;

use nalgebra::Vector2;

use crate::FeatureId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyframeDecision {
    Keyframe,
    Discard,
}

/// Mean pixel displacement of features present in both frames, or `None` if
/// nothing is co-tracked.
pub fn mean_parallax(reference: &HashMap<FeatureId, Vector2<f64>>, current: &[(FeatureId, Vector2<f64>)]) -> Option<f64> {
    let (sum, n) = current
        .iter()
        .filter_map(|(id, px)| reference.get(id).map(|r| (px - r).norm()))
        .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Keyframe when parallax exceeds the threshold or cannot be computed.
pub fn decide(parallax: Option<f64>, threshold_px: f64) -> KeyframeDecision {
    match parallax {
        Some(p) if p <= threshold_px => KeyframeDecision::Discard,
        _ => KeyframeDecision::Keyframe,
    }
}
