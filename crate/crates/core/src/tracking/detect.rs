//! Minimum-eigenvalue corner detection with masking.

use nalgebra::Vector2;

use super::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub max_new: usize,
    /// Relative to the strongest score in the image.
    pub min_quality: f32,
    pub mask_radius: f64,
    /// Candidates closer than this to the border are ignored.
    pub border: usize,
}

/// Shi–Tomasi score: smaller eigenvalue of the 3×3-summed structure tensor of
/// Sobel gradients.
pub fn corner_scores(img: &Image) -> Image {
    let (gx, gy) = img.sobel();
    scores_from_gradients(&gx, &gy)
}

/// As [`corner_scores`], from precomputed gradients.
pub fn scores_from_gradients(gx: &Image, gy: &Image) -> Image {
    let (w, h) = (gx.width, gx.height);
    let mut out = Image::new(w, h);
    if w < 5 || h < 5 {
        return out;
    }
    // Horizontal 3-sums of the tensor entries for a ring of three rows.
    let hsum = |y: usize, out: &mut [[f32; 3]]| {
        let (u, v) = (&gx.data[y * w..(y + 1) * w], &gy.data[y * w..(y + 1) * w]);
        for x in 1..w - 1 {
            let (u0, u1, u2, v0, v1, v2) = (u[x - 1], u[x], u[x + 1], v[x - 1], v[x], v[x + 1]);
            out[x] = [
                u0 * u0 + u1 * u1 + u2 * u2,
                u0 * v0 + u1 * v1 + u2 * v2,
                v0 * v0 + v1 * v1 + v2 * v2,
            ];
        }
    };
    let mut ring = vec![vec![[0.0f32; 3]; w]; 3];
    hsum(1, &mut ring[1]);
    hsum(2, &mut ring[2]);
    for y in 2..h - 2 {
        ring.rotate_left(1);
        hsum(y + 1, &mut ring[2]);
        let row = &mut out.data[y * w..(y + 1) * w];
        for x in 2..w - 2 {
            let (r0, r1, r2) = (ring[0][x], ring[1][x], ring[2][x]);
            let (a, b, c) = (r0[0] + r1[0] + r2[0], r0[1] + r1[1] + r2[1], r0[2] + r1[2] + r2[2]);
            let half = 0.5 * (a - c);
            row[x] = 0.5 * (a + c) - (half * half + b * b).sqrt();
        }
    }
    out
}

/// Up to `max_new` corners, strongest first, at least `mask_radius` from every
/// existing point and from each other.
pub fn detect(img: &Image, existing: &[Vector2<f64>], params: &DetectParams) -> Vec<Vector2<f64>> {
    if params.max_new == 0 {
        return Vec::new();
    }
    let (gx, gy) = img.sobel();
    detect_with_gradients(&gx, &gy, existing, params)
}

/// As [`detect`], from precomputed Sobel gradients.
pub fn detect_with_gradients(gx: &Image, gy: &Image, existing: &[Vector2<f64>], params: &DetectParams) -> Vec<Vector2<f64>> {
    if params.max_new == 0 {
        return Vec::new();
    }
    let scores = scores_from_gradients(gx, gy);
    let best = scores.data.iter().cloned().fold(0.0f32, f32::max);
    if best <= 1e-12 {
        return Vec::new();
    }
    let threshold = params.min_quality * best;
    let (w, h) = (gx.width, gx.height);
    let b = params.border.max(2);
    let mut candidates = Vec::new();
    for y in b..h.saturating_sub(b) {
        for x in b..w.saturating_sub(b) {
            let s = scores.at(x, y);
            if s < threshold || s <= 0.0 {
                continue;
            }
            // Strict maximum over earlier neighbours, non-strict over later ones, so
            // plateaus keep exactly one pixel.
            let mut is_max = true;
            'nms: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let o = scores.at((x as isize + dx) as usize, (y as isize + dy) as usize);
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if o > s || (earlier && o == s) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                candidates.push((s, x, y));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));

    let r2 = params.mask_radius * params.mask_radius;
    let mut out: Vec<Vector2<f64>> = Vec::new();
    for (_, x, y) in candidates {
        let p = Vector2::new(x as f64, y as f64);
        if existing.iter().chain(out.iter()).any(|q| (q - p).norm_squared() < r2) {
            continue;
        }
        out.push(p);
        if out.len() >= params.max_new {
            break;
        }
    }
    out
}
