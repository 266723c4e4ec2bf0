//! Pyramidal inverse-compositional Lucas–Kanade for pure translation.

use nalgebra::Vector2;

use super::image::Pyramid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KltParams {
    pub half_width: usize,
    pub max_iters: usize,
    /// Convergence threshold on the update norm (px at the level being solved).
    pub eps: f32,
    /// Largest tolerated mean absolute intensity error after convergence.
    pub max_residual: f32,
}

impl Default for KltParams {
    fn default() -> Self {
        Self {
            half_width: 10,
            max_iters: 30,
            eps: 0.03,
            max_residual: 0.25,
        }
    }
}

/// Tracks `p` from `prev` into `cur`, starting from displacement `guess`.
/// Returns the position in `cur`, or `None` if alignment fails at full resolution.
pub fn track(prev: &Pyramid, cur: &Pyramid, p: Vector2<f64>, guess: Vector2<f64>, params: &KltParams) -> Option<Vector2<f64>> {
    let hw = params.half_width as isize;
    let n = (2 * hw + 1) as usize;
    let mut tmpl = vec![0.0f32; n * n];
    let mut gx = vec![0.0f32; n * n];
    let mut gy = vec![0.0f32; n * n];
    let mut warped = vec![0.0f32; n * n];
    let levels = prev.levels.len().min(cur.levels.len());
    let top = levels - 1;
    let mut d = (guess / (1u32 << top) as f64).map(|v| v as f32);

    for l in (0..levels).rev() {
        let scale = 1.0 / (1u32 << l) as f32;
        let (px, py) = (p.x as f32 * scale, p.y as f32 * scale);
        let pl = &prev.levels[l];
        let cl = &cur.levels[l].image;
        let fail_here = |ok: bool| if l == 0 { None } else { Some(ok) };

        if !pl.image.window_inside(px, py, hw as f32) {
            fail_here(false)?;
            d *= 2.0;
            continue;
        }
        pl.image.sample_window(px, py, hw as usize, &mut tmpl);
        pl.gx.sample_window(px, py, hw as usize, &mut gx);
        pl.gy.sample_window(px, py, hw as usize, &mut gy);
        let (mut h00, mut h01, mut h11) = (0.0f32, 0.0f32, 0.0f32);
        for (u, v) in gx.iter().zip(&gy) {
            h00 += u * u;
            h01 += u * v;
            h11 += v * v;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 1e-9 * (h00 + h11).powi(2).max(1e-12)) {
            fail_here(false)?;
            d *= 2.0;
            continue;
        }
        let (i00, i01, i11) = (h11 / det, -h01 / det, h00 / det);

        let mut converged = false;
        let mut mean_abs = f32::INFINITY;
        for _ in 0..params.max_iters {
            let (cx, cy) = (px + d.x, py + d.y);
            if !cl.window_inside(cx, cy, hw as f32) {
                break;
            }
            cl.sample_window(cx, cy, hw as usize, &mut warped);
            let (mut b0, mut b1, mut abs) = (0.0f32, 0.0f32, 0.0f32);
            for k in 0..n * n {
                let e = warped[k] - tmpl[k];
                b0 += gx[k] * e;
                b1 += gy[k] * e;
                abs += e.abs();
            }
            mean_abs = abs / (n * n) as f32;
            let step = Vector2::new(i00 * b0 + i01 * b1, i01 * b0 + i11 * b1);
            d -= step;
            if step.norm() < params.eps {
                converged = true;
                break;
            }
        }
        if l == 0 {
            let (cx, cy) = (px + d.x, py + d.y);
            if !converged || !cl.window_inside(cx, cy, hw as f32) || mean_abs > params.max_residual {
                return None;
            }
            return Some(Vector2::new(cx as f64, cy as f64));
        }
        d *= 2.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::image::Image;
    use proptest::prelude::*;

    /// Smooth blob texture with corners; shifted copies are exact.
    fn texture(x: f32, y: f32) -> f32 {
        let s = (0.11 * x).sin() * (0.07 * y).cos() + 0.5 * (0.05 * x + 0.09 * y).sin();
        0.5 + 0.3 * s
    }

    fn shifted(dx: f32, dy: f32) -> (Pyramid, Pyramid) {
        let a = Image::from_fn(160, 120, |x, y| texture(x as f32, y as f32));
        let b = Image::from_fn(160, 120, |x, y| texture(x as f32 - dx, y as f32 - dy));
        (Pyramid::new(a, 3), Pyramid::new(b, 3))
    }

    #[test]
    fn identity_flow() {
        let (a, _) = shifted(0.0, 0.0);
        let p = Vector2::new(80.0, 60.0);
        let q = track(&a, &a, p, Vector2::zeros(), &KltParams::default()).unwrap();
        assert!((q - p).norm() < 1e-6);
    }

    #[test]
    fn recovers_integer_shift() {
        let (a, b) = shifted(2.0, 0.0);
        let p = Vector2::new(80.0, 60.0);
        let q = track(&a, &b, p, Vector2::zeros(), &KltParams::default()).unwrap();
        assert!((q - p - Vector2::new(2.0, 0.0)).norm() < 0.1, "{q:?}");
    }

    #[test]
    fn patch_leaving_image_fails() {
        let (a, b) = shifted(8.0, 0.0);
        let p = Vector2::new(148.0, 60.0);
        assert!(track(&a, &b, p, Vector2::zeros(), &KltParams::default()).is_none());
    }

    #[test]
    fn flat_patch_fails() {
        let flat = Pyramid::new(Image::from_fn(64, 64, |_, _| 0.5), 3);
        assert!(track(&flat, &flat, Vector2::new(32.0, 32.0), Vector2::zeros(), &KltParams::default()).is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn shift_within_quarter_pixel(dx in -10i32..=10, dy in -10i32..=10, px in 40.0..120.0f64, py in 40.0..80.0f64) {
            let (a, b) = shifted(dx as f32, dy as f32);
            let p = Vector2::new(px, py);
            let q = track(&a, &b, p, Vector2::zeros(), &KltParams::default());
            prop_assert!(q.is_some());
            let q = q.unwrap();
            prop_assert!((q - p - Vector2::new(dx as f64, dy as f64)).norm() < 0.25, "{:?}", q - p);
        }
    }
}
