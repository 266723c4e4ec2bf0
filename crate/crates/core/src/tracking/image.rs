//! Single-channel float images and Gaussian pyramids.

use crate::event::TimeSurface;

/// Surface values below this are treated as zero.
pub const SURFACE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Converts to `f32`, flushing values below [`SURFACE_FLOOR`] to zero so
    /// that long-decayed pixels do not turn into subnormals downstream.
    pub fn from_surface(s: &TimeSurface) -> Self {
        Self {
            width: s.width as usize,
            height: s.height as usize,
            data: s
                .values
                .iter()
                .map(|&v| if v.abs() < SURFACE_FLOOR { 0.0 } else { v as f32 })
                .collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    fn at_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.at(x, y)
    }

    /// Bilinear interpolation; the caller keeps `(x, y)` inside `[0, w−1] × [0, h−1]`.
    #[inline]
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let x0 = (x.floor() as usize).min(self.width - 2);
        let y0 = (y.floor() as usize).min(self.height - 2);
        let (ax, ay) = (x - x0 as f32, y - y0 as f32);
        let i = y0 * self.width + x0;
        let (a, b, c, d) = (
            self.data[i],
            self.data[i + 1],
            self.data[i + self.width],
            self.data[i + self.width + 1],
        );
        (a * (1.0 - ax) + b * ax) * (1.0 - ay) + (c * (1.0 - ax) + d * ax) * ay
    }

    /// Whether a square window of half-width `hw` around `(x, y)` can be sampled.
    #[inline]
    pub fn window_inside(&self, x: f32, y: f32, hw: f32) -> bool {
        x - hw >= 0.0 && y - hw >= 0.0 && x + hw <= (self.width - 1) as f32 && y + hw <= (self.height - 1) as f32
    }

    /// Bilinearly samples the `(2·hw+1)²` window centred on `(x, y)` into
    /// `out`, row-major. The window must satisfy [`Image::window_inside`].
    pub fn sample_window(&self, x: f32, y: f32, hw: usize, out: &mut [f32]) {
        let n = 2 * hw + 1;
        debug_assert!(out.len() >= n * n && self.window_inside(x, y, hw as f32));
        let split = |v: f32, size: usize| {
            let f = v.floor();
            let i = f as usize;
            // On the far edge the right neighbour does not exist; use weight 1 on it instead.
            if i + hw + 1 > size - 1 {
                (i - 1, v - f + 1.0)
            } else {
                (i, v - f)
            }
        };
        let (x0, ax) = split(x, self.width);
        let (y0, ay) = split(y, self.height);
        let (w00, w01, w10, w11) = ((1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay);
        let w = self.width;
        for r in 0..n {
            let row = (y0 + r - hw) * w + x0 - hw;
            let a = &self.data[row..row + n + 1];
            let c = &self.data[row + w..row + w + n + 1];
            for (k, o) in out[r * n..(r + 1) * n].iter_mut().enumerate() {
                *o = w00 * a[k] + w01 * a[k + 1] + w10 * c[k] + w11 * c[k + 1];
            }
        }
    }

    /// 5-tap binomial blur followed by 2× decimation.
    pub fn half(&self) -> Image {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.width, self.height);
        let (w2, h2) = (w.div_ceil(2), h.div_ceil(2));
        // Horizontal pass only at the even columns that survive decimation.
        let mut tmp = Image::new(w2, h);
        for y in 0..h {
            let row = &self.data[y * w..(y + 1) * w];
            for x in 0..w2 {
                let xs = 2 * x;
                tmp.data[y * w2 + x] = if xs >= 2 && xs + 2 < w {
                    K[0] * row[xs - 2] + K[1] * row[xs - 1] + K[2] * row[xs] + K[3] * row[xs + 1] + K[4] * row[xs + 2]
                } else {
                    K.iter()
                        .enumerate()
                        .map(|(k, c)| c * self.at_clamped(xs as isize + k as isize - 2, y as isize))
                        .sum()
                };
            }
        }
        let mut out = Image::new(w2, h2);
        for y in 0..h2 {
            let ys = 2 * y as isize;
            let rows: [usize; 5] = std::array::from_fn(|k| (ys + k as isize - 2).clamp(0, h as isize - 1) as usize);
            for x in 0..w2 {
                out.data[y * w2 + x] = K.iter().zip(rows).map(|(c, r)| c * tmp.data[r * w2 + x]).sum();
            }
        }
        out
    }

    /// Sobel derivatives (scaled to per-pixel units); zero on the border.
    pub fn sobel(&self) -> (Image, Image) {
        let (w, h) = (self.width, self.height);
        let mut gx = Image::new(w, h);
        let mut gy = Image::new(w, h);
        for y in 1..h.saturating_sub(1) {
            let (up, mid, down) = (
                &self.data[(y - 1) * w..y * w],
                &self.data[y * w..(y + 1) * w],
                &self.data[(y + 1) * w..(y + 2) * w],
            );
            for x in 1..w - 1 {
                let sx = (up[x + 1] + 2.0 * mid[x + 1] + down[x + 1]) - (up[x - 1] + 2.0 * mid[x - 1] + down[x - 1]);
                let sy = (down[x - 1] + 2.0 * down[x] + down[x + 1]) - (up[x - 1] + 2.0 * up[x] + up[x + 1]);
                gx.data[y * w + x] = sx / 8.0;
                gy.data[y * w + x] = sy / 8.0;
            }
        }
        (gx, gy)
    }
}

#[derive(Debug, Clone)]
pub struct Level {
    pub image: Image,
    pub gx: Image,
    pub gy: Image,
}

/// Image pyramid with gradients at every level; level 0 is full resolution.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<Level>,
}

impl Pyramid {
    pub fn new(base: Image, levels: usize) -> Self {
        let mut out = Vec::with_capacity(levels);
        let mut img = base;
        for l in 0..levels.max(1) {
            let next = (l + 1 < levels && img.width >= 8 && img.height >= 8).then(|| img.half());
            let (gx, gy) = img.sobel();
            out.push(Level { image: img, gx, gy });
            match next {
                Some(n) => img = n,
                None => break,
            }
        }
        Self { levels: out }
    }

    pub fn base(&self) -> &Image {
        &self.levels[0].image
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_reproduces_linear_ramp() {
        let img = Image::from_fn(10, 8, |x, y| 2.0 * x as f32 + 3.0 * y as f32);
        assert!((img.sample(3.25, 4.5) - (6.5 + 13.5)).abs() < 1e-5);
        assert!((img.sample(9.0, 7.0) - 39.0).abs() < 1e-5);
    }

    #[test]
    fn sobel_of_ramp_is_constant() {
        let img = Image::from_fn(10, 8, |x, y| 2.0 * x as f32 - 0.5 * y as f32);
        let (gx, gy) = img.sobel();
        assert!((gx.at(4, 4) - 2.0).abs() < 1e-6);
        assert!((gy.at(4, 4) + 0.5).abs() < 1e-6);
    }

    #[test]
    fn pyramid_halves_dimensions() {
        let p = Pyramid::new(Image::new(640, 480), 3);
        let dims: Vec<_> = p.levels.iter().map(|l| (l.image.width, l.image.height)).collect();
        assert_eq!(dims, vec![(640, 480), (320, 240), (160, 120)]);
    }

    #[test]
    fn window_matches_pointwise_sampling() {
        let img = Image::from_fn(20, 16, |x, y| ((x * 7 + y * 13) % 11) as f32);
        let mut out = vec![0.0; 25];
        for &(x, y) in &[(5.3f32, 6.7f32), (17.0, 13.0), (2.0, 2.0), (16.5, 9.25)] {
            img.sample_window(x, y, 2, &mut out);
            for dy in 0..5 {
                for dx in 0..5 {
                    let expect = img.sample(x + dx as f32 - 2.0, y + dy as f32 - 2.0);
                    assert!((out[dy * 5 + dx] - expect).abs() < 1e-4, "{x} {y} {dx} {dy}");
                }
            }
        }
    }

    #[test]
    fn half_matches_direct_blur() {
        let img = Image::from_fn(13, 9, |x, y| ((x * 5 + y * 3) % 7) as f32);
        let k = [1.0f32, 4.0, 6.0, 4.0, 1.0];
        let h = img.half();
        assert_eq!((h.width, h.height), (7, 5));
        for y in 0..5 {
            for x in 0..7 {
                let mut s = 0.0;
                for (i, a) in k.iter().enumerate() {
                    for (j, b) in k.iter().enumerate() {
                        s += a * b * img.at_clamped(2 * x as isize + j as isize - 2, 2 * y as isize + i as isize - 2);
                    }
                }
                assert!((h.at(x, y) - s / 256.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn blur_preserves_constant() {
        let img = Image::from_fn(16, 16, |_, _| 0.7);
        assert!(img.half().data.iter().all(|v| (v - 0.7).abs() < 1e-6));
    }
}
