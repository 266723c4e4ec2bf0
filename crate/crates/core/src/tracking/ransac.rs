//! Fundamental-matrix RANSAC for rejecting inconsistent temporal matches.

use nalgebra::{Matrix3, SMatrix, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Normalising similarity: centroid to origin, mean distance √2.
fn normalizer(pts: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vector2<f64>>() / n;
    let d = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if d > 1e-12 { std::f64::consts::SQRT_2 / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Normalised eight-point estimate (rank two enforced), `x2ᵀ F x1 = 0`.
pub fn eight_point(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    if a.len() < 8 || a.len() != b.len() {
        return None;
    }
    let (ta, tb) = (normalizer(a), normalizer(b));
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (p, q) in a.iter().zip(b) {
        let x = ta * Vector3::new(p.x, p.y, 1.0);
        let y = tb * Vector3::new(q.x, q.y, 1.0);
        let row = SMatrix::<f64, 1, 9>::from_row_slice(&[y.x * x.x, y.x * x.y, y.x, y.y * x.x, y.y * x.y, y.y, x.x, x.y, 1.0]);
        ata += row.transpose() * row;
    }
    let eig = ata.symmetric_eigen();
    let (imin, _) = eig.eigenvalues.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1))?;
    let f = eig.eigenvectors.column(imin);
    let f = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    let svd = f.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut s = svd.singular_values;
    s[2] = 0.0;
    let f = u * Matrix3::from_diagonal(&s) * vt;
    let f = tb.transpose() * f * ta;
    let norm = f.norm();
    (norm > 0.0).then(|| f / norm)
}

/// First-order geometric (Sampson) error in px².
pub fn sampson(f: &Matrix3<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let x = Vector3::new(a.x, a.y, 1.0);
    let y = Vector3::new(b.x, b.y, 1.0);
    let fx = f * x;
    let ftx = f.transpose() * y;
    let e = y.dot(&fx);
    let den = fx.x * fx.x + fx.y * fx.y + ftx.x * ftx.x + ftx.y * ftx.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    e * e / den
}

/// Inlier mask of the best model found. With fewer than `min_matches`
/// correspondences every match is kept.
pub fn ransac_inliers(a: &[Vector2<f64>], b: &[Vector2<f64>], threshold_px: f64, iterations: usize, seed: u64) -> Vec<bool> {
    let n = a.len();
    if n < 12 {
        return vec![true; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t2 = threshold_px * threshold_px;
    let mut best: Vec<bool> = vec![true; n];
    let mut best_count = 0;
    for _ in 0..iterations {
        let idx = sample(&mut rng, n, 8);
        let sa: Vec<_> = idx.iter().map(|i| a[i]).collect();
        let sb: Vec<_> = idx.iter().map(|i| b[i]).collect();
        let Some(f) = eight_point(&sa, &sb) else { continue };
        let mask: Vec<bool> = a.iter().zip(b).map(|(p, q)| sampson(&f, p, q) < t2).collect();
        let count = mask.iter().filter(|m| **m).count();
        if count > best_count {
            best_count = count;
            best = mask;
        }
    }
    if best_count < 8 {
        return vec![true; n];
    }
    // Refit on all inliers once.
    let ia: Vec<_> = (0..n).filter(|&i| best[i]).map(|i| a[i]).collect();
    let ib: Vec<_> = (0..n).filter(|&i| best[i]).map(|i| b[i]).collect();
    if let Some(f) = eight_point(&ia, &ib) {
        let refit: Vec<bool> = a.iter().zip(b).map(|(p, q)| sampson(&f, p, q) < t2).collect();
        if refit.iter().filter(|m| **m).count() >= best_count {
            return refit;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn project(r: &Matrix3<f64>, t: &Vector3<f64>, p: &Vector3<f64>) -> Vector2<f64> {
        let c = r * p + t;
        Vector2::new(320.0 * c.x / c.z + 320.0, 320.0 * c.y / c.z + 240.0)
    }

    #[test]
    fn rejects_gross_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = crate::msckf::so3::exp_mat(&Vector3::new(0.01, 0.03, -0.02));
        let t = Vector3::new(0.1, 0.02, 0.01);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..60 {
            let p = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(2.0..6.0));
            a.push(project(&Matrix3::identity(), &Vector3::zeros(), &p));
            b.push(project(&r, &t, &p));
        }
        for q in &mut b[..6] {
            *q += Vector2::new(15.0, -12.0);
        }
        let mask = ransac_inliers(&a, &b, 1.0, 200, 1);
        assert!(mask[..6].iter().all(|m| !m));
        assert!(mask[6..].iter().all(|m| *m));
    }

    #[test]
    fn few_matches_are_kept() {
        let a = vec![Vector2::new(1.0, 2.0); 5];
        assert_eq!(ransac_inliers(&a, &a, 1.0, 10, 0), vec![true; 5]);
    }
}
