//! Multi-view triangulation: homogeneous DLT followed by Gauss–Newton on the
//! normalised reprojection error.

use nalgebra::{DMatrix, Matrix3, Matrix3x2, Vector2, Vector3};

/// One calibrated view of a point.
#[derive(Debug, Clone)]
pub struct View {
    /// Camera-to-global rotation.
    pub rot_wc: Matrix3<f64>,
    /// Camera centre in the global frame.
    pub center: Vector3<f64>,
    /// Undistorted normalised image coordinates.
    pub bearing: Vector2<f64>,
    /// Focal length used to express residuals in pixels.
    pub focal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulationSettings {
    pub min_baseline_deg: f64,
    pub min_depth: f64,
    pub max_rms_px: f64,
    pub pixel_sigma: f64,
    pub max_iterations: usize,
}

impl Default for TriangulationSettings {
    fn default() -> Self {
        Self {
            min_baseline_deg: 1.0,
            min_depth: 0.1,
            max_rms_px: 3.0,
            pixel_sigma: 1.0,
            max_iterations: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    pub point: Vector3<f64>,
    /// Largest angle between any two viewing rays (degrees).
    pub baseline_deg: f64,
    pub rms_px: f64,
    /// Inverse Gauss–Newton information at the solution.
    pub covariance: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriangulationFailure {
    TooFewViews,
    /// Viewing rays are too close to parallel.
    Degenerate {
        baseline_deg: f64,
    },
    BehindCamera,
    Diverged,
}

fn max_ray_angle(views: &[View], point: &Vector3<f64>) -> f64 {
    let rays: Vec<Vector3<f64>> = views.iter().map(|v| (point - v.center).normalize()).collect();
    max_pairwise_angle(&rays)
}

fn max_pairwise_angle(rays: &[Vector3<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            best = best.max(rays[i].dot(&rays[j]).clamp(-1.0, 1.0).acos());
        }
    }
    best.to_degrees()
}

fn linear_estimate(views: &[View]) -> Option<Vector3<f64>> {
    let mut a = DMatrix::zeros(2 * views.len(), 4);
    for (k, v) in views.iter().enumerate() {
        let r_cw = v.rot_wc.transpose();
        let t = -r_cw * v.center;
        for (row, coord) in [(2 * k, v.bearing.x), (2 * k + 1, v.bearing.y)] {
            let axis = row - 2 * k;
            for c in 0..3 {
                a[(row, c)] = coord * r_cw[(2, c)] - r_cw[(axis, c)];
            }
            a[(row, 3)] = coord * t[2] - t[axis];
        }
    }
    // Smallest right singular vector via the 4x4 normal matrix.
    let eig = (a.transpose() * &a).symmetric_eigen();
    let (imin, _) = eig.eigenvalues.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1))?;
    let hvec = eig.eigenvectors.column(imin);
    if hvec[3].abs() < 1e-12 {
        return None;
    }
    Some(Vector3::new(hvec[0], hvec[1], hvec[2]) / hvec[3])
}

pub fn triangulate(views: &[View], settings: &TriangulationSettings) -> Result<Triangulation, TriangulationFailure> {
    if views.len() < 2 {
        return Err(TriangulationFailure::TooFewViews);
    }
    let rays: Vec<Vector3<f64>> = views.iter().map(|v| (v.rot_wc * v.bearing.push(1.0)).normalize()).collect();
    let ray_deg = max_pairwise_angle(&rays);
    if ray_deg < settings.min_baseline_deg {
        return Err(TriangulationFailure::Degenerate { baseline_deg: ray_deg });
    }
    let mut x = linear_estimate(views).ok_or(TriangulationFailure::Degenerate { baseline_deg: ray_deg })?;

    let residuals = |x: &Vector3<f64>| -> Option<(f64, Matrix3<f64>, Vector3<f64>)> {
        let mut cost = 0.0;
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for v in views {
            let r_cw = v.rot_wc.transpose();
            let pc = r_cw * (x - v.center);
            if pc.z <= settings.min_depth {
                return None;
            }
            let iz = 1.0 / pc.z;
            let r = Vector2::new(pc.x * iz, pc.y * iz) - v.bearing;
            let d = Matrix3x2::new(iz, 0.0, 0.0, iz, -pc.x * iz * iz, -pc.y * iz * iz).transpose() * r_cw;
            let w = v.focal * v.focal;
            cost += w * r.norm_squared();
            jtj += w * d.transpose() * d;
            jtr += w * d.transpose() * r;
        }
        Some((cost, jtj, jtr))
    };

    let (mut cost, mut jtj, mut jtr) = residuals(&x).ok_or(TriangulationFailure::BehindCamera)?;
    let mut lambda = 1e-6;
    for _ in 0..settings.max_iterations {
        let damped = jtj + Matrix3::from_diagonal(&jtj.diagonal()) * lambda;
        let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
            return Err(TriangulationFailure::Diverged);
        };
        let candidate = x + step;
        match residuals(&candidate) {
            Some((c, jj, jr)) if c <= cost => {
                x = candidate;
                cost = c;
                jtj = jj;
                jtr = jr;
                lambda = (lambda * 0.1).max(1e-12);
                if step.norm() < 1e-12 * (1.0 + x.norm()) {
                    break;
                }
            }
            _ => {
                lambda *= 10.0;
                if lambda > 1e6 {
                    break;
                }
            }
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(TriangulationFailure::Diverged);
    }
    let baseline_deg = max_ray_angle(views, &x);
    if baseline_deg < settings.min_baseline_deg {
        return Err(TriangulationFailure::Degenerate { baseline_deg });
    }
    let rms_px = (cost / views.len() as f64).sqrt();
    if rms_px > settings.max_rms_px {
        return Err(TriangulationFailure::Diverged);
    }
    let covariance = jtj.try_inverse().ok_or(TriangulationFailure::Diverged)? * settings.pixel_sigma.powi(2);
    Ok(Triangulation {
        point: x,
        baseline_deg,
        rms_px,
        covariance,
    })
}
