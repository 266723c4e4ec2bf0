//! Pinhole viewing frustum and an exact box intersection test.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::msckf::CameraParams;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrustum {
    /// Camera-to-global rotation.
    pub rot_wc: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub focal: Vector2<f64>,
    pub principal: Vector2<f64>,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

/// Half-space `n·x ≤ d`.
#[derive(Debug, Clone, Copy)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl CameraFrustum {
    pub fn new(camera: &CameraParams, rot_wc: Matrix3<f64>, center: Vector3<f64>, near: f64, far: f64) -> Result<Self> {
        if !(near > 0.0 && far > near && far.is_finite()) {
            return Err(Error::Config(format!("frustum needs 0 < near < far, got near={near} far={far}")));
        }
        Ok(Self {
            rot_wc,
            center,
            focal: camera.focal,
            principal: camera.principal,
            width: camera.width,
            height: camera.height,
            near,
            far,
        })
    }

    /// Unit-depth rays through the four image corners, in camera coordinates.
    fn corner_rays(&self) -> [Vector3<f64>; 4] {
        let (w, h) = (self.width as f64, self.height as f64);
        [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
            .map(|(u, v)| Vector3::new((u - self.principal.x) / self.focal.x, (v - self.principal.y) / self.focal.y, 1.0))
    }

    /// Near corners followed by far corners, in the global frame.
    pub fn vertices(&self) -> [Vector3<f64>; 8] {
        let rays = self.corner_rays();
        std::array::from_fn(|i| {
            let depth = if i < 4 { self.near } else { self.far };
            self.rot_wc * (rays[i % 4] * depth) + self.center
        })
    }

    /// The six bounding half-spaces in the global frame.
    pub fn planes(&self) -> [Plane; 6] {
        let rays = self.corner_rays();
        let axis = self.rot_wc.column(2).into_owned();
        let mut planes = [Plane {
            normal: Vector3::zeros(),
            offset: 0.0,
        }; 6];
        planes[0] = Plane {
            normal: -axis,
            offset: -axis.dot(&self.center) - self.near,
        };
        planes[1] = Plane {
            normal: axis,
            offset: axis.dot(&self.center) + self.far,
        };
        let inside = Vector3::new(
            (0.5 * self.width as f64 - self.principal.x) / self.focal.x,
            (0.5 * self.height as f64 - self.principal.y) / self.focal.y,
            1.0,
        );
        for k in 0..4 {
            let mut n = rays[k].cross(&rays[(k + 1) % 4]);
            if n.dot(&inside) > 0.0 {
                n = -n;
            }
            let n = self.rot_wc * n.normalize();
            planes[2 + k] = Plane {
                normal: n,
                offset: n.dot(&self.center),
            };
        }
        planes
    }

    pub fn contains_point(&self, p: &Vector3<f64>) -> bool {
        self.planes().iter().all(|pl| pl.normal.dot(p) <= pl.offset)
    }

    /// Separating-axis test between the frustum and an axis-aligned box. Both are
    /// convex polyhedra, so testing the face normals of each and the cross
    /// products of their edge directions is exact.
    pub fn intersects_aabb(&self, min: &Vector3<f64>, max: &Vector3<f64>) -> bool {
        let verts = self.vertices();
        let rays = self.corner_rays();
        let box_axes = [Vector3::x(), Vector3::y(), Vector3::z()];
        let mut edges: Vec<Vector3<f64>> = rays.iter().map(|r| self.rot_wc * r).collect();
        edges.push(self.rot_wc.column(0).into_owned());
        edges.push(self.rot_wc.column(1).into_owned());

        let mut axes: Vec<Vector3<f64>> = box_axes.to_vec();
        axes.extend(self.planes().iter().map(|p| p.normal));
        for b in &box_axes {
            for e in &edges {
                let c = b.cross(e);
                if c.norm_squared() > 1e-20 {
                    axes.push(c);
                }
            }
        }

        let half = (max - min) * 0.5;
        let mid = (max + min) * 0.5;
        axes.iter().all(|a| {
            let c = a.dot(&mid);
            let r = half.x * a.x.abs() + half.y * a.y.abs() + half.z * a.z.abs();
            let (lo, hi) = verts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                let d = a.dot(v);
                (lo.min(d), hi.max(d))
            });
            hi >= c - r && lo <= c + r
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frustum(rot_wc: Matrix3<f64>, center: Vector3<f64>) -> CameraFrustum {
        CameraFrustum::new(&CameraParams::pinhole(320.0, 640, 480), rot_wc, center, 0.2, 6.0).unwrap()
    }

    /// Feasibility of the 12 half-spaces by enumerating every vertex candidate.
    fn oracle(f: &CameraFrustum, min: &Vector3<f64>, max: &Vector3<f64>) -> bool {
        let mut planes: Vec<(Vector3<f64>, f64)> = f.planes().iter().map(|p| (p.normal, p.offset)).collect();
        for k in 0..3 {
            let e = Vector3::from_fn(|i, _| if i == k { 1.0 } else { 0.0 });
            planes.push((e, max[k]));
            planes.push((-e, -min[k]));
        }
        let n = planes.len();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let a = Matrix3::from_rows(&[planes[i].0.transpose(), planes[j].0.transpose(), planes[k].0.transpose()]);
                    let Some(inv) = a.try_inverse() else { continue };
                    let x = inv * Vector3::new(planes[i].1, planes[j].1, planes[k].1);
                    if planes.iter().all(|(nrm, d)| nrm.dot(&x) <= d + 1e-9) {
                        return true;
                    }
                }
            }
        }
        false
    }

    #[test]
    fn planes_contain_interior_and_vertices() {
        let f = frustum(Matrix3::identity(), Vector3::zeros());
        assert!(f.contains_point(&Vector3::new(0.0, 0.0, 1.0)));
        assert!(!f.contains_point(&Vector3::new(0.0, 0.0, -1.0)));
        assert!(!f.contains_point(&Vector3::new(0.0, 0.0, 7.0)));
        assert!(!f.contains_point(&Vector3::new(3.0, 0.0, 1.0)));
        for v in f.vertices() {
            for p in f.planes() {
                assert!(p.normal.dot(&v) <= p.offset + 1e-9);
            }
        }
    }

    #[test]
    fn box_behind_camera_is_culled() {
        let f = frustum(Matrix3::identity(), Vector3::zeros());
        assert!(!f.intersects_aabb(&Vector3::new(-0.5, -0.5, -1.5), &Vector3::new(0.5, 0.5, -0.5)));
        assert!(f.intersects_aabb(&Vector3::new(-0.5, -0.5, 1.0), &Vector3::new(0.5, 0.5, 1.5)));
    }

    #[test]
    fn matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut hits = 0;
        for _ in 0..2000 {
            let r = crate::msckf::so3::exp_mat(&Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)));
            let f = frustum(r, Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let min = Vector3::from_fn(|_, _| rng.random_range(-7.0..7.0));
            let size = rng.random_range(0.05..2.0);
            let max = min + Vector3::repeat(size);
            let expected = oracle(&f, &min, &max);
            hits += expected as usize;
            assert_eq!(f.intersects_aabb(&min, &max), expected, "min {min:?} size {size}");
        }
        assert!(hits > 100, "too few intersecting cases: {hits}");
    }

    #[test]
    fn rejects_bad_depth_range() {
        let cam = CameraParams::pinhole(320.0, 640, 480);
        assert!(CameraFrustum::new(&cam, Matrix3::identity(), Vector3::zeros(), 1.0, 0.5).is_err());
        assert!(CameraFrustum::new(&cam, Matrix3::identity(), Vector3::zeros(), 0.0, 5.0).is_err());
    }
}
