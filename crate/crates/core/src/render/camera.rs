use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pinhole camera looking along its local −z axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Camera-to-world transform, row-major.
    pub c2w: [[f64; 4]; 4],
    /// Horizontal field of view in radians.
    pub fov_x: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

/// Square pixel window `[px, px + side) x [py, py + side)` of one camera.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub px: usize,
    pub py: usize,
    pub side: usize,
    pub camera: usize,
}

/// Rays plus, once sampled, their sorted sample positions.
#[derive(Clone, Debug, Default)]
pub struct RayBundle {
    pub origins: Vec<[f64; 3]>,
    /// Marching directions; unit length in world space, not after NDC.
    pub directions: Vec<[f64; 3]>,
    /// Unit world-space directions handed to the decoder.
    pub view_dirs: Vec<[f64; 3]>,
    pub near: f64,
    pub far: f64,
    /// `per_ray` sample positions per ray, row-major.
    pub t: Vec<f64>,
    pub per_ray: usize,
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl Camera {
    pub fn new(
        c2w: [[f64; 4]; 4],
        fov_x: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Camera {
            c2w,
            fov_x,
            width,
            height,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fov_x: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let back = normalize([eye[0] - target[0], eye[1] - target[1], eye[2] - target[2]]);
        let right = cross(up, back);
        if norm(right) < 1e-12 {
            return Err(Error::invalid("look_at: up vector parallel to view axis"));
        }
        let right = normalize(right);
        let true_up = cross(back, right);
        let mut c2w = [[0.0; 4]; 4];
        for i in 0..3 {
            c2w[i] = [right[i], true_up[i], back[i], eye[i]];
        }
        c2w[3][3] = 1.0;
        Camera::new(c2w, fov_x, width, height, near, far)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera extent must be at least 1x1"));
        }
        if !(self.near < self.far) || !self.near.is_finite() || !self.far.is_finite() {
            return Err(Error::invalid(format!(
                "camera needs near < far, got {} / {}",
                self.near, self.far
            )));
        }
        if !(self.fov_x > 0.0 && self.fov_x < std::f64::consts::PI) {
            return Err(Error::invalid("field of view must lie in (0, pi)"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| self.c2w[k][i] * self.c2w[k][j]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                if (d - e).abs() > 1e-6 {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov_x).tan()
    }

    pub fn position(&self) -> [f64; 3] {
        [self.c2w[0][3], self.c2w[1][3], self.c2w[2][3]]
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.c2w;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// World vector expressed in camera axes.
    pub fn rotate_inv(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.c2w;
        [
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let o = self.position();
        self.rotate_inv([p[0] - o[0], p[1] - o[1], p[2] - o[2]])
    }

    /// Camera-space direction through the center of pixel `(i, j)`, before
    /// normalization (z = −1).
    pub fn pixel_direction(&self, i: f64, j: f64) -> [f64; 3] {
        let f = self.focal();
        [
            (i + 0.5 - 0.5 * self.width as f64) / f,
            -(j + 0.5 - 0.5 * self.height as f64) / f,
            -1.0,
        ]
    }

    /// Unit world ray through the center of pixel `(i, j)`.
    pub fn ray(&self, i: usize, j: usize) -> ([f64; 3], [f64; 3]) {
        let d = self.rotate(self.pixel_direction(i as f64, j as f64));
        (self.position(), normalize(d))
    }
}

impl PatchSpec {
    pub fn full(cam: &Camera, camera: usize) -> Option<PatchSpec> {
        (cam.width == cam.height).then_some(PatchSpec {
            px: 0,
            py: 0,
            side: cam.width,
            camera,
        })
    }

    pub fn check(&self, cam: &Camera) -> Result<()> {
        if self.side == 0 || self.px + self.side > cam.width || self.py + self.side > cam.height {
            return Err(Error::PatchOutOfBounds {
                px: self.px,
                py: self.py,
                side: self.side,
                width: cam.width,
                height: cam.height,
            });
        }
        Ok(())
    }

    /// Pixel coordinates in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.side).flat_map(move |r| (0..self.side).map(move |c| (self.px + c, self.py + r)))
    }
}

/// One ray per listed pixel `(column, row)`.
pub fn rays_for_pixels(cam: &Camera, pixels: impl IntoIterator<Item = (usize, usize)>) -> RayBundle {
    let mut b = RayBundle {
        near: cam.near,
        far: cam.far,
        ..RayBundle::default()
    };
    for (i, j) in pixels {
        let (o, d) = cam.ray(i, j);
        b.origins.push(o);
        b.directions.push(d);
        b.view_dirs.push(d);
    }
    b
}

/// `S^2` rays through the pixel centers of `patch`, row-major.
pub fn generate_rays(cam: &Camera, patch: &PatchSpec) -> Result<RayBundle> {
    patch.check(cam)?;
    Ok(rays_for_pixels(cam, patch.pixels()))
}

/// Projective NDC map of a camera-space point (z < 0).
pub fn ndc_project(cam: &Camera, p: [f64; 3]) -> [f64; 3] {
    let f = cam.focal();
    let (hw, hh) = (0.5 * cam.width as f64, 0.5 * cam.height as f64);
    [
        -f / hw * p[0] / p[2],
        -f / hh * p[1] / p[2],
        1.0 + 2.0 * cam.near / p[2],
    ]
}

/// Inverse of [`ndc_project`].
pub fn ndc_unproject(cam: &Camera, q: [f64; 3]) -> [f64; 3] {
    let f = cam.focal();
    let (hw, hh) = (0.5 * cam.width as f64, 0.5 * cam.height as f64);
    let z = 2.0 * cam.near / (q[2] - 1.0);
    [-q[0] * z * hw / f, -q[1] * z * hh / f, z]
}

/// Moves rays into the NDC frame of the reference camera `cam`: origins are
/// shifted onto its near plane and the marching parameter spans `[0, 1]`.
pub fn to_ndc(rays: &RayBundle, cam: &Camera) -> Result<RayBundle> {
    let f = cam.focal();
    let (hw, hh) = (0.5 * cam.width as f64, 0.5 * cam.height as f64);
    let n = cam.near;
    let mut out = RayBundle {
        near: 0.0,
        far: 1.0,
        view_dirs: rays.view_dirs.clone(),
        ..RayBundle::default()
    };
    for (&o, &d) in rays.origins.iter().zip(&rays.directions) {
        let o = cam.world_to_camera(o);
        let d = cam.rotate_inv(d);
        if d[2] > -1e-12 {
            return Err(Error::invalid(
                "NDC needs rays heading into the scene (negative camera z)",
            ));
        }
        let s = -(n + o[2]) / d[2];
        let o = [o[0] + s * d[0], o[1] + s * d[1], o[2] + s * d[2]];
        out.origins.push([
            -f / hw * o[0] / o[2],
            -f / hh * o[1] / o[2],
            1.0 + 2.0 * n / o[2],
        ]);
        out.directions.push([
            -f / hw * (d[0] / d[2] - o[0] / o[2]),
            -f / hh * (d[1] / d[2] - o[1] / o[2]),
            -2.0 * n / o[2],
        ]);
    }
    Ok(out)
}

impl RayBundle {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Attaches `per_ray` samples per ray; each row must strictly increase.
    pub fn with_samples(mut self, t: Vec<f64>, per_ray: usize) -> Result<Self> {
        if per_ray == 0 || t.len() != per_ray * self.len() {
            return Err(Error::invalid(format!(
                "expected {} x {} sample positions, got {}",
                self.len(),
                per_ray,
                t.len()
            )));
        }
        for row in t.chunks(per_ray) {
            if row.iter().any(|v| !v.is_finite()) || row.windows(2).any(|p| p[1] <= p[0]) {
                return Err(Error::invalid("sample positions must strictly increase"));
            }
        }
        self.t = t;
        self.per_ray = per_ray;
        Ok(self)
    }

    /// `δ_i = t_{i+1} − t_i` scaled by the direction length; the last delta
    /// of a ray is `(far − near) / per_ray`.
    pub fn deltas(&self) -> Vec<f64> {
        let cap = (self.far - self.near) / self.per_ray as f64;
        let mut out = Vec::with_capacity(self.t.len());
        for (row, d) in self.t.chunks(self.per_ray).zip(&self.directions) {
            let len = norm(*d);
            for i in 0..row.len() {
                let dt = if i + 1 < row.len() { row[i + 1] - row[i] } else { cap };
                out.push(dt * len);
            }
        }
        out
    }

    /// Sample points `o + t d`, one per sample.
    pub fn points(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.t.len());
        for (r, row) in self.t.chunks(self.per_ray).enumerate() {
            let (o, d) = (self.origins[r], self.directions[r]);
            for &t in row {
                out.push([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]);
            }
        }
        out
    }

    /// View direction of every sample.
    pub fn sample_dirs(&self) -> Vec<[f64; 3]> {
        self.view_dirs
            .iter()
            .flat_map(|&d| std::iter::repeat_n(d, self.per_ray))
            .collect()
    }
}
