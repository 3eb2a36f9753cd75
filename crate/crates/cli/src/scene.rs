//! Procedural scenes rendered by closed-form ray casting.

use anyhow::{bail, ensure, Result};
use rafe_core::degrade::ImageBuffer;
use rafe_core::field::Bounds;
use rafe_core::render::{dot, normalize, Camera};
use rafe_core::rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Box rotated by `yaw` radians about the vertical axis.
    Box {
        center: [f64; 3],
        half: [f64; 3],
        #[serde(default)]
        yaw: f64,
    },
    /// Square of side `2 half` through `center` with normal `normal`.
    Plane {
        center: [f64; 3],
        normal: [f64; 3],
        half: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Solid {
        color: [f64; 3],
    },
    /// 3D checkerboard with cells of side `1 / frequency`.
    Checker {
        a: [f64; 3],
        b: [f64; 3],
        frequency: f64,
    },
    Stripes {
        a: [f64; 3],
        b: [f64; 3],
        frequency: f64,
        axis: usize,
    },
    /// Value-noise octaves blending `a` into `b`.
    Noise {
        a: [f64; 3],
        b: [f64; 3],
        frequency: f64,
        octaves: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
    /// Strength of the Phong highlight; ignored unless the scene enables it.
    #[serde(default)]
    pub specular: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
    /// Direction towards the light.
    pub light: [f64; 3],
    /// Fraction of albedo visible without direct light.
    pub ambient: f64,
    pub specular: bool,
    pub shininess: f64,
    /// Supersampling grid per pixel side.
    pub samples_per_side: usize,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        SyntheticScene {
            primitives: Vec::new(),
            background: [0.0; 3],
            light: [0.4, 1.0, 0.6],
            ambient: 0.3,
            specular: false,
            shininess: 32.0,
            samples_per_side: 2,
        }
    }
}

struct Hit {
    t: f64,
    point: [f64; 3],
    normal: [f64; 3],
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + t * (b[c] - a[c]))
}

fn yaw_rotate(v: [f64; 3], yaw: f64) -> [f64; 3] {
    let (s, c) = yaw.sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

/// Two unit vectors spanning the plane orthogonal to `n`.
fn tangent_frame(n: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if n[1].abs() < 0.9 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] };
    let u = normalize(rafe_core::render::cross(helper, n));
    (u, rafe_core::render::cross(n, u))
}

const EPS: f64 = 1e-9;

impl Shape {
    fn intersect(&self, o: [f64; 3], d: [f64; 3]) -> Option<Hit> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = sub(o, center);
                let b = dot(oc, d);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = if -b - s > EPS { -b - s } else { -b + s };
                (t > EPS).then(|| {
                    let point = add(o, scale(d, t));
                    Hit {
                        t,
                        point,
                        normal: scale(sub(point, center), 1.0 / radius),
                    }
                })
            }
            Shape::Box { center, half, yaw } => {
                // Slab test in the box frame.
                let lo = yaw_rotate(sub(o, center), -yaw);
                let ld = yaw_rotate(d, -yaw);
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut axis0, mut axis1) = (0, 0);
                for i in 0..3 {
                    if ld[i].abs() < 1e-15 {
                        if lo[i].abs() > half[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half[i] - lo[i]) / ld[i];
                    let b = (half[i] - lo[i]) / ld[i];
                    let (a, b) = if a < b { (a, b) } else { (b, a) };
                    if a > t0 {
                        t0 = a;
                        axis0 = i;
                    }
                    if b < t1 {
                        t1 = b;
                        axis1 = i;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                let (t, axis) = if t0 > EPS { (t0, axis0) } else { (t1, axis1) };
                if t <= EPS {
                    return None;
                }
                let lp = add(lo, scale(ld, t));
                let mut n = [0.0; 3];
                n[axis] = lp[axis].signum();
                Some(Hit {
                    t,
                    point: add(o, scale(d, t)),
                    normal: yaw_rotate(n, yaw),
                })
            }
            Shape::Plane { center, normal, half } => {
                let n = normalize(normal);
                let denom = dot(d, n);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = dot(sub(center, o), n) / denom;
                if t <= EPS {
                    return None;
                }
                let p = add(o, scale(d, t));
                let (u, v) = tangent_frame(n);
                let r = sub(p, center);
                (dot(r, u).abs() <= half && dot(r, v).abs() <= half).then_some(Hit { t, point: p, normal: n })
            }
        }
    }

    /// Axis-aligned bounding box corners.
    pub fn aabb(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Shape::Sphere { center, radius } => (sub(center, [radius; 3]), add(center, [radius; 3])),
            Shape::Box { center, half, yaw } => {
                let (s, c) = yaw.sin_cos();
                let ex = [c.abs() * half[0] + s.abs() * half[2], half[1], s.abs() * half[0] + c.abs() * half[2]];
                (sub(center, ex), add(center, ex))
            }
            Shape::Plane { center, normal, half } => {
                let (u, v) = tangent_frame(normalize(normal));
                let ex = [0, 1, 2].map(|i| half * (u[i].abs() + v[i].abs()));
                (sub(center, ex), add(center, ex))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Shape::Sphere { radius, .. } => ensure!(radius > 0.0, "sphere radius must be positive"),
            Shape::Box { half, .. } => ensure!(half.iter().all(|&h| h > 0.0), "box extents must be positive"),
            Shape::Plane { normal, half, .. } => {
                ensure!(half > 0.0, "plane size must be positive");
                ensure!(dot(normal, normal) > 1e-12, "plane normal must be nonzero");
            }
        }
        Ok(())
    }
}

fn hash3(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let h = rng::derive(seed, &[x as u64, y as u64, z as u64]);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Trilinear value noise in `[0, 1]`.
fn value_noise(seed: u64, p: [f64; 3]) -> f64 {
    let f = p.map(f64::floor);
    let [i, j, k] = f.map(|v| v as i64);
    let w = [0, 1, 2].map(|a| {
        let t = p[a] - f[a];
        t * t * (3.0 - 2.0 * t)
    });
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let wx = if dx == 1 { w[0] } else { 1.0 - w[0] };
                let wy = if dy == 1 { w[1] } else { 1.0 - w[1] };
                let wz = if dz == 1 { w[2] } else { 1.0 - w[2] };
                acc += wx * wy * wz * hash3(seed, i + dx, j + dy, k + dz);
            }
        }
    }
    acc
}

impl Texture {
    /// Albedo at world point `p`; `seed` keys the noise lattice.
    pub fn albedo(&self, p: [f64; 3], seed: u64) -> [f64; 3] {
        match *self {
            Texture::Solid { color } => color,
            Texture::Checker { a, b, frequency } => {
                let s: i64 = p.iter().map(|&v| (v * frequency).floor() as i64).sum();
                if s.rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
            Texture::Stripes { a, b, frequency, axis } => {
                if (p[axis.min(2)] * frequency).floor() as i64 % 2 == 0 {
                    a
                } else {
                    b
                }
            }
            Texture::Noise { a, b, frequency, octaves } => {
                let (mut total, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, frequency);
                for o in 0..octaves.max(1) {
                    total += amp * value_noise(rng::derive(seed, &[o as u64]), scale(p, freq));
                    norm += amp;
                    amp *= 0.5;
                    freq *= 2.0;
                }
                mix(a, b, total / norm)
            }
        }
    }
}

impl SyntheticScene {
    /// Checks primitive parameters and that every primitive lies in `domain`.
    pub fn validate(&self, domain: &Bounds) -> Result<()> {
        if self.primitives.is_empty() {
            bail!("scene has no primitives");
        }
        ensure!(self.samples_per_side >= 1, "need at least one sample per pixel");
        for (i, p) in self.primitives.iter().enumerate() {
            p.shape.validate()?;
            let (lo, hi) = p.shape.aabb();
            ensure!(
                domain.contains(lo) && domain.contains(hi),
                "primitive {i} extends outside the field domain {:?}..{:?}",
                domain.min,
                domain.max
            );
        }
        Ok(())
    }

    fn closest(&self, o: [f64; 3], d: [f64; 3]) -> Option<(usize, Hit)> {
        let mut best: Option<(usize, Hit)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(h) = p.shape.intersect(o, d) {
                if best.as_ref().is_none_or(|(_, b)| h.t < b.t) {
                    best = Some((i, h));
                }
            }
        }
        best
    }

    /// Radiance along the unit ray `(o, d)`.
    pub fn shade(&self, o: [f64; 3], d: [f64; 3], seed: u64) -> [f64; 3] {
        let Some((i, hit)) = self.closest(o, d) else {
            return self.background;
        };
        let prim = &self.primitives[i];
        let albedo = prim.texture.albedo(hit.point, rng::derive(seed, &[i as u64]));
        // Two-sided surfaces face the viewer.
        let n = if dot(hit.normal, d) > 0.0 { scale(hit.normal, -1.0) } else { hit.normal };
        let l = normalize(self.light);
        let lit = self.closest(add(hit.point, scale(n, 1e-6)), l).is_none();
        let diffuse = if lit { dot(n, l).max(0.0) } else { 0.0 };
        let k = self.ambient + (1.0 - self.ambient) * diffuse;
        let mut c = scale(albedo, k);
        if self.specular && prim.specular > 0.0 && lit {
            let r = sub(scale(n, 2.0 * dot(n, l)), l);
            let s = prim.specular * dot(r, scale(d, -1.0)).max(0.0).powf(self.shininess);
            c = add(c, [s; 3]);
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }

    /// Supersampled render from `cam`.
    pub fn render(&self, cam: &Camera, seed: u64) -> ImageBuffer {
        let n = self.samples_per_side.max(1);
        let origin = cam.position();
        let rows: Vec<Vec<f64>> = rafe_core::par::map(cam.height, |y| {
            let mut row = Vec::with_capacity(cam.width * 3);
            for x in 0..cam.width {
                let mut acc = [0.0; 3];
                for sy in 0..n {
                    for sx in 0..n {
                        let ox = (sx as f64 + 0.5) / n as f64 - 0.5;
                        let oy = (sy as f64 + 0.5) / n as f64 - 0.5;
                        let d = normalize(cam.rotate(cam.pixel_direction(x as f64 + ox, y as f64 + oy)));
                        acc = add(acc, self.shade(origin, d, seed));
                    }
                }
                row.extend(acc.map(|v| v / (n * n) as f64));
            }
            row
        });
        ImageBuffer::new(cam.width, cam.height, rows.concat()).expect("extent matches camera")
    }

    /// Fraction of each pixel covered by some primitive, as a flat
    /// row-major vector.
    pub fn coverage(&self, cam: &Camera) -> Vec<f64> {
        let n = self.samples_per_side.max(1);
        let origin = cam.position();
        let mut out = Vec::with_capacity(cam.width * cam.height);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let mut hits = 0;
                for sy in 0..n {
                    for sx in 0..n {
                        let ox = (sx as f64 + 0.5) / n as f64 - 0.5;
                        let oy = (sy as f64 + 0.5) / n as f64 - 0.5;
                        let d = normalize(cam.rotate(cam.pixel_direction(x as f64 + ox, y as f64 + oy)));
                        hits += self.closest(origin, d).is_some() as usize;
                    }
                }
                out.push(hits as f64 / (n * n) as f64);
            }
        }
        out
    }
}

/// Named built-in scenes.
pub fn preset_scene(name: &str) -> Result<SyntheticScene> {
    let base = SyntheticScene::default();
    let prims = match name {
        "two_primitives" => vec![
            Primitive {
                shape: Shape::Sphere {
                    center: [-0.45, 0.1, 0.1],
                    radius: 0.6,
                },
                texture: Texture::Checker {
                    a: [0.9, 0.3, 0.2],
                    b: [0.95, 0.85, 0.3],
                    frequency: 4.0,
                },
                specular: 0.0,
            },
            Primitive {
                shape: Shape::Box {
                    center: [0.6, -0.2, -0.2],
                    half: [0.35, 0.5, 0.35],
                    yaw: 0.5,
                },
                texture: Texture::Noise {
                    a: [0.15, 0.3, 0.7],
                    b: [0.6, 0.85, 0.95],
                    frequency: 3.0,
                    octaves: 3,
                },
                specular: 0.0,
            },
        ],
        "tabletop" => vec![
            Primitive {
                shape: Shape::Plane {
                    center: [0.0, -0.7, 0.0],
                    normal: [0.0, 1.0, 0.0],
                    half: 1.0,
                },
                texture: Texture::Checker {
                    a: [0.85, 0.85, 0.8],
                    b: [0.25, 0.25, 0.3],
                    frequency: 3.0,
                },
                specular: 0.0,
            },
            Primitive {
                shape: Shape::Sphere {
                    center: [-0.35, -0.2, 0.2],
                    radius: 0.5,
                },
                texture: Texture::Stripes {
                    a: [0.9, 0.4, 0.1],
                    b: [0.2, 0.6, 0.3],
                    frequency: 8.0,
                    axis: 1,
                },
                specular: 0.6,
            },
            Primitive {
                shape: Shape::Box {
                    center: [0.5, -0.35, -0.3],
                    half: [0.3, 0.35, 0.3],
                    yaw: -0.4,
                },
                texture: Texture::Noise {
                    a: [0.1, 0.2, 0.6],
                    b: [0.8, 0.9, 1.0],
                    frequency: 4.0,
                    octaves: 4,
                },
                specular: 0.3,
            },
        ],
        "white_sphere" => {
            return Ok(SyntheticScene {
                primitives: vec![Primitive {
                    shape: Shape::Sphere {
                        center: [0.0; 3],
                        radius: 1.0,
                    },
                    texture: Texture::Solid { color: [1.0; 3] },
                    specular: 0.0,
                }],
                ambient: 1.0,
                ..base
            })
        }
        // Forward-facing: a textured wall with objects in front of it, seen
        // from cameras near the origin looking down -z.
        "facade" => {
            return Ok(SyntheticScene {
                primitives: vec![
                    Primitive {
                        shape: Shape::Plane {
                            center: [0.0, 0.0, -6.0],
                            normal: [0.0, 0.0, 1.0],
                            half: 6.0,
                        },
                        texture: Texture::Noise {
                            a: [0.3, 0.25, 0.2],
                            b: [0.9, 0.8, 0.6],
                            frequency: 1.5,
                            octaves: 4,
                        },
                        specular: 0.0,
                    },
                    Primitive {
                        shape: Shape::Sphere {
                            center: [-0.8, -0.3, -3.5],
                            radius: 0.7,
                        },
                        texture: Texture::Checker {
                            a: [0.9, 0.2, 0.2],
                            b: [0.9, 0.9, 0.9],
                            frequency: 3.0,
                        },
                        specular: 0.0,
                    },
                    Primitive {
                        shape: Shape::Box {
                            center: [1.0, 0.2, -4.5],
                            half: [0.6, 0.9, 0.5],
                            yaw: 0.3,
                        },
                        texture: Texture::Stripes {
                            a: [0.2, 0.4, 0.8],
                            b: [0.9, 0.9, 0.5],
                            frequency: 5.0,
                            axis: 1,
                        },
                        specular: 0.0,
                    },
                ],
                light: [0.3, 0.6, 1.0],
                ..base
            });
        }
        other => bail!("unknown scene preset `{other}`"),
    };
    Ok(SyntheticScene { primitives: prims, ..base })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(side: usize) -> Camera {
        Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 0.7, side, side, 2.0, 6.0).unwrap()
    }

    #[test]
    fn box_faces_have_axis_normals() {
        let b = Shape::Box {
            center: [0.0; 3],
            half: [0.5; 3],
            yaw: 0.0,
        };
        let h = b.intersect([0.0, 0.0, 4.0], [0.0, 0.0, -1.0]).unwrap();
        assert!((h.t - 3.5).abs() < 1e-12);
        assert_eq!(h.normal, [0.0, 0.0, 1.0]);
        assert!(b.intersect([2.0, 0.0, 4.0], [0.0, 0.0, -1.0]).is_none());
    }

    #[test]
    fn plane_is_finite() {
        let p = Shape::Plane {
            center: [0.0; 3],
            normal: [0.0, 0.0, 1.0],
            half: 1.0,
        };
        assert!(p.intersect([0.5, 0.5, 3.0], [0.0, 0.0, -1.0]).is_some());
        assert!(p.intersect([1.5, 0.0, 3.0], [0.0, 0.0, -1.0]).is_none());
    }

    #[test]
    fn empty_and_out_of_domain_scenes_fail() {
        let s = SyntheticScene::default();
        assert!(s.validate(&Bounds::object()).is_err());
        let mut big = preset_scene("white_sphere").unwrap();
        big.primitives[0].shape = Shape::Sphere {
            center: [0.0; 3],
            radius: 2.0,
        };
        assert!(big.validate(&Bounds::object()).is_err());
        for name in ["two_primitives", "tabletop", "white_sphere"] {
            preset_scene(name).unwrap().validate(&Bounds::object()).unwrap();
        }
    }

    #[test]
    fn lambertian_scene_ignores_specular_flag() {
        let mut s = preset_scene("two_primitives").unwrap();
        let a = s.render(&cam(16), 3);
        s.specular = true;
        assert_eq!(s.render(&cam(16), 3), a);
        let mut t = preset_scene("tabletop").unwrap();
        let b = t.render(&cam(16), 3);
        t.specular = true;
        assert_ne!(t.render(&cam(16), 3), b);
    }

    #[test]
    fn noise_texture_depends_on_seed() {
        let tex = Texture::Noise {
            a: [0.0; 3],
            b: [1.0; 3],
            frequency: 3.0,
            octaves: 2,
        };
        let p = [0.31, 0.77, -0.2];
        assert_eq!(tex.albedo(p, 1), tex.albedo(p, 1));
        assert_ne!(tex.albedo(p, 1), tex.albedo(p, 2));
        let v = tex.albedo(p, 1)[0];
        assert!((0.0..=1.0).contains(&v));
    }
}
