use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::numerics::{DiffTensor, Tap, Tensor, TriGather};
use crate::{rng, Error, Result};

/// Axis-aligned domain box in world (or NDC) units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn cube(half: f64) -> Self {
        Bounds {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    /// Object scenes live in `[-1.5, 1.5]^3`.
    pub fn object() -> Self {
        Bounds::cube(1.5)
    }

    /// Forward-facing scenes after the NDC warp.
    pub fn ndc() -> Self {
        Bounds::cube(1.0)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Coordinate pairs `(u, v)` read by each plane: xy, yz, zx.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

/// Three `C x R x R` feature planes stored as one `[3, C, R, R]` tensor.
#[derive(Clone, Debug)]
pub struct TriPlaneSet {
    pub resolution: usize,
    pub channels: usize,
    pub bounds: Bounds,
    pub planes: DiffTensor,
}

impl TriPlaneSet {
    pub fn zeros(resolution: usize, channels: usize, bounds: Bounds) -> Result<Self> {
        TriPlaneSet::from_tensor(
            Tensor::zeros(&[3, channels, resolution, resolution]),
            bounds,
        )
    }

    pub fn from_tensor(planes: Tensor, bounds: Bounds) -> Result<Self> {
        let sh = planes.shape();
        if sh.len() != 4 || sh[0] != 3 || sh[2] != sh[3] || sh[1] == 0 || sh[2] == 0 {
            return Err(Error::invalid(format!(
                "tri-plane tensor must be [3, C, R, R], got {sh:?}"
            )));
        }
        if !planes.is_finite() {
            return Err(Error::NonFinite("tri-plane features".into()));
        }
        Ok(TriPlaneSet {
            resolution: sh[2],
            channels: sh[1],
            bounds,
            planes: DiffTensor::new("planes", planes),
        })
    }

    pub fn texel(&self, plane: usize, channel: usize, row: usize, col: usize) -> f64 {
        let r = self.resolution;
        self.planes.value.data()[((plane * self.channels + channel) * r + row) * r + col]
    }

    /// Mean of the bilinearly interpolated features of the three planes.
    pub fn sample(&self, x: [f64; 3]) -> Vec<f64> {
        let taps = point_taps(x, self.resolution, &self.bounds);
        let rr = self.resolution * self.resolution;
        let data = self.planes.value.data();
        let mut out = vec![0.0; self.channels];
        for t in &taps {
            let off = t.plane as usize * self.channels * rr + t.texel as usize;
            for (c, o) in out.iter_mut().enumerate() {
                *o += t.weight * data[off + c * rr];
            }
        }
        out
    }
}

/// `i.i.d.` uniform features in `[-scale, scale]`.
pub fn init_triplane(
    resolution: usize,
    channels: usize,
    scale: f64,
    seed: u64,
    bounds: Bounds,
) -> Result<TriPlaneSet> {
    if resolution == 0 || channels == 0 {
        return Err(Error::invalid("tri-plane extents must be at least 1"));
    }
    let n = 3 * channels * resolution * resolution;
    let data = if scale == 0.0 {
        vec![0.0; n]
    } else {
        let mut r = rng::stream(seed, &[0x7472_6970]);
        (0..n).map(|_| r.random_range(-scale..=scale)).collect()
    };
    TriPlaneSet::from_tensor(
        Tensor::new(vec![3, channels, resolution, resolution], data)?,
        bounds,
    )
}

/// Grid-space coordinate in `[0, R - 1]`, clamped at the domain boundary.
fn grid_coord(x: f64, lo: f64, hi: f64, resolution: usize) -> f64 {
    if resolution == 1 {
        return 0.0;
    }
    let u = (x - lo) / (hi - lo) * (resolution - 1) as f64;
    u.clamp(0.0, (resolution - 1) as f64)
}

pub(crate) fn point_taps(x: [f64; 3], resolution: usize, b: &Bounds) -> [Tap; 12] {
    let mut taps = [Tap {
        plane: 0,
        texel: 0,
        weight: 0.0,
    }; 12];
    let r = resolution;
    for (p, &(ua, va)) in PLANE_AXES.iter().enumerate() {
        let u = grid_coord(x[ua], b.min[ua], b.max[ua], r);
        let v = grid_coord(x[va], b.min[va], b.max[va], r);
        let (u0, v0) = (u.floor() as usize, v.floor() as usize);
        let (u1, v1) = ((u0 + 1).min(r - 1), (v0 + 1).min(r - 1));
        let (fu, fv) = (u - u0 as f64, v - v0 as f64);
        let corners = [
            (v0, u0, (1.0 - fu) * (1.0 - fv)),
            (v0, u1, fu * (1.0 - fv)),
            (v1, u0, (1.0 - fu) * fv),
            (v1, u1, fu * fv),
        ];
        for (k, (row, col, w)) in corners.into_iter().enumerate() {
            taps[p * 4 + k] = Tap {
                plane: p as u8,
                texel: (row * r + col) as u32,
                weight: w / 3.0,
            };
        }
    }
    taps
}

/// Bilinear stencil for a batch of query points.
pub fn build_gather(points: &[[f64; 3]], resolution: usize, bounds: &Bounds) -> Arc<TriGather> {
    Arc::new(TriGather {
        resolution,
        taps: points
            .iter()
            .map(|&p| point_taps(p, resolution, bounds))
            .collect(),
    })
}
