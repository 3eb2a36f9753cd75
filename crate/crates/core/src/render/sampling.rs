use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::camera::PatchSpec;
use crate::rng::Rng;
use crate::{Error, Result};

/// One sample per equal bin of `[near, far]`: bin centers, or uniform within
/// each bin when `jitter` is set.
pub fn stratified_samples(near: f64, far: f64, n: usize, jitter: bool, rng: &mut Rng) -> Vec<f64> {
    let h = (far - near) / n as f64;
    (0..n)
        .map(|i| {
            let u = if jitter { rng.random::<f64>() } else { 0.5 };
            near + (i as f64 + u) * h
        })
        .collect()
}

/// Bin edges around sorted samples: `near`, the midpoints, `far`.
pub fn bin_edges(t: &[f64], near: f64, far: f64) -> Vec<f64> {
    let mut e = Vec::with_capacity(t.len() + 1);
    e.push(near);
    e.extend(t.windows(2).map(|p| 0.5 * (p[0] + p[1])));
    e.push(far);
    e
}

/// Inverse-CDF draws from the piecewise-constant density proportional to
/// `weights` over the bins delimited by `edges`. Falls back to jittered
/// stratified samples when every weight is zero. Output is sorted.
pub fn importance_samples(edges: &[f64], weights: &[f64], n: usize, rng: &mut Rng) -> Vec<f64> {
    assert_eq!(edges.len(), weights.len() + 1, "importance_samples: need one more edge than weights");
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    if !(total > 0.0 && total.is_finite()) {
        return stratified_samples(lo, hi, n, true, rng);
    }
    let mut cdf = Vec::with_capacity(weights.len() + 1);
    let mut acc = 0.0;
    cdf.push(0.0);
    for w in weights {
        acc += w.max(0.0) / total;
        cdf.push(acc);
    }
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap();
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>();
            // First bin whose upper CDF value exceeds u; zero-weight bins are
            // never selected because their CDF does not increase.
            let k = cdf[1..].partition_point(|&c| c <= u).min(last);
            let wk = cdf[k + 1] - cdf[k];
            let frac = ((u - cdf[k]) / wk).clamp(0.0, 1.0);
            edges[k] + frac * (edges[k + 1] - edges[k])
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Sorted union of two sample sets, nudged to be strictly increasing.
pub fn merge_samples(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = a.iter().chain(b).copied().collect();
    t.sort_by(f64::total_cmp);
    for i in 1..t.len() {
        if t[i] <= t[i - 1] {
            t[i] = next_up(t[i - 1]);
        }
    }
    t
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::from_bits(1)
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchMode {
    /// Symmetric Beta with annealed shape.
    Beta,
    /// Plain uniform crops.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSchedule {
    pub mode: PatchMode,
    /// Final shape parameter β_T.
    pub beta_final: f64,
}

impl Default for PatchSchedule {
    fn default() -> Self {
        PatchSchedule {
            mode: PatchMode::Beta,
            beta_final: 0.3,
        }
    }
}

impl PatchSchedule {
    /// `β(t) = 1 + t (β_T − 1)` for progress `t` in `[0, 1]`.
    pub fn beta_at(&self, t: f64) -> f64 {
        1.0 + t.clamp(0.0, 1.0) * (self.beta_final - 1.0)
    }

    /// Relative offsets `(δx, δy)` in `[0, 1]`.
    pub fn offsets(&self, t: f64, rng: &mut Rng) -> (f64, f64) {
        match self.mode {
            PatchMode::Uniform => (rng.random::<f64>(), rng.random::<f64>()),
            PatchMode::Beta => {
                let b = self.beta_at(t);
                if b == 1.0 {
                    return (rng.random::<f64>(), rng.random::<f64>());
                }
                let d = Beta::new(b, b).expect("beta shape must be positive");
                (d.sample(rng), d.sample(rng))
            }
        }
    }
}

/// Draws a patch origin: `px = round(δx (W − S))`, `py = round(δy (H − S))`.
pub fn sample_patch_origin(
    width: usize,
    height: usize,
    side: usize,
    t: f64,
    schedule: &PatchSchedule,
    camera: usize,
    rng: &mut Rng,
) -> Result<PatchSpec> {
    if side == 0 || side > width.min(height) {
        return Err(Error::invalid(format!(
            "patch side {side} does not fit a {width}x{height} image"
        )));
    }
    if schedule.mode == PatchMode::Beta && !(schedule.beta_final > 0.0) {
        return Err(Error::invalid("beta_final must be positive"));
    }
    let (dx, dy) = schedule.offsets(t, rng);
    Ok(PatchSpec {
        px: (dx * (width - side) as f64).round() as usize,
        py: (dy * (height - side) as f64).round() as usize,
        side,
        camera,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn bin_centers() {
        let mut r = rng::seeded(0);
        assert_eq!(stratified_samples(0.0, 1.0, 4, false, &mut r), vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn jittered_samples_stay_in_bins() {
        let mut r = rng::seeded(1);
        for _ in 0..100 {
            let t = stratified_samples(2.0, 6.0, 16, true, &mut r);
            for (i, v) in t.iter().enumerate() {
                assert!(*v >= 2.0 + 0.25 * i as f64 && *v < 2.0 + 0.25 * (i + 1) as f64);
            }
            assert!(t.windows(2).all(|p| p[1] > p[0]));
        }
    }

    #[test]
    fn single_bin_mass() {
        let mut r = rng::seeded(2);
        let edges = [0.0, 1.0, 2.0, 3.0, 4.0];
        let t = importance_samples(&edges, &[0.0, 0.0, 5.0, 0.0], 500, &mut r);
        assert!(t.iter().all(|&v| (2.0..=3.0).contains(&v)));
    }

    #[test]
    fn zero_weights_fall_back() {
        let mut r = rng::seeded(3);
        let t = importance_samples(&[0.0, 1.0, 2.0], &[0.0, 0.0], 8, &mut r);
        for (i, v) in t.iter().enumerate() {
            assert!(*v >= 0.25 * i as f64 && *v < 0.25 * (i + 1) as f64);
        }
    }

    #[test]
    fn merge_is_strict() {
        let t = merge_samples(&[0.1, 0.5, 0.9], &[0.5, 0.5, 0.2]);
        assert_eq!(t.len(), 6);
        assert!(t.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn patch_inside_image() {
        let mut r = rng::seeded(4);
        let s = PatchSchedule::default();
        for k in 0..1000 {
            let p = sample_patch_origin(40, 30, 16, k as f64 / 999.0, &s, 0, &mut r).unwrap();
            assert!(p.px + 16 <= 40 && p.py + 16 <= 30);
        }
        assert!(sample_patch_origin(10, 30, 16, 0.0, &s, 0, &mut r).is_err());
    }

    #[test]
    fn beta_schedule() {
        let s = PatchSchedule::default();
        assert_eq!(s.beta_at(0.0), 1.0);
        assert!((s.beta_at(1.0) - 0.3).abs() < 1e-15);
        assert!((s.beta_at(0.5) - 0.65).abs() < 1e-15);
    }
}
