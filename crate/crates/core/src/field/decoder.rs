use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::numerics::{Activation, Bound, Linear, ParamSet, Tape, Tensor, Var};
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Hidden widths of the density network.
    pub density_hidden: Vec<usize>,
    /// Hidden widths of the color network.
    pub color_hidden: Vec<usize>,
    /// Width of the color feature handed from the density to the color net.
    pub color_features: usize,
    /// Sinusoid frequencies of the view-direction encoding.
    pub dir_frequencies: usize,
    pub activation: Activation,
    /// Initial bias of the raw density output (negative starts transparent).
    pub density_bias: f64,
    pub use_viewdir: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            density_hidden: vec![64, 64],
            color_hidden: vec![32],
            color_features: 15,
            dir_frequencies: 4,
            activation: Activation::LeakyRelu,
            density_bias: -1.0,
            use_viewdir: true,
        }
    }
}

impl DecoderConfig {
    pub fn dir_encoding_width(&self) -> usize {
        3 + 6 * self.dir_frequencies
    }
}

/// Density MLP (feature -> sigma, color feature) followed by the color MLP
/// (color feature, encoded direction -> RGB).
#[derive(Clone, Debug)]
pub struct FieldDecoder {
    pub config: DecoderConfig,
    pub channels: usize,
    pub params: ParamSet,
    density: Vec<Linear>,
    color: Vec<Linear>,
}

pub struct DecodedSamples {
    /// `[N]`, nonnegative.
    pub sigma: Var,
    /// `[N, 3]` in `[0, 1]`.
    pub rgb: Var,
}

fn mlp(
    params: &mut ParamSet,
    prefix: &str,
    fan_in: usize,
    hidden: &[usize],
    fan_out: usize,
    r: &mut rng::Rng,
) -> Vec<Linear> {
    let mut layers = Vec::new();
    let mut width = fan_in;
    for (i, &h) in hidden.iter().enumerate() {
        layers.push(Linear::new(params, &format!("{prefix}.{i}"), width, h, 1.0, r));
        width = h;
    }
    layers.push(Linear::new(
        params,
        &format!("{prefix}.out"),
        width,
        fan_out,
        1.0,
        r,
    ));
    layers
}

/// `[d, sin(2^k π d), cos(2^k π d)]` for `k < frequencies`.
pub fn encode_direction(d: [f64; 3], frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 + 6 * frequencies);
    out.extend_from_slice(&d);
    for k in 0..frequencies {
        let f = (1u64 << k) as f64 * PI;
        for v in d {
            out.push((f * v).sin());
        }
        for v in d {
            out.push((f * v).cos());
        }
    }
    out
}

/// Returns `d / |d|`, warning when it was not unit length to 1e-6.
pub fn normalize_direction(d: [f64; 3]) -> Result<[f64; 3]> {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::invalid("view direction must be nonzero and finite"));
    }
    if (n - 1.0).abs() > 1e-6 {
        log::warn!("view direction {d:?} has norm {n}, normalizing");
    }
    Ok([d[0] / n, d[1] / n, d[2] / n])
}

impl FieldDecoder {
    pub fn new(channels: usize, config: DecoderConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0x6465_636f]);
        let mut params = ParamSet::new();
        let density = mlp(
            &mut params,
            "decoder.density",
            channels,
            &config.density_hidden,
            1 + config.color_features,
            &mut r,
        );
        let color = mlp(
            &mut params,
            "decoder.color",
            config.color_features + config.dir_encoding_width(),
            &config.color_hidden,
            3,
            &mut r,
        );
        let head = density.last().unwrap().bias;
        params.tensors[head].value.data_mut()[0] = config.density_bias;
        FieldDecoder {
            config,
            channels,
            params,
            density,
            color,
        }
    }

    /// Rebuilds a decoder around existing parameter values.
    pub fn with_params(channels: usize, config: DecoderConfig, params: ParamSet) -> Result<Self> {
        let mut dec = FieldDecoder::new(channels, config, 0);
        if dec.params.len() != params.len() {
            return Err(Error::invalid("decoder parameter count mismatch"));
        }
        for (dst, src) in dec.params.tensors.iter_mut().zip(params.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::ShapeMismatch {
                    expected: dst.shape().to_vec(),
                    actual: src.shape().to_vec(),
                });
            }
            dst.value = src.value;
        }
        Ok(dec)
    }

    /// Zeroes every weight and bias.
    pub fn zero(&mut self) {
        for t in &mut self.params.tensors {
            t.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Direction encodings for `dirs`, replaced by zeros when view
    /// conditioning is disabled.
    pub fn direction_input(&self, dirs: &[[f64; 3]]) -> Tensor {
        let w = self.config.dir_encoding_width();
        let mut data = Vec::with_capacity(dirs.len() * w);
        for &d in dirs {
            if self.config.use_viewdir {
                data.extend(encode_direction(d, self.config.dir_frequencies));
            } else {
                data.extend(std::iter::repeat_n(0.0, w));
            }
        }
        Tensor::from_parts(vec![dirs.len(), w], data)
    }

    /// Decodes features `[N, C]` and direction encodings `[N, E]`.
    pub fn decode(&self, tape: &mut Tape, b: &Bound, features: Var, dir_enc: Var) -> DecodedSamples {
        let act = self.config.activation;
        let mut h = features;
        let (last, hidden) = self.density.split_last().unwrap();
        for l in hidden {
            let y = l.forward(tape, b, h);
            h = act.apply(tape, y);
        }
        let raw = last.forward(tape, b, h);
        let n = tape.shape(raw)[0];
        let sigma_raw = tape.slice_cols(raw, 0, 1);
        let sigma_sp = tape.softplus(sigma_raw);
        let sigma = tape.reshape(sigma_sp, &[n]);
        let feat = tape.slice_cols(raw, 1, self.config.color_features);
        let mut h = tape.concat_cols(feat, dir_enc);
        let (last, hidden) = self.color.split_last().unwrap();
        for l in hidden {
            let y = l.forward(tape, b, h);
            h = act.apply(tape, y);
        }
        let logits = last.forward(tape, b, h);
        let rgb = tape.sigmoid(logits);
        DecodedSamples { sigma, rgb }
    }

    /// Single-point evaluation with frozen parameters.
    pub fn decode_point(&self, feature: &[f64], dir: [f64; 3]) -> Result<(f64, [f64; 3])> {
        if feature.len() != self.channels {
            return Err(Error::ShapeMismatch {
                expected: vec![self.channels],
                actual: vec![feature.len()],
            });
        }
        let dir = if self.config.use_viewdir {
            normalize_direction(dir)?
        } else {
            dir
        };
        let mut tape = Tape::new();
        let b = self.params.bind_frozen(&mut tape);
        let f = tape.constant(Tensor::from_parts(vec![1, self.channels], feature.to_vec()));
        let e = tape.constant(self.direction_input(&[dir]));
        let out = self.decode(&mut tape, &b, f, e);
        let s = tape.value(out.sigma).item();
        let c = tape.value(out.rgb).data();
        Ok((s, [c[0], c[1], c[2]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs() {
        let mut dec = FieldDecoder::new(4, DecoderConfig::default(), 1);
        dec.zero();
        let (s, rgb) = dec.decode_point(&[0.3, -0.2, 0.0, 1.0], [0.0, 0.0, -1.0]).unwrap();
        assert!((s - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(rgb, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn viewdir_off_ignores_direction() {
        let cfg = DecoderConfig {
            use_viewdir: false,
            ..DecoderConfig::default()
        };
        let dec = FieldDecoder::new(4, cfg, 5);
        let f = [0.1, 0.4, -0.3, 0.2];
        let d = [0.6, 0.0, -0.8];
        let a = dec.decode_point(&f, d).unwrap();
        let b = dec.decode_point(&f, [-0.6, 0.0, 0.8]).unwrap();
        assert_eq!(a, b);
        let on = FieldDecoder::new(4, DecoderConfig::default(), 5);
        assert_ne!(on.decode_point(&f, d).unwrap().1, on.decode_point(&f, [-0.6, 0.0, 0.8]).unwrap().1);
    }

    #[test]
    fn outputs_in_range() {
        let dec = FieldDecoder::new(3, DecoderConfig::default(), 9);
        for k in 0..50 {
            let x = k as f64 * 0.37 - 9.0;
            let (s, c) = dec.decode_point(&[x, -2.0 * x, x * x], [0.0, 1.0, 0.0]).unwrap();
            assert!(s >= 0.0);
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn non_unit_direction_is_normalized() {
        let dec = FieldDecoder::new(2, DecoderConfig::default(), 2);
        let a = dec.decode_point(&[0.1, 0.2], [0.0, 0.0, -2.0]).unwrap();
        let b = dec.decode_point(&[0.1, 0.2], [0.0, 0.0, -1.0]).unwrap();
        assert_eq!(a, b);
        assert!(dec.decode_point(&[0.1, 0.2], [0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn encoding_width() {
        assert_eq!(encode_direction([0.0, 0.0, 1.0], 4).len(), 27);
    }
}
