use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numerics::nn::{blur_dual, minibatch_std};
use crate::numerics::{Activation, Bound, Conv, Dual, Linear, ParamSet, ScalarNet, Tape, Tensor, Var};
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub z_dim: usize,
    pub w_dim: usize,
    pub mapping_layers: usize,
    /// Side of the learned constant grid.
    pub base_resolution: usize,
    /// Channels of the synthesis stack.
    pub hidden: usize,
    /// Initial gain of the output convolution; small values start the
    /// residual near zero.
    pub output_gain: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            z_dim: 64,
            w_dim: 64,
            mapping_layers: 2,
            base_resolution: 8,
            hidden: 32,
            output_gain: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
struct SynthBlock {
    conv: Conv,
    scale: Linear,
    shift: Linear,
}

#[derive(Clone, Debug)]
struct PlaneStack {
    constant: usize,
    blocks: Vec<SynthBlock>,
    out: Conv,
}

/// Latent-conditioned residual tri-plane generator: a mapping MLP `z -> w`
/// and, per plane, a constant grid refined by upsample/conv/modulate blocks.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub resolution: usize,
    pub channels: usize,
    pub params: ParamSet,
    mapping: Vec<Linear>,
    planes: Vec<PlaneStack>,
}

/// Standard-normal latent codes `[n, z_dim]` from a seed.
pub fn sample_latents(n: usize, z_dim: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, &[0x6c61_7465]);
    let data = (0..n * z_dim).map(|_| StandardNormal.sample(&mut r)).collect();
    Tensor::from_parts(vec![n, z_dim], data)
}

impl Generator {
    /// `resolution` must be `base_resolution * 2^k`.
    pub fn new(config: GeneratorConfig, resolution: usize, channels: usize, seed: u64) -> Result<Self> {
        let base = config.base_resolution;
        if base == 0 || resolution < base || !resolution.is_multiple_of(base) || !(resolution / base).is_power_of_two() {
            return Err(Error::invalid(format!(
                "fine resolution {resolution} must be {base} times a power of two"
            )));
        }
        let ups = (resolution / base).trailing_zeros() as usize;
        let mut r = rng::stream(seed, &[0x6765_6e65]);
        let mut params = ParamSet::new();
        let mut mapping = Vec::new();
        let mut width = config.z_dim;
        for i in 0..config.mapping_layers {
            mapping.push(Linear::new(&mut params, &format!("gen.map.{i}"), width, config.w_dim, 1.0, &mut r));
            width = config.w_dim;
        }
        let w_dim = if config.mapping_layers == 0 { config.z_dim } else { config.w_dim };
        let h = config.hidden;
        let mut planes = Vec::new();
        for p in 0..3 {
            let init: Vec<f64> = (0..h * base * base).map(|_| StandardNormal.sample(&mut r)).collect();
            let constant = params.push(format!("gen.p{p}.const"), Tensor::from_parts(vec![1, h, base, base], init));
            let mut blocks = Vec::new();
            for k in 0..ups.max(1) {
                let conv = Conv::new(&mut params, &format!("gen.p{p}.b{k}.conv"), h, h, 3, 1.0, &mut r);
                let scale = Linear::new(&mut params, &format!("gen.p{p}.b{k}.scale"), w_dim, h, 0.1, &mut r);
                let shift = Linear::new(&mut params, &format!("gen.p{p}.b{k}.shift"), w_dim, h, 0.1, &mut r);
                blocks.push(SynthBlock { conv, scale, shift });
            }
            let out = Conv::new(&mut params, &format!("gen.p{p}.out"), h, channels, 3, config.output_gain, &mut r);
            planes.push(PlaneStack { constant, blocks, out });
        }
        Ok(Generator {
            config,
            resolution,
            channels,
            params,
            mapping,
            planes,
        })
    }

    fn upsamples(&self) -> usize {
        (self.resolution / self.config.base_resolution).trailing_zeros() as usize
    }

    /// Fine planes `[B, 3, C, R, R]` for latents `z: [B, z_dim]`.
    pub fn forward(&self, tape: &mut Tape, b: &Bound, z: Var) -> Var {
        let batch = tape.shape(z)[0];
        let mut w = z;
        for l in &self.mapping {
            let y = l.forward(tape, b, w);
            w = tape.leaky_relu(y, crate::numerics::nn::LEAKY_SLOPE);
        }
        let ups = self.upsamples();
        let mut outs = Vec::with_capacity(3);
        for stack in &self.planes {
            let mut x = tape.group_broadcast(b[stack.constant], batch);
            for (k, blk) in stack.blocks.iter().enumerate() {
                if k < ups {
                    x = tape.upsample2(x);
                }
                let y = blk.conv.forward(tape, b, x);
                let a = blk.scale.forward(tape, b, w);
                let s = tape.add_scalar(a, 1.0);
                let t = blk.shift.forward(tape, b, w);
                let m = tape.channel_affine(y, s, t);
                x = tape.leaky_relu(m, crate::numerics::nn::LEAKY_SLOPE);
            }
            outs.push(stack.out.forward(tape, b, x));
        }
        tape.stack(&outs, 1)
    }

    /// Fine planes for one latent code, `[3, C, R, R]`.
    pub fn generate(&self, z: &[f64]) -> Result<Tensor> {
        if z.len() != self.config.z_dim {
            return Err(Error::ShapeMismatch {
                expected: vec![self.config.z_dim],
                actual: vec![z.len()],
            });
        }
        let mut tape = Tape::new();
        let b = self.params.bind_frozen(&mut tape);
        let zv = tape.constant(Tensor::from_parts(vec![1, z.len()], z.to_vec()));
        let out = self.forward(&mut tape, &b, zv);
        let v = tape.value(out);
        Ok(Tensor::from_parts(v.shape()[1..].to_vec(), v.data().to_vec()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    pub mbstd_group: usize,
    pub activation: Activation,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            channels: 32,
            mbstd_group: 4,
            activation: Activation::LeakyRelu,
        }
    }
}

/// Patch discriminator: optional blur, conv/downsample stack to 4x4,
/// minibatch-std channel, conv, dense head to one logit per patch.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub patch: usize,
    pub params: ParamSet,
    /// Blur kernel applied to every input; `[1.0]` disables it.
    pub blur: Arc<Vec<f64>>,
    stem: Conv,
    down: Vec<Conv>,
    tail: Conv,
    fc: Linear,
    head: Linear,
}

impl Discriminator {
    /// `patch` must be a power of two of at least 4.
    pub fn new(config: DiscriminatorConfig, patch: usize, seed: u64) -> Result<Self> {
        if patch < 4 || !patch.is_power_of_two() {
            return Err(Error::invalid(format!("discriminator patch side {patch} must be a power of two >= 4")));
        }
        let c = config.channels;
        let mut r = rng::stream(seed, &[0x6469_7363]);
        let mut params = ParamSet::new();
        let stem = Conv::new(&mut params, "disc.stem", 3, c, 3, 1.0, &mut r);
        let n_down = (patch / 4).trailing_zeros() as usize;
        let down = (0..n_down)
            .map(|i| Conv::new(&mut params, &format!("disc.down.{i}"), c, c, 3, 1.0, &mut r))
            .collect();
        let tail = Conv::new(&mut params, "disc.tail", c + 1, c, 3, 1.0, &mut r);
        let fc = Linear::new(&mut params, "disc.fc", c * 16, c, 1.0, &mut r);
        let head = Linear::new(&mut params, "disc.head", c, 1, 1.0, &mut r);
        Ok(Discriminator {
            config,
            patch,
            params,
            blur: Arc::new(vec![1.0]),
            stem,
            down,
            tail,
            fc,
            head,
        })
    }

    pub fn set_blur(&mut self, kernel: Arc<Vec<f64>>) {
        self.blur = kernel;
    }
}

impl ScalarNet for Discriminator {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn forward_dual(&self, tape: &mut Tape, b: &Bound, x: Dual) -> Result<Dual> {
        let sh = tape.shape(x.primal).to_vec();
        if sh.len() != 4 || sh[1] != 3 || sh[2] != self.patch || sh[3] != self.patch {
            return Err(Error::invalid(format!(
                "discriminator expects [B, 3, {p}, {p}], got {sh:?}",
                p = self.patch
            )));
        }
        let batch = sh[0];
        let act = self.config.activation;
        let mut h = if self.blur.len() > 1 {
            blur_dual(tape, x, self.blur.clone())
        } else {
            x
        };
        h = self.stem.forward_dual(tape, b, h);
        h = act.apply_dual(tape, h);
        for conv in &self.down {
            h = conv.forward_dual(tape, b, h);
            h = act.apply_dual(tape, h);
            h = h.map_linear(tape, |t, v| t.avg_pool2(v));
        }
        h = minibatch_std(tape, h, self.config.mbstd_group)?;
        h = self.tail.forward_dual(tape, b, h);
        h = act.apply_dual(tape, h);
        let c = self.config.channels;
        h = h.map_linear(tape, |t, v| t.reshape(v, &[batch, c * 16]));
        h = self.fc.forward_dual(tape, b, h);
        h = act.apply_dual(tape, h);
        Ok(self.head.forward_dual(tape, b, h))
    }
}
