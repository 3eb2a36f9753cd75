//! Hybrid explicit-implicit radiance field: tri-plane features decoded by two
//! small MLPs, with an optional residual level added in feature space.

mod decoder;
mod triplane;

use std::path::Path;
use std::sync::Arc;

pub use decoder::{encode_direction, normalize_direction, DecodedSamples, DecoderConfig, FieldDecoder};
pub use triplane::{build_gather, init_triplane, Bounds, TriPlaneSet, PLANE_AXES};

use crate::numerics::{checkpoint, Activation, Bound, ParamSet, Tape, Tensor, Var};
use crate::{Error, Result};

/// Coarse planes, an optional residual (fine) level and a shared decoder.
#[derive(Clone, Debug)]
pub struct TwoLevelField {
    pub coarse: TriPlaneSet,
    pub fine: Option<TriPlaneSet>,
    pub decoder: FieldDecoder,
}

/// Feature planes living on a tape: `[3, C, R, R]` or a slot of
/// `[S, 3, C, R, R]`.
#[derive(Clone, Copy, Debug)]
pub struct PlaneRef {
    pub var: Var,
    pub set: usize,
    pub resolution: usize,
    pub bounds: Bounds,
}

/// A field whose parameters are bound to a tape.
#[derive(Clone)]
pub struct BoundField<'a> {
    pub coarse: PlaneRef,
    pub fine: Option<PlaneRef>,
    pub decoder: &'a FieldDecoder,
    pub decoder_params: Bound,
}

impl PlaneRef {
    pub fn sample(&self, tape: &mut Tape, points: &[[f64; 3]]) -> Var {
        let g = build_gather(points, self.resolution, &self.bounds);
        tape.triplane_sample(self.var, self.set, g)
    }
}

impl BoundField<'_> {
    /// `f = f_coarse + f_fine` for every point, `[N, C]`.
    pub fn features(&self, tape: &mut Tape, points: &[[f64; 3]]) -> Var {
        let c = self.coarse.sample(tape, points);
        match &self.fine {
            Some(f) => {
                let fv = f.sample(tape, points);
                tape.add(c, fv)
            }
            None => c,
        }
    }

    pub fn eval(&self, tape: &mut Tape, points: &[[f64; 3]], dirs: &[[f64; 3]]) -> DecodedSamples {
        let f = self.features(tape, points);
        let e = tape.constant(self.decoder.direction_input(dirs));
        self.decoder.decode(tape, &self.decoder_params, f, e)
    }

    /// Copies the current values onto `dst` as untracked constants.
    pub fn freeze_onto(&self, src: &Tape, dst: &mut Tape) -> BoundField<'_> {
        let copy = |p: &PlaneRef, dst: &mut Tape| PlaneRef {
            var: dst.constant(src.value(p.var).clone()),
            ..*p
        };
        let coarse = copy(&self.coarse, dst);
        let fine = self.fine.as_ref().map(|f| copy(f, dst));
        let vars: Vec<Tensor> = self
            .decoder_params
            .vars()
            .iter()
            .map(|&v| src.value(v).clone())
            .collect();
        let mut frozen = ParamSet::new();
        for (t, v) in self.decoder.params.tensors.iter().zip(vars) {
            frozen.push(t.name.clone(), v);
        }
        BoundField {
            coarse,
            fine,
            decoder: self.decoder,
            decoder_params: frozen.bind_frozen(dst),
        }
    }
}

impl TwoLevelField {
    pub fn new(coarse: TriPlaneSet, decoder: FieldDecoder) -> Result<Self> {
        if coarse.channels != decoder.channels {
            return Err(Error::invalid(format!(
                "planes carry {} channels, decoder expects {}",
                coarse.channels, decoder.channels
            )));
        }
        Ok(TwoLevelField {
            coarse,
            fine: None,
            decoder,
        })
    }

    pub fn with_fine(mut self, fine: TriPlaneSet) -> Result<Self> {
        check_levels(&self.coarse, &fine)?;
        self.fine = Some(fine);
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.coarse.channels
    }

    /// Binds planes (tracked iff their `requires_grad`) and decoder to `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundField<'_> {
        let plane_ref = |tp: &TriPlaneSet, tape: &mut Tape| PlaneRef {
            var: tape.leaf(&tp.planes),
            set: 0,
            resolution: tp.resolution,
            bounds: tp.bounds,
        };
        BoundField {
            coarse: plane_ref(&self.coarse, tape),
            fine: self.fine.as_ref().map(|f| plane_ref(f, tape)),
            decoder: &self.decoder,
            decoder_params: self.decoder.params.bind(tape),
        }
    }

    /// Binds everything as constants.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundField<'_> {
        let plane_ref = |tp: &TriPlaneSet, tape: &mut Tape| PlaneRef {
            var: tape.constant(tp.planes.value.clone()),
            set: 0,
            resolution: tp.resolution,
            bounds: tp.bounds,
        };
        BoundField {
            coarse: plane_ref(&self.coarse, tape),
            fine: self.fine.as_ref().map(|f| plane_ref(f, tape)),
            decoder: &self.decoder,
            decoder_params: self.decoder.params.bind_frozen(tape),
        }
    }

    /// Density and color at one point.
    pub fn query(&self, x: [f64; 3], dir: [f64; 3]) -> Result<(f64, [f64; 3])> {
        let f = compose_feature(self, x)?;
        self.decoder.decode_point(&f, dir)
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let b = self.coarse.bounds;
        let mut meta = vec![self.coarse.resolution as f64, self.coarse.channels as f64];
        meta.extend_from_slice(&b.min);
        meta.extend_from_slice(&b.max);
        let mut out = vec![
            ("field.meta".to_string(), Tensor::from_vec(meta)),
            ("coarse.planes".to_string(), self.coarse.planes.value.clone()),
        ];
        if let Some(f) = &self.fine {
            out.push(("fine.planes".to_string(), f.planes.value.clone()));
        }
        out.push(("decoder.meta".to_string(), decoder_meta(&self.decoder.config)));
        for t in &self.decoder.params.tensors {
            out.push((t.name.clone(), t.value.clone()));
        }
        out
    }

    pub fn from_tensors(tensors: &[(String, Tensor)]) -> Result<Self> {
        let meta = checkpoint::find(tensors, "field.meta")?.data();
        if meta.len() != 8 {
            return Err(Error::Format("field.meta must hold 8 values".into()));
        }
        let channels = meta[1] as usize;
        let bounds = Bounds {
            min: [meta[2], meta[3], meta[4]],
            max: [meta[5], meta[6], meta[7]],
        };
        let coarse = TriPlaneSet::from_tensor(checkpoint::find(tensors, "coarse.planes")?.clone(), bounds)?;
        let config = parse_decoder_meta(checkpoint::find(tensors, "decoder.meta")?.data())?;
        let template = FieldDecoder::new(channels, config.clone(), 0);
        let mut params = ParamSet::new();
        for t in &template.params.tensors {
            params.push(t.name.clone(), checkpoint::find(tensors, &t.name)?.clone());
        }
        let decoder = FieldDecoder::with_params(channels, config, params)?;
        let mut field = TwoLevelField::new(coarse, decoder)?;
        if let Ok(f) = checkpoint::find(tensors, "fine.planes") {
            field = field.with_fine(TriPlaneSet::from_tensor(f.clone(), bounds)?)?;
        }
        Ok(field)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        TwoLevelField::from_tensors(&checkpoint::load(path)?)
    }
}

fn check_levels(coarse: &TriPlaneSet, fine: &TriPlaneSet) -> Result<()> {
    if coarse.channels != fine.channels {
        return Err(Error::invalid(format!(
            "coarse has {} channels, fine has {}",
            coarse.channels, fine.channels
        )));
    }
    if coarse.bounds != fine.bounds {
        return Err(Error::invalid("coarse and fine levels must share bounds"));
    }
    Ok(())
}

/// `sample(coarse, x) + sample(fine, x)`.
pub fn compose_feature(field: &TwoLevelField, x: [f64; 3]) -> Result<Vec<f64>> {
    let mut f = field.coarse.sample(x);
    if let Some(fine) = &field.fine {
        check_levels(&field.coarse, fine)?;
        for (a, b) in f.iter_mut().zip(fine.sample(x)) {
            *a += b;
        }
    }
    Ok(f)
}

fn activation_code(a: Activation) -> f64 {
    match a {
        Activation::Identity => 0.0,
        Activation::LeakyRelu => 1.0,
        Activation::Softplus => 2.0,
        Activation::Tanh => 3.0,
        Activation::Sigmoid => 4.0,
    }
}

fn decoder_meta(c: &DecoderConfig) -> Tensor {
    let mut v = vec![
        c.color_features as f64,
        c.dir_frequencies as f64,
        if c.use_viewdir { 1.0 } else { 0.0 },
        activation_code(c.activation),
        c.density_bias,
        c.density_hidden.len() as f64,
    ];
    v.extend(c.density_hidden.iter().map(|&w| w as f64));
    v.push(c.color_hidden.len() as f64);
    v.extend(c.color_hidden.iter().map(|&w| w as f64));
    Tensor::from_vec(v)
}

fn parse_decoder_meta(v: &[f64]) -> Result<DecoderConfig> {
    let bad = || Error::Format("malformed decoder.meta".into());
    let get = |i: usize| v.get(i).copied().ok_or_else(bad);
    let activation = match get(3)? as u32 {
        0 => Activation::Identity,
        1 => Activation::LeakyRelu,
        2 => Activation::Softplus,
        3 => Activation::Tanh,
        4 => Activation::Sigmoid,
        _ => return Err(bad()),
    };
    let nd = get(5)? as usize;
    let density_hidden = (0..nd).map(|i| get(6 + i).map(|w| w as usize)).collect::<Result<_>>()?;
    let nc = get(6 + nd)? as usize;
    let color_hidden = (0..nc)
        .map(|i| get(7 + nd + i).map(|w| w as usize))
        .collect::<Result<_>>()?;
    Ok(DecoderConfig {
        density_hidden,
        color_hidden,
        color_features: get(0)? as usize,
        dir_frequencies: get(1)? as usize,
        use_viewdir: get(2)? != 0.0,
        activation,
        density_bias: get(4)?,
    })
}

/// Shared helper for gradient tests: features sampled through the tape.
pub fn sample_points(tape: &mut Tape, planes: Var, resolution: usize, bounds: &Bounds, points: &[[f64; 3]]) -> Var {
    let g: Arc<_> = build_gather(points, resolution, bounds);
    tape.triplane_sample(planes, 0, g)
}
