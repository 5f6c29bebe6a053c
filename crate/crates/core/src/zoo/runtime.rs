//! Executable models: deterministic instantiation of a config's weights and
//! a forward/backward pass over the layer graph. Batch norm is never
//! executed (it is only counted); rectifiers are.

use crate::conv::{backward as conv_backward, forward as conv_forward, ConvSpec, FilterBank};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Element;
use crate::tensor::{Shape4, Tensor};

use super::{Activation, LayerOp, ModelConfig, PoolKind};

#[derive(Debug, Clone)]
pub enum RuntimeLayer<E: Element> {
    Conv {
        spec: ConvSpec,
        bank: FilterBank<E>,
        act: Activation,
        from: Option<usize>,
    },
    Pool {
        kind: PoolKind,
        extent: usize,
        stride: usize,
        padding: usize,
    },
    Fc {
        weights: Matrix<E>,
        bias: Option<Vec<E>>,
    },
    Skip { from: usize },
    Concat { from: usize },
    Upsample { factor: usize },
    Marker,
}

/// A config with materialized weights, executable end to end.
#[derive(Debug, Clone)]
pub struct Model<E: Element> {
    pub name: String,
    pub input: Shape4,
    pub layers: Vec<(String, RuntimeLayer<E>)>,
}

#[derive(Debug, Clone)]
pub enum LayerGradients<E: Element> {
    Conv { d_spatial: Tensor<E>, d_pointwise: Option<Matrix<E>> },
    Fc { d_weights: Matrix<E>, d_bias: Option<Vec<E>> },
}

pub type ModelGradients<E> = Vec<Option<LayerGradients<E>>>;

/// Materialize deterministic weights for a configuration. Layer seeds are
/// derived from the base seed and the layer index, so the same
/// (config, seed) always yields bit-identical weights.
pub fn instantiate<E: Element>(config: &ModelConfig, seed: u64) -> Result<Model<E>> {
    let shapes = config.output_shapes()?;
    let index_of = |name: &str, upto: usize| -> Result<usize> {
        config.layers[..upto]
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::Config(format!("layer '{name}' not defined earlier")))
    };

    let mut layers = Vec::with_capacity(config.layers.len());
    for (i, layer) in config.layers.iter().enumerate() {
        let layer_seed = seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let rt = match &layer.op {
            LayerOp::Conv(c) => RuntimeLayer::Conv {
                spec: c.spec,
                bank: FilterBank::seeded(&c.spec, layer_seed)?,
                act: c.act,
                from: c.from.as_deref().map(|n| index_of(n, i)).transpose()?,
            },
            LayerOp::Pool { kind, extent, stride, padding } => RuntimeLayer::Pool {
                kind: *kind,
                extent: *extent,
                stride: *stride,
                padding: *padding,
            },
            LayerOp::FullyConnected { inputs, outputs, bias } => {
                let bound = E::from_f64((1.0 / *inputs as f64).sqrt());
                let w = Tensor::<E>::seeded_random(Shape4::new(1, 1, *outputs, *inputs)?, layer_seed)?
                    .scale(bound);
                RuntimeLayer::Fc {
                    weights: Matrix::from_vec(*outputs, *inputs, w.data().to_vec())?,
                    bias: bias.then(|| vec![E::zero(); *outputs]),
                }
            }
            LayerOp::AddSkip { from } => RuntimeLayer::Skip { from: index_of(from, i)? },
            LayerOp::Concat { from } => RuntimeLayer::Concat { from: index_of(from, i)? },
            LayerOp::Upsample { factor } => RuntimeLayer::Upsample { factor: *factor },
            LayerOp::BlockMarker { .. } => RuntimeLayer::Marker,
        };
        layers.push((layer.name.clone(), rt));
    }
    let _ = shapes;
    Ok(Model { name: config.name.clone(), input: config.input, layers })
}

fn apply_activation<E: Element>(t: &mut Tensor<E>, act: Activation) {
    match act {
        Activation::None => {}
        Activation::Relu => {
            for v in t.data_mut() {
                if *v < E::zero() {
                    *v = E::zero();
                }
            }
        }
        Activation::Relu6 => {
            let six = E::from_f64(6.0);
            for v in t.data_mut() {
                if *v < E::zero() {
                    *v = E::zero();
                } else if *v > six {
                    *v = six;
                }
            }
        }
    }
}

fn activation_mask<E: Element>(d: &mut Tensor<E>, post: &Tensor<E>, act: Activation) {
    match act {
        Activation::None => {}
        Activation::Relu => {
            for (g, &y) in d.data_mut().iter_mut().zip(post.data()) {
                if y <= E::zero() {
                    *g = E::zero();
                }
            }
        }
        Activation::Relu6 => {
            let six = E::from_f64(6.0);
            for (g, &y) in d.data_mut().iter_mut().zip(post.data()) {
                if y <= E::zero() || y >= six {
                    *g = E::zero();
                }
            }
        }
    }
}

impl<E: Element> Model<E> {
    /// Compute layer `i`'s output given the model input and all earlier
    /// layers' outputs.
    pub fn layer_output(
        &self,
        i: usize,
        input: &Tensor<E>,
        outs: &[Tensor<E>],
    ) -> Result<Tensor<E>> {
        let prev = || -> &Tensor<E> { if i == 0 { input } else { &outs[i - 1] } };
        Ok(match &self.layers[i].1 {
            RuntimeLayer::Conv { spec, bank, act, from } => {
                let x = match from {
                    Some(j) => &outs[*j],
                    None => prev(),
                };
                let mut y = conv_forward(x, bank, spec)?;
                apply_activation(&mut y, *act);
                y
            }
            RuntimeLayer::Pool { kind, extent, stride, padding } => {
                pool_forward(prev(), *kind, *extent, *stride, *padding)?
            }
            RuntimeLayer::Fc { weights, bias } => fc_forward(prev(), weights, bias.as_deref())?,
            RuntimeLayer::Skip { from } => prev().add(&outs[*from])?,
            RuntimeLayer::Concat { from } => concat_channels(prev(), &outs[*from])?,
            RuntimeLayer::Upsample { factor } => upsample_nearest(prev(), *factor)?,
            RuntimeLayer::Marker => prev().clone(),
        })
    }

    /// Run the whole graph, returning every layer's (post-activation) output.
    pub fn forward_full(&self, input: &Tensor<E>) -> Result<Vec<Tensor<E>>> {
        let mut outs: Vec<Tensor<E>> = Vec::with_capacity(self.layers.len());
        for i in 0..self.layers.len() {
            let out = self.layer_output(i, input, &outs)?;
            outs.push(out);
        }
        Ok(outs)
    }

    /// Final output only.
    pub fn forward(&self, input: &Tensor<E>) -> Result<Tensor<E>> {
        let outs = self.forward_full(input)?;
        Ok(outs.into_iter().last().expect("validated non-empty"))
    }

    /// Back-propagate `d_output` (gradient at the last layer's output)
    /// through the graph. Returns per-layer weight gradients and the
    /// gradient at the model input.
    pub fn backward(
        &self,
        input: &Tensor<E>,
        outputs: &[Tensor<E>],
        d_output: &Tensor<E>,
    ) -> Result<(ModelGradients<E>, Tensor<E>)> {
        let n = self.layers.len();
        let mut grads: ModelGradients<E> = vec![None; n];
        let mut d_out: Vec<Option<Tensor<E>>> = vec![None; n];
        let mut d_input_total = Tensor::<E>::zeros(input.shape())?;
        d_out[n - 1] = Some(d_output.clone());

        for i in (0..n).rev() {
            let d = match d_out[i].take() {
                Some(d) => d,
                None => continue, // dead branch (e.g. a detection stub)
            };
            let input_idx: Option<usize> = if i == 0 { None } else { Some(i - 1) };
            let layer_input = |j: Option<usize>| -> &Tensor<E> {
                match j {
                    Some(j) => &outputs[j],
                    None => input,
                }
            };
            let accumulate = |slot: Option<usize>,
                                  grad: Tensor<E>,
                                  d_out: &mut Vec<Option<Tensor<E>>>,
                                  d_input_total: &mut Tensor<E>|
             -> Result<()> {
                match slot {
                    Some(j) => {
                        d_out[j] = Some(match d_out[j].take() {
                            Some(existing) => existing.add(&grad)?,
                            None => grad,
                        });
                    }
                    None => *d_input_total = d_input_total.add(&grad)?,
                }
                Ok(())
            };

            match &self.layers[i].1 {
                RuntimeLayer::Conv { spec, bank, act, from } => {
                    let src = from.map(Some).unwrap_or(input_idx);
                    let x = layer_input(src);
                    let mut d_pre = d;
                    activation_mask(&mut d_pre, &outputs[i], *act);
                    let g = conv_backward(x, bank, spec, &d_pre)?;
                    grads[i] = Some(LayerGradients::Conv {
                        d_spatial: g.d_spatial,
                        d_pointwise: g.d_pointwise,
                    });
                    accumulate(src, g.d_input, &mut d_out, &mut d_input_total)?;
                }
                RuntimeLayer::Pool { kind, extent, stride, padding } => {
                    let x = layer_input(input_idx);
                    let dx = pool_backward(x, &d, *kind, *extent, *stride, *padding)?;
                    accumulate(input_idx, dx, &mut d_out, &mut d_input_total)?;
                }
                RuntimeLayer::Fc { weights, bias } => {
                    let x = layer_input(input_idx);
                    let (d_w, d_b, dx) = fc_backward(x, weights, bias.is_some(), &d)?;
                    grads[i] = Some(LayerGradients::Fc { d_weights: d_w, d_bias: d_b });
                    accumulate(input_idx, dx, &mut d_out, &mut d_input_total)?;
                }
                RuntimeLayer::Skip { from } => {
                    accumulate(input_idx, d.clone(), &mut d_out, &mut d_input_total)?;
                    accumulate(Some(*from), d, &mut d_out, &mut d_input_total)?;
                }
                RuntimeLayer::Concat { from } => {
                    let first_ch = layer_input(input_idx).shape().channels;
                    let (da, db) = split_channels(&d, first_ch)?;
                    accumulate(input_idx, da, &mut d_out, &mut d_input_total)?;
                    accumulate(Some(*from), db, &mut d_out, &mut d_input_total)?;
                }
                RuntimeLayer::Upsample { factor } => {
                    let dx = upsample_backward(&d, *factor)?;
                    accumulate(input_idx, dx, &mut d_out, &mut d_input_total)?;
                }
                RuntimeLayer::Marker => {
                    accumulate(input_idx, d, &mut d_out, &mut d_input_total)?;
                }
            }
        }
        Ok((grads, d_input_total))
    }

    pub fn zero_all_weights(&mut self) {
        for (_, layer) in &mut self.layers {
            match layer {
                RuntimeLayer::Conv { bank, .. } => {
                    for v in bank.spatial.data_mut() {
                        *v = E::zero();
                    }
                    if let Some(pw) = &mut bank.pointwise {
                        for v in pw.data_mut() {
                            *v = E::zero();
                        }
                    }
                }
                RuntimeLayer::Fc { weights, bias } => {
                    for v in weights.data_mut() {
                        *v = E::zero();
                    }
                    if let Some(b) = bias {
                        for v in b.iter_mut() {
                            *v = E::zero();
                        }
                    }
                }
                _ => {}
            }
        }
    }

    /// Total trainable scalars.
    pub fn weight_count(&self) -> u128 {
        self.layers
            .iter()
            .map(|(_, l)| match l {
                RuntimeLayer::Conv { bank, .. } => bank.param_count(),
                RuntimeLayer::Fc { weights, bias } => {
                    (weights.rows() * weights.cols()) as u128
                        + bias.as_ref().map(|b| b.len() as u128).unwrap_or(0)
                }
                _ => 0,
            })
            .sum()
    }
}

fn fc_forward<E: Element>(
    input: &Tensor<E>,
    weights: &Matrix<E>,
    bias: Option<&[E]>,
) -> Result<Tensor<E>> {
    let s = input.shape();
    let flat = s.channels * s.height * s.width;
    if flat != weights.cols() {
        return Err(Error::Geometry(format!(
            "fc expects {} inputs, got {flat}",
            weights.cols()
        )));
    }
    let mut out = Tensor::<E>::zeros(Shape4::new(s.batch, weights.rows(), 1, 1)?)?;
    for b in 0..s.batch {
        let x = &input.data()[b * flat..(b + 1) * flat];
        for n in 0..weights.rows() {
            let mut acc = bias.map(|bb| bb[n]).unwrap_or_else(E::zero);
            for (j, &xj) in x.iter().enumerate() {
                acc += weights.get(n, j) * xj;
            }
            out.set(b, n, 0, 0, acc);
        }
    }
    Ok(out)
}

type FcGrads<E> = (Matrix<E>, Option<Vec<E>>, Tensor<E>);

fn fc_backward<E: Element>(
    input: &Tensor<E>,
    weights: &Matrix<E>,
    has_bias: bool,
    d_out: &Tensor<E>,
) -> Result<FcGrads<E>> {
    let s = input.shape();
    let flat = s.channels * s.height * s.width;
    let mut d_w = Matrix::<E>::zeros(weights.rows(), weights.cols())?;
    let mut d_b = has_bias.then(|| vec![E::zero(); weights.rows()]);
    let mut d_x = Tensor::<E>::zeros(s)?;
    for b in 0..s.batch {
        let x = &input.data()[b * flat..(b + 1) * flat];
        for n in 0..weights.rows() {
            let g = d_out.at(b, n, 0, 0);
            if let Some(db) = &mut d_b {
                db[n] += g;
            }
            for j in 0..flat {
                d_w.set(n, j, d_w.get(n, j) + x[j] * g);
                d_x.data_mut()[b * flat + j] += weights.get(n, j) * g;
            }
        }
    }
    Ok((d_w, d_b, d_x))
}

/// Max pooling ignores padded positions; average pooling counts them as
/// zeros with a fixed k*k divisor.
fn pool_forward<E: Element>(
    input: &Tensor<E>,
    kind: PoolKind,
    extent: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let s = input.shape();
    let oh = super::pool_out_extent(s.height, extent, stride, padding)?;
    let ow = super::pool_out_extent(s.width, extent, stride, padding)?;
    let mut out = Tensor::<E>::zeros(Shape4::new(s.batch, s.channels, oh, ow)?)?;
    let norm = E::from_f64(1.0 / (extent * extent) as f64);
    for b in 0..s.batch {
        for c in 0..s.channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = match kind {
                        PoolKind::Max => E::neg_infinity(),
                        PoolKind::Avg => E::zero(),
                    };
                    for ky in 0..extent {
                        for kx in 0..extent {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            match kind {
                                PoolKind::Max => {
                                    if let Some((uy, ux)) = clamp_pos(iy, ix, s.height, s.width) {
                                        let v = input.at(b, c, uy, ux);
                                        if v > acc {
                                            acc = v;
                                        }
                                    }
                                }
                                PoolKind::Avg => acc += input.at_padded(b, c, iy, ix),
                            }
                        }
                    }
                    if kind == PoolKind::Avg {
                        acc = acc * norm;
                    }
                    out.set(b, c, oy, ox, acc);
                }
            }
        }
    }
    Ok(out)
}

#[inline]
fn clamp_pos(y: isize, x: isize, h: usize, w: usize) -> Option<(usize, usize)> {
    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
        Some((y as usize, x as usize))
    } else {
        None
    }
}

fn pool_backward<E: Element>(
    input: &Tensor<E>,
    d_out: &Tensor<E>,
    kind: PoolKind,
    extent: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let s = input.shape();
    let os = d_out.shape();
    let mut d_in = Tensor::<E>::zeros(s)?;
    let norm = E::from_f64(1.0 / (extent * extent) as f64);
    for b in 0..s.batch {
        for c in 0..s.channels {
            for oy in 0..os.height {
                for ox in 0..os.width {
                    let g = d_out.at(b, c, oy, ox);
                    match kind {
                        PoolKind::Avg => {
                            for ky in 0..extent {
                                for kx in 0..extent {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if let Some((uy, ux)) = clamp_pos(iy, ix, s.height, s.width) {
                                        let v = d_in.at(b, c, uy, ux) + g * norm;
                                        d_in.set(b, c, uy, ux, v);
                                    }
                                }
                            }
                        }
                        PoolKind::Max => {
                            // Route to the first maximum in scan order; same
                            // tie-break every run.
                            let (mut best, mut pos) = (E::neg_infinity(), None);
                            for ky in 0..extent {
                                for kx in 0..extent {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if let Some((uy, ux)) = clamp_pos(iy, ix, s.height, s.width) {
                                        let v = input.at(b, c, uy, ux);
                                        if v > best {
                                            best = v;
                                            pos = Some((uy, ux));
                                        }
                                    }
                                }
                            }
                            if let Some((by, bx)) = pos {
                                let v = d_in.at(b, c, by, bx) + g;
                                d_in.set(b, c, by, bx, v);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(d_in)
}

fn concat_channels<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.batch != sb.batch || (sa.height, sa.width) != (sb.height, sb.width) {
        return Err(Error::Geometry(format!("concat of {sa} with {sb}")));
    }
    let mut out =
        Tensor::<E>::zeros(Shape4::new(sa.batch, sa.channels + sb.channels, sa.height, sa.width)?)?;
    for bi in 0..sa.batch {
        for y in 0..sa.height {
            for x in 0..sa.width {
                for c in 0..sa.channels {
                    out.set(bi, c, y, x, a.at(bi, c, y, x));
                }
                for c in 0..sb.channels {
                    out.set(bi, sa.channels + c, y, x, b.at(bi, c, y, x));
                }
            }
        }
    }
    Ok(out)
}

fn split_channels<E: Element>(d: &Tensor<E>, first: usize) -> Result<(Tensor<E>, Tensor<E>)> {
    let s = d.shape();
    let mut a = Tensor::<E>::zeros(Shape4::new(s.batch, first, s.height, s.width)?)?;
    let mut b = Tensor::<E>::zeros(Shape4::new(s.batch, s.channels - first, s.height, s.width)?)?;
    for bi in 0..s.batch {
        for y in 0..s.height {
            for x in 0..s.width {
                for c in 0..first {
                    a.set(bi, c, y, x, d.at(bi, c, y, x));
                }
                for c in first..s.channels {
                    b.set(bi, c - first, y, x, d.at(bi, c, y, x));
                }
            }
        }
    }
    Ok((a, b))
}

fn upsample_nearest<E: Element>(input: &Tensor<E>, factor: usize) -> Result<Tensor<E>> {
    let s = input.shape();
    let mut out =
        Tensor::<E>::zeros(Shape4::new(s.batch, s.channels, s.height * factor, s.width * factor)?)?;
    let os = out.shape();
    for b in 0..s.batch {
        for c in 0..s.channels {
            for y in 0..os.height {
                for x in 0..os.width {
                    out.set(b, c, y, x, input.at(b, c, y / factor, x / factor));
                }
            }
        }
    }
    Ok(out)
}

fn upsample_backward<E: Element>(d_out: &Tensor<E>, factor: usize) -> Result<Tensor<E>> {
    let os = d_out.shape();
    let s = Shape4::new(os.batch, os.channels, os.height / factor, os.width / factor)?;
    let mut d_in = Tensor::<E>::zeros(s)?;
    for b in 0..os.batch {
        for c in 0..os.channels {
            for y in 0..os.height {
                for x in 0..os.width {
                    let v = d_in.at(b, c, y / factor, x / factor) + d_out.at(b, c, y, x);
                    d_in.set(b, c, y / factor, x / factor, v);
                }
            }
        }
    }
    Ok(d_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build, parse_config};

    #[test]
    fn tiny_config_forward_shape() {
        let text = "model tiny input 1 3 8 8\n\
                    conv c1 kind=dual M=3 N=6 K=3 s=1 p=1 G=3\n\
                    pool p1 avg k=2 s=2\n\
                    fc out in=96 out=2 bias\n";
        let cfg = parse_config(text).unwrap();
        let model = instantiate::<f32>(&cfg, 1).unwrap();
        let x = Tensor::<f32>::seeded_random(cfg.input, 2).unwrap();
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 2, 1, 1).unwrap());
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = build("vgg16", "cifar10").unwrap();
        let a = instantiate::<f32>(&cfg, 7).unwrap();
        let b = instantiate::<f32>(&cfg, 7).unwrap();
        for ((_, la), (_, lb)) in a.layers.iter().zip(&b.layers) {
            if let (RuntimeLayer::Conv { bank: ba, .. }, RuntimeLayer::Conv { bank: bb, .. }) =
                (la, lb)
            {
                assert_eq!(ba, bb);
            }
        }
    }

    #[test]
    fn zero_weights_zero_logits() {
        let text = "model tiny input 2 3 8 8\n\
                    conv c1 kind=std M=3 N=4 K=3 s=1 p=1\n\
                    fc out in=256 out=3\n";
        let cfg = parse_config(text).unwrap();
        let mut model = instantiate::<f64>(&cfg, 3).unwrap();
        model.zero_all_weights();
        let x = Tensor::<f64>::seeded_random(cfg.input, 4).unwrap();
        let y = model.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn skip_and_pool_backward_flow() {
        let text = "model skipnet input 1 4 6 6\n\
                    conv c1 kind=std M=4 N=4 K=3 s=1 p=1 act=none\n\
                    skip s1 from=c1\n\
                    pool p1 avg k=2 s=2\n\
                    fc out in=36 out=2\n";
        // skip from=c1 after c1 doubles the activation.
        let cfg = parse_config(text).unwrap();
        let model = instantiate::<f64>(&cfg, 5).unwrap();
        let x = Tensor::<f64>::seeded_random(cfg.input, 6).unwrap();
        let outs = model.forward_full(&x).unwrap();
        assert_eq!(outs[1], outs[0].scale(2.0));
        let d = Tensor::<f64>::filled(outs.last().unwrap().shape(), 1.0).unwrap();
        let (grads, d_in) = model.backward(&x, &outs, &d).unwrap();
        assert!(grads[0].is_some());
        assert!(d_in.data().iter().any(|&v| v != 0.0));
    }
}
