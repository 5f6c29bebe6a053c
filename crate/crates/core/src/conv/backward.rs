//! Exact gradients of the forward maps with respect to input and weights.
//!
//! All operators are linear in both arguments, so the backward pass is the
//! usual transposed accumulation; the dual kind sums the two branches' input
//! gradients while each branch's weight gradient stays independent.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Element;
use crate::tensor::Tensor;

use super::{center_tap, ConvGradients, ConvKind, ConvSpec, FilterBank};

pub fn backward<E: Element>(
    input: &Tensor<E>,
    w: &FilterBank<E>,
    spec: &ConvSpec,
    d_output: &Tensor<E>,
) -> Result<ConvGradients<E>> {
    w.validate_for(spec)?;
    let out_shape = spec.out_shape(input.shape())?;
    if d_output.shape() != out_shape {
        return Err(Error::ShapeMismatch(format!(
            "d_output {} vs forward output {}",
            d_output.shape(),
            out_shape
        )));
    }

    let s = input.shape();
    let (k, stride, padding) = (spec.kernel, spec.stride, spec.padding);
    let tap = center_tap(k) as isize - padding as isize;
    let mut d_input = Tensor::<E>::zeros(s)?;
    let mut d_spatial = Tensor::<E>::zeros(w.spatial.shape())?;
    let mut d_pointwise = w
        .pointwise
        .as_ref()
        .map(|m| Matrix::<E>::zeros(m.rows(), m.cols()))
        .transpose()?;

    if spec.kind == ConvKind::DepthwiseSeparable {
        // Recompute the depthwise stage, back-propagate through the pointwise
        // stage, then through the depthwise stage.
        let mid = super::forward::depthwise_stage(input, &w.spatial, spec)?;
        let pw = w.pointwise.as_ref().expect("validated");
        let d_pw = d_pointwise.as_mut().expect("validated");
        let mut d_mid = Tensor::<E>::zeros(mid.shape())?;
        for b in 0..s.batch {
            for n in 0..spec.out_channels {
                for oy in 0..out_shape.height {
                    for ox in 0..out_shape.width {
                        let g = d_output.at(b, n, oy, ox);
                        for m in 0..s.channels {
                            let dm = d_mid.at(b, m, oy, ox) + pw.get(n, m) * g;
                            d_mid.set(b, m, oy, ox, dm);
                            d_pw.set(n, m, d_pw.get(n, m) + mid.at(b, m, oy, ox) * g);
                        }
                    }
                }
            }
        }
        for b in 0..s.batch {
            for c in 0..s.channels {
                for oy in 0..out_shape.height {
                    for ox in 0..out_shape.width {
                        let g = d_mid.at(b, c, oy, ox);
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if let Some((uy, ux)) = in_bounds(iy, ix, s.height, s.width) {
                                    let di = d_input.at(b, c, uy, ux) + w.spatial.at(c, 0, ky, kx) * g;
                                    d_input.set(b, c, uy, ux, di);
                                    let dw = d_spatial.at(c, 0, ky, kx) + input.at(b, c, uy, ux) * g;
                                    d_spatial.set(c, 0, ky, kx, dw);
                                }
                            }
                        }
                    }
                }
            }
        }
        return Ok(ConvGradients { d_input, d_spatial, d_pointwise });
    }

    let n_per_group = spec.out_channels / spec.groups;
    let m_per_group = spec.in_channels / spec.groups;

    for b in 0..s.batch {
        for n in 0..spec.out_channels {
            for oy in 0..out_shape.height {
                for ox in 0..out_shape.width {
                    let g = d_output.at(b, n, oy, ox);
                    match spec.kind {
                        ConvKind::Standard => {
                            for m in 0..s.channels {
                                spatial_backprop(
                                    input, w, &mut d_input, &mut d_spatial, b, n, m, m, oy, ox,
                                    spec, g,
                                );
                            }
                        }
                        ConvKind::Group => {
                            let grp = n / n_per_group;
                            for j in 0..m_per_group {
                                let m = grp * m_per_group + j;
                                spatial_backprop(
                                    input, w, &mut d_input, &mut d_spatial, b, n, m, j, oy, ox,
                                    spec, g,
                                );
                            }
                        }
                        ConvKind::Dual => {
                            let grp = n / n_per_group;
                            for j in 0..m_per_group {
                                let m = grp * m_per_group + j;
                                spatial_backprop(
                                    input, w, &mut d_input, &mut d_spatial, b, n, m, j, oy, ox,
                                    spec, g,
                                );
                            }
                            let pw = w.pointwise.as_ref().expect("validated");
                            let d_pw = d_pointwise.as_mut().expect("validated");
                            let iy = (oy * stride) as isize + tap;
                            let ix = (ox * stride) as isize + tap;
                            if let Some((uy, ux)) = in_bounds(iy, ix, s.height, s.width) {
                                for m in 0..s.channels {
                                    let di = d_input.at(b, m, uy, ux) + pw.get(n, m) * g;
                                    d_input.set(b, m, uy, ux, di);
                                    d_pw.set(n, m, d_pw.get(n, m) + input.at(b, m, uy, ux) * g);
                                }
                            }
                        }
                        ConvKind::Het => {
                            let phase = n % spec.part;
                            let mut pw_slot = 0;
                            for m in 0..s.channels {
                                if m % spec.part == phase {
                                    spatial_backprop(
                                        input,
                                        w,
                                        &mut d_input,
                                        &mut d_spatial,
                                        b,
                                        n,
                                        m,
                                        m / spec.part,
                                        oy,
                                        ox,
                                        spec,
                                        g,
                                    );
                                } else {
                                    let pw = w.pointwise.as_ref().expect("validated");
                                    let d_pw = d_pointwise.as_mut().expect("validated");
                                    let iy = (oy * stride) as isize + tap;
                                    let ix = (ox * stride) as isize + tap;
                                    if let Some((uy, ux)) = in_bounds(iy, ix, s.height, s.width) {
                                        let di = d_input.at(b, m, uy, ux) + pw.get(n, pw_slot) * g;
                                        d_input.set(b, m, uy, ux, di);
                                        d_pw.set(
                                            n,
                                            pw_slot,
                                            d_pw.get(n, pw_slot) + input.at(b, m, uy, ux) * g,
                                        );
                                    }
                                    pw_slot += 1;
                                }
                            }
                        }
                        ConvKind::DepthwiseSeparable => unreachable!(),
                    }
                }
            }
        }
    }
    Ok(ConvGradients { d_input, d_spatial, d_pointwise })
}

#[inline]
fn in_bounds(y: isize, x: isize, h: usize, w: usize) -> Option<(usize, usize)> {
    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
        Some((y as usize, x as usize))
    } else {
        None
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn spatial_backprop<E: Element>(
    input: &Tensor<E>,
    w: &FilterBank<E>,
    d_input: &mut Tensor<E>,
    d_spatial: &mut Tensor<E>,
    b: usize,
    n: usize,
    m: usize,
    slot: usize,
    oy: usize,
    ox: usize,
    spec: &ConvSpec,
    g: E,
) {
    let s = input.shape();
    for ky in 0..spec.kernel {
        for kx in 0..spec.kernel {
            let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
            let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
            if let Some((uy, ux)) = in_bounds(iy, ix, s.height, s.width) {
                let di = d_input.at(b, m, uy, ux) + w.spatial.at(n, slot, ky, kx) * g;
                d_input.set(b, m, uy, ux, di);
                let dw = d_spatial.at(n, slot, ky, kx) + input.at(b, m, uy, ux) * g;
                d_spatial.set(n, slot, ky, kx, dw);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::forward::forward;
    use crate::tensor::Shape4;

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let spec = ConvSpec::dual(4, 4, 3, 1, 1, 2).unwrap();
        let x = Tensor::<f64>::seeded_random(Shape4::new(1, 4, 5, 5).unwrap(), 1).unwrap();
        let w = FilterBank::seeded(&spec, 2).unwrap();
        let d_out = Tensor::<f64>::zeros(spec.out_shape(x.shape()).unwrap()).unwrap();
        let g = backward(&x, &w, &spec, &d_out).unwrap();
        assert!(g.d_input.data().iter().all(|&v| v == 0.0));
        assert!(g.d_spatial.data().iter().all(|&v| v == 0.0));
        assert!(g.d_pointwise.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_product_rule() {
        let spec = ConvSpec::standard(1, 1, 1, 1, 0).unwrap();
        let x = Tensor::from_vec(Shape4::new(1, 1, 1, 1).unwrap(), vec![3.0f64]).unwrap();
        let mut w = FilterBank::zeros(&spec).unwrap();
        w.spatial.data_mut()[0] = 0.5;
        let d_out = Tensor::from_vec(Shape4::new(1, 1, 1, 1).unwrap(), vec![2.0f64]).unwrap();
        let g = backward(&x, &w, &spec, &d_out).unwrap();
        assert_eq!(g.d_spatial.data()[0], 3.0 * 2.0);
        assert_eq!(g.d_input.data()[0], 0.5 * 2.0);
    }

    #[test]
    fn wrong_d_output_shape_is_rejected() {
        let spec = ConvSpec::standard(2, 2, 3, 1, 1).unwrap();
        let x = Tensor::<f64>::zeros(Shape4::new(1, 2, 4, 4).unwrap()).unwrap();
        let w = FilterBank::seeded(&spec, 1).unwrap();
        let d_out = Tensor::<f64>::zeros(Shape4::new(1, 2, 3, 3).unwrap()).unwrap();
        assert!(matches!(backward(&x, &w, &spec, &d_out), Err(Error::ShapeMismatch(_))));
    }

    /// Central finite differences of 0.5 * ||forward(x, w)||^2, whose exact
    /// gradient flows through backward() with d_output = forward output.
    fn finite_diff_check(spec: &ConvSpec, seed: u64) {
        let step = 1e-5;
        let x = Tensor::<f64>::seeded_random(Shape4::new(2, spec.in_channels, 6, 6).unwrap(), seed)
            .unwrap();
        let w = FilterBank::<f64>::seeded(spec, seed + 1).unwrap();
        let y = forward(&x, &w, spec).unwrap();
        let grads = backward(&x, &w, spec, &y).unwrap();

        let loss = |x: &Tensor<f64>, w: &FilterBank<f64>| -> f64 {
            forward(x, w, spec)
                .unwrap()
                .data()
                .iter()
                .map(|&v| 0.5 * v * v)
                .sum()
        };

        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);

        // Sample a handful of coordinates from each block.
        for idx in [0usize, 1, 7] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += step;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= step;
            let num = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * step);
            assert!(
                rel(grads.d_input.data()[idx], num) <= 1e-6,
                "{:?} d_input[{idx}]: analytic {} vs numeric {}",
                spec.kind,
                grads.d_input.data()[idx],
                num
            );
        }
        for idx in [0usize, 3] {
            let mut wp = w.clone();
            wp.spatial.data_mut()[idx] += step;
            let mut wm = w.clone();
            wm.spatial.data_mut()[idx] -= step;
            let num = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * step);
            assert!(
                rel(grads.d_spatial.data()[idx], num) <= 1e-6,
                "{:?} d_spatial[{idx}]",
                spec.kind
            );
        }
        if let Some(pw) = &w.pointwise {
            let d_pw = grads.d_pointwise.as_ref().unwrap();
            for idx in [0usize, pw.data().len() - 1] {
                let mut wp = w.clone();
                wp.pointwise.as_mut().unwrap().data_mut()[idx] += step;
                let mut wm = w.clone();
                wm.pointwise.as_mut().unwrap().data_mut()[idx] -= step;
                let num = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * step);
                assert!(rel(d_pw.data()[idx], num) <= 1e-6, "{:?} d_pointwise[{idx}]", spec.kind);
            }
        }
    }

    #[test]
    fn finite_differences_all_kinds() {
        finite_diff_check(&ConvSpec::standard(3, 4, 3, 1, 1).unwrap(), 10);
        finite_diff_check(&ConvSpec::group(4, 4, 3, 2, 1, 2).unwrap(), 20);
        finite_diff_check(&ConvSpec::dual(4, 4, 3, 1, 1, 2).unwrap(), 30);
        finite_diff_check(&ConvSpec::dual(4, 4, 3, 2, 0, 4).unwrap(), 40);
        finite_diff_check(&ConvSpec::het(4, 3, 3, 1, 2, 2).unwrap(), 50);
        finite_diff_check(&ConvSpec::depthwise_separable(3, 5, 3, 2, 1).unwrap(), 60);
    }
}
