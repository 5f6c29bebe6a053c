//! Forward paths, lowered onto im2col + GEMM wherever the operator structure
//! permits (the heterogeneous kind keeps a direct loop; its per-filter channel
//! pattern does not factor into a dense product).

use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix};
use crate::scalar::Element;
use crate::tensor::{im2col, Shape4, Tensor};

use super::{center_tap, ConvKind, ConvSpec, FilterBank};

/// Dispatch on the spec's kind.
pub fn forward<E: Element>(
    input: &Tensor<E>,
    w: &FilterBank<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    match spec.kind {
        ConvKind::Standard => forward_standard(input, w, spec),
        ConvKind::Group => forward_group(input, w, spec),
        ConvKind::Dual => forward_dual(input, w, spec),
        ConvKind::Het => forward_het(input, w, spec),
        ConvKind::DepthwiseSeparable => forward_depthwise_separable(input, w, spec),
    }
}

/// Standard convolution: every filter sees all input channels.
pub fn forward_standard<E: Element>(
    input: &Tensor<E>,
    w: &FilterBank<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    expect_kind(spec, ConvKind::Standard)?;
    w.validate_for(spec)?;
    let out_shape = spec.out_shape(input.shape())?;
    let col = im2col(input, spec.kernel, spec.stride, spec.padding)?;
    // Spatial block is N x M x K x K row-major, so row n is already the
    // channel-major/kernel-row/kernel-column order im2col produces.
    let k2 = spec.kernel * spec.kernel;
    let wmat = Matrix::from_vec(
        spec.out_channels,
        spec.in_channels * k2,
        w.spatial.data().to_vec(),
    )?;
    let prod = gemm(&wmat, &col)?;
    scatter_rows_to_tensor(&prod, out_shape)
}

/// Group convolution: filters and channels split into G blocks with no
/// cross-group connections.
pub fn forward_group<E: Element>(
    input: &Tensor<E>,
    w: &FilterBank<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    expect_kind(spec, ConvKind::Group)?;
    w.validate_for(spec)?;
    let out_shape = spec.out_shape(input.shape())?;
    let out = grouped_spatial_branch(input, &w.spatial, spec, out_shape)?;
    Ok(out)
}

/// Pointwise (1 x 1) convolution: pure channel mixing with optional spatial
/// subsampling. `weights` is N x M.
pub fn forward_pointwise<E: Element>(
    input: &Tensor<E>,
    weights: &Matrix<E>,
    stride: usize,
) -> Result<Tensor<E>> {
    if weights.cols() != input.shape().channels {
        return Err(Error::Spec(format!(
            "pointwise weights expect {} channels, input has {}",
            weights.cols(),
            input.shape().channels
        )));
    }
    let col = im2col(input, 1, stride, 0)?;
    let prod = gemm(weights, &col)?;
    let s = input.shape();
    let out_shape = Shape4::new(
        s.batch,
        weights.rows(),
        (s.height - 1) / stride + 1,
        (s.width - 1) / stride + 1,
    )?;
    scatter_rows_to_tensor(&prod, out_shape)
}

/// Dual convolution: grouped K x K branch plus a full 1 x 1 branch over the
/// same input, summed element-wise. The 1 x 1 branch reads the center tap of
/// each receptive field, which keeps the branches aligned for every stride
/// and padding (for K=3, padding=1 this is exactly [`forward_pointwise`]).
pub fn forward_dual<E: Element>(
    input: &Tensor<E>,
    w: &FilterBank<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    let (grouped, pointwise) = forward_dual_branches(input, w, spec)?;
    grouped.add(&pointwise)
}

/// The two summands of a dual layer, computed on the exact arithmetic paths
/// [`forward_dual`] adds together.
pub fn forward_dual_branches<E: Element>(
    input: &Tensor<E>,
    w: &FilterBank<E>,
    spec: &ConvSpec,
) -> Result<(Tensor<E>, Tensor<E>)> {
    expect_kind(spec, ConvKind::Dual)?;
    w.validate_for(spec)?;
    let pw = w
        .pointwise
        .as_ref()
        .ok_or_else(|| Error::Spec("dual spec requires a pointwise block".into()))?;
    let out_shape = spec.out_shape(input.shape())?;
    let grouped = grouped_spatial_branch(input, &w.spatial, spec, out_shape)?;
    let tap = center_tap(spec.kernel) as isize - spec.padding as isize;
    let pointwise = pointwise_tap_branch(input, pw, spec.stride, tap, out_shape)?;
    Ok((grouped, pointwise))
}

/// Heterogeneous convolution: within filter n, input channels c with
/// c mod P == n mod P get K x K kernels, the rest get 1 x 1 kernels at the
/// receptive-field center; per-filter results sum over all channels.
pub fn forward_het<E: Element>(
    input: &Tensor<E>,
    w: &FilterBank<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    expect_kind(spec, ConvKind::Het)?;
    w.validate_for(spec)?;
    let out_shape = spec.out_shape(input.shape())?;
    let mut out = Tensor::zeros(out_shape)?;
    let s = input.shape();
    let (k, stride, padding) = (spec.kernel, spec.stride, spec.padding);
    let p = spec.part;
    let tap = center_tap(k) as isize - padding as isize;

    for b in 0..s.batch {
        for n in 0..spec.out_channels {
            let phase = n % p;
            for oy in 0..out_shape.height {
                for ox in 0..out_shape.width {
                    let mut acc = E::zero();
                    let mut pw_slot = 0;
                    for m in 0..s.channels {
                        if m % p == phase {
                            let j = m / p;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    acc += w.spatial.at(n, j, ky, kx)
                                        * input.at_padded(b, m, iy, ix);
                                }
                            }
                        } else {
                            let pwm = w.pointwise.as_ref().expect("validated above");
                            let iy = (oy * stride) as isize + tap;
                            let ix = (ox * stride) as isize + tap;
                            acc += pwm.get(n, pw_slot) * input.at_padded(b, m, iy, ix);
                            pw_slot += 1;
                        }
                    }
                    out.set(b, n, oy, ox, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Depthwise-separable convolution: per-channel K x K stage (stride/padding
/// applied here) followed by a stride-1 pointwise stage.
pub fn forward_depthwise_separable<E: Element>(
    input: &Tensor<E>,
    w: &FilterBank<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    expect_kind(spec, ConvKind::DepthwiseSeparable)?;
    w.validate_for(spec)?;
    let mid = depthwise_stage(input, &w.spatial, spec)?;
    let pw = w.pointwise.as_ref().ok_or_else(|| Error::Spec("missing pointwise block".into()))?;
    forward_pointwise(&mid, pw, 1)
}

pub(super) fn depthwise_stage<E: Element>(
    input: &Tensor<E>,
    weights: &Tensor<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    let s = input.shape();
    let mid_shape = Shape4::new(
        s.batch,
        s.channels,
        crate::tensor::conv_out_extent(s.height, spec.kernel, spec.stride, spec.padding)?,
        crate::tensor::conv_out_extent(s.width, spec.kernel, spec.stride, spec.padding)?,
    )?;
    let mut mid = Tensor::zeros(mid_shape)?;
    for b in 0..s.batch {
        for c in 0..s.channels {
            for oy in 0..mid_shape.height {
                for ox in 0..mid_shape.width {
                    let mut acc = E::zero();
                    for ky in 0..spec.kernel {
                        for kx in 0..spec.kernel {
                            let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                            let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                            acc += weights.at(c, 0, ky, kx) * input.at_padded(b, c, iy, ix);
                        }
                    }
                    mid.set(b, c, oy, ox, acc);
                }
            }
        }
    }
    Ok(mid)
}

/// Shared K x K grouped branch of Group and Dual. `spatial` is
/// N x (M/G) x K x K; filter n belongs to group floor(n / (N/G)).
fn grouped_spatial_branch<E: Element>(
    input: &Tensor<E>,
    spatial: &Tensor<E>,
    spec: &ConvSpec,
    out_shape: Shape4,
) -> Result<Tensor<E>> {
    let g = spec.groups;
    let m_per = spec.in_channels / g;
    let n_per = spec.out_channels / g;
    let k2 = spec.kernel * spec.kernel;

    let col = im2col(input, spec.kernel, spec.stride, spec.padding)?;
    let cols = col.cols();
    let mut prod = Matrix::zeros(spec.out_channels, cols)?;

    for grp in 0..g {
        // Channel-major row layout makes each group's rows contiguous.
        let row0 = grp * m_per * k2;
        let rows = m_per * k2;
        let sub = Matrix::from_vec(
            rows,
            cols,
            col.data()[row0 * cols..(row0 + rows) * cols].to_vec(),
        )?;
        let w0 = grp * n_per * rows;
        let wmat = Matrix::from_vec(
            n_per,
            rows,
            spatial.data()[w0..w0 + n_per * rows].to_vec(),
        )?;
        let part = gemm(&wmat, &sub)?;
        let dst0 = grp * n_per * cols;
        prod.data_mut()[dst0..dst0 + n_per * cols].copy_from_slice(part.data());
    }
    scatter_rows_to_tensor(&prod, out_shape)
}

/// 1 x 1 branch sampled at a fixed offset from each output's stride origin.
/// `tap` may be negative or exceed the input extent; such taps read zero
/// (they fall in the padding of the K x K branch).
pub(super) fn pointwise_tap_branch<E: Element>(
    input: &Tensor<E>,
    weights: &Matrix<E>,
    stride: usize,
    tap: isize,
    out_shape: Shape4,
) -> Result<Tensor<E>> {
    let s = input.shape();
    if weights.cols() != s.channels {
        return Err(Error::Spec(format!(
            "pointwise weights expect {} channels, input has {}",
            weights.cols(),
            s.channels
        )));
    }
    let mut out = Tensor::zeros(out_shape)?;
    for b in 0..s.batch {
        for n in 0..out_shape.channels {
            for oy in 0..out_shape.height {
                for ox in 0..out_shape.width {
                    let iy = (oy * stride) as isize + tap;
                    let ix = (ox * stride) as isize + tap;
                    let mut acc = E::zero();
                    for m in 0..s.channels {
                        acc += weights.get(n, m) * input.at_padded(b, m, iy, ix);
                    }
                    out.set(b, n, oy, ox, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Reinterpret an N x (B * H * W) product as a (B, N, H, W) tensor; the
/// column order is batch-major, then output row, then output column.
fn scatter_rows_to_tensor<E: Element>(prod: &Matrix<E>, shape: Shape4) -> Result<Tensor<E>> {
    let plane = shape.height * shape.width;
    if prod.rows() != shape.channels || prod.cols() != shape.batch * plane {
        return Err(Error::Geometry(format!(
            "product {}x{} does not reshape to {}",
            prod.rows(),
            prod.cols(),
            shape
        )));
    }
    let mut out = Tensor::zeros(shape)?;
    for n in 0..shape.channels {
        let row = prod.row(n);
        for b in 0..shape.batch {
            for i in 0..plane {
                let v = row[b * plane + i];
                let y = i / shape.width;
                let x = i % shape.width;
                out.set(b, n, y, x, v);
            }
        }
    }
    Ok(out)
}

fn expect_kind(spec: &ConvSpec, kind: ConvKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::Spec(format!("expected {:?} spec, got {:?}", kind, spec.kind)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::max_abs_diff;

    fn spec_std(m: usize, n: usize, k: usize, s: usize, p: usize) -> ConvSpec {
        ConvSpec::standard(m, n, k, s, p).unwrap()
    }

    #[test]
    fn scalar_standard_conv() {
        let spec = spec_std(1, 1, 1, 1, 0);
        let x = Tensor::from_vec(Shape4::new(1, 1, 1, 1).unwrap(), vec![3.0f64]).unwrap();
        let mut w = FilterBank::zeros(&spec).unwrap();
        w.spatial.data_mut()[0] = 0.5;
        let y = forward_standard(&x, &w, &spec).unwrap();
        assert_eq!(y.data(), &[1.5]);
    }

    #[test]
    fn delta_impulse_reproduces_kernel() {
        // A unit impulse at the plane center copies the kernel (cross-
        // correlation indexing) into the output around that position.
        let spec = spec_std(1, 1, 3, 1, 1);
        let mut x = Tensor::<f64>::zeros(Shape4::new(1, 1, 5, 5).unwrap()).unwrap();
        x.set(0, 0, 2, 2, 1.0);
        let mut w = FilterBank::zeros(&spec).unwrap();
        for (i, v) in w.spatial.data_mut().iter_mut().enumerate() {
            *v = i as f64;
        }
        let y = forward_standard(&x, &w, &spec).unwrap();
        // out(oy, ox) = w[2 - oy + 2, 2 - ox + 2] restricted to the kernel
        // support: cross-correlation places w[ky][kx] at oy = 2 - (ky - 1).
        for ky in 0..3 {
            for kx in 0..3 {
                let oy = 2 + 1 - ky as isize;
                let ox = 2 + 1 - kx as isize;
                assert_eq!(y.at(0, 0, oy as usize, ox as usize), (ky * 3 + kx) as f64);
            }
        }
    }

    #[test]
    fn pointwise_identity_passes_input_through() {
        let s = Shape4::new(2, 3, 4, 4).unwrap();
        let x = Tensor::<f64>::seeded_random(s, 1).unwrap();
        let w = Matrix::identity(3).unwrap();
        let y = forward_pointwise(&x, &w, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn pointwise_sums_constant_planes() {
        let s = Shape4::new(1, 2, 3, 3).unwrap();
        let mut x = Tensor::<f64>::zeros(s).unwrap();
        for y in 0..3 {
            for xx in 0..3 {
                x.set(0, 0, y, xx, 3.0);
                x.set(0, 1, y, xx, 5.0);
            }
        }
        let w = Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let out = forward_pointwise(&x, &w, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 8.0));
    }

    #[test]
    fn pointwise_stride_subsamples() {
        let s = Shape4::new(1, 1, 5, 5).unwrap();
        let x = Tensor::<f64>::seeded_random(s, 2).unwrap();
        let w = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let y = forward_pointwise(&x, &w, 2).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 3, 3).unwrap());
        for oy in 0..3 {
            for ox in 0..3 {
                assert_eq!(y.at(0, 0, oy, ox), 2.0 * x.at(0, 0, oy * 2, ox * 2));
            }
        }
    }

    #[test]
    fn group_g1_equals_standard() {
        let sg = ConvSpec::group(4, 6, 3, 1, 1, 1).unwrap();
        let ss = spec_std(4, 6, 3, 1, 1);
        let x = Tensor::<f64>::seeded_random(Shape4::new(1, 4, 6, 6).unwrap(), 3).unwrap();
        let w = FilterBank::seeded(&sg, 4).unwrap();
        let ws = FilterBank { spatial: w.spatial.clone(), pointwise: None };
        let yg = forward_group(&x, &w, &sg).unwrap();
        let ys = forward_standard(&x, &ws, &ss).unwrap();
        assert_eq!(yg, ys);
    }

    #[test]
    fn group_diagonal_case_scales_channels() {
        // G = M = N with K = 1: each output channel is its input channel
        // times one scalar weight.
        let spec = ConvSpec::group(3, 3, 1, 1, 0, 3).unwrap();
        let x = Tensor::<f64>::seeded_random(Shape4::new(1, 3, 4, 4).unwrap(), 5).unwrap();
        let mut w = FilterBank::zeros(&spec).unwrap();
        w.spatial.data_mut().copy_from_slice(&[2.0, -1.0, 0.5]);
        let y = forward_group(&x, &w, &spec).unwrap();
        for (c, &k) in [2.0, -1.0, 0.5].iter().enumerate() {
            for oy in 0..4 {
                for ox in 0..4 {
                    assert_eq!(y.at(0, c, oy, ox), k * x.at(0, c, oy, ox));
                }
            }
        }
    }

    #[test]
    fn dual_zeroed_branches_degenerate() {
        let spec = ConvSpec::dual(8, 8, 3, 1, 1, 2).unwrap();
        let x = Tensor::<f64>::seeded_random(Shape4::new(1, 8, 6, 6).unwrap(), 6).unwrap();
        let w = FilterBank::seeded(&spec, 7).unwrap();

        let mut zero_pw = w.clone();
        zero_pw.pointwise = Some(Matrix::zeros(8, 8).unwrap());
        let gspec = ConvSpec::group(8, 8, 3, 1, 1, 2).unwrap();
        let gw = FilterBank { spatial: w.spatial.clone(), pointwise: None };
        assert_eq!(
            forward_dual(&x, &zero_pw, &spec).unwrap(),
            forward_group(&x, &gw, &gspec).unwrap()
        );

        let mut zero_spatial = w.clone();
        for v in zero_spatial.spatial.data_mut() {
            *v = 0.0;
        }
        let pw = w.pointwise.clone().unwrap();
        assert_eq!(
            forward_dual(&x, &zero_spatial, &spec).unwrap(),
            forward_pointwise(&x, &pw, 1).unwrap()
        );
    }

    #[test]
    fn dual_requires_pointwise_block() {
        let spec = ConvSpec::dual(4, 4, 3, 1, 1, 2).unwrap();
        let x = Tensor::<f64>::zeros(Shape4::new(1, 4, 4, 4).unwrap()).unwrap();
        let mut w = FilterBank::seeded(&spec, 1).unwrap();
        w.pointwise = None;
        assert!(matches!(forward_dual(&x, &w, &spec), Err(Error::Spec(_))));
    }

    #[test]
    fn het_p1_equals_standard() {
        let sh = ConvSpec::het(4, 6, 3, 1, 1, 1).unwrap();
        let ss = spec_std(4, 6, 3, 1, 1);
        let x = Tensor::<f64>::seeded_random(Shape4::new(2, 4, 5, 5).unwrap(), 8).unwrap();
        let w = FilterBank::seeded(&sh, 9).unwrap();
        let ws = FilterBank { spatial: w.spatial.clone(), pointwise: None };
        let diff = max_abs_diff(
            &forward_het(&x, &w, &sh).unwrap(),
            &forward_standard(&x, &ws, &ss).unwrap(),
        )
        .unwrap();
        assert!(diff <= 1e-12, "diff {diff}");
    }

    #[test]
    fn dsc_k1_unit_depthwise_reduces_to_pointwise() {
        let spec = ConvSpec::depthwise_separable(3, 5, 1, 1, 0).unwrap();
        let x = Tensor::<f64>::seeded_random(Shape4::new(1, 3, 4, 4).unwrap(), 10).unwrap();
        let mut w = FilterBank::seeded(&spec, 11).unwrap();
        for v in w.spatial.data_mut() {
            *v = 1.0;
        }
        let y = forward_depthwise_separable(&x, &w, &spec).unwrap();
        let want = forward_pointwise(&x, w.pointwise.as_ref().unwrap(), 1).unwrap();
        assert_eq!(y, want);
    }
}
