//! Ground-truth oracle: every operator family as plain nested loops with f64
//! accumulation and no lowering. The verification suites compare the fast
//! paths against this, so it must stay independent of them.

use crate::error::{Error, Result};
use crate::scalar::Element;
use crate::tensor::Tensor;

use super::{center_tap, ConvKind, ConvSpec, FilterBank};

/// Direct-loop evaluation of the operator `spec` describes.
pub fn reference_direct<E: Element>(
    input: &Tensor<E>,
    w: &FilterBank<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    reference_direct_counted(input, w, spec).map(|(t, _)| t)
}

/// Same as [`reference_direct`] but also counts multiply-accumulate
/// operations. Taps that fall in the zero padding are counted: the count is
/// the structural MAC total the analytic cost model predicts, not a
/// sparsity-aware measurement.
pub fn reference_direct_counted<E: Element>(
    input: &Tensor<E>,
    w: &FilterBank<E>,
    spec: &ConvSpec,
) -> Result<(Tensor<E>, u128)> {
    w.validate_for(spec)?;
    let out_shape = spec.out_shape(input.shape())?;
    let s = input.shape();
    let (k, stride, padding) = (spec.kernel, spec.stride, spec.padding);
    let tap = center_tap(k) as isize - padding as isize;
    let mut macs: u128 = 0;

    if spec.kind == ConvKind::DepthwiseSeparable {
        // Stage 1: per-channel K x K; stage 2: pointwise at stride 1.
        let mut mid = Tensor::<E>::zeros(out_shape_with_channels(out_shape, s.channels))?;
        for b in 0..s.batch {
            for c in 0..s.channels {
                for oy in 0..out_shape.height {
                    for ox in 0..out_shape.width {
                        let mut acc = 0.0f64;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                acc += w.spatial.at(c, 0, ky, kx).to_f64()
                                    * input.at_padded(b, c, iy, ix).to_f64();
                                macs += 1;
                            }
                        }
                        mid.set(b, c, oy, ox, E::from_f64(acc));
                    }
                }
            }
        }
        let pw = w.pointwise.as_ref().ok_or_else(|| Error::Spec("missing pointwise block".into()))?;
        let mut out = Tensor::<E>::zeros(out_shape)?;
        for b in 0..s.batch {
            for n in 0..spec.out_channels {
                for oy in 0..out_shape.height {
                    for ox in 0..out_shape.width {
                        let mut acc = 0.0f64;
                        for m in 0..s.channels {
                            acc += pw.get(n, m).to_f64() * mid.at(b, m, oy, ox).to_f64();
                            macs += 1;
                        }
                        out.set(b, n, oy, ox, E::from_f64(acc));
                    }
                }
            }
        }
        return Ok((out, macs));
    }

    let mut out = Tensor::<E>::zeros(out_shape)?;
    let n_per_group = spec.out_channels / spec.groups;
    let m_per_group = spec.in_channels / spec.groups;

    for b in 0..s.batch {
        for n in 0..spec.out_channels {
            for oy in 0..out_shape.height {
                for ox in 0..out_shape.width {
                    let mut acc = 0.0f64;
                    match spec.kind {
                        ConvKind::Standard => {
                            for m in 0..s.channels {
                                acc += spatial_patch(input, w, b, n, m, m, oy, ox, spec);
                                macs += (k * k) as u128;
                            }
                        }
                        ConvKind::Group => {
                            let g = n / n_per_group;
                            for j in 0..m_per_group {
                                let m = g * m_per_group + j;
                                acc += spatial_patch(input, w, b, n, m, j, oy, ox, spec);
                                macs += (k * k) as u128;
                            }
                        }
                        ConvKind::Dual => {
                            let g = n / n_per_group;
                            for j in 0..m_per_group {
                                let m = g * m_per_group + j;
                                acc += spatial_patch(input, w, b, n, m, j, oy, ox, spec);
                                macs += (k * k) as u128;
                            }
                            let pw = w.pointwise.as_ref().expect("validated");
                            let iy = (oy * stride) as isize + tap;
                            let ix = (ox * stride) as isize + tap;
                            for m in 0..s.channels {
                                acc += pw.get(n, m).to_f64()
                                    * input.at_padded(b, m, iy, ix).to_f64();
                                macs += 1;
                            }
                        }
                        ConvKind::Het => {
                            let phase = n % spec.part;
                            let mut pw_slot = 0;
                            for m in 0..s.channels {
                                if m % spec.part == phase {
                                    acc += spatial_patch(
                                        input,
                                        w,
                                        b,
                                        n,
                                        m,
                                        m / spec.part,
                                        oy,
                                        ox,
                                        spec,
                                    );
                                    macs += (k * k) as u128;
                                } else {
                                    let pw = w.pointwise.as_ref().expect("validated");
                                    let iy = (oy * stride) as isize + tap;
                                    let ix = (ox * stride) as isize + tap;
                                    acc += pw.get(n, pw_slot).to_f64()
                                        * input.at_padded(b, m, iy, ix).to_f64();
                                    pw_slot += 1;
                                    macs += 1;
                                }
                            }
                        }
                        ConvKind::DepthwiseSeparable => unreachable!(),
                    }
                    out.set(b, n, oy, ox, E::from_f64(acc));
                }
            }
        }
    }
    Ok((out, macs))
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn spatial_patch<E: Element>(
    input: &Tensor<E>,
    w: &FilterBank<E>,
    b: usize,
    n: usize,
    m: usize,
    slot: usize,
    oy: usize,
    ox: usize,
    spec: &ConvSpec,
) -> f64 {
    let mut acc = 0.0f64;
    for ky in 0..spec.kernel {
        for kx in 0..spec.kernel {
            let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
            let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
            acc += w.spatial.at(n, slot, ky, kx).to_f64() * input.at_padded(b, m, iy, ix).to_f64();
        }
    }
    acc
}

fn out_shape_with_channels(
    shape: crate::tensor::Shape4,
    channels: usize,
) -> crate::tensor::Shape4 {
    crate::tensor::Shape4 { channels, ..shape }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::forward::forward;
    use crate::tensor::{max_abs_diff, Shape4};

    #[test]
    fn zero_weights_give_zero_output() {
        for spec in [
            ConvSpec::standard(4, 4, 3, 1, 1).unwrap(),
            ConvSpec::dual(4, 4, 3, 1, 1, 2).unwrap(),
            ConvSpec::het(4, 4, 3, 1, 1, 2).unwrap(),
        ] {
            let x = Tensor::<f64>::seeded_random(Shape4::new(1, 4, 5, 5).unwrap(), 1).unwrap();
            let w = FilterBank::zeros(&spec).unwrap();
            let y = reference_direct(&x, &w, &spec).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dual_g1_unfolds_to_standard_plus_pointwise() {
        let spec = ConvSpec::dual(4, 6, 3, 1, 1, 1).unwrap();
        let x = Tensor::<f64>::seeded_random(Shape4::new(2, 4, 6, 6).unwrap(), 2).unwrap();
        let w = FilterBank::seeded(&spec, 3).unwrap();

        let std_spec = ConvSpec::standard(4, 6, 3, 1, 1).unwrap();
        let std_w = FilterBank { spatial: w.spatial.clone(), pointwise: None };
        let want = crate::conv::forward_standard(&x, &std_w, &std_spec)
            .unwrap()
            .add(&crate::conv::forward_pointwise(&x, w.pointwise.as_ref().unwrap(), 1).unwrap())
            .unwrap();
        let got = reference_direct(&x, &w, &spec).unwrap();
        assert!(max_abs_diff(&got, &want).unwrap() <= 1e-12);
    }

    #[test]
    fn fast_paths_match_oracle_on_pinned_sweep() {
        // Small pinned sweep over every kind; the wide randomized sweep lives
        // in the acceptance suite.
        let cases = [
            ConvSpec::standard(4, 6, 3, 2, 1).unwrap(),
            ConvSpec::group(8, 8, 3, 1, 1, 4).unwrap(),
            ConvSpec::dual(8, 8, 3, 1, 1, 2).unwrap(),
            ConvSpec::dual(8, 8, 3, 2, 0, 4).unwrap(),
            ConvSpec::het(8, 4, 3, 1, 1, 4).unwrap(),
            ConvSpec::het(8, 4, 5, 2, 2, 2).unwrap(),
            ConvSpec::depthwise_separable(4, 6, 3, 1, 1).unwrap(),
        ];
        for (i, spec) in cases.iter().enumerate() {
            let x = Tensor::<f64>::seeded_random(
                Shape4::new(2, spec.in_channels, 8, 8).unwrap(),
                100 + i as u64,
            )
            .unwrap();
            let w = FilterBank::seeded(spec, 200 + i as u64).unwrap();
            let fast = forward(&x, &w, spec).unwrap();
            let oracle = reference_direct(&x, &w, spec).unwrap();
            let diff = max_abs_diff(&fast, &oracle).unwrap();
            assert!(diff <= 1e-12, "case {i}: diff {diff}");
        }
    }

    #[test]
    fn mac_counter_matches_closed_forms() {
        // Counted on batch 1 so the counts equal the per-image formulas;
        // 8x8 input with k=3, s=1, p=1 keeps D_o = 8.
        let x = Tensor::<f64>::seeded_random(Shape4::new(1, 8, 8, 8).unwrap(), 4).unwrap();

        let spec = ConvSpec::standard(8, 4, 3, 1, 1).unwrap();
        let w = FilterBank::seeded(&spec, 5).unwrap();
        let (_, macs) = reference_direct_counted(&x, &w, &spec).unwrap();
        assert_eq!(macs, 64 * 9 * 8 * 4);

        let spec = ConvSpec::dual(8, 4, 3, 1, 1, 2).unwrap();
        let w = FilterBank::seeded(&spec, 6).unwrap();
        let (_, macs) = reference_direct_counted(&x, &w, &spec).unwrap();
        assert_eq!(macs, 64 * 9 * 8 * 4 / 2 + 64 * 8 * 4);

        let spec = ConvSpec::het(8, 4, 3, 1, 1, 4).unwrap();
        let w = FilterBank::seeded(&spec, 7).unwrap();
        let (_, macs) = reference_direct_counted(&x, &w, &spec).unwrap();
        assert_eq!(macs, 64 * 8 * 4 * (9 + 4 - 1) / 4);

        let spec = ConvSpec::depthwise_separable(8, 4, 3, 1, 1).unwrap();
        let w = FilterBank::seeded(&spec, 8).unwrap();
        let (_, macs) = reference_direct_counted(&x, &w, &spec).unwrap();
        assert_eq!(macs, 64 * (9 * 8 + 8 * 4));
    }
}
