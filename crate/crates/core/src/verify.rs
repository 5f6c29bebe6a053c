//! Randomized verification sweeps: fast paths against the direct-loop
//! oracle, the dual decomposition identity, degeneracy identities, the
//! cross-channel communication property, gradient checks and the
//! counting-vs-execution cross-check. The CLI `verify`/`gradcheck`
//! subcommands and the acceptance suite all drive these.

use rand_core::{RngCore, SeedableRng};

use crate::conv::{
    backward, forward, forward_dual, forward_dual_branches, forward_group, forward_pointwise,
    forward_standard, reference_direct, reference_direct_counted, ConvKind, ConvSpec, FilterBank,
};
use crate::cost::conv_flops_at;
use crate::error::{Error, Result};
use crate::scalar::Element;
use crate::tensor::{max_abs_diff, Shape4, Tensor};

pub struct SweepCase {
    pub spec: ConvSpec,
    pub input_shape: Shape4,
    pub seed: u64,
}

pub const ALL_KINDS: [ConvKind; 5] = [
    ConvKind::Standard,
    ConvKind::Group,
    ConvKind::Dual,
    ConvKind::Het,
    ConvKind::DepthwiseSeparable,
];

/// Deterministic stream of valid random cases covering all five kinds,
/// K in {1,3,5}, stride in {1,2}, padding in {0,1,2}, channels <= 32,
/// spatial <= 16.
pub fn sweep_cases(seed: u64, count: usize) -> Vec<SweepCase> {
    sweep_cases_of(seed, count, &ALL_KINDS)
}

/// Same stream restricted to a subset of kinds.
pub fn sweep_cases_of(seed: u64, count: usize, kinds: &[ConvKind]) -> Vec<SweepCase> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |options: &[usize]| options[(rng.next_u64() % options.len() as u64) as usize];
    let mut cases = Vec::with_capacity(count);
    let mut i = 0;
    while cases.len() < count {
        let kind = kinds[cases.len() % kinds.len()];
        let k = pick(&[1, 3, 5]);
        let stride = pick(&[1, 2]);
        let padding = pick(&[0, 1, 2]);
        let alpha = pick(&[1, 2, 4]);
        let m = alpha * pick(&[1, 2, 4, 8]).min(32 / alpha.max(1));
        let n = match kind {
            ConvKind::Group | ConvKind::Dual => alpha * pick(&[1, 2, 4]).min(32 / alpha),
            _ => pick(&[1, 2, 3, 4, 8, 16]),
        };
        let spatial = pick(&[4, 5, 8, 11, 16]).max(k.saturating_sub(2 * padding));
        let batch = pick(&[1, 2]);
        i += 1;
        let spec = match kind {
            ConvKind::Standard => ConvSpec::standard(m, n, k, stride, padding),
            ConvKind::Group => ConvSpec::group(m, n, k, stride, padding, alpha),
            ConvKind::Dual => ConvSpec::dual(m, n, k, stride, padding, alpha),
            ConvKind::Het => ConvSpec::het(m, n, k, stride, padding, alpha),
            ConvKind::DepthwiseSeparable => {
                ConvSpec::depthwise_separable(m, n, k, stride, padding)
            }
        };
        let spec = match spec {
            Ok(s) => s,
            Err(_) => continue,
        };
        let input_shape = match Shape4::new(batch, m, spatial, spatial) {
            Ok(s) => s,
            Err(_) => continue,
        };
        if spec.out_shape(input_shape).is_err() {
            continue;
        }
        cases.push(SweepCase { spec, input_shape, seed: seed ^ (i as u64) << 17 });
    }
    cases
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepReport {
    pub cases: usize,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SweepReport {
    fn check(cases: usize, max_abs_diff: f64, tolerance: f64) -> Self {
        SweepReport { cases, max_abs_diff, tolerance, pass: max_abs_diff <= tolerance }
    }
}

/// Fast paths vs the direct-loop oracle over the random sweep.
pub fn equivalence_sweep<E: Element>(seed: u64, count: usize, tolerance: f64) -> Result<SweepReport> {
    let mut worst = 0.0f64;
    for case in sweep_cases(seed, count) {
        let input = Tensor::<E>::seeded_random(case.input_shape, case.seed)?;
        let bank = FilterBank::<E>::seeded(&case.spec, case.seed ^ 0xabcd)?;
        let fast = forward(&input, &bank, &case.spec)?;
        let oracle = reference_direct(&input, &bank, &case.spec)?;
        worst = worst.max(max_abs_diff(&fast, &oracle)?);
    }
    Ok(SweepReport::check(count, worst, tolerance))
}

/// forward_dual == grouped branch + pointwise branch element-wise, and, for
/// center-aligned geometry (padding == (K-1)/2), the branches are exactly
/// the public forward_group / forward_pointwise results.
pub fn decomposition_sweep<E: Element>(seed: u64, count: usize, tolerance: f64) -> Result<SweepReport> {
    let mut worst = 0.0f64;
    let mut done = 0usize;
    let mut offset = 0u64;
    while done < count {
        for case in sweep_cases(seed ^ (0x5eed + offset), count) {
            if case.spec.kind != ConvKind::Dual {
                continue;
            }
            let spec = case.spec;
            let input = Tensor::<E>::seeded_random(case.input_shape, case.seed)?;
            let bank = FilterBank::<E>::seeded(&spec, case.seed ^ 0xabcd)?;
            let (grouped, pointwise) = forward_dual_branches(&input, &bank, &spec)?;
            let dual = forward_dual(&input, &bank, &spec)?;
            let sum = grouped.add(&pointwise)?;
            worst = worst.max(max_abs_diff(&dual, &sum)?);

            if spec.padding == (spec.kernel - 1) / 2 {
                let gspec = ConvSpec::group(
                    spec.in_channels,
                    spec.out_channels,
                    spec.kernel,
                    spec.stride,
                    spec.padding,
                    spec.groups,
                )?;
                let gbank = FilterBank { spatial: bank.spatial.clone(), pointwise: None };
                let g_pub = forward_group(&input, &gbank, &gspec)?;
                let p_pub =
                    forward_pointwise(&input, bank.pointwise.as_ref().unwrap(), spec.stride)?;
                let recomposed = g_pub.add(&p_pub)?;
                worst = worst.max(max_abs_diff(&dual, &recomposed)?);
            }
            done += 1;
            if done >= count {
                break;
            }
        }
        offset += 1;
    }
    Ok(SweepReport::check(done, worst, tolerance))
}

/// Dual with G=1 equals standard-plus-pointwise; Group with G=1 and Het with
/// P=1 equal standard convolution.
pub fn degeneracy_sweep<E: Element>(seed: u64, count: usize, tolerance: f64) -> Result<SweepReport> {
    let mut worst = 0.0f64;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let m = 1 + (rng.next_u64() % 8) as usize;
        let n = 1 + (rng.next_u64() % 8) as usize;
        let k = [1, 3, 5][(rng.next_u64() % 3) as usize];
        let stride = 1 + (rng.next_u64() % 2) as usize;
        let padding = (rng.next_u64() % 3) as usize;
        let spatial = 8.max(k);
        let shape = Shape4::new(1, m, spatial, spatial)?;
        let input = Tensor::<E>::seeded_random(shape, seed ^ (i as u64 * 31))?;

        let std_spec = ConvSpec::standard(m, n, k, stride, padding)?;
        let std_bank = FilterBank::<E>::seeded(&std_spec, seed ^ (i as u64 * 37))?;
        let std_out = forward_standard(&input, &std_bank, &std_spec)?;

        let g_spec = ConvSpec::group(m, n, k, stride, padding, 1)?;
        let g_out = forward_group(&input, &std_bank, &g_spec)?;
        worst = worst.max(max_abs_diff(&std_out, &g_out)?);

        let h_spec = ConvSpec::het(m, n, k, stride, padding, 1)?;
        let h_out = forward(&input, &std_bank, &h_spec)?;
        worst = worst.max(max_abs_diff(&std_out, &h_out)?);

        let d_spec = ConvSpec::dual(m, n, k, stride, padding, 1)?;
        let d_bank = FilterBank::<E>::seeded(&d_spec, seed ^ (i as u64 * 37))?;
        let d_out = forward_dual(&input, &d_bank, &d_spec)?;
        let spatial_only = FilterBank { spatial: d_bank.spatial.clone(), pointwise: None };
        let (_, pw_branch) = forward_dual_branches(&input, &d_bank, &d_spec)?;
        let want = forward_standard(&input, &spatial_only, &std_spec)?.add(&pw_branch)?;
        worst = worst.max(max_abs_diff(&d_out, &want)?);
    }
    Ok(SweepReport::check(count, worst, tolerance))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CommunicationReport {
    pub cases: usize,
    pub dual_always_responds: bool,
    pub group_never_responds: bool,
}

/// Perturbing an input channel outside a filter's group changes a dual
/// layer's output for that filter (its 1 x 1 branch sees all channels) but
/// never a group layer's.
pub fn communication_sweep<E: Element>(seed: u64, count: usize) -> Result<CommunicationReport> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut dual_ok = true;
    let mut group_ok = true;
    for i in 0..count {
        let g = [2usize, 4][(rng.next_u64() % 2) as usize];
        let per = 1 + (rng.next_u64() % 3) as usize;
        let m = g * per;
        let n = g * per;
        let spec_d = ConvSpec::dual(m, n, 3, 1, 1, g)?;
        let spec_g = ConvSpec::group(m, n, 3, 1, 1, g)?;
        let shape = Shape4::new(1, m, 6, 6)?;
        let input = Tensor::<E>::seeded_random(shape, seed ^ (i as u64 * 101))?;
        let bank_d = FilterBank::<E>::seeded(&spec_d, seed ^ (i as u64 * 103))?;
        let bank_g = FilterBank { spatial: bank_d.spatial.clone(), pointwise: None };

        // Filter 0 lives in group 0; perturb a channel of the last group.
        let mut perturbed = input.clone();
        let c_outside = m - 1;
        let idx = shape.index(0, c_outside, 3, 3);
        perturbed.data_mut()[idx] += E::from_f64(0.5);

        let d0 = forward_dual(&input, &bank_d, &spec_d)?;
        let d1 = forward_dual(&perturbed, &bank_d, &spec_d)?;
        let g0 = forward_group(&input, &bank_g, &spec_g)?;
        let g1 = forward_group(&perturbed, &bank_g, &spec_g)?;

        let changed = |a: &Tensor<E>, b: &Tensor<E>| -> bool {
            let s = a.shape();
            let mut max = 0.0f64;
            for y in 0..s.height {
                for x in 0..s.width {
                    max = max.max((a.at(0, 0, y, x).to_f64() - b.at(0, 0, y, x).to_f64()).abs());
                }
            }
            max > 1e-9
        };
        if !changed(&d0, &d1) {
            dual_ok = false;
        }
        if changed(&g0, &g1) {
            group_ok = false;
        }
    }
    Ok(CommunicationReport {
        cases: count,
        dual_always_responds: dual_ok,
        group_never_responds: group_ok,
    })
}

/// Every forward map is linear in its input (no bias, no activation).
pub fn linearity_sweep(seed: u64, count: usize, tolerance: f64) -> Result<SweepReport> {
    let mut worst = 0.0f64;
    for case in sweep_cases(seed ^ 0x11ea, count) {
        let x = Tensor::<f64>::seeded_random(case.input_shape, case.seed)?;
        let y = Tensor::<f64>::seeded_random(case.input_shape, case.seed ^ 1)?;
        let bank = FilterBank::<f64>::seeded(&case.spec, case.seed ^ 2)?;
        let (a, b) = (1.7f64, -0.4f64);
        let combo = x.scale(a).add(&y.scale(b))?;
        let lhs = forward(&combo, &bank, &case.spec)?;
        let rhs = forward(&x, &bank, &case.spec)?
            .scale(a)
            .add(&forward(&y, &bank, &case.spec)?.scale(b))?;
        worst = worst.max(max_abs_diff(&lhs, &rhs)?);
    }
    Ok(SweepReport::check(count, worst, tolerance))
}

/// Layer-level gradient check: central finite differences of the squared-
/// output loss against backward(), every weight coordinate of small specs of
/// each kind plus randomized larger cases with sampled coordinates.
/// Returns the worst relative error (f64, step 1e-5).
pub fn gradient_sweep(seed: u64, cases_per_kind: usize) -> Result<f64> {
    let step = 1e-5;
    let mut worst = 0.0f64;
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);

    let specs: Vec<ConvSpec> = vec![
        ConvSpec::standard(3, 4, 3, 1, 1)?,
        ConvSpec::standard(2, 2, 5, 2, 2)?,
        ConvSpec::group(4, 4, 3, 1, 1, 2)?,
        ConvSpec::group(6, 3, 1, 2, 0, 3)?,
        ConvSpec::dual(4, 4, 3, 1, 1, 2)?,
        ConvSpec::dual(4, 2, 3, 2, 0, 2)?,
        ConvSpec::dual(6, 6, 5, 1, 2, 3)?,
        ConvSpec::het(4, 3, 3, 1, 1, 2)?,
        ConvSpec::het(6, 4, 3, 2, 1, 3)?,
        ConvSpec::depthwise_separable(3, 5, 3, 1, 1)?,
        ConvSpec::depthwise_separable(2, 3, 5, 2, 2)?,
    ];
    for (i, spec) in specs.iter().cycle().take(specs.len() * cases_per_kind.max(1)).enumerate() {
        let shape = Shape4::new(1, spec.in_channels, 6, 6)?;
        let x = Tensor::<f64>::seeded_random(shape, seed ^ (i as u64 * 7))?;
        let bank = FilterBank::<f64>::seeded(spec, seed ^ (i as u64 * 11))?;
        let out = forward(&x, &bank, spec)?;
        let grads = backward(&x, &bank, spec, &out)?;

        let loss = |x: &Tensor<f64>, w: &FilterBank<f64>| -> Result<f64> {
            Ok(forward(x, w, spec)?.data().iter().map(|&v| 0.5 * v * v).sum())
        };

        for wi in 0..bank.spatial.data().len() {
            let mut plus = bank.clone();
            plus.spatial.data_mut()[wi] += step;
            let mut minus = bank.clone();
            minus.spatial.data_mut()[wi] -= step;
            let numeric = (loss(&x, &plus)? - loss(&x, &minus)?) / (2.0 * step);
            worst = worst.max(rel(grads.d_spatial.data()[wi], numeric));
        }
        if let Some(pw) = &bank.pointwise {
            let d_pw = grads.d_pointwise.as_ref().expect("gradient present");
            for wi in 0..pw.data().len() {
                let mut plus = bank.clone();
                plus.pointwise.as_mut().unwrap().data_mut()[wi] += step;
                let mut minus = bank.clone();
                minus.pointwise.as_mut().unwrap().data_mut()[wi] -= step;
                let numeric = (loss(&x, &plus)? - loss(&x, &minus)?) / (2.0 * step);
                worst = worst.max(rel(d_pw.data()[wi], numeric));
            }
        }
        // Input gradient at sampled coordinates.
        for xi in (0..x.data().len()).step_by(7) {
            let mut plus = x.clone();
            plus.data_mut()[xi] += step;
            let mut minus = x.clone();
            minus.data_mut()[xi] -= step;
            let numeric = (loss(&plus, &bank)? - loss(&minus, &bank)?) / (2.0 * step);
            worst = worst.max(rel(grads.d_input.data()[xi], numeric));
        }
    }
    Ok(worst)
}

/// The instrumented oracle's MAC count equals the analytic per-layer FLOPs
/// for every spec in the sweep, exactly.
pub fn counting_sweep(seed: u64, count: usize) -> Result<usize> {
    let mut checked = 0usize;
    for case in sweep_cases(seed ^ 0xc047, count) {
        // Count per image: batch 1.
        let shape = Shape4::new(1, case.input_shape.channels, case.input_shape.height, case.input_shape.width)?;
        let input = Tensor::<f64>::seeded_random(shape, case.seed)?;
        let bank = FilterBank::<f64>::seeded(&case.spec, case.seed ^ 3)?;
        let (_, macs) = reference_direct_counted(&input, &bank, &case.spec)?;
        let out = case.spec.out_shape(shape)?;
        let analytic = conv_flops_at(&case.spec, out.height, out.width);
        if macs != analytic {
            return Err(Error::Spec(format!(
                "MAC counter {} != analytic {} for {:?}",
                macs, analytic, case.spec
            )));
        }
        checked += 1;
    }
    Ok(checked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_produces_requested_cases() {
        let cases = sweep_cases(1, 50);
        assert_eq!(cases.len(), 50);
        let kinds: std::collections::HashSet<_> =
            cases.iter().map(|c| c.spec.kind.token()).collect();
        assert_eq!(kinds.len(), 5);
    }

    #[test]
    fn small_equivalence_sweep_passes_both_precisions() {
        assert!(equivalence_sweep::<f32>(2, 25, 1e-5).unwrap().pass);
        assert!(equivalence_sweep::<f64>(2, 25, 1e-12).unwrap().pass);
    }

    #[test]
    fn small_decomposition_and_degeneracy() {
        assert!(decomposition_sweep::<f64>(3, 10, 1e-12).unwrap().pass);
        assert!(degeneracy_sweep::<f64>(3, 10, 1e-12).unwrap().pass);
    }

    #[test]
    fn communication_property_holds() {
        let r = communication_sweep::<f64>(4, 10).unwrap();
        assert!(r.dual_always_responds);
        assert!(r.group_never_responds);
    }

    #[test]
    fn linearity_holds() {
        assert!(linearity_sweep(5, 20, 1e-10).unwrap().pass);
    }

    #[test]
    fn counting_matches() {
        assert_eq!(counting_sweep(6, 30).unwrap(), 30);
    }
}
