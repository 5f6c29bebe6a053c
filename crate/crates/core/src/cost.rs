//! Closed-form FLOP and parameter counting.
//!
//! 1 FLOP = 1 multiply-accumulate; all counts are exact integers (`u128`)
//! and reduction ratios are exact rationals. Convolution MACs and weights
//! follow the operator structure; pooling, batch-norm and activations cost
//! no FLOPs, while batch-norm affine scalars and biases can be counted
//! structurally per layer where a host architecture carries them.

use num_rational::Ratio;

use crate::conv::{ConvKind, ConvSpec};
use crate::error::{Error, Result};
use crate::zoo::{LayerOp, ModelConfig};

/// Multiply-accumulate and weight-scalar counts of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct LayerCost {
    pub flops: u128,
    pub params: u128,
}

impl std::ops::Add for LayerCost {
    type Output = LayerCost;
    fn add(self, rhs: LayerCost) -> LayerCost {
        LayerCost { flops: self.flops + rhs.flops, params: self.params + rhs.params }
    }
}

impl std::ops::AddAssign for LayerCost {
    fn add_assign(&mut self, rhs: LayerCost) {
        self.flops += rhs.flops;
        self.params += rhs.params;
    }
}

/// Dual-layer cost split into its two kernel populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostBreakdown {
    /// Combined K x K + 1 x 1 kernels on the group's channel slice.
    pub combined_branch: LayerCost,
    /// Remaining 1 x 1 pointwise kernels.
    pub pointwise_branch: LayerCost,
    pub total: LayerCost,
}

fn positive(name: &str, v: u128) -> Result<u128> {
    if v == 0 {
        return Err(Error::Spec(format!("{name} must be >= 1")));
    }
    Ok(v)
}

/// Standard convolution: D_o^2 * K^2 * M * N.
pub fn flops_standard(d_o: u128, k: u128, m: u128, n: u128) -> Result<u128> {
    for (name, v) in [("D_o", d_o), ("K", k), ("M", m), ("N", n)] {
        positive(name, v)?;
    }
    Ok(d_o * d_o * k * k * m * n)
}

/// Dual convolution, split per kernel population:
/// combined = (D_o^2 K^2 M N + D_o^2 M N) / G, pointwise = D_o^2 M N (1 - 1/G),
/// total = D_o^2 K^2 M N / G + D_o^2 M N.
pub fn flops_dual(d_o: u128, k: u128, m: u128, n: u128, g: u128) -> Result<CostBreakdown> {
    positive("G", g)?;
    if m % g != 0 || n % g != 0 {
        return Err(Error::Spec(format!("G={g} must divide M={m} and N={n}")));
    }
    let base = flops_standard(d_o, k, m, n)?;
    let pw_all = d_o * d_o * m * n;
    let combined_flops = (base + pw_all) / g;
    let pointwise_flops = pw_all - pw_all / g;
    let combined_params = (k * k * m * n + m * n) / g;
    let pointwise_params = m * n - m * n / g;
    Ok(CostBreakdown {
        combined_branch: LayerCost { flops: combined_flops, params: combined_params },
        pointwise_branch: LayerCost { flops: pointwise_flops, params: pointwise_params },
        total: LayerCost {
            flops: combined_flops + pointwise_flops,
            params: combined_params + pointwise_params,
        },
    })
}

/// Depthwise-separable convolution: D_o^2 * (K^2 M + M N).
pub fn flops_depthwise_separable(d_o: u128, k: u128, m: u128, n: u128) -> Result<u128> {
    for (name, v) in [("D_o", d_o), ("K", k), ("M", m), ("N", n)] {
        positive(name, v)?;
    }
    Ok(d_o * d_o * (k * k * m + m * n))
}

/// Group convolution: D_o^2 K^2 M N / G.
pub fn flops_group(d_o: u128, k: u128, m: u128, n: u128, g: u128) -> Result<u128> {
    positive("G", g)?;
    if m % g != 0 || n % g != 0 {
        return Err(Error::Spec(format!("G={g} must divide M={m} and N={n}")));
    }
    Ok(flops_standard(d_o, k, m, n)? / g)
}

/// Heterogeneous convolution: D_o^2 M N (K^2 + P - 1) / P.
pub fn flops_het(d_o: u128, k: u128, m: u128, n: u128, p: u128) -> Result<u128> {
    positive("P", p)?;
    if m % p != 0 {
        return Err(Error::Spec(format!("P={p} must divide M={m}")));
    }
    Ok(d_o * d_o * m * n * (k * k + p - 1) / p)
}

/// Exact FLOP reduction ratio of an operator against standard convolution at
/// identical geometry.
pub fn reduction_ratio(
    kind: ConvKind,
    k: u128,
    g: Option<u128>,
    p: Option<u128>,
    n: Option<u128>,
) -> Result<Ratio<u128>> {
    positive("K", k)?;
    let k2 = k * k;
    Ok(match kind {
        ConvKind::Standard => Ratio::from_integer(1),
        ConvKind::Dual => {
            let g = g.ok_or_else(|| Error::Spec("dual ratio requires G".into()))?;
            positive("G", g)?;
            Ratio::new(1, g) + Ratio::new(1, k2)
        }
        ConvKind::DepthwiseSeparable => {
            let n = n.ok_or_else(|| Error::Spec("depthwise-separable ratio requires N".into()))?;
            positive("N", n)?;
            Ratio::new(1, n) + Ratio::new(1, k2)
        }
        ConvKind::Group => {
            let g = g.ok_or_else(|| Error::Spec("group ratio requires G".into()))?;
            positive("G", g)?;
            Ratio::new(1, g)
        }
        ConvKind::Het => {
            let p = p.ok_or_else(|| Error::Spec("het ratio requires P".into()))?;
            positive("P", p)?;
            Ratio::new(1, p) + Ratio::new(1, k2) - Ratio::new(1, p * k2)
        }
    })
}

/// Weight scalar count of one layer, bias-free, from the closed forms:
/// standard K^2 M N; group K^2 M N / G; dual K^2 M N / G + M N;
/// depthwise-separable K^2 M + M N; het M N (K^2 + P - 1) / P.
pub fn params_layer(spec: &ConvSpec) -> u128 {
    let m = spec.in_channels as u128;
    let n = spec.out_channels as u128;
    let k2 = (spec.kernel * spec.kernel) as u128;
    match spec.kind {
        ConvKind::Standard => k2 * m * n,
        ConvKind::Group => k2 * m * n / spec.groups as u128,
        ConvKind::Dual => k2 * m * n / spec.groups as u128 + m * n,
        ConvKind::DepthwiseSeparable => k2 * m + m * n,
        ConvKind::Het => m * n * (k2 + spec.part as u128 - 1) / spec.part as u128,
    }
}

/// Per-layer convolution MACs for a possibly non-square output plane.
pub fn conv_flops_at(spec: &ConvSpec, out_h: usize, out_w: usize) -> u128 {
    let area = (out_h * out_w) as u128;
    let m = spec.in_channels as u128;
    let n = spec.out_channels as u128;
    let k2 = (spec.kernel * spec.kernel) as u128;
    match spec.kind {
        ConvKind::Standard => area * k2 * m * n,
        ConvKind::Group => area * k2 * m * n / spec.groups as u128,
        ConvKind::Dual => area * (k2 * m * n / spec.groups as u128 + m * n),
        ConvKind::DepthwiseSeparable => area * (k2 * m + m * n),
        ConvKind::Het => area * m * n * (k2 + spec.part as u128 - 1) / spec.part as u128,
    }
}

/// Structural (non-convolution) parameters a host architecture attaches to a
/// conv layer: batch-norm affine pairs and biases. Depthwise-separable
/// layers normalize both stages.
pub fn structural_params(spec: &ConvSpec, bn: bool, bias: bool) -> u128 {
    let norm_channels = match spec.kind {
        ConvKind::DepthwiseSeparable => spec.in_channels + spec.out_channels,
        _ => spec.out_channels,
    } as u128;
    let mut extra = 0;
    if bn {
        extra += 2 * norm_channels;
    }
    if bias {
        extra += norm_channels;
    }
    extra
}

/// One row of a whole-model cost report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LayerCostRow {
    pub name: String,
    pub op: String,
    pub out_channels: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub flops: u128,
    pub params: u128,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ModelCost {
    pub model: String,
    pub rows: Vec<LayerCostRow>,
    pub total: LayerCost,
}

/// Walk a model configuration, checking that layer geometry chains, and sum
/// per-layer costs. Counts are per image (batch 1).
pub fn model_cost(config: &ModelConfig) -> Result<ModelCost> {
    let shapes = config.output_shapes()?;
    let mut rows = Vec::with_capacity(config.layers.len());
    let mut total = LayerCost::default();

    for (i, layer) in config.layers.iter().enumerate() {
        let out = shapes[i];
        let cost = match &layer.op {
            LayerOp::Conv(conv) => {
                let flops = conv_flops_at(&conv.spec, out.height, out.width);
                let params =
                    params_layer(&conv.spec) + structural_params(&conv.spec, conv.bn, conv.bias);
                LayerCost { flops, params }
            }
            LayerOp::FullyConnected { inputs, outputs, bias } => {
                let mut params = (*inputs as u128) * (*outputs as u128);
                if *bias {
                    params += *outputs as u128;
                }
                LayerCost { flops: (*inputs as u128) * (*outputs as u128), params }
            }
            LayerOp::Pool { .. }
            | LayerOp::AddSkip { .. }
            | LayerOp::Concat { .. }
            | LayerOp::Upsample { .. }
            | LayerOp::BlockMarker { .. } => LayerCost::default(),
        };
        total += cost;
        rows.push(LayerCostRow {
            name: layer.name.clone(),
            op: layer.op.describe(),
            out_channels: out.channels,
            out_height: out.height,
            out_width: out.width,
            flops: cost.flops,
            params: cost.params,
        });
    }
    Ok(ModelCost { model: config.name.clone(), rows, total })
}

/// Render a count in the table's human units with round-half-even at two
/// decimals: >= 1e9 -> G, >= 1e6 -> M, >= 1e3 -> K.
pub fn human_units(v: u128) -> String {
    let (unit, suffix) = if v >= 1_000_000_000 {
        (1_000_000_000u128, "G")
    } else if v >= 1_000_000 {
        (1_000_000u128, "M")
    } else if v >= 1_000 {
        (1_000u128, "K")
    } else {
        return v.to_string();
    };
    let hundredths = round_half_even_hundredths(v, unit);
    format!("{}.{:02}{}", hundredths / 100, hundredths % 100, suffix)
}

/// round(v / unit * 100) with ties to even, in exact integer arithmetic.
fn round_half_even_hundredths(v: u128, unit: u128) -> u128 {
    let scaled = v * 100;
    let q = scaled / unit;
    let rem = scaled % unit;
    match (2 * rem).cmp(&unit) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_flops_examples() {
        assert_eq!(flops_standard(32, 3, 64, 64).unwrap(), 37_748_736);
        assert_eq!(flops_standard(1, 1, 1, 1).unwrap(), 1);
        assert!(flops_standard(0, 3, 4, 4).is_err());
    }

    #[test]
    fn dual_flops_examples() {
        let c = flops_dual(32, 3, 64, 64, 4).unwrap();
        assert_eq!(c.combined_branch.flops, 9_437_184 + 1_048_576);
        assert_eq!(c.pointwise_branch.flops, 3_145_728);
        assert_eq!(c.total.flops, 13_631_488);
        assert_eq!(
            c.total.flops,
            c.combined_branch.flops + c.pointwise_branch.flops
        );

        // G = 1: total = standard + D_o^2 M N.
        let c1 = flops_dual(32, 3, 64, 64, 1).unwrap();
        assert_eq!(c1.total.flops, flops_standard(32, 3, 64, 64).unwrap() + 1024 * 4096);
        assert_eq!(c1.pointwise_branch.flops, 0);

        assert!(flops_dual(32, 3, 63, 64, 4).is_err());
    }

    #[test]
    fn group_and_het_and_dsc_examples() {
        assert_eq!(flops_group(32, 3, 64, 64, 4).unwrap(), 9_437_184);
        assert_eq!(flops_group(32, 3, 64, 64, 1).unwrap(), flops_standard(32, 3, 64, 64).unwrap());
        assert_eq!(flops_het(32, 3, 64, 64, 4).unwrap(), 12_582_912);
        assert_eq!(flops_het(32, 3, 64, 64, 1).unwrap(), flops_standard(32, 3, 64, 64).unwrap());
        assert_eq!(flops_depthwise_separable(1, 3, 2, 4).unwrap(), 26);
        // K = 1: D_o^2 * M * (1 + N).
        assert_eq!(flops_depthwise_separable(4, 1, 3, 5).unwrap(), 16 * 3 * 6);
    }

    #[test]
    fn ratio_spot_values() {
        use ConvKind::*;
        assert_eq!(reduction_ratio(Dual, 3, Some(4), None, None).unwrap(), Ratio::new(13, 36));
        assert_eq!(reduction_ratio(Group, 3, Some(8), None, None).unwrap(), Ratio::new(1, 8));
        assert_eq!(reduction_ratio(Het, 3, None, Some(4), None).unwrap(), Ratio::new(1, 3));
        assert_eq!(
            reduction_ratio(DepthwiseSeparable, 3, None, None, Some(9)).unwrap(),
            Ratio::new(2, 9)
        );
        assert!(reduction_ratio(Dual, 3, None, None, None).is_err());
    }

    #[test]
    fn dual_ratio_limit_approaches_one_ninth() {
        // Large G drives the ratio toward 1/K^2: the 8-9x speedup regime.
        let r = reduction_ratio(ConvKind::Dual, 3, Some(1_000_000), None, None).unwrap();
        let as_f64 = *r.numer() as f64 / *r.denom() as f64;
        assert!((as_f64 - 1.0 / 9.0).abs() < 1e-5);
    }

    #[test]
    fn params_examples() {
        let dual = ConvSpec::dual(64, 64, 3, 1, 1, 4).unwrap();
        assert_eq!(params_layer(&dual), 13_312);
        let std = ConvSpec::standard(3, 64, 3, 1, 1).unwrap();
        assert_eq!(params_layer(&std), 1_728);
    }

    #[test]
    fn params_match_filter_bank_storage() {
        for spec in [
            ConvSpec::standard(6, 8, 3, 1, 1).unwrap(),
            ConvSpec::group(8, 8, 5, 1, 2, 4).unwrap(),
            ConvSpec::dual(8, 4, 3, 2, 1, 2).unwrap(),
            ConvSpec::het(8, 6, 3, 1, 1, 4).unwrap(),
            ConvSpec::depthwise_separable(6, 10, 3, 1, 1).unwrap(),
        ] {
            let bank = crate::conv::FilterBank::<f32>::zeros(&spec).unwrap();
            assert_eq!(params_layer(&spec), bank.param_count(), "{spec:?}");
        }
    }

    #[test]
    fn ratio_consistency_with_integer_flops() {
        for g in [1u128, 2, 4, 8, 16, 32] {
            for k in [1u128, 3, 5] {
                for n in [16u128, 64, 256, 512] {
                    let m = n;
                    if m % g != 0 {
                        continue;
                    }
                    let d = 14u128;
                    let std = flops_standard(d, k, m, n).unwrap();
                    let dual = flops_dual(d, k, m, n, g).unwrap().total.flops;
                    assert_eq!(
                        Ratio::new(dual, std),
                        reduction_ratio(ConvKind::Dual, k, Some(g), None, None).unwrap()
                    );
                    let grp = flops_group(d, k, m, n, g).unwrap();
                    assert_eq!(
                        Ratio::new(grp, std),
                        reduction_ratio(ConvKind::Group, k, Some(g), None, None).unwrap()
                    );
                    if m % g == 0 {
                        let het = flops_het(d, k, m, n, g).unwrap();
                        assert_eq!(
                            Ratio::new(het, std),
                            reduction_ratio(ConvKind::Het, k, None, Some(g), None).unwrap()
                        );
                    }
                    let dsc = flops_depthwise_separable(d, k, m, n).unwrap();
                    assert_eq!(
                        Ratio::new(dsc, std),
                        reduction_ratio(ConvKind::DepthwiseSeparable, k, None, None, Some(n))
                            .unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn dual_flops_strictly_decrease_in_g() {
        let mut prev = u128::MAX;
        for g in [1u128, 2, 4, 8, 16, 32, 64] {
            let f = flops_dual(28, 3, 256, 256, g).unwrap().total.flops;
            assert!(f < prev, "G={g} not decreasing");
            prev = f;
        }
    }

    #[test]
    fn dominance_ordering_at_equal_alpha() {
        // group < het < dual < standard for K = 3 once channels are large.
        for alpha in [2u128, 4, 8, 16] {
            for n in [64u128, 128, 256] {
                let std = flops_standard(16, 3, n, n).unwrap();
                let grp = flops_group(16, 3, n, n, alpha).unwrap();
                let het = flops_het(16, 3, n, n, alpha).unwrap();
                let dual = flops_dual(16, 3, n, n, alpha).unwrap().total.flops;
                assert!(grp < het && het < dual && dual < std, "alpha={alpha} n={n}");
            }
        }
    }

    #[test]
    fn human_units_formatting() {
        assert_eq!(human_units(313_196_544), "313.20M");
        assert_eq!(human_units(13_631_488), "13.63M");
        assert_eq!(human_units(1_297_829_888), "1.30G");
        assert_eq!(human_units(916_920), "916.92K");
        assert_eq!(human_units(950), "950");
        // Ties round to even in the hundredths digit.
        assert_eq!(human_units(1_005_000), "1.00M");
        assert_eq!(human_units(1_015_000), "1.02M");
    }
}
