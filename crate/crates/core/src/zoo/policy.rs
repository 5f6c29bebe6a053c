//! Replacement policies: rule sets that rewrite eligible layers of a host
//! network to an efficient operator kind without touching channel counts,
//! strides or padding.

use crate::conv::{ConvKind, ConvSpec};
use crate::error::{Error, Result};

use super::{Activation, ConvLayer, LayerDef, LayerOp, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrideFilter {
    /// Only stride-1 layers.
    One,
    /// Stride 1 and 2 alike.
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyRule {
    /// Rewrite eligible standard 3x3 conv layers in place.
    Std3x3(StrideFilter),
    /// Rewrite eligible depthwise-separable layers to a single layer of the
    /// target kind with the same (M, N, K, stride, padding).
    DscMerge,
    /// Collapse each inverted-residual block (expansion 1x1 + depthwise
    /// separable, plus its skip) into one 3x3 layer of the target kind
    /// between the block's outer channel counts.
    InvertedResidualMerge,
}

impl PolicyRule {
    pub fn id(&self) -> &'static str {
        match self {
            PolicyRule::Std3x3(StrideFilter::One) => "std3x3-s1",
            PolicyRule::Std3x3(StrideFilter::Any) => "std3x3",
            PolicyRule::DscMerge => "ds-merge",
            PolicyRule::InvertedResidualMerge => "ir-merge",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "std3x3-s1" => PolicyRule::Std3x3(StrideFilter::One),
            "std3x3" => PolicyRule::Std3x3(StrideFilter::Any),
            "ds-merge" => PolicyRule::DscMerge,
            "ir-merge" => PolicyRule::InvertedResidualMerge,
            _ => return Err(Error::Policy(format!("unknown rule id '{id}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplacementPolicy {
    /// Target kind: Dual, Group or Het.
    pub kind: ConvKind,
    /// G for Dual/Group, P for Het.
    pub alpha: usize,
    pub rule: PolicyRule,
    /// Leave layers whose channel counts the alpha does not divide
    /// untouched instead of failing. Off by default; the documented
    /// inverted-residual reference rows need it.
    pub skip_indivisible: bool,
}

impl ReplacementPolicy {
    pub fn new(kind: ConvKind, alpha: usize, rule: PolicyRule) -> Result<Self> {
        match kind {
            ConvKind::Dual | ConvKind::Group | ConvKind::Het => {}
            _ => return Err(Error::Policy(format!("{kind:?} is not a replacement target"))),
        }
        if alpha == 0 {
            return Err(Error::Policy("G/P must be >= 1".into()));
        }
        Ok(ReplacementPolicy { kind, alpha, rule, skip_indivisible: false })
    }

    /// Default rule the published experiments use for each model.
    pub fn default_rule(model: &str, variant: &str) -> PolicyRule {
        match model {
            "resnet50" if variant == "imagenet" => PolicyRule::Std3x3(StrideFilter::Any),
            "resnet50" | "yolov3_backbone" => PolicyRule::Std3x3(StrideFilter::One),
            "mobilenet_v1" => PolicyRule::DscMerge,
            "mobilenet_v2" => PolicyRule::InvertedResidualMerge,
            _ => PolicyRule::Std3x3(StrideFilter::Any),
        }
    }

    fn divides(&self, m: usize, n: usize) -> bool {
        match self.kind {
            ConvKind::Het => m % self.alpha == 0,
            _ => m % self.alpha == 0 && n % self.alpha == 0,
        }
    }

    fn retarget(&self, spec: &ConvSpec, layer_name: &str) -> Result<Option<ConvSpec>> {
        if !self.divides(spec.in_channels, spec.out_channels) {
            if self.skip_indivisible {
                return Ok(None);
            }
            return Err(Error::Policy(format!(
                "layer '{layer_name}': {}={} does not divide M={} / N={}",
                if self.kind == ConvKind::Het { "P" } else { "G" },
                self.alpha,
                spec.in_channels,
                spec.out_channels
            )));
        }
        let (g, p) = match self.kind {
            ConvKind::Het => (1, self.alpha),
            _ => (self.alpha, 1),
        };
        Some(ConvSpec::new(
            self.kind,
            spec.in_channels,
            spec.out_channels,
            spec.kernel,
            spec.stride,
            spec.padding,
            g,
            p,
        ))
        .transpose()
    }
}

/// Apply a policy, returning a new configuration. Selected layers change
/// only their kind and G/P; channel counts, strides and padding are kept.
pub fn apply_policy(config: &ModelConfig, policy: &ReplacementPolicy) -> Result<ModelConfig> {
    let mut out = config.clone();
    out.name = format!(
        "{}+{}{}",
        config.name,
        policy.kind.token(),
        if policy.rule == PolicyRule::DscMerge || policy.rule == PolicyRule::InvertedResidualMerge
        {
            format!("-g{}", policy.alpha)
        } else {
            format!("-{}{}", if policy.kind == ConvKind::Het { "p" } else { "g" }, policy.alpha)
        }
    );

    match policy.rule {
        PolicyRule::Std3x3(filter) => {
            for layer in &mut out.layers {
                if let LayerOp::Conv(conv) = &mut layer.op {
                    let spec = conv.spec;
                    let selected = conv.eligible
                        && spec.kind == ConvKind::Standard
                        && spec.kernel == 3
                        && (filter == StrideFilter::Any || spec.stride == 1);
                    if selected {
                        if let Some(new_spec) = policy.retarget(&spec, &layer.name)? {
                            conv.spec = new_spec;
                        }
                    }
                }
            }
        }
        PolicyRule::DscMerge => {
            for layer in &mut out.layers {
                if let LayerOp::Conv(conv) = &mut layer.op {
                    if conv.eligible && conv.spec.kind == ConvKind::DepthwiseSeparable {
                        if let Some(new_spec) = policy.retarget(&conv.spec, &layer.name)? {
                            conv.spec = new_spec;
                        }
                    }
                }
            }
        }
        PolicyRule::InvertedResidualMerge => {
            out.layers = merge_inverted_residuals(&out.layers, policy)?;
        }
    }
    out.output_shapes()?;
    Ok(out)
}

/// Scan for [expand 1x1 std] + [depthwise separable] (+ optional skip)
/// patterns and collapse each into one layer of the target kind. The merged
/// layer keeps the block's outer (M, N) and the depthwise stage's stride,
/// with batch norm and rectifier-6 annotated after it.
fn merge_inverted_residuals(
    layers: &[LayerDef],
    policy: &ReplacementPolicy,
) -> Result<Vec<LayerDef>> {
    let mut out: Vec<LayerDef> = Vec::with_capacity(layers.len());
    let mut i = 0;
    while i < layers.len() {
        let (expand, dsc_idx) = match conv_at(layers, i) {
            Some(c)
                if c.spec.kind == ConvKind::Standard
                    && c.spec.kernel == 1
                    && matches!(
                        conv_at(layers, i + 1),
                        Some(n) if n.spec.kind == ConvKind::DepthwiseSeparable
                            && n.spec.in_channels == c.spec.out_channels
                    ) =>
            {
                (Some(c), i + 1)
            }
            Some(c) if c.spec.kind == ConvKind::DepthwiseSeparable => (None, i),
            _ => {
                out.push(layers[i].clone());
                i += 1;
                continue;
            }
        };
        let dsc = conv_at(layers, dsc_idx).expect("checked");
        let m = expand.map(|e| e.spec.in_channels).unwrap_or(dsc.spec.in_channels);
        let n = dsc.spec.out_channels;
        let probe =
            ConvSpec::new(ConvKind::Standard, m, n, 3, dsc.spec.stride, dsc.spec.padding, 1, 1)?;
        match policy.retarget(&probe, &layers[dsc_idx].name)? {
            Some(new_spec) => {
                out.push(LayerDef {
                    name: format!("{}_merged", layers[dsc_idx].name),
                    op: LayerOp::Conv(ConvLayer {
                        spec: new_spec,
                        bn: true,
                        bias: false,
                        act: Activation::Relu6,
                        eligible: false,
                        from: None,
                    }),
                });
                i = dsc_idx + 1;
                // Drop the block's residual add; the merged layer replaces
                // the whole block.
                if matches!(layers.get(i).map(|l| &l.op), Some(LayerOp::AddSkip { .. })) {
                    i += 1;
                }
            }
            None => {
                out.push(layers[i].clone());
                if dsc_idx != i {
                    out.push(layers[dsc_idx].clone());
                }
                i = dsc_idx + 1;
                if let Some(l) = layers.get(i) {
                    if matches!(l.op, LayerOp::AddSkip { .. }) {
                        out.push(l.clone());
                        i += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn conv_at(layers: &[LayerDef], i: usize) -> Option<&ConvLayer> {
    match layers.get(i).map(|l| &l.op) {
        Some(LayerOp::Conv(c)) => Some(c),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::model_cost;
    use crate::zoo::build;

    #[test]
    fn vgg_policy_rewrites_last_twelve() {
        let cfg = build("vgg16", "cifar10").unwrap();
        let pol = ReplacementPolicy::new(ConvKind::Dual, 4, PolicyRule::Std3x3(StrideFilter::Any))
            .unwrap();
        let out = apply_policy(&cfg, &pol).unwrap();
        let kinds: Vec<_> = out.conv_layers().map(|(_, c)| c.spec.kind).collect();
        assert_eq!(kinds[0], ConvKind::Standard);
        assert!(kinds[1..].iter().all(|&k| k == ConvKind::Dual));
        // Channels, strides and padding untouched.
        for ((_, a), (_, b)) in cfg.conv_layers().zip(out.conv_layers()) {
            assert_eq!(a.spec.in_channels, b.spec.in_channels);
            assert_eq!(a.spec.out_channels, b.spec.out_channels);
            assert_eq!(a.spec.stride, b.spec.stride);
            assert_eq!(a.spec.padding, b.spec.padding);
        }
    }

    #[test]
    fn policy_is_idempotent() {
        let cfg = build("vgg16", "cifar10").unwrap();
        let pol = ReplacementPolicy::new(ConvKind::Group, 8, PolicyRule::Std3x3(StrideFilter::Any))
            .unwrap();
        let once = apply_policy(&cfg, &pol).unwrap();
        let twice = apply_policy(&once, &pol).unwrap();
        assert_eq!(once.layers, twice.layers);
    }

    #[test]
    fn empty_selection_changes_nothing() {
        let cfg = build("vgg16", "cifar10").unwrap();
        // Het with P = 64 never divides the first eligible layer's M = 64?
        // It does; use the stride-1 filter on a model with no eligible
        // stride-2 layers instead: select nothing via a kind mismatch seam.
        let pol =
            ReplacementPolicy::new(ConvKind::Dual, 2, PolicyRule::DscMerge).unwrap();
        let out = apply_policy(&cfg, &pol).unwrap();
        assert_eq!(cfg.layers, out.layers);
    }

    #[test]
    fn indivisible_selection_names_the_layer() {
        let cfg = build("vgg16", "cifar10").unwrap();
        let pol = ReplacementPolicy::new(ConvKind::Dual, 48, PolicyRule::Std3x3(StrideFilter::Any))
            .unwrap();
        let err = apply_policy(&cfg, &pol).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv1_2"), "unexpected: {msg}");
    }

    #[test]
    fn resnet_cifar_policy_spares_stride_two() {
        let cfg = build("resnet50", "cifar10").unwrap();
        let pol = ReplacementPolicy::new(ConvKind::Dual, 8, PolicyRule::Std3x3(StrideFilter::One))
            .unwrap();
        let out = apply_policy(&cfg, &pol).unwrap();
        let duals = out
            .conv_layers()
            .filter(|(_, c)| c.spec.kind == ConvKind::Dual)
            .count();
        assert_eq!(duals, 13);
        for (l, c) in out.conv_layers() {
            if c.spec.kind == ConvKind::Dual {
                assert_eq!(c.spec.stride, 1, "{}", l.name);
            }
        }
    }

    #[test]
    fn mobilenet_v1_merge_costs_match_published_row() {
        let cfg = build("mobilenet_v1", "cifar10").unwrap();
        let pol = ReplacementPolicy::new(ConvKind::Dual, 2, PolicyRule::DscMerge).unwrap();
        let out = apply_policy(&cfg, &pol).unwrap();
        let cost = model_cost(&out).unwrap();
        assert_eq!(cost.total.flops, 243_116_032);
        assert_eq!(cost.total.params, 17_290_794);
    }

    #[test]
    fn inverted_residual_merge_collapses_blocks() {
        let cfg = build("mobilenet_v2", "cifar").unwrap();
        let pol =
            ReplacementPolicy::new(ConvKind::Dual, 2, PolicyRule::InvertedResidualMerge).unwrap();
        let out = apply_policy(&cfg, &pol).unwrap();
        // 17 blocks + stem + head + pool + fc.
        let convs: Vec<_> = out.conv_layers().collect();
        assert_eq!(convs.len(), 19);
        let duals = convs.iter().filter(|(_, c)| c.spec.kind == ConvKind::Dual).count();
        assert_eq!(duals, 17);
        assert!(out.layers.iter().all(|l| !matches!(l.op, LayerOp::AddSkip { .. })));
        out.output_shapes().unwrap();
        // Re-application is a no-op.
        let again = apply_policy(&out, &pol).unwrap();
        assert_eq!(out.layers, again.layers);
    }
}
