//! Built-in host architectures at the documented dataset geometries.
//!
//! Each builder reconstructs the layer list that reproduces the published
//! cost totals; docs/models.md records the assumptions behind every
//! reconstruction (heads, stride layouts, normalization counting).

use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::tensor::Shape4;

use super::{Activation, ConvLayer, LayerDef, LayerOp, ModelConfig, PoolKind};

pub fn known_models() -> &'static [&'static str] {
    &["vgg16", "resnet50", "mobilenet_v1", "mobilenet_v2", "yolov3_backbone"]
}

pub fn known_variants(model: &str) -> &'static [&'static str] {
    match model {
        "vgg16" => &["cifar", "cifar10", "cifar100", "cifar10-2fc", "imagenet"],
        "resnet50" => &["cifar", "cifar10", "cifar100", "imagenet"],
        "mobilenet_v1" => &["cifar", "cifar10", "cifar100", "imagenet"],
        "mobilenet_v2" => &["cifar", "cifar10", "cifar100", "imagenet"],
        "yolov3_backbone" => &["voc", "voc-416"],
        _ => &[],
    }
}

/// Build a named architecture for a dataset geometry.
pub fn build(name: &str, variant: &str) -> Result<ModelConfig> {
    match name {
        "vgg16" => vgg16(variant),
        "resnet50" => resnet50(variant),
        "mobilenet_v1" => mobilenet_v1(variant),
        "mobilenet_v2" => mobilenet_v2(variant),
        "yolov3_backbone" => yolov3_backbone(variant),
        _ => Err(Error::Config(format!(
            "unknown model '{name}' (known: {})",
            known_models().join(", ")
        ))),
    }
}

struct Builder {
    layers: Vec<LayerDef>,
}

impl Builder {
    fn new() -> Self {
        Builder { layers: Vec::new() }
    }

    fn push(&mut self, name: impl Into<String>, op: LayerOp) -> String {
        let name = name.into();
        self.layers.push(LayerDef { name: name.clone(), op });
        name
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: impl Into<String>,
        spec: ConvSpec,
        bn: bool,
        bias: bool,
        act: Activation,
        eligible: bool,
        from: Option<String>,
    ) -> String {
        self.push(name, LayerOp::Conv(ConvLayer { spec, bn, bias, act, eligible, from }))
    }

    fn last_name(&self) -> String {
        self.layers.last().expect("non-empty").name.clone()
    }
}

fn vgg16(variant: &str) -> Result<ModelConfig> {
    // 13 conv layers in 5 blocks; block channel plan is the classic
    // 64-64 / 128-128 / 256x3 / 512x3 / 512x3 ladder with 2x2 max pools.
    let plan: &[&[usize]] = &[&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let (input, head, bn, bias): (Shape4, Vec<(usize, usize)>, bool, bool) = match variant {
        // CIFAR-10: single 512->10 classifier, batch-normalized convs.
        "cifar" | "cifar10" => (Shape4::new(1, 3, 32, 32)?, vec![(512, 10)], true, false),
        // CIFAR-100: three fully connected layers.
        "cifar100" => (
            Shape4::new(1, 3, 32, 32)?,
            vec![(512, 4096), (4096, 4096), (4096, 100)],
            true,
            false,
        ),
        // Two-FC head without batch norm; the geometry the published
        // heterogeneous-convolution rows are consistent with.
        "cifar10-2fc" => (Shape4::new(1, 3, 32, 32)?, vec![(512, 512), (512, 10)], false, false),
        // Classic configuration-D geometry with biases and no batch norm.
        "imagenet" => (
            Shape4::new(1, 3, 224, 224)?,
            vec![(25088, 4096), (4096, 4096), (4096, 1000)],
            false,
            true,
        ),
        _ => return Err(unknown_variant("vgg16", variant)),
    };

    let mut b = Builder::new();
    let mut in_ch = 3;
    let mut idx = 0;
    for (bi, block) in plan.iter().enumerate() {
        for &ch in *block {
            idx += 1;
            // The first conv layer is never replaced; the remaining twelve are.
            b.conv(
                format!("conv{}_{idx}", bi + 1),
                ConvSpec::standard(in_ch, ch, 3, 1, 1)?,
                bn,
                bias,
                Activation::Relu,
                idx > 1,
                None,
            );
            in_ch = ch;
        }
        b.push(format!("pool{}", bi + 1), LayerOp::Pool { kind: PoolKind::Max, extent: 2, stride: 2, padding: 0 });
    }
    for (i, (fin, fout)) in head.iter().enumerate() {
        b.push(
            format!("fc{}", i + 1),
            LayerOp::FullyConnected { inputs: *fin, outputs: *fout, bias: true },
        );
    }
    Ok(ModelConfig { name: format!("vgg16-{variant}"), input, layers: b.layers })
}

fn resnet50(variant: &str) -> Result<ModelConfig> {
    let (input, classes, imagenet_stem) = match variant {
        "cifar" | "cifar10" => (Shape4::new(1, 3, 32, 32)?, 10, false),
        "cifar100" => (Shape4::new(1, 3, 32, 32)?, 100, false),
        "imagenet" => (Shape4::new(1, 3, 224, 224)?, 1000, true),
        _ => return Err(unknown_variant("resnet50", variant)),
    };

    let mut b = Builder::new();
    if imagenet_stem {
        b.conv("stem", ConvSpec::standard(3, 64, 7, 2, 3)?, true, false, Activation::Relu, false, None);
        b.push("stem_pool", LayerOp::Pool { kind: PoolKind::Max, extent: 3, stride: 2, padding: 1 });
    } else {
        // CIFAR stem: 3x3 stride 1, no pool ("except the first layer" in the
        // replacement rule refers to this conv).
        b.conv("stem", ConvSpec::standard(3, 64, 3, 1, 1)?, true, false, Activation::Relu, false, None);
    }

    let stages: [(usize, usize, usize, usize); 4] =
        [(64, 256, 3, 1), (128, 512, 4, 2), (256, 1024, 6, 2), (512, 2048, 3, 2)];
    let mut in_ch = 64;
    for (si, (width, out_ch, blocks, first_stride)) in stages.iter().enumerate() {
        for blk in 0..*blocks {
            let stride = if blk == 0 { *first_stride } else { 1 };
            let tag = format!("s{}b{}", si + 1, blk + 1);
            let pre = if b.layers.is_empty() { None } else { Some(b.last_name()) };
            b.conv(
                format!("{tag}_reduce"),
                ConvSpec::standard(in_ch, *width, 1, 1, 0)?,
                true,
                false,
                Activation::Relu,
                false,
                None,
            );
            b.conv(
                format!("{tag}_conv3x3"),
                ConvSpec::standard(*width, *width, 3, stride, 1)?,
                true,
                false,
                Activation::Relu,
                true,
                None,
            );
            let expand = b.conv(
                format!("{tag}_expand"),
                ConvSpec::standard(*width, *out_ch, 1, 1, 0)?,
                true,
                false,
                Activation::None,
                false,
                None,
            );
            let shortcut_src = if blk == 0 {
                // Projection shortcut on the stage's first block.
                b.conv(
                    format!("{tag}_down"),
                    ConvSpec::standard(in_ch, *out_ch, 1, stride, 0)?,
                    true,
                    false,
                    Activation::None,
                    false,
                    pre,
                );
                expand
            } else {
                b.layers[b.layers.len() - 4].name.clone()
            };
            let from = if blk == 0 { shortcut_src } else { shortcut_src.clone() };
            b.push(format!("{tag}_add"), LayerOp::AddSkip { from });
            in_ch = *out_ch;
        }
    }
    let pool_extent = if imagenet_stem { 7 } else { 4 };
    b.push("avgpool", LayerOp::Pool { kind: PoolKind::Avg, extent: pool_extent, stride: pool_extent, padding: 0 });
    b.push("fc", LayerOp::FullyConnected { inputs: 2048, outputs: classes, bias: true });
    Ok(ModelConfig { name: format!("resnet50-{variant}"), input, layers: b.layers })
}

fn mobilenet_v1(variant: &str) -> Result<ModelConfig> {
    // Depthwise-separable block plan: (output channels, stride).
    let blocks: Vec<(usize, usize)> = vec![
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ];
    let (input, stem_stride, classes, pool) = match variant {
        "cifar" | "cifar10" => (Shape4::new(1, 3, 32, 32)?, 1, 10, 2),
        "cifar100" => (Shape4::new(1, 3, 32, 32)?, 1, 100, 2),
        "imagenet" => (Shape4::new(1, 3, 224, 224)?, 2, 1000, 7),
        _ => return Err(unknown_variant("mobilenet_v1", variant)),
    };

    let mut b = Builder::new();
    b.conv(
        "stem",
        ConvSpec::standard(3, 32, 3, stem_stride, 1)?,
        true,
        false,
        Activation::Relu,
        false,
        None,
    );
    let mut in_ch = 32;
    for (i, (out_ch, stride)) in blocks.iter().enumerate() {
        b.conv(
            format!("ds{}", i + 1),
            ConvSpec::depthwise_separable(in_ch, *out_ch, 3, *stride, 1)?,
            true,
            false,
            Activation::Relu,
            true,
            None,
        );
        in_ch = *out_ch;
    }
    b.push("avgpool", LayerOp::Pool { kind: PoolKind::Avg, extent: pool, stride: pool, padding: 0 });
    b.push("fc", LayerOp::FullyConnected { inputs: 1024, outputs: classes, bias: true });
    Ok(ModelConfig { name: format!("mobilenet_v1-{variant}"), input, layers: b.layers })
}

fn mobilenet_v2(variant: &str) -> Result<ModelConfig> {
    // Inverted-residual plan (expansion t, output channels c, repeats n) with
    // a per-variant first-block stride for each group.
    let plan: [(usize, usize, usize); 7] =
        [(1, 16, 1), (6, 24, 2), (6, 32, 3), (6, 64, 4), (6, 96, 3), (6, 160, 3), (6, 320, 1)];
    let (input, strides, classes, pool) = match variant {
        // CIFAR reconstruction: both published CIFAR tables carry identical
        // totals; this stride layout and 100-class head reproduce them within
        // tolerance (docs/models.md).
        "cifar" | "cifar10" | "cifar100" => {
            (Shape4::new(1, 3, 32, 32)?, [1, 1, 1, 2, 1, 2, 2], 100, 2)
        }
        "imagenet" => (Shape4::new(1, 3, 224, 224)?, [1, 2, 2, 2, 1, 2, 1], 1000, 7),
        _ => return Err(unknown_variant("mobilenet_v2", variant)),
    };

    let mut b = Builder::new();
    b.conv("stem", ConvSpec::standard(3, 32, 3, 2, 1)?, true, false, Activation::Relu6, false, None);
    let mut in_ch = 32;
    let mut blk = 0;
    for ((t, c, n), first_stride) in plan.iter().zip(strides) {
        for rep in 0..*n {
            blk += 1;
            let stride = if rep == 0 { first_stride } else { 1 };
            let expanded = t * in_ch;
            if *t != 1 {
                b.conv(
                    format!("ir{blk}_expand"),
                    ConvSpec::standard(in_ch, expanded, 1, 1, 0)?,
                    true,
                    false,
                    Activation::Relu6,
                    false,
                    None,
                );
            }
            let pre = if stride == 1 && in_ch == *c {
                Some(if *t != 1 {
                    b.layers[b.layers.len() - 2].name.clone()
                } else {
                    b.last_name()
                })
            } else {
                None
            };
            b.conv(
                format!("ir{blk}_dw"),
                ConvSpec::depthwise_separable(expanded, *c, 3, stride, 1)?,
                true,
                false,
                Activation::None,
                false,
                None,
            );
            if let Some(from) = pre {
                b.push(format!("ir{blk}_add"), LayerOp::AddSkip { from });
            }
            in_ch = *c;
        }
    }
    b.conv("head", ConvSpec::standard(320, 1280, 1, 1, 0)?, true, false, Activation::Relu6, false, None);
    b.push("avgpool", LayerOp::Pool { kind: PoolKind::Avg, extent: pool, stride: pool, padding: 0 });
    b.push("fc", LayerOp::FullyConnected { inputs: 1280, outputs: classes, bias: true });
    Ok(ModelConfig { name: format!("mobilenet_v2-{variant}"), input, layers: b.layers })
}

fn yolov3_backbone(variant: &str) -> Result<ModelConfig> {
    match variant {
        "voc" | "voc-416" => {}
        _ => return Err(unknown_variant("yolov3_backbone", variant)),
    }
    let input = Shape4::new(1, 3, 416, 416)?;
    let det_outputs = 75; // 3 anchors * (5 + 20 VOC classes)

    let mut b = Builder::new();
    let conv_bn = |b: &mut Builder, name: String, m: usize, n: usize, k: usize, s: usize, eligible: bool| -> Result<String> {
        let p = if k == 3 { 1 } else { 0 };
        Ok(b.conv(name, ConvSpec::standard(m, n, k, s, p)?, true, false, Activation::Relu, eligible, None))
    };

    // Darknet-53 ladder: stem, then five downsampling stages with residual
    // pairs (1x1 reduce, 3x3 expand, add).
    conv_bn(&mut b, "conv1".into(), 3, 32, 3, 1, false)?;
    let stages: [(usize, usize); 5] = [(64, 1), (128, 2), (256, 8), (512, 8), (1024, 4)];
    let mut in_ch = 32;
    for (si, (ch, repeats)) in stages.iter().enumerate() {
        conv_bn(&mut b, format!("d{}_down", si + 1), in_ch, *ch, 3, 2, true)?;
        in_ch = *ch;
        for r in 0..*repeats {
            let pre = b.last_name();
            conv_bn(&mut b, format!("d{}r{}_a", si + 1, r + 1), in_ch, in_ch / 2, 1, 1, false)?;
            conv_bn(&mut b, format!("d{}r{}_b", si + 1, r + 1), in_ch / 2, in_ch, 3, 1, true)?;
            b.push(format!("d{}r{}_add", si + 1, r + 1), LayerOp::AddSkip { from: pre });
        }
    }
    let backbone_52 = "d3r8_add".to_string(); // 256 channels at 52x52
    let backbone_26 = "d4r8_add".to_string(); // 512 channels at 26x26

    // Detection neck, largest-stride scale first.
    let neck = |b: &mut Builder, tag: &str, in_ch: usize, mid: usize| -> Result<String> {
        conv_bn(b, format!("{tag}_c1"), in_ch, mid, 1, 1, false)?;
        conv_bn(b, format!("{tag}_c2"), mid, mid * 2, 3, 1, true)?;
        conv_bn(b, format!("{tag}_c3"), mid * 2, mid, 1, 1, false)?;
        conv_bn(b, format!("{tag}_c4"), mid, mid * 2, 3, 1, true)?;
        Ok(conv_bn(b, format!("{tag}_c5"), mid * 2, mid, 1, 1, false)?)
    };
    let det = |b: &mut Builder, tag: &str, mid: usize| -> Result<()> {
        conv_bn(b, format!("{tag}_pre"), mid, mid * 2, 3, 1, true)?;
        b.conv(
            format!("{tag}_det"),
            ConvSpec::standard(mid * 2, det_outputs, 1, 1, 0)?,
            false,
            true,
            Activation::None,
            false,
            None,
        );
        Ok(())
    };

    let s1_c5 = neck(&mut b, "y1", 1024, 512)?;
    det(&mut b, "y1", 512)?;
    b.conv("y2_route", ConvSpec::standard(512, 256, 1, 1, 0)?, true, false, Activation::Relu, false, Some(s1_c5));
    b.push("y2_up", LayerOp::Upsample { factor: 2 });
    b.push("y2_cat", LayerOp::Concat { from: backbone_26 });
    let s2_c5 = neck(&mut b, "y2", 768, 256)?;
    det(&mut b, "y2", 256)?;
    b.conv("y3_route", ConvSpec::standard(256, 128, 1, 1, 0)?, true, false, Activation::Relu, false, Some(s2_c5));
    b.push("y3_up", LayerOp::Upsample { factor: 2 });
    b.push("y3_cat", LayerOp::Concat { from: backbone_52 });
    neck(&mut b, "y3", 384, 128)?;
    det(&mut b, "y3", 128)?;

    Ok(ModelConfig { name: format!("yolov3_backbone-{variant}"), input, layers: b.layers })
}

fn unknown_variant(model: &str, variant: &str) -> Error {
    Error::Config(format!(
        "unknown variant '{variant}' for {model} (known: {})",
        known_variants(model).join(", ")
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::model_cost;

    #[test]
    fn builders_are_geometry_consistent() {
        for (m, v) in [
            ("vgg16", "cifar10"),
            ("vgg16", "cifar100"),
            ("vgg16", "cifar10-2fc"),
            ("vgg16", "imagenet"),
            ("resnet50", "cifar10"),
            ("resnet50", "cifar100"),
            ("resnet50", "imagenet"),
            ("mobilenet_v1", "cifar10"),
            ("mobilenet_v1", "imagenet"),
            ("mobilenet_v2", "cifar"),
            ("mobilenet_v2", "imagenet"),
            ("yolov3_backbone", "voc-416"),
        ] {
            let cfg = build(m, v).unwrap();
            cfg.output_shapes().unwrap_or_else(|e| panic!("{m}-{v}: {e}"));
        }
    }

    #[test]
    fn vgg16_cifar10_structure() {
        let cfg = build("vgg16", "cifar10").unwrap();
        let convs: Vec<_> = cfg.conv_layers().collect();
        assert_eq!(convs.len(), 13);
        assert!(!convs[0].1.eligible);
        assert!(convs[1..].iter().all(|(_, c)| c.eligible));
        let fcs = cfg
            .layers
            .iter()
            .filter(|l| matches!(l.op, LayerOp::FullyConnected { .. }))
            .count();
        assert_eq!(fcs, 1);
    }

    #[test]
    fn baseline_costs_hit_published_totals() {
        let cases = [
            ("vgg16", "cifar10", 313_201_664u128, 14_724_042u128),
            ("resnet50", "cifar10", 1_297_829_888, 23_520_842),
            ("resnet50", "imagenet", 4_089_184_256, 25_557_032),
            ("vgg16", "imagenet", 15_470_264_320, 138_357_544),
            ("mobilenet_v1", "cifar10", 46_354_432, 3_217_226),
            ("yolov3_backbone", "voc-416", 32_713_987_072, 61_626_049),
        ];
        for (m, v, flops, params) in cases {
            let cost = model_cost(&build(m, v).unwrap()).unwrap();
            assert_eq!(cost.total.flops, flops, "{m}-{v} flops");
            assert_eq!(cost.total.params, params, "{m}-{v} params");
        }
    }

    #[test]
    fn unknown_names_error() {
        assert!(build("vgg19", "cifar").is_err());
        assert!(build("vgg16", "svhn").is_err());
    }
}
