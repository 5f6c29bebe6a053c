//! Reference cost rows from the published tables, embedded for the
//! `analyze --paper-tables` self-audit. Each row carries its table number
//! and printed label as provenance, the reconstruction it is evaluated
//! against (model, variant, policy), and the comparison tolerance.
//!
//! Rows with `gated: false` are reported but not enforced: the published
//! MobileNetV2 converted-variant numbers are not reproducible from any
//! single block-to-layer replacement rule (docs/models.md), so they are
//! listed for reference only.

use crate::conv::ConvKind;
use crate::cost::{model_cost, LayerCost};
use crate::error::Result;

use super::{apply_policy, build, PolicyRule, ReplacementPolicy};

#[derive(Debug, Clone, Copy)]
pub struct PaperRow {
    /// Table number in the publication.
    pub table: &'static str,
    /// Row label as printed there.
    pub label: &'static str,
    pub model: &'static str,
    pub variant: &'static str,
    /// (target kind, G or P, rule id); None for baseline rows.
    pub policy: Option<(ConvKind, usize, &'static str)>,
    pub skip_indivisible: bool,
    /// Published FLOPs (multiply-accumulates).
    pub flops: f64,
    /// Published parameter count.
    pub params: f64,
    /// Relative tolerance for both columns.
    pub tolerance: f64,
    /// Enforced by the acceptance gate when true; reference-only otherwise.
    pub gated: bool,
}

const T: f64 = 0.02;
const TY: f64 = 0.03;

const fn base(
    table: &'static str,
    label: &'static str,
    model: &'static str,
    variant: &'static str,
    flops: f64,
    params: f64,
    tolerance: f64,
) -> PaperRow {
    PaperRow {
        table,
        label,
        model,
        variant,
        policy: None,
        skip_indivisible: false,
        flops,
        params,
        tolerance,
        gated: true,
    }
}

#[allow(clippy::too_many_arguments)]
const fn conv(
    table: &'static str,
    label: &'static str,
    model: &'static str,
    variant: &'static str,
    kind: ConvKind,
    alpha: usize,
    rule: &'static str,
    flops: f64,
    params: f64,
    tolerance: f64,
) -> PaperRow {
    PaperRow {
        table,
        label,
        model,
        variant,
        policy: Some((kind, alpha, rule)),
        skip_indivisible: false,
        flops,
        params,
        tolerance,
        gated: true,
    }
}

const fn reference_only(mut row: PaperRow) -> PaperRow {
    row.gated = false;
    row.skip_indivisible = true;
    row
}

const M: f64 = 1e6;
const G: f64 = 1e9;
const K: f64 = 1e3;

use ConvKind::{Dual, Group, Het};

pub const ROWS: &[PaperRow] = &[
    // ----- Table I: VGG-16 / ResNet-50 on CIFAR-10 -----
    base("I", "VGG-16", "vgg16", "cifar10", 313.21 * M, 14.73 * M, T),
    conv("I", "VGG-16_GC_G2", "vgg16", "cifar10", Group, 2, "std3x3", 157.49 * M, 7.37 * M, T),
    conv("I", "VGG-16_GC_G4", "vgg16", "cifar10", Group, 4, "std3x3", 79.64 * M, 3.69 * M, T),
    conv("I", "VGG-16_GC_G8", "vgg16", "cifar10", Group, 8, "std3x3", 40.71 * M, 1.85 * M, T),
    conv("I", "VGG-16_GC_G16", "vgg16", "cifar10", Group, 16, "std3x3", 21.24 * M, 0.93 * M, T),
    conv("I", "VGG-16_GC_G32", "vgg16", "cifar10", Group, 32, "std3x3", 11.51 * M, 0.48 * M, T),
    // The published heterogeneous rows follow the two-FC head geometry.
    conv("I", "VGG-16_HC_P2", "vgg16", "cifar10-2fc", Het, 2, "std3x3", 175.23 * M, 8.45 * M, T),
    conv("I", "VGG-16_HC_P4", "vgg16", "cifar10-2fc", Het, 4, "std3x3", 105.98 * M, 5.17 * M, T),
    conv("I", "VGG-16_HC_P8", "vgg16", "cifar10-2fc", Het, 8, "std3x3", 71.35 * M, 3.54 * M, T),
    conv("I", "VGG-16_HC_P16", "vgg16", "cifar10-2fc", Het, 16, "std3x3", 54.04 * M, 2.72 * M, T),
    conv("I", "VGG-16_HC_P32", "vgg16", "cifar10-2fc", Het, 32, "std3x3", 45.38 * M, 2.31 * M, T),
    conv("I", "VGG-16_G2", "vgg16", "cifar10", Dual, 2, "std3x3", 192.10 * M, 9.00 * M, T),
    conv("I", "VGG-16_G4", "vgg16", "cifar10", Dual, 4, "std3x3", 114.24 * M, 5.33 * M, T),
    conv("I", "VGG-16_G8", "vgg16", "cifar10", Dual, 8, "std3x3", 75.31 * M, 3.49 * M, T),
    conv("I", "VGG-16_G16", "vgg16", "cifar10", Dual, 16, "std3x3", 55.85 * M, 2.57 * M, T),
    conv("I", "VGG-16_G32", "vgg16", "cifar10", Dual, 32, "std3x3", 46.11 * M, 2.11 * M, T),
    base("I", "ResNet-50", "resnet50", "cifar10", 1.30 * G, 23.52 * M, T),
    conv("I", "ResNet-50_G2", "resnet50", "cifar10", Dual, 2, "std3x3-s1", 1.11 * G, 20.32 * M, T),
    conv("I", "ResNet-50_G4", "resnet50", "cifar10", Dual, 4, "std3x3-s1", 984.33 * M, 18.27 * M, T),
    conv("I", "ResNet-50_G8", "resnet50", "cifar10", Dual, 8, "std3x3-s1", 922.99 * M, 17.24 * M, T),
    conv("I", "ResNet-50_G16", "resnet50", "cifar10", Dual, 16, "std3x3-s1", 892.32 * M, 16.73 * M, T),
    conv("I", "ResNet-50_G32", "resnet50", "cifar10", Dual, 32, "std3x3-s1", 876.98 * M, 16.47 * M, T),
    // ----- Table II: MobileNets on CIFAR-10 -----
    base("II", "MobileNetV1", "mobilenet_v1", "cifar10", 46.37 * M, 3.22 * M, T),
    conv("II", "MobileNetV1_G2", "mobilenet_v1", "cifar10", Dual, 2, "ds-merge", 243.12 * M, 17.29 * M, T),
    conv("II", "MobileNetV1_G4", "mobilenet_v1", "cifar10", Dual, 4, "ds-merge", 144.03 * M, 10.23 * M, T),
    conv("II", "MobileNetV1_G8", "mobilenet_v1", "cifar10", Dual, 8, "ds-merge", 94.49 * M, 6.69 * M, T),
    conv("II", "MobileNetV1_G16", "mobilenet_v1", "cifar10", Dual, 16, "ds-merge", 69.71 * M, 4.93 * M, T),
    conv("II", "MobileNetV1_G32", "mobilenet_v1", "cifar10", Dual, 32, "ds-merge", 57.3 * M, 4.04 * M, T),
    base("II", "MobileNetV2", "mobilenet_v2", "cifar", 64.96 * M, 2.37 * M, T),
    reference_only(conv("II", "MobileNetV2_G2", "mobilenet_v2", "cifar", Dual, 2, "ir-merge", 41.84 * M, 1.45 * M, T)),
    reference_only(conv("II", "MobileNetV2_G4", "mobilenet_v2", "cifar", Dual, 4, "ir-merge", 31.07 * M, 1.09 * M, T)),
    reference_only(conv("II", "MobileNetV2_G8", "mobilenet_v2", "cifar", Dual, 8, "ir-merge", 25.68 * M, 916.92 * K, T)),
    reference_only(conv("II", "MobileNetV2_G16", "mobilenet_v2", "cifar", Dual, 16, "ir-merge", 23.50 * M, 829.94 * K, T)),
    reference_only(conv("II", "MobileNetV2_G32", "mobilenet_v2", "cifar", Dual, 32, "ir-merge", 22.42 * M, 786.45 * K, T)),
    // ----- Table III: VGG-16 / ResNet-50 on CIFAR-100 -----
    base("III", "VGG-16", "vgg16", "cifar100", 332.48 * M, 34.01 * M, T),
    conv("III", "VGG-16_G2", "vgg16", "cifar100", Dual, 2, "std3x3", 211.37 * M, 28.29 * M, T),
    conv("III", "VGG-16_G4", "vgg16", "cifar100", Dual, 4, "std3x3", 133.52 * M, 24.61 * M, T),
    conv("III", "VGG-16_G8", "vgg16", "cifar100", Dual, 8, "std3x3", 94.59 * M, 22.78 * M, T),
    conv("III", "VGG-16_G16", "vgg16", "cifar100", Dual, 16, "std3x3", 75.12 * M, 21.86 * M, T),
    conv("III", "VGG-16_G32", "vgg16", "cifar100", Dual, 32, "std3x3", 65.39 * M, 21.40 * M, T),
    base("III", "ResNet-50", "resnet50", "cifar100", 1.30 * G, 23.70 * M, T),
    conv("III", "ResNet-50_G2", "resnet50", "cifar100", Dual, 2, "std3x3-s1", 1.11 * G, 20.50 * M, T),
    conv("III", "ResNet-50_G4", "resnet50", "cifar100", Dual, 4, "std3x3-s1", 984.51 * M, 18.45 * M, T),
    conv("III", "ResNet-50_G8", "resnet50", "cifar100", Dual, 8, "std3x3-s1", 923.17 * M, 17.43 * M, T),
    conv("III", "ResNet-50_G16", "resnet50", "cifar100", Dual, 16, "std3x3-s1", 892.50 * M, 16.91 * M, T),
    conv("III", "ResNet-50_G32", "resnet50", "cifar100", Dual, 32, "std3x3-s1", 877.17 * M, 16.65 * M, T),
    // ----- Table IV: MobileNets on CIFAR-100 -----
    base("IV", "MobileNetV1", "mobilenet_v1", "cifar100", 46.46 * M, 3.32 * M, T),
    conv("IV", "MobileNetV1_G2", "mobilenet_v1", "cifar100", Dual, 2, "ds-merge", 243.21 * M, 17.38 * M, T),
    conv("IV", "MobileNetV1_G4", "mobilenet_v1", "cifar100", Dual, 4, "ds-merge", 144.12 * M, 10.32 * M, T),
    conv("IV", "MobileNetV1_G8", "mobilenet_v1", "cifar100", Dual, 8, "ds-merge", 94.58 * M, 6.79 * M, T),
    conv("IV", "MobileNetV1_G16", "mobilenet_v1", "cifar100", Dual, 16, "ds-merge", 69.81 * M, 5.02 * M, T),
    conv("IV", "MobileNetV1_G32", "mobilenet_v1", "cifar100", Dual, 32, "ds-merge", 57.42 * M, 4.14 * M, T),
    base("IV", "MobileNetV2", "mobilenet_v2", "cifar100", 64.96 * M, 2.37 * M, T),
    reference_only(conv("IV", "MobileNetV2_G2", "mobilenet_v2", "cifar100", Dual, 2, "ir-merge", 41.84 * M, 1.45 * M, T)),
    reference_only(conv("IV", "MobileNetV2_G4", "mobilenet_v2", "cifar100", Dual, 4, "ir-merge", 31.07 * M, 1.09 * M, T)),
    reference_only(conv("IV", "MobileNetV2_G8", "mobilenet_v2", "cifar100", Dual, 8, "ir-merge", 25.68 * M, 916.92 * K, T)),
    reference_only(conv("IV", "MobileNetV2_G16", "mobilenet_v2", "cifar100", Dual, 16, "ir-merge", 23.50 * M, 829.94 * K, T)),
    reference_only(conv("IV", "MobileNetV2_G32", "mobilenet_v2", "cifar100", Dual, 32, "ir-merge", 22.42 * M, 786.45 * K, T)),
    // ----- Table VI: VGG-16 / ResNet-50 on ImageNet -----
    base("VI", "VGG-16", "vgg16", "imagenet", 15.47 * G, 138.36 * M, T),
    conv("VI", "VGG-16_G2", "vgg16", "imagenet", Dual, 2, "std3x3", 9.54 * G, 132.64 * M, T),
    conv("VI", "VGG-16_G4", "vgg16", "imagenet", Dual, 4, "std3x3", 5.72 * G, 128.96 * M, T),
    conv("VI", "VGG-16_G8", "vgg16", "imagenet", Dual, 8, "std3x3", 3.81 * G, 127.13 * M, T),
    conv("VI", "VGG-16_G16", "vgg16", "imagenet", Dual, 16, "std3x3", 2.86 * G, 126.21 * M, T),
    conv("VI", "VGG-16_G32", "vgg16", "imagenet", Dual, 32, "std3x3", 2.38 * G, 125.75 * M, T),
    base("VI", "ResNet-50", "resnet50", "imagenet", 4.09 * G, 25.56 * M, T),
    conv("VI", "ResNet-50_GC_G2", "resnet50", "imagenet", Group, 2, "std3x3", 3.16 * G, 19.90 * M, T),
    conv("VI", "ResNet-50_HC_P4", "resnet50", "imagenet", Het, 4, "std3x3", 2.86 * G, 18.02 * M, T),
    conv("VI", "ResNet-50_G2", "resnet50", "imagenet", Dual, 2, "std3x3", 3.37 * G, 21.16 * M, T),
    conv("VI", "ResNet-50_G4", "resnet50", "imagenet", Dual, 4, "std3x3", 2.91 * G, 18.33 * M, T),
    conv("VI", "ResNet-50_G8", "resnet50", "imagenet", Dual, 8, "std3x3", 2.68 * G, 16.91 * M, T),
    conv("VI", "ResNet-50_G16", "resnet50", "imagenet", Dual, 16, "std3x3", 2.56 * G, 16.20 * M, T),
    conv("VI", "ResNet-50_G32", "resnet50", "imagenet", Dual, 32, "std3x3", 2.50 * G, 15.85 * M, T),
    // ----- Table VIII: MobileNets on ImageNet -----
    base("VIII", "MobileNetV1", "mobilenet_v1", "imagenet", 568.0 * M, 4.23 * M, T),
    conv("VIII", "MobileNetV1_GC_G2", "mobilenet_v1", "imagenet", Group, 2, "ds-merge", 2.44 * G, 15.17 * M, T),
    conv("VIII", "MobileNetV1_HC_P4", "mobilenet_v1", "imagenet", Het, 4, "ds-merge", 1.63 * G, 10.46 * M, T),
    conv("VIII", "MobileNetV1_G2", "mobilenet_v1", "imagenet", Dual, 2, "ds-merge", 2.98 * G, 18.31 * M, T),
    conv("VIII", "MobileNetV1_G4", "mobilenet_v1", "imagenet", Dual, 4, "ds-merge", 1.77 * G, 11.24 * M, T),
    conv("VIII", "MobileNetV1_G8", "mobilenet_v1", "imagenet", Dual, 8, "ds-merge", 1.16 * G, 7.71 * M, T),
    conv("VIII", "MobileNetV1_G16", "mobilenet_v1", "imagenet", Dual, 16, "ds-merge", 854.82 * M, 5.94 * M, T),
    conv("VIII", "MobileNetV1_G32", "mobilenet_v1", "imagenet", Dual, 32, "ds-merge", 703.09 * M, 5.06 * M, T),
    base("VIII", "MobileNetV2", "mobilenet_v2", "imagenet", 300.79 * M, 3.50 * M, T),
    reference_only(conv("VIII", "MobileNetV2_G2", "mobilenet_v2", "imagenet", Dual, 2, "ir-merge", 221.46 * M, 2.67 * M, T)),
    reference_only(conv("VIII", "MobileNetV2_G4", "mobilenet_v2", "imagenet", Dual, 4, "ir-merge", 171.79 * M, 2.35 * M, T)),
    reference_only(conv("VIII", "MobileNetV2_G8", "mobilenet_v2", "imagenet", Dual, 8, "ir-merge", 146.95 * M, 2.19 * M, T)),
    reference_only(conv("VIII", "MobileNetV2_G16", "mobilenet_v2", "imagenet", Dual, 16, "ir-merge", 135.55 * M, 2.11 * M, T)),
    reference_only(conv("VIII", "MobileNetV2_G32", "mobilenet_v2", "imagenet", Dual, 32, "ir-merge", 135.26 * M, 2.07 * M, T)),
    // ----- Table IX: YOLO-V3 on VOC (416 input) -----
    base("IX", "YOLO-V3", "yolov3_backbone", "voc-416", 32.71 * G, 61.63 * M, TY),
    conv("IX", "YOLO-V3_G2", "yolov3_backbone", "voc-416", Dual, 2, "std3x3-s1", 22.79 * G, 42.41 * M, TY),
    conv("IX", "YOLO-V3_G4", "yolov3_backbone", "voc-416", Dual, 4, "std3x3-s1", 16.41 * G, 30.05 * M, TY),
    conv("IX", "YOLO-V3_G8", "yolov3_backbone", "voc-416", Dual, 8, "std3x3-s1", 13.22 * G, 23.88 * M, TY),
    conv("IX", "YOLO-V3_G16", "yolov3_backbone", "voc-416", Dual, 16, "std3x3-s1", 11.63 * G, 20.79 * M, TY),
    conv("IX", "YOLO-V3_G32", "yolov3_backbone", "voc-416", Dual, 32, "std3x3-s1", 10.83 * G, 19.24 * M, TY),
];

/// Result of evaluating one published row against the reconstruction.
#[derive(Debug, Clone)]
pub struct RowComparison {
    pub row: &'static PaperRow,
    pub computed: LayerCost,
    pub flops_deviation: f64,
    pub params_deviation: f64,
    pub pass: bool,
}

pub fn evaluate_row(row: &'static PaperRow) -> Result<RowComparison> {
    let mut config = build(row.model, row.variant)?;
    if let Some((kind, alpha, rule)) = row.policy {
        let mut policy = ReplacementPolicy::new(kind, alpha, PolicyRule::from_id(rule)?)?;
        policy.skip_indivisible = row.skip_indivisible;
        config = apply_policy(&config, &policy)?;
    }
    let cost = model_cost(&config)?;
    let flops_deviation = (cost.total.flops as f64 - row.flops).abs() / row.flops;
    let params_deviation = (cost.total.params as f64 - row.params).abs() / row.params;
    let pass = flops_deviation <= row.tolerance && params_deviation <= row.tolerance;
    Ok(RowComparison {
        row,
        computed: cost.total,
        flops_deviation,
        params_deviation,
        pass,
    })
}

pub fn evaluate_all() -> Result<Vec<RowComparison>> {
    ROWS.iter().map(evaluate_row).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_rows_pass() {
        for label in ["VGG-16_G4", "ResNet-50_G8", "YOLO-V3_G4"] {
            let row = ROWS
                .iter()
                .find(|r| r.label == label && (r.table == "I" || r.table == "IX"))
                .unwrap();
            let cmp = evaluate_row(row).unwrap();
            assert!(
                cmp.pass,
                "{label}: computed {:?} vs ({}, {}), dev ({:.4}, {:.4})",
                cmp.computed, row.flops, row.params, cmp.flops_deviation, cmp.params_deviation
            );
        }
    }
}
