//! Declarative layer graphs for the host architectures and the replacement
//! policies that rewrite them to efficient operator kinds.

mod build;
mod policy;
mod runtime;
pub mod tables;
mod text;

pub use build::{build, known_models, known_variants};
pub use policy::{apply_policy, PolicyRule, ReplacementPolicy, StrideFilter};
pub use runtime::{instantiate, LayerGradients, Model, ModelGradients, RuntimeLayer};
pub use text::{emit_config, parse_config};

use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::tensor::Shape4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

impl PoolKind {
    pub fn token(self) -> &'static str {
        match self {
            PoolKind::Max => "max",
            PoolKind::Avg => "avg",
        }
    }
}

/// Activation applied after a layer when the model is executed.
/// Purely a runtime concern; costs nothing in the analytic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Relu6,
    None,
}

impl Activation {
    pub fn token(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Relu6 => "relu6",
            Activation::None => "none",
        }
    }
}

/// One convolutional layer inside a model, with the structural annotations
/// the cost model needs (batch-norm affine scalars, biases) and the
/// replacement-eligibility flag policies consult.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    /// Batch-norm affine parameters counted structurally (never executed).
    pub bn: bool,
    /// Bias parameters counted structurally.
    pub bias: bool,
    pub act: Activation,
    pub eligible: bool,
    /// Input taken from a named earlier layer instead of the previous one.
    pub from: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Conv(ConvLayer),
    Pool { kind: PoolKind, extent: usize, stride: usize, padding: usize },
    FullyConnected { inputs: usize, outputs: usize, bias: bool },
    /// Element-wise add of an earlier layer's output to the previous output.
    AddSkip { from: String },
    /// Channel concatenation of an earlier layer's output with the previous
    /// output (spatial extents must match).
    Concat { from: String },
    /// Nearest-neighbor spatial upsampling.
    Upsample { factor: usize },
    /// Structural annotation; no shape change, no cost.
    BlockMarker { label: String },
}

impl LayerOp {
    pub fn describe(&self) -> String {
        match self {
            LayerOp::Conv(c) => format!(
                "conv[{}] {}x{} k{} s{}",
                c.spec.kind.token(),
                c.spec.in_channels,
                c.spec.out_channels,
                c.spec.kernel,
                c.spec.stride
            ),
            LayerOp::Pool { kind, extent, stride, .. } => {
                format!("pool[{}] k{extent} s{stride}", kind.token())
            }
            LayerOp::FullyConnected { inputs, outputs, .. } => format!("fc {inputs}x{outputs}"),
            LayerOp::AddSkip { from } => format!("skip +{from}"),
            LayerOp::Concat { from } => format!("concat +{from}"),
            LayerOp::Upsample { factor } => format!("upsample x{factor}"),
            LayerOp::BlockMarker { label } => format!("block {label}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDef {
    pub name: String,
    pub op: LayerOp,
}

/// Ordered layer graph plus the input it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub input: Shape4,
    pub layers: Vec<LayerDef>,
}

pub fn pool_out_extent(input: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::Config("pool extent and stride must be >= 1".into()));
    }
    let padded = input + 2 * padding;
    if padded < k {
        return Err(Error::Geometry(format!(
            "pool window {k} larger than padded input {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

impl ModelConfig {
    /// Per-layer output shapes, checking that the whole graph chains
    /// consistently (channel counts, spatial extents, skip sources).
    pub fn output_shapes(&self) -> Result<Vec<Shape4>> {
        if self.layers.is_empty() {
            return Err(Error::Config(format!("model '{}' has no layers", self.name)));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        let mut current = self.input;
        let by_name = |name: &str, upto: usize, shapes: &[Shape4]| -> Result<Shape4> {
            let idx = self.layers[..upto]
                .iter()
                .position(|l| l.name == name)
                .ok_or_else(|| {
                    Error::Config(format!("layer '{name}' referenced before it is defined"))
                })?;
            Ok(shapes[idx])
        };

        for (i, layer) in self.layers.iter().enumerate() {
            let next = match &layer.op {
                LayerOp::Conv(conv) => {
                    let input = match &conv.from {
                        Some(src) => by_name(src, i, &out)?,
                        None => current,
                    };
                    conv.spec.out_shape(input).map_err(|e| {
                        Error::Config(format!("layer '{}': {e}", layer.name))
                    })?
                }
                LayerOp::Pool { extent, stride, padding, .. } => Shape4::new(
                    current.batch,
                    current.channels,
                    pool_out_extent(current.height, *extent, *stride, *padding)?,
                    pool_out_extent(current.width, *extent, *stride, *padding)?,
                )?,
                LayerOp::FullyConnected { inputs, outputs, .. } => {
                    let flat = current.channels * current.height * current.width;
                    if flat != *inputs {
                        return Err(Error::Config(format!(
                            "layer '{}': fc expects {} inputs but gets {} ({} flattened)",
                            layer.name, inputs, flat, current
                        )));
                    }
                    Shape4::new(current.batch, *outputs, 1, 1)?
                }
                LayerOp::AddSkip { from } => {
                    let src = by_name(from, i, &out)?;
                    if src != current {
                        return Err(Error::Config(format!(
                            "layer '{}': skip source {} does not match {}",
                            layer.name, src, current
                        )));
                    }
                    current
                }
                LayerOp::Concat { from } => {
                    let src = by_name(from, i, &out)?;
                    if (src.height, src.width) != (current.height, current.width) {
                        return Err(Error::Config(format!(
                            "layer '{}': concat source {} spatially incompatible with {}",
                            layer.name, src, current
                        )));
                    }
                    Shape4::new(
                        current.batch,
                        current.channels + src.channels,
                        current.height,
                        current.width,
                    )?
                }
                LayerOp::Upsample { factor } => {
                    if *factor == 0 {
                        return Err(Error::Config("upsample factor must be >= 1".into()));
                    }
                    Shape4::new(
                        current.batch,
                        current.channels,
                        current.height * factor,
                        current.width * factor,
                    )?
                }
                LayerOp::BlockMarker { .. } => current,
            };
            out.push(next);
            current = next;
        }
        Ok(out)
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = (&LayerDef, &ConvLayer)> {
        self.layers.iter().filter_map(|l| match &l.op {
            LayerOp::Conv(c) => Some((l, c)),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::ConvSpec;

    fn conv(name: &str, spec: ConvSpec) -> LayerDef {
        LayerDef {
            name: name.into(),
            op: LayerOp::Conv(ConvLayer {
                spec,
                bn: false,
                bias: false,
                act: Activation::Relu,
                eligible: true,
                from: None,
            }),
        }
    }

    #[test]
    fn geometry_walk_checks_chaining() {
        let cfg = ModelConfig {
            name: "tiny".into(),
            input: Shape4::new(1, 3, 8, 8).unwrap(),
            layers: vec![
                conv("c1", ConvSpec::standard(3, 8, 3, 1, 1).unwrap()),
                LayerDef {
                    name: "p1".into(),
                    op: LayerOp::Pool { kind: PoolKind::Max, extent: 2, stride: 2, padding: 0 },
                },
                LayerDef {
                    name: "fc".into(),
                    op: LayerOp::FullyConnected { inputs: 8 * 4 * 4, outputs: 2, bias: true },
                },
            ],
        };
        let shapes = cfg.output_shapes().unwrap();
        assert_eq!(shapes[0], Shape4::new(1, 8, 8, 8).unwrap());
        assert_eq!(shapes[1], Shape4::new(1, 8, 4, 4).unwrap());
        assert_eq!(shapes[2], Shape4::new(1, 2, 1, 1).unwrap());
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let cfg = ModelConfig {
            name: "bad".into(),
            input: Shape4::new(1, 3, 8, 8).unwrap(),
            layers: vec![conv("c1", ConvSpec::standard(4, 8, 3, 1, 1).unwrap())],
        };
        assert!(matches!(cfg.output_shapes(), Err(Error::Config(_))));
    }

    #[test]
    fn skip_source_must_exist_and_match() {
        let cfg = ModelConfig {
            name: "bad".into(),
            input: Shape4::new(1, 3, 8, 8).unwrap(),
            layers: vec![
                conv("c1", ConvSpec::standard(3, 3, 3, 1, 1).unwrap()),
                LayerDef { name: "s".into(), op: LayerOp::AddSkip { from: "nope".into() } },
            ],
        };
        assert!(cfg.output_shapes().is_err());
    }
}
