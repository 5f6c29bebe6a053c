//! Line-oriented config text format.
//!
//! ```text
//! model <name> input <B> <C> <H> <W>
//! conv <name> kind=<std|dsc|group|het|dual> M=<int> N=<int> K=<int> s=<int> p=<int> [G=<int>|P=<int>] [eligible] [bn] [bias] [act=<relu|relu6|none>] [from=<layer>]
//! pool <name> <max|avg> k=<int> s=<int>
//! fc <name> in=<int> out=<int> [bias]
//! skip <name> from=<layer>
//! concat <name> from=<layer>
//! upsample <name> x=<int>
//! block <name> <label>
//! ```
//!
//! Comments start with `#`; blank lines are ignored. `parse(emit(c)) == c`.

use std::collections::HashMap;

use crate::conv::{ConvKind, ConvSpec};
use crate::error::{Error, Result};
use crate::tensor::Shape4;

use super::{Activation, ConvLayer, LayerDef, LayerOp, ModelConfig, PoolKind};

pub fn emit_config(config: &ModelConfig) -> String {
    let mut out = String::new();
    let s = config.input;
    out.push_str(&format!(
        "model {} input {} {} {} {}\n",
        config.name, s.batch, s.channels, s.height, s.width
    ));
    for layer in &config.layers {
        match &layer.op {
            LayerOp::Conv(c) => {
                out.push_str(&format!(
                    "conv {} kind={} M={} N={} K={} s={} p={}",
                    layer.name,
                    c.spec.kind.token(),
                    c.spec.in_channels,
                    c.spec.out_channels,
                    c.spec.kernel,
                    c.spec.stride,
                    c.spec.padding
                ));
                match c.spec.kind {
                    ConvKind::Group | ConvKind::Dual => {
                        out.push_str(&format!(" G={}", c.spec.groups));
                    }
                    ConvKind::Het => out.push_str(&format!(" P={}", c.spec.part)),
                    _ => {}
                }
                if c.eligible {
                    out.push_str(" eligible");
                }
                if c.bn {
                    out.push_str(" bn");
                }
                if c.bias {
                    out.push_str(" bias");
                }
                if c.act != Activation::Relu {
                    out.push_str(&format!(" act={}", c.act.token()));
                }
                if let Some(from) = &c.from {
                    out.push_str(&format!(" from={from}"));
                }
                out.push('\n');
            }
            LayerOp::Pool { kind, extent, stride, padding } => {
                out.push_str(&format!("pool {} {} k={} s={}", layer.name, kind.token(), extent, stride));
                if *padding != 0 {
                    out.push_str(&format!(" p={padding}"));
                }
                out.push('\n');
            }
            LayerOp::FullyConnected { inputs, outputs, bias } => {
                out.push_str(&format!("fc {} in={} out={}", layer.name, inputs, outputs));
                if *bias {
                    out.push_str(" bias");
                }
                out.push('\n');
            }
            LayerOp::AddSkip { from } => {
                out.push_str(&format!("skip {} from={}\n", layer.name, from));
            }
            LayerOp::Concat { from } => {
                out.push_str(&format!("concat {} from={}\n", layer.name, from));
            }
            LayerOp::Upsample { factor } => {
                out.push_str(&format!("upsample {} x={}\n", layer.name, factor));
            }
            LayerOp::BlockMarker { label } => {
                out.push_str(&format!("block {} {}\n", layer.name, label));
            }
        }
    }
    out
}

pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut header: Option<(String, Shape4)> = None;
    let mut layers = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let tag = tokens.next().unwrap();
        let rest: Vec<&str> = tokens.collect();
        let err = |msg: String| Error::Parse { line: line_no, msg };

        match tag {
            "model" => {
                if rest.len() != 6 || rest[1] != "input" {
                    return Err(err("expected: model <name> input <B> <C> <H> <W>".into()));
                }
                let dims: Vec<usize> = rest[2..]
                    .iter()
                    .map(|t| t.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(format!("bad input extent: {e}")))?;
                header = Some((
                    rest[0].to_string(),
                    Shape4::new(dims[0], dims[1], dims[2], dims[3])?,
                ));
            }
            "conv" => {
                let (name, kv, flags) = split_fields(&rest, line_no)?;
                let kind = match kv.get("kind").copied() {
                    Some("std") => ConvKind::Standard,
                    Some("dsc") => ConvKind::DepthwiseSeparable,
                    Some("group") => ConvKind::Group,
                    Some("het") => ConvKind::Het,
                    Some("dual") => ConvKind::Dual,
                    Some(other) => return Err(err(format!("unknown kind '{other}'"))),
                    None => return Err(err("missing required field 'kind'".into())),
                };
                let num = |key: &str| -> Result<usize> {
                    kv.get(key)
                        .ok_or_else(|| Error::Parse {
                            line: line_no,
                            msg: format!("missing required field '{key}'"),
                        })?
                        .parse()
                        .map_err(|e| Error::Parse {
                            line: line_no,
                            msg: format!("field '{key}': {e}"),
                        })
                };
                let opt = |key: &str| -> Result<usize> {
                    match kv.get(key) {
                        None => Ok(1),
                        Some(v) => v.parse().map_err(|e| Error::Parse {
                            line: line_no,
                            msg: format!("field '{key}': {e}"),
                        }),
                    }
                };
                let spec = ConvSpec::new(
                    kind,
                    num("M")?,
                    num("N")?,
                    num("K")?,
                    num("s")?,
                    num("p")?,
                    opt("G")?,
                    opt("P")?,
                )
                .map_err(|e| err(e.to_string()))?;
                let act = match kv.get("act").copied() {
                    None => Activation::Relu,
                    Some("relu") => Activation::Relu,
                    Some("relu6") => Activation::Relu6,
                    Some("none") => Activation::None,
                    Some(other) => return Err(err(format!("unknown activation '{other}'"))),
                };
                layers.push(LayerDef {
                    name,
                    op: LayerOp::Conv(ConvLayer {
                        spec,
                        bn: flags.contains(&"bn"),
                        bias: flags.contains(&"bias"),
                        act,
                        eligible: flags.contains(&"eligible"),
                        from: kv.get("from").map(|s| s.to_string()),
                    }),
                });
            }
            "pool" => {
                if rest.len() < 2 {
                    return Err(err("expected: pool <name> <max|avg> k=<int> s=<int>".into()));
                }
                let name = rest[0].to_string();
                let kind = match rest[1] {
                    "max" => PoolKind::Max,
                    "avg" => PoolKind::Avg,
                    other => return Err(err(format!("unknown pool kind '{other}'"))),
                };
                let (_, kv, _) = split_fields(&rest[1..], line_no)?;
                let get = |key: &str| -> Result<usize> {
                    kv.get(key)
                        .ok_or_else(|| Error::Parse {
                            line: line_no,
                            msg: format!("missing required field '{key}'"),
                        })?
                        .parse()
                        .map_err(|e| Error::Parse {
                            line: line_no,
                            msg: format!("field '{key}': {e}"),
                        })
                };
                let padding = match kv.get("p") {
                    None => 0,
                    Some(v) => v.parse().map_err(|e| Error::Parse {
                        line: line_no,
                        msg: format!("field 'p': {e}"),
                    })?,
                };
                layers.push(LayerDef {
                    name,
                    op: LayerOp::Pool { kind, extent: get("k")?, stride: get("s")?, padding },
                });
            }
            "fc" => {
                let (name, kv, flags) = split_fields(&rest, line_no)?;
                let get = |key: &str| -> Result<usize> {
                    kv.get(key)
                        .ok_or_else(|| Error::Parse {
                            line: line_no,
                            msg: format!("missing required field '{key}'"),
                        })?
                        .parse()
                        .map_err(|e| Error::Parse {
                            line: line_no,
                            msg: format!("field '{key}': {e}"),
                        })
                };
                layers.push(LayerDef {
                    name,
                    op: LayerOp::FullyConnected {
                        inputs: get("in")?,
                        outputs: get("out")?,
                        bias: flags.contains(&"bias"),
                    },
                });
            }
            "skip" | "concat" => {
                let (name, kv, _) = split_fields(&rest, line_no)?;
                let from = kv
                    .get("from")
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: "missing required field 'from'".into(),
                    })?
                    .to_string();
                layers.push(LayerDef {
                    name,
                    op: if tag == "skip" {
                        LayerOp::AddSkip { from }
                    } else {
                        LayerOp::Concat { from }
                    },
                });
            }
            "upsample" => {
                let (name, kv, _) = split_fields(&rest, line_no)?;
                let factor = kv
                    .get("x")
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: "missing required field 'x'".into(),
                    })?
                    .parse()
                    .map_err(|e| Error::Parse { line: line_no, msg: format!("field 'x': {e}") })?;
                layers.push(LayerDef { name, op: LayerOp::Upsample { factor } });
            }
            "block" => {
                if rest.len() < 2 {
                    return Err(err("expected: block <name> <label>".into()));
                }
                layers.push(LayerDef {
                    name: rest[0].to_string(),
                    op: LayerOp::BlockMarker { label: rest[1..].join(" ") },
                });
            }
            other => return Err(err(format!("unknown layer tag '{other}'"))),
        }
    }

    let (name, input) =
        header.ok_or_else(|| Error::Parse { line: 1, msg: "missing model header line".into() })?;
    let config = ModelConfig { name, input, layers };
    if config.layers.is_empty() {
        return Err(Error::Config("config has no layers".into()));
    }
    Ok(config)
}

/// Split `<name> key=value... flag...` into parts.
fn split_fields<'a>(
    rest: &[&'a str],
    line_no: usize,
) -> Result<(String, HashMap<&'a str, &'a str>, Vec<&'a str>)> {
    if rest.is_empty() {
        return Err(Error::Parse { line: line_no, msg: "missing layer name".into() });
    }
    let name = rest[0].to_string();
    let mut kv = HashMap::new();
    let mut flags = Vec::new();
    for tok in &rest[1..] {
        match tok.split_once('=') {
            Some((k, v)) => {
                kv.insert(k, v);
            }
            None => flags.push(*tok),
        }
    }
    Ok((name, kv, flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{flops_standard, model_cost};
    use crate::zoo::build;

    #[test]
    fn round_trip_every_builtin() {
        for (m, variants) in [
            ("vgg16", vec!["cifar10", "cifar100", "cifar10-2fc", "imagenet"]),
            ("resnet50", vec!["cifar10", "imagenet"]),
            ("mobilenet_v1", vec!["cifar10", "imagenet"]),
            ("mobilenet_v2", vec!["cifar", "imagenet"]),
            ("yolov3_backbone", vec!["voc-416"]),
        ] {
            for v in variants {
                let cfg = build(m, v).unwrap();
                let text = emit_config(&cfg);
                let back = parse_config(&text).unwrap();
                assert_eq!(cfg, back, "{m}-{v}");
            }
        }
    }

    #[test]
    fn missing_field_is_named() {
        let text = "model t input 1 3 8 8\nconv c1 kind=std M=3 N=8 s=1 p=1\n";
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("'K'"), "{err}");
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let text = "# a comment\n\nmodel t input 1 3 8 8\nconv c1 kind=std M=3 N=4 K=3 s=1 p=1 # trailing\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.layers.len(), 1);
    }

    #[test]
    fn single_conv_cost_matches_closed_form() {
        let text = "model single input 1 8 16 16\nconv only kind=std M=8 N=12 K=3 s=1 p=1\n";
        let cfg = parse_config(text).unwrap();
        let cost = model_cost(&cfg).unwrap();
        assert_eq!(cost.total.flops, flops_standard(16, 3, 8, 12).unwrap());
        assert_eq!(cost.total.params, 9 * 8 * 12);
    }
}
