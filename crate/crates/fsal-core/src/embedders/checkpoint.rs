//! Versioned text checkpoints: named parameter blocks with shapes, a config
//! echo in the meta line, and bit-exact round-trips (decimal shortest
//! round-trip formatting).

use std::fmt::Write as _;
use std::path::Path;

use super::net::{DenseLayer, Net};
use super::{AttributeHead, Embedder, HeadRole, ProjectionHead};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

const CKPT_MAGIC: &str = "FSAL-CKPT v1";

/// A trained model with its optional heads and a free-form meta echo
/// (kind, seed, config).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub meta: serde_json::Value,
    pub backbone: Embedder,
    pub head: Option<ProjectionHead>,
    pub attr_head: Option<AttributeHead>,
}

fn render_net(out: &mut String, header: &str, net: &Net) {
    writeln!(out, "{header}").unwrap();
    for layer in &net.layers {
        writeln!(
            out,
            "layer {} {} {} {}",
            layer.out_dim(),
            layer.in_dim(),
            layer.bias.is_some() as u8,
            layer.relu as u8
        )
        .unwrap();
        for r in 0..layer.out_dim() {
            let row = layer.weight.row(r);
            let toks: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", toks.join(" ")).unwrap();
        }
        if let Some(b) = &layer.bias {
            let toks: Vec<String> = b.iter().map(|v| v.to_string()).collect();
            writeln!(out, "b {}", toks.join(" ")).unwrap();
        }
    }
}

pub fn render_bundle(bundle: &ModelBundle) -> String {
    let mut out = String::new();
    writeln!(out, "{CKPT_MAGIC}").unwrap();
    writeln!(out, "meta {}", bundle.meta).unwrap();
    render_net(
        &mut out,
        &format!(
            "net backbone {} {} {}",
            bundle.backbone.net.layers.len(),
            bundle.backbone.input_dim,
            bundle.backbone.embed_dim
        ),
        &bundle.backbone.net,
    );
    if let Some(head) = &bundle.head {
        render_net(
            &mut out,
            &format!(
                "net head {} {} {}",
                head.net.layers.len(),
                head.role.tag(),
                head.output_dim
            ),
            &head.net,
        );
    }
    if let Some(attr) = &bundle.attr_head {
        let attrs: Vec<String> = attr.attrs.iter().map(|a| a.to_string()).collect();
        render_net(
            &mut out,
            &format!(
                "net attr {} {}",
                attr.net.layers.len(),
                if attrs.is_empty() { "-".into() } else { attrs.join(",") }
            ),
            &attr.net,
        );
    }
    writeln!(out, "end").unwrap();
    out
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    std::fs::write(path, render_bundle(bundle)).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_floats(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad decimal {t:?} in checkpoint")))
        })
        .collect()
}

fn parse_net<'a, I: Iterator<Item = &'a str>>(lines: &mut std::iter::Peekable<I>, n_layers: usize) -> Result<Net> {
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("missing layer header".into()))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 5 || toks[0] != "layer" {
            return Err(Error::Format(format!("bad layer header {header:?}")));
        }
        let out_dim: usize = toks[1].parse().map_err(|_| Error::Format("bad out dim".into()))?;
        let in_dim: usize = toks[2].parse().map_err(|_| Error::Format("bad in dim".into()))?;
        let has_bias = toks[3] == "1";
        let relu = toks[4] == "1";
        let mut data = Vec::with_capacity(out_dim * in_dim);
        for _ in 0..out_dim {
            let row = lines
                .next()
                .ok_or_else(|| Error::Format("missing weight row".into()))?;
            let vals = parse_floats(row)?;
            if vals.len() != in_dim {
                return Err(Error::Format(format!(
                    "weight row has {} values, expected {in_dim}",
                    vals.len()
                )));
            }
            data.extend(vals);
        }
        let weight = Matrix::new(out_dim, in_dim, data)?;
        let bias = if has_bias {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format("missing bias line".into()))?;
            let rest = line
                .strip_prefix("b ")
                .ok_or_else(|| Error::Format("malformed bias line".into()))?;
            let vals = parse_floats(rest)?;
            if vals.len() != out_dim {
                return Err(Error::Format("bias length mismatch".into()));
            }
            Some(vals)
        } else {
            None
        };
        layers.push(DenseLayer { weight, bias, relu });
    }
    Ok(Net { layers })
}

pub fn parse_bundle(text: &str) -> Result<ModelBundle> {
    let mut lines = text.lines().peekable();
    let magic = lines
        .next()
        .ok_or_else(|| Error::Format("empty checkpoint".into()))?;
    if magic.trim() != CKPT_MAGIC {
        return Err(Error::Format(format!("bad magic/version {magic:?}")));
    }
    let meta_line = lines
        .next()
        .ok_or_else(|| Error::Format("missing meta line".into()))?;
    let meta_json = meta_line
        .strip_prefix("meta ")
        .ok_or_else(|| Error::Format("malformed meta line".into()))?;
    let meta: serde_json::Value =
        serde_json::from_str(meta_json).map_err(|e| Error::Format(format!("meta json: {e}")))?;

    let mut backbone: Option<Embedder> = None;
    let mut head: Option<ProjectionHead> = None;
    let mut attr_head: Option<AttributeHead> = None;
    loop {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format("checkpoint missing end marker".into()))?;
        if line.trim() == "end" {
            break;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 || toks[0] != "net" {
            return Err(Error::Format(format!("bad net header {line:?}")));
        }
        let n_layers: usize = toks[2]
            .parse()
            .map_err(|_| Error::Format("bad layer count".into()))?;
        match toks[1] {
            "backbone" => {
                if toks.len() != 5 {
                    return Err(Error::Format("backbone header needs dims".into()));
                }
                let input_dim: usize = toks[3].parse().map_err(|_| Error::Format("bad input dim".into()))?;
                let embed_dim: usize = toks[4].parse().map_err(|_| Error::Format("bad embed dim".into()))?;
                let net = parse_net(&mut lines, n_layers)?;
                backbone = Some(Embedder { net, input_dim, embed_dim });
            }
            "head" => {
                if toks.len() != 5 {
                    return Err(Error::Format("head header needs role and dim".into()));
                }
                let role = HeadRole::from_tag(toks[3])?;
                let output_dim: usize = toks[4].parse().map_err(|_| Error::Format("bad head dim".into()))?;
                let net = parse_net(&mut lines, n_layers)?;
                head = Some(ProjectionHead { role, net, output_dim });
            }
            "attr" => {
                if toks.len() != 4 {
                    return Err(Error::Format("attr header needs attribute list".into()));
                }
                let attrs: Vec<usize> = if toks[3] == "-" {
                    Vec::new()
                } else {
                    toks[3]
                        .split(',')
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Format("bad attribute index".into()))?
                };
                let net = parse_net(&mut lines, n_layers)?;
                attr_head = Some(AttributeHead { net, attrs });
            }
            other => return Err(Error::Format(format!("unknown net block {other:?}"))),
        }
    }
    let backbone = backbone.ok_or_else(|| Error::Format("checkpoint has no backbone".into()))?;
    Ok(ModelBundle { meta, backbone, head, attr_head })
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_bundle(&text)
}

#[cfg(test)]
mod tests {
    use super::super::BackboneKind;
    use super::*;
    use crate::numkit::rng_derive;

    #[test]
    fn bundle_roundtrip_is_bit_exact() {
        let mut rng = rng_derive(77, &[1]);
        let backbone = Embedder::init(BackboneKind::Mlp, 7, 5, 3, &mut rng);
        let head = ProjectionHead::init(HeadRole::Finetune, 3, 2, 4, 2, &mut rng).unwrap();
        let attr = AttributeHead::init(4, 3, vec![0, 2, 5, 9], &mut rng);
        let bundle = ModelBundle {
            meta: serde_json::json!({"kind": "test", "seed": 7}),
            backbone,
            head: Some(head),
            attr_head: Some(attr),
        };
        let text = render_bundle(&bundle);
        let back = parse_bundle(&text).unwrap();
        assert_eq!(back, bundle);
        // Render again: byte-identical.
        assert_eq!(render_bundle(&back), text);
    }

    #[test]
    fn identity_head_roundtrip() {
        let mut rng = rng_derive(78, &[1]);
        let backbone = Embedder::init(BackboneKind::Linear, 5, 4, 2, &mut rng);
        let bundle = ModelBundle {
            meta: serde_json::json!({}),
            backbone,
            head: Some(ProjectionHead::identity(HeadRole::Contrastive, 2)),
            attr_head: None,
        };
        let back = parse_bundle(&render_bundle(&bundle)).unwrap();
        assert_eq!(back, bundle);
    }

    #[test]
    fn bad_version_rejected() {
        assert!(parse_bundle("FSAL-CKPT v9\nmeta {}\nend\n").is_err());
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let mut rng = rng_derive(79, &[1]);
        let backbone = Embedder::init(BackboneKind::Mlp, 4, 3, 2, &mut rng);
        let bundle = ModelBundle {
            meta: serde_json::json!({}),
            backbone,
            head: None,
            attr_head: None,
        };
        let text = render_bundle(&bundle);
        let cut = &text[..text.len() / 2];
        assert!(parse_bundle(cut).is_err());
    }
}
