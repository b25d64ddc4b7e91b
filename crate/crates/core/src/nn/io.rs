//! Weights file: a text header terminated by a `data` line, then every
//! parameter tensor as little-endian `f32`, in layer order.
//!
//! ```text
//! PIANOVIS-WEIGHTS 1
//! input 10 60 1
//! layer conv2d kernel=3x3 stride=1 in=1 out=16 dropout=0
//! ...
//! param 0 3x3x1x16
//! ...
//! data
//! ```

use std::fs;
use std::path::Path;

use super::network::{LayerKind, LayerSpec, NetworkSpec, NetworkWeights};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &str = "PIANOVIS-WEIGHTS";
pub const WEIGHTS_VERSION: u32 = 1;

fn dims(v: &[usize]) -> String {
    if v.is_empty() {
        return "-".into();
    }
    v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_dims(s: &str) -> Option<Vec<usize>> {
    if s == "-" {
        return Some(Vec::new());
    }
    s.split('x').map(|d| d.parse().ok()).collect()
}

pub fn encode_weights(w: &NetworkWeights) -> Vec<u8> {
    let mut head = format!("{WEIGHTS_MAGIC} {WEIGHTS_VERSION}\n");
    let input: Vec<String> = w.spec.input_shape.iter().map(|d| d.to_string()).collect();
    head += &format!("input {}\n", input.join(" "));
    for l in &w.spec.layers {
        head += &format!(
            "layer {} kernel={} stride={} in={} out={} dropout={}\n",
            l.kind.as_str(),
            dims(&l.kernel),
            l.stride,
            l.in_channels,
            l.out_channels,
            l.dropout_rate
        );
    }
    for (i, layer) in w.params.iter().enumerate() {
        for t in layer {
            head += &format!("param {i} {}\n", dims(t.shape()));
        }
    }
    head += "data\n";
    let mut out = head.into_bytes();
    for t in w.params.iter().flatten() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<NetworkWeights> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| start + i)
            .ok_or_else(|| Error::Parse {
                offset: start,
                message: "unterminated header line".into(),
            })?;
        *pos = end + 1;
        let line = std::str::from_utf8(&bytes[start..end]).map_err(|_| Error::Parse {
            offset: start,
            message: "header is not UTF-8".into(),
        })?;
        Ok((start, line.trim().to_string()))
    };
    let perr = |offset: usize, message: String| Error::Parse { offset, message };

    let (off, magic) = next_line(&mut pos)?;
    let mut it = magic.split_whitespace();
    if it.next() != Some(WEIGHTS_MAGIC) {
        return Err(perr(off, "not a weights file".into()));
    }
    match it.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(WEIGHTS_VERSION) => {}
        other => return Err(perr(off, format!("unsupported weights version {other:?}"))),
    }

    let (off, line) = next_line(&mut pos)?;
    let input_shape = line
        .strip_prefix("input ")
        .and_then(|s| s.split_whitespace().map(|d| d.parse().ok()).collect::<Option<Vec<usize>>>())
        .ok_or_else(|| perr(off, format!("expected input shape, found {line:?}")))?;

    let mut layers = Vec::new();
    let mut param_shapes: Vec<(usize, Vec<usize>)> = Vec::new();
    loop {
        let (off, line) = next_line(&mut pos)?;
        if line == "data" {
            break;
        }
        let mut f = line.split_whitespace();
        match f.next() {
            Some("layer") => {
                let kind = f
                    .next()
                    .and_then(LayerKind::parse)
                    .ok_or_else(|| perr(off, format!("unknown layer in {line:?}")))?;
                let mut spec = LayerSpec {
                    kind,
                    kernel: Vec::new(),
                    stride: 1,
                    in_channels: 0,
                    out_channels: 0,
                    dropout_rate: 0.0,
                };
                for kv in f {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| perr(off, format!("bad field {kv:?}")))?;
                    let bad = || perr(off, format!("bad value in {kv:?}"));
                    match k {
                        "kernel" => spec.kernel = parse_dims(v).ok_or_else(bad)?,
                        "stride" => spec.stride = v.parse().map_err(|_| bad())?,
                        "in" => spec.in_channels = v.parse().map_err(|_| bad())?,
                        "out" => spec.out_channels = v.parse().map_err(|_| bad())?,
                        "dropout" => spec.dropout_rate = v.parse().map_err(|_| bad())?,
                        _ => return Err(perr(off, format!("unknown field {k:?}"))),
                    }
                }
                layers.push(spec);
            }
            Some("param") => {
                let layer = f.next().and_then(|v| v.parse().ok());
                let shape = f.next().and_then(parse_dims);
                match (layer, shape) {
                    (Some(l), Some(s)) => param_shapes.push((l, s)),
                    _ => return Err(perr(off, format!("bad param line {line:?}"))),
                }
            }
            _ => return Err(perr(off, format!("unexpected header line {line:?}"))),
        }
    }

    let spec = NetworkSpec {
        input_shape,
        layers,
    };
    spec.n_classes()?;
    let expected: Vec<(usize, Vec<usize>)> = spec
        .layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| l.param_shapes().into_iter().map(move |s| (i, s)))
        .collect();
    if expected != param_shapes {
        return Err(Error::Format(
            "parameter shapes in header do not match the layer specs".into(),
        ));
    }
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let body = &bytes[pos..];
    if body.len() != total * 4 {
        return Err(perr(
            pos,
            format!("expected {} payload bytes, found {}", total * 4, body.len()),
        ));
    }
    let mut values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    let mut params: Vec<Vec<Tensor>> = vec![Vec::new(); spec.layers.len()];
    for (layer, shape) in expected {
        let n = shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        params[layer].push(Tensor::from_vec(&shape, data)?);
    }
    Ok(NetworkWeights { spec, params })
}

pub fn save_weights(path: &Path, w: &NetworkWeights) -> Result<()> {
    fs::write(path, encode_weights(w)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<NetworkWeights> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}
