//! `SGN1` network checkpoints.
//!
//! Layout (little-endian): magic, `u32` version, `u64` seed, a
//! length-prefixed text block describing the architecture, `u64` parameter
//! count and the parameters as `f64`, `u64` best epoch, `u8` early-stop flag,
//! and the training history as a length-prefixed CSV block.

use std::io::{Read, Write};

use super::{Activation, History, Layer, LayerKind, Network, NeuralError};

const MAGIC: &[u8; 4] = b"SGN1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
    pub history: History,
}

fn describe(net: &Network) -> String {
    let mut s = format!("name={}\ninput={}x{}\n", net.name, net.input_shape.0, net.input_shape.1);
    for l in &net.layers {
        let line = match l.kind {
            LayerKind::Conv1d { channels, filters, activation } => {
                format!("conv1d channels={channels} filters={filters} activation={}", activation.as_str())
            }
            LayerKind::MaxPool2 => "maxpool2".to_string(),
            LayerKind::Flatten => "flatten".to_string(),
            LayerKind::Dense { inputs, units, activation } => {
                format!("dense inputs={inputs} units={units} activation={}", activation.as_str())
            }
            LayerKind::Lstm { inputs, units, return_sequences } => {
                format!("lstm inputs={inputs} units={units} return_sequences={}", u8::from(return_sequences))
            }
        };
        s.push_str("layer=");
        s.push_str(&line);
        s.push('\n');
    }
    s
}

fn parse_description(text: &str) -> Result<(String, (usize, usize), Vec<LayerKind>), NeuralError> {
    let bad = |m: String| NeuralError::Malformed(m);
    let mut name = None;
    let mut input = None;
    let mut kinds = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("descriptor line {line:?}")))?;
        match key {
            "name" => name = Some(value.to_string()),
            "input" => {
                let (r, c) = value.split_once('x').ok_or_else(|| bad(format!("input shape {value:?}")))?;
                input = Some((r.parse().map_err(|_| bad(value.into()))?, c.parse().map_err(|_| bad(value.into()))?));
            }
            "layer" => {
                let mut parts = value.split_whitespace();
                let kind = parts.next().unwrap_or_default();
                let attrs: Vec<(&str, &str)> = parts.filter_map(|p| p.split_once('=')).collect();
                let get = |k: &str| attrs.iter().find(|(a, _)| *a == k).map(|(_, v)| *v).ok_or_else(|| bad(format!("{kind} lacks {k}")));
                let num = |k: &str| get(k)?.parse::<usize>().map_err(|_| bad(format!("{kind} {k}")));
                let act = |k: &str| Activation::parse(get(k)?).ok_or_else(|| bad(format!("{kind} {k}")));
                kinds.push(match kind {
                    "conv1d" => LayerKind::Conv1d { channels: num("channels")?, filters: num("filters")?, activation: act("activation")? },
                    "maxpool2" => LayerKind::MaxPool2,
                    "flatten" => LayerKind::Flatten,
                    "dense" => LayerKind::Dense { inputs: num("inputs")?, units: num("units")?, activation: act("activation")? },
                    "lstm" => {
                        LayerKind::Lstm { inputs: num("inputs")?, units: num("units")?, return_sequences: num("return_sequences")? == 1 }
                    }
                    other => return Err(bad(format!("unknown layer {other:?}"))),
                });
            }
            other => return Err(bad(format!("unknown descriptor key {other:?}"))),
        }
    }
    Ok((name.ok_or_else(|| bad("missing name".into()))?, input.ok_or_else(|| bad("missing input".into()))?, kinds))
}

fn write_block<W: Write>(w: &mut W, text: &str) -> std::io::Result<()> {
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(text.as_bytes())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NeuralError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_block<R: Read>(r: &mut R) -> Result<String, NeuralError> {
    let len = read_u64(r)?;
    if len > 1 << 26 {
        return Err(NeuralError::Malformed(format!("text block of {len} bytes")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| NeuralError::Malformed("text block is not UTF-8".into()))
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<(), NeuralError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&ckpt.seed.to_le_bytes())?;
    write_block(&mut w, &describe(&ckpt.network))?;
    let params = ckpt.network.params_flat();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in &params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.write_all(&(ckpt.history.best_epoch as u64).to_le_bytes())?;
    w.write_all(&[u8::from(ckpt.history.stopped_early)])?;
    write_block(&mut w, &ckpt.history.to_csv())?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, NeuralError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NeuralError::Malformed("missing SGN1 magic".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    if u32::from_le_bytes(v) != VERSION {
        return Err(NeuralError::Malformed(format!("unsupported version {}", u32::from_le_bytes(v))));
    }
    let seed = read_u64(&mut r)?;
    let (name, input_shape, kinds) = parse_description(&read_block(&mut r)?)?;
    let count = read_u64(&mut r)? as usize;
    let expected: usize = kinds.iter().map(LayerKind::param_count).sum();
    if count != expected {
        return Err(NeuralError::Malformed(format!("{count} parameters stored, architecture needs {expected}")));
    }
    let mut layers = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let mut params = vec![0.0; kind.param_count()];
        for p in &mut params {
            *p = f64::from_bits(read_u64(&mut r)?);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NeuralError::Malformed("non-finite parameter".into()));
        }
        layers.push(Layer { kind, params });
    }
    let network = Network::from_layers(&name, input_shape, layers)?;
    let best_epoch = read_u64(&mut r)? as usize;
    let mut flag = [0u8];
    r.read_exact(&mut flag)?;
    let history = History::from_csv(&read_block(&mut r)?, best_epoch, flag[0] == 1)?;
    Ok(Checkpoint { network, seed, history })
}
