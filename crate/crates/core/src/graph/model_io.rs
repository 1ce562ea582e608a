//! JSON model files.
//!
//! ```json
//! {
//!   "name": "tiny",
//!   "inputs": ["in"],
//!   "outputs": ["out"],
//!   "layers": [
//!     {"name": "in", "type": "input", "inputs": [], "params": {"shape": [1, 8, 8, 3]}},
//!     {"name": "conv", "type": "conv2", "inputs": ["in"],
//!      "params": {"strides": [1, 1], "padding": "same", "dilations": [1, 1]},
//!      "weights": {"kernel": {"shape": [3, 3, 3, 4], "data": "<base64>"}}},
//!     {"name": "out", "type": "output", "inputs": ["conv"]}
//!   ]
//! }
//! ```
//!
//! Tensor `data` is base64 of little-endian float32 values in row-major order.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{Conv2Params, GraphError, LayerDef, LayerKind, LayerType, Net, Padding, PoolParams};
use crate::routines::Schema;
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorJson {
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorJson {
    pub fn encode(t: &Tensor<f32>) -> Self {
        let mut bytes = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        TensorJson {
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Tensor<f32>, GraphError> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| GraphError::Malformed(format!("bad base64 tensor data: {e}")))?;
        let values = decode_f32_le(&bytes)?;
        if values.len() != numel(&self.shape) {
            return Err(GraphError::Malformed(format!(
                "tensor has {} values but shape {:?}",
                values.len(),
                self.shape
            )));
        }
        Tensor::new(self.shape.clone(), values).map_err(|e| GraphError::Malformed(e.to_string()))
    }
}

pub fn decode_f32_le(bytes: &[u8]) -> Result<Vec<f32>, GraphError> {
    if bytes.len() % 4 != 0 {
        return Err(GraphError::Malformed(format!(
            "float32 buffer length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerJson {
    name: String,
    #[serde(rename = "type")]
    ty: String,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    params: Map<String, Value>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    weights: BTreeMap<String, TensorJson>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelJson {
    name: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
    layers: Vec<LayerJson>,
}

fn bad(layer: &str, what: impl std::fmt::Display) -> GraphError {
    GraphError::Malformed(format!("layer `{layer}`: {what}"))
}

fn get_dims(p: &Map<String, Value>, layer: &str, key: &str) -> Result<Option<Vec<usize>>, GraphError> {
    match p.get(key) {
        None => Ok(None),
        Some(v) => serde_json::from_value::<Vec<usize>>(v.clone())
            .map(Some)
            .map_err(|e| bad(layer, format!("param `{key}`: {e}"))),
    }
}

fn get_pair(p: &Map<String, Value>, layer: &str, key: &str, default: (usize, usize)) -> Result<(usize, usize), GraphError> {
    match get_dims(p, layer, key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 => Ok((v[0], v[1])),
        Some(v) => Err(bad(layer, format!("param `{key}` needs two values, got {v:?}"))),
    }
}

fn get_usize(p: &Map<String, Value>, layer: &str, key: &str) -> Result<usize, GraphError> {
    p.get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| bad(layer, format!("missing integer param `{key}`")))
}

fn get_schema(p: &Map<String, Value>, layer: &str, key: &str) -> Result<Schema, GraphError> {
    let s = p
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| bad(layer, format!("missing schema param `{key}`")))?;
    Schema::parse(s).map_err(|e| bad(layer, e))
}

fn parse_kind(l: &LayerJson) -> Result<LayerKind, GraphError> {
    let ty = LayerType::parse(&l.ty).ok_or_else(|| bad(&l.name, format!("unknown layer type `{}`", l.ty)))?;
    let p = &l.params;
    let n = l.name.as_str();
    Ok(match ty {
        LayerType::Input => LayerKind::Input {
            shape: get_dims(p, n, "shape")?.ok_or_else(|| bad(n, "input layer needs `shape`"))?,
        },
        LayerType::Output => LayerKind::Output,
        LayerType::Conv2 => {
            let padding = match p.get("padding").and_then(Value::as_str).unwrap_or("same") {
                "same" => Padding::Same,
                "valid" => Padding::Valid,
                other => return Err(bad(n, format!("unknown padding `{other}`"))),
            };
            LayerKind::Conv2(Conv2Params {
                strides: get_pair(p, n, "strides", (1, 1))?,
                padding,
                dilations: get_pair(p, n, "dilations", (1, 1))?,
            })
        }
        LayerType::Dense => LayerKind::Dense,
        LayerType::Relu => LayerKind::Relu,
        LayerType::MaxPool2 => {
            let pool = get_pair(p, n, "pool", (2, 2))?;
            LayerKind::MaxPool2(PoolParams {
                pool,
                strides: get_pair(p, n, "strides", pool)?,
            })
        }
        LayerType::Softmax => LayerKind::Softmax,
        LayerType::Flatten => LayerKind::Flatten,
        LayerType::Reshape => LayerKind::Reshape {
            shape: get_dims(p, n, "shape")?.ok_or_else(|| bad(n, "reshape needs `shape`"))?,
        },
        LayerType::Add => LayerKind::Add,
        LayerType::WgEnc => LayerKind::WgEnc {
            tile: get_usize(p, n, "tile_size")?,
            out_h: get_usize(p, n, "out_h")?,
            out_w: get_usize(p, n, "out_w")?,
        },
        LayerType::WgConv => LayerKind::WgConv {
            tile: get_usize(p, n, "tile_size")?,
        },
        LayerType::WgDec => LayerKind::WgDec {
            tile: get_usize(p, n, "tile_size")?,
            out_h: get_usize(p, n, "out_h")?,
            out_w: get_usize(p, n, "out_w")?,
        },
        LayerType::AuxInput => LayerKind::AuxInput,
        LayerType::AuxOutput => LayerKind::AuxOutput,
        LayerType::Adapt => LayerKind::Adapt {
            from: get_schema(p, n, "from")?,
            to: get_schema(p, n, "to")?,
        },
    })
}

fn render_params(kind: &LayerKind) -> Map<String, Value> {
    let v = match kind {
        LayerKind::Input { shape } | LayerKind::Reshape { shape } => json!({ "shape": shape }),
        LayerKind::Conv2(c) => json!({
            "strides": [c.strides.0, c.strides.1],
            "padding": match c.padding { Padding::Same => "same", Padding::Valid => "valid" },
            "dilations": [c.dilations.0, c.dilations.1],
        }),
        LayerKind::MaxPool2(pp) => json!({
            "pool": [pp.pool.0, pp.pool.1],
            "strides": [pp.strides.0, pp.strides.1],
        }),
        LayerKind::WgEnc { tile, out_h, out_w } | LayerKind::WgDec { tile, out_h, out_w } => {
            json!({ "tile_size": tile, "out_h": out_h, "out_w": out_w })
        }
        LayerKind::WgConv { tile } => json!({ "tile_size": tile }),
        LayerKind::Adapt { from, to } => json!({ "from": from.to_string(), "to": to.to_string() }),
        _ => json!({}),
    };
    match v {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

pub fn net_from_json(text: &str) -> Result<Net, GraphError> {
    let m: ModelJson = serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))?;
    let mut defs = Vec::with_capacity(m.layers.len());
    for l in &m.layers {
        let mut def = LayerDef {
            name: l.name.clone(),
            kind: parse_kind(l)?,
            inputs: l.inputs.clone(),
            weights: Default::default(),
        };
        for (k, t) in &l.weights {
            def.weights.insert(k.clone(), Arc::new(t.decode()?));
        }
        defs.push(def);
    }
    let ins: Vec<&str> = m.inputs.iter().map(String::as_str).collect();
    let outs: Vec<&str> = m.outputs.iter().map(String::as_str).collect();
    Net::from_defs(m.name, defs, &ins, &outs)
}

pub fn net_to_json(net: &Net) -> String {
    let name = |i: usize| net.layers[i].name.clone();
    let m = ModelJson {
        name: net.name.clone(),
        inputs: net.inputs.iter().map(|&i| name(i)).collect(),
        outputs: net.outputs.iter().map(|&i| name(i)).collect(),
        layers: net
            .layers
            .iter()
            .map(|l| LayerJson {
                name: l.name.clone(),
                ty: l.layer_type().as_str().to_string(),
                inputs: l.inputs.iter().map(|&i| name(i)).collect(),
                params: render_params(&l.kind),
                weights: l
                    .weights
                    .iter()
                    .map(|(k, t)| (k.clone(), TensorJson::encode(t)))
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&m).expect("model serializes")
}

pub fn load_net(path: &Path) -> Result<Net, GraphError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GraphError::Malformed(format!("{}: {e}", path.display())))?;
    net_from_json(&text)
}

pub fn save_net(net: &Net, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, net_to_json(net))
}
