//! Net, layer and blob data model.
//!
//! A [`Net`] is a DAG of [`Layer`]s. Each layer names its producers in
//! `inputs`; edges are derived from those lists. Layers are addressed by index
//! inside a net and by name across serialized artifacts.

mod analysis;
pub mod model_io;
pub(crate) mod shape;
mod transform;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::routines::{ParamAssignment, RoutineDescriptor, Schema};
use crate::tensor::{Shape, Tensor};

pub use analysis::{immediate_post_dominators, post_dominator_sets, post_dominators, topological_order};
pub use shape::{infer_shapes, layer_output_shape};
pub use transform::{AUX_INPUT, AUX_OUTPUT, flatten_childnets, insert_adapt_layers, insert_auxiliary_layers};

pub type LayerId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerType {
    Input,
    Output,
    Conv2,
    Dense,
    Relu,
    MaxPool2,
    Softmax,
    Flatten,
    Reshape,
    Add,
    WgEnc,
    WgConv,
    WgDec,
    AuxInput,
    AuxOutput,
    Adapt,
}

impl LayerType {
    pub const ALL: [LayerType; 16] = [
        LayerType::Input,
        LayerType::Output,
        LayerType::Conv2,
        LayerType::Dense,
        LayerType::Relu,
        LayerType::MaxPool2,
        LayerType::Softmax,
        LayerType::Flatten,
        LayerType::Reshape,
        LayerType::Add,
        LayerType::WgEnc,
        LayerType::WgConv,
        LayerType::WgDec,
        LayerType::AuxInput,
        LayerType::AuxOutput,
        LayerType::Adapt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerType::Input => "input",
            LayerType::Output => "output",
            LayerType::Conv2 => "conv2",
            LayerType::Dense => "dense",
            LayerType::Relu => "relu",
            LayerType::MaxPool2 => "maxpool2",
            LayerType::Softmax => "softmax",
            LayerType::Flatten => "flatten",
            LayerType::Reshape => "reshape",
            LayerType::Add => "add",
            LayerType::WgEnc => "wgenc",
            LayerType::WgConv => "wgconv",
            LayerType::WgDec => "wgdec",
            LayerType::AuxInput => "aux_input",
            LayerType::AuxOutput => "aux_output",
            LayerType::Adapt => "adapt",
        }
    }

    pub fn parse(s: &str) -> Option<LayerType> {
        LayerType::ALL.iter().copied().find(|t| t.as_str() == s)
    }

    /// Auxiliary layers exist only for tuning; they never execute.
    pub fn is_aux(self) -> bool {
        matches!(self, LayerType::AuxInput | LayerType::AuxOutput)
    }
}

impl fmt::Display for LayerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Conv2Params {
    pub strides: (usize, usize),
    pub padding: Padding,
    pub dilations: (usize, usize),
}

impl Default for Conv2Params {
    fn default() -> Self {
        Conv2Params {
            strides: (1, 1),
            padding: Padding::Same,
            dilations: (1, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolParams {
    pub pool: (usize, usize),
    pub strides: (usize, usize),
}

impl Default for PoolParams {
    fn default() -> Self {
        PoolParams {
            pool: (2, 2),
            strides: (2, 2),
        }
    }
}

/// Layer type together with its layer parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Input { shape: Shape },
    Output,
    Conv2(Conv2Params),
    Dense,
    Relu,
    MaxPool2(PoolParams),
    Softmax,
    Flatten,
    Reshape { shape: Shape },
    Add,
    WgEnc { tile: usize, out_h: usize, out_w: usize },
    WgConv { tile: usize },
    WgDec { tile: usize, out_h: usize, out_w: usize },
    AuxInput,
    AuxOutput,
    Adapt { from: Schema, to: Schema },
}

impl LayerKind {
    pub fn layer_type(&self) -> LayerType {
        match self {
            LayerKind::Input { .. } => LayerType::Input,
            LayerKind::Output => LayerType::Output,
            LayerKind::Conv2(_) => LayerType::Conv2,
            LayerKind::Dense => LayerType::Dense,
            LayerKind::Relu => LayerType::Relu,
            LayerKind::MaxPool2(_) => LayerType::MaxPool2,
            LayerKind::Softmax => LayerType::Softmax,
            LayerKind::Flatten => LayerType::Flatten,
            LayerKind::Reshape { .. } => LayerType::Reshape,
            LayerKind::Add => LayerType::Add,
            LayerKind::WgEnc { .. } => LayerType::WgEnc,
            LayerKind::WgConv { .. } => LayerType::WgConv,
            LayerKind::WgDec { .. } => LayerType::WgDec,
            LayerKind::AuxInput => LayerType::AuxInput,
            LayerKind::AuxOutput => LayerType::AuxOutput,
            LayerKind::Adapt { .. } => LayerType::Adapt,
        }
    }
}

pub type Weights = BTreeMap<String, Arc<Tensor<f32>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub weights: Weights,
    /// Producer layers, in argument order.
    pub inputs: Vec<LayerId>,
}

impl Layer {
    pub fn layer_type(&self) -> LayerType {
        self.kind.layer_type()
    }

    pub fn weight(&self, name: &str) -> Option<&Tensor<f32>> {
        self.weights.get(name).map(|w| w.as_ref())
    }
}

/// Unresolved layer description used to build nets by name.
#[derive(Debug, Clone)]
pub struct LayerDef {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    pub weights: Weights,
}

impl LayerDef {
    pub fn new(name: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        LayerDef {
            name: name.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            weights: Weights::new(),
        }
    }

    pub fn weight(mut self, name: &str, t: Tensor<f32>) -> Self {
        self.weights.insert(name.to_string(), Arc::new(t));
        self
    }
}

/// A routine realized as an inner net built from existing layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Childnet {
    pub inner: Net,
    /// (parent weight, inner layer, inner weight) pairs.
    pub binding: Vec<(String, String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChildnetEntry {
    pub layer: String,
    pub descriptor: RoutineDescriptor,
    pub params: ParamAssignment,
    pub child: Childnet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub name: String,
    /// Qualifier prepended to layer names when a net is nested in a parent.
    pub scope: String,
    pub layers: Vec<Layer>,
    pub inputs: Vec<LayerId>,
    pub outputs: Vec<LayerId>,
    pub childnets: Vec<ChildnetEntry>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("cycle detected through layer `{layer}`")]
    CycleDetected { layer: String },
    #[error("dangling layer `{layer}`: {reason}")]
    DanglingLayer { layer: String, reason: String },
    #[error("shape mismatch at `{layer}`: {detail}")]
    ShapeMismatch { layer: String, detail: String },
    #[error("duplicate layer name `{0}`")]
    DuplicateName(String),
    #[error("layer `{layer}` references unknown layer `{missing}`")]
    UnknownLayer { layer: String, missing: String },
    #[error("net has no input layers")]
    NoInputs,
    #[error("net has no output layers")]
    NoOutputs,
    #[error("layer `{layer}` is missing weight `{weight}`")]
    MissingWeight { layer: String, weight: String },
    #[error("expected a 1-in-1-out net, found {inputs} inputs and {outputs} outputs")]
    NotSingleInOut { inputs: usize, outputs: usize },
    #[error("no adapt routine from `{from}` to `{to}` for edge {edge:?}")]
    NoAdaptRoutine {
        from: String,
        to: String,
        edge: (String, String),
    },
    #[error("layer `{0}` has no routine in the given path")]
    MissingRoutine(String),
    #[error("malformed model: {0}")]
    Malformed(String),
}

impl Net {
    /// Resolve a list of named layer definitions into a net.
    pub fn from_defs(
        name: impl Into<String>,
        defs: Vec<LayerDef>,
        inputs: &[&str],
        outputs: &[&str],
    ) -> Result<Net, GraphError> {
        let mut index = HashMap::new();
        for (i, d) in defs.iter().enumerate() {
            if index.insert(d.name.clone(), i).is_some() {
                return Err(GraphError::DuplicateName(d.name.clone()));
            }
        }
        let resolve = |layer: &str, n: &str| {
            index
                .get(n)
                .copied()
                .ok_or_else(|| GraphError::UnknownLayer {
                    layer: layer.to_string(),
                    missing: n.to_string(),
                })
        };
        let mut layers = Vec::with_capacity(defs.len());
        for d in &defs {
            let ins = d
                .inputs
                .iter()
                .map(|n| resolve(&d.name, n))
                .collect::<Result<Vec<_>, _>>()?;
            layers.push(Layer {
                name: d.name.clone(),
                kind: d.kind.clone(),
                weights: d.weights.clone(),
                inputs: ins,
            });
        }
        let inputs = inputs
            .iter()
            .map(|n| resolve("<net inputs>", n))
            .collect::<Result<Vec<_>, _>>()?;
        let outputs = outputs
            .iter()
            .map(|n| resolve("<net outputs>", n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Net {
            name: name.into(),
            scope: String::new(),
            layers,
            inputs,
            outputs,
            childnets: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, id: LayerId) -> &Layer {
        &self.layers[id]
    }

    pub fn find(&self, name: &str) -> Option<LayerId> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Name used to key this layer in profiles and tuned paths.
    pub fn qualified(&self, id: LayerId) -> String {
        qualify(&self.scope, &self.layers[id].name)
    }

    /// All (producer, consumer) edges, ordered by consumer then argument position.
    pub fn edges(&self) -> Vec<(LayerId, LayerId)> {
        let mut e = Vec::new();
        for (c, l) in self.layers.iter().enumerate() {
            for &p in &l.inputs {
                e.push((p, c));
            }
        }
        e
    }

    pub fn predecessors(&self, id: LayerId) -> &[LayerId] {
        &self.layers[id].inputs
    }

    pub fn successors(&self) -> Vec<Vec<LayerId>> {
        let mut s = vec![Vec::new(); self.layers.len()];
        for (c, l) in self.layers.iter().enumerate() {
            for &p in &l.inputs {
                if !s[p].contains(&c) {
                    s[p].push(c);
                }
            }
        }
        s
    }

    pub fn is_single_in_out(&self) -> bool {
        self.inputs.len() == 1 && self.outputs.len() == 1
    }

    /// Check structural invariants and run shape inference.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.inputs.is_empty() {
            return Err(GraphError::NoInputs);
        }
        if self.outputs.is_empty() {
            return Err(GraphError::NoOutputs);
        }
        let mut seen = std::collections::HashSet::new();
        for l in &self.layers {
            if !seen.insert(l.name.as_str()) {
                return Err(GraphError::DuplicateName(l.name.clone()));
            }
        }
        topological_order(self)?;
        let succ = self.successors();
        for (i, l) in self.layers.iter().enumerate() {
            let is_in = self.inputs.contains(&i);
            let is_out = self.outputs.contains(&i);
            if is_in && !l.inputs.is_empty() {
                return Err(GraphError::DanglingLayer {
                    layer: l.name.clone(),
                    reason: "net input has producers".into(),
                });
            }
            if !is_in && l.inputs.is_empty() {
                return Err(GraphError::DanglingLayer {
                    layer: l.name.clone(),
                    reason: "no incoming edge".into(),
                });
            }
            if !is_out && succ[i].is_empty() {
                return Err(GraphError::DanglingLayer {
                    layer: l.name.clone(),
                    reason: "no outgoing edge".into(),
                });
            }
            let mut dup = l.inputs.clone();
            dup.sort_unstable();
            dup.dedup();
            if dup.len() != l.inputs.len() {
                return Err(GraphError::ShapeMismatch {
                    layer: l.name.clone(),
                    detail: "the same producer is listed twice".into(),
                });
            }
        }
        infer_shapes(self)?;
        for c in &self.childnets {
            c.child.inner.validate()?;
        }
        Ok(())
    }
}

pub fn qualify(scope: &str, name: &str) -> String {
    if scope.is_empty() {
        name.to_string()
    } else {
        format!("{scope}>{name}")
    }
}

#[cfg(test)]
pub(crate) mod test_nets {
    use super::*;

    pub fn input(shape: &[usize]) -> LayerKind {
        LayerKind::Input {
            shape: shape.to_vec(),
        }
    }

    /// Structural net of relu layers; `spec` lists (name, inputs).
    pub fn relu_net(spec: &[(&str, &[&str])], inputs: &[&str], outputs: &[&str]) -> Net {
        let defs = spec
            .iter()
            .map(|(n, ins)| {
                let kind = if ins.is_empty() {
                    input(&[4])
                } else if ins.len() > 1 {
                    LayerKind::Add
                } else {
                    LayerKind::Relu
                };
                LayerDef::new(*n, kind, ins)
            })
            .collect();
        Net::from_defs("t", defs, inputs, outputs).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_nets::*;
    use super::*;

    fn conv_chain(cin: usize) -> Net {
        let k = Tensor::zeros(vec![3, 3, cin, 2]);
        Net::from_defs(
            "chain",
            vec![
                LayerDef::new("in", input(&[1, 5, 5, 3]), &[]),
                LayerDef::new("conv", LayerKind::Conv2(Default::default()), &["in"])
                    .weight("kernel", k),
                LayerDef::new("out", LayerKind::Output, &["conv"]),
            ],
            &["in"],
            &["out"],
        )
        .unwrap()
    }

    #[test]
    fn well_formed_chain_validates() {
        conv_chain(3).validate().unwrap();
    }

    #[test]
    fn two_cycle_detected() {
        let net = relu_net(&[("i", &[]), ("a", &["i", "b"]), ("b", &["a"])], &["i"], &["b"]);
        assert!(matches!(
            net.validate(),
            Err(GraphError::CycleDetected { .. })
        ));
    }

    #[test]
    fn channel_conflict_is_shape_mismatch() {
        match conv_chain(4).validate() {
            Err(GraphError::ShapeMismatch { layer, .. }) => assert_eq!(layer, "conv"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        let net = relu_net(&[("a", &[]), ("b", &["a"])], &[], &["b"]);
        assert_eq!(net.validate(), Err(GraphError::NoInputs));
    }

    #[test]
    fn dangling_layer_named() {
        let net = relu_net(&[("a", &[]), ("b", &["a"]), ("c", &["a"])], &["a"], &["b"]);
        match net.validate() {
            Err(GraphError::DanglingLayer { layer, .. }) => assert_eq!(layer, "c"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_and_duplicate_names() {
        let e = Net::from_defs(
            "x",
            vec![LayerDef::new("a", LayerKind::Relu, &["zz"])],
            &[],
            &[],
        );
        assert!(matches!(e, Err(GraphError::UnknownLayer { .. })));
        let e = Net::from_defs(
            "x",
            vec![
                LayerDef::new("a", input(&[1]), &[]),
                LayerDef::new("a", LayerKind::Relu, &["a"]),
            ],
            &[],
            &[],
        );
        assert!(matches!(e, Err(GraphError::DuplicateName(_))));
    }
}
