//! Executes a net under a routine path.

mod io;
mod plan;

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::graph::{GraphError, LayerKind, Net};
use crate::kernels::KernelError;
use crate::optimizer::{default_path, OptimizerError};
use crate::routines::{Registry, RoutineError};
use crate::tensor::{Blob, Tensor, TensorError, QMAX};
use crate::zoo;

pub use io::{load_tensor, save_tensor, tensor_from_json, tensor_to_json};
pub use plan::{layer_kernel, plan, run, ExecutionPlan, Kernel, SlotInfo, Step};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("no calibrated quantization scale for `{0}`")]
    MissingScale(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid routine path: {0}")]
    InvalidPath(String),
    #[error("kernel failure: {0}")]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("{0}")]
    Io(String),
}

impl From<RoutineError> for RuntimeError {
    fn from(e: RoutineError) -> Self {
        RuntimeError::InvalidPath(e.to_string())
    }
}

impl From<TensorError> for RuntimeError {
    fn from(e: TensorError) -> Self {
        RuntimeError::Kernel(e.into())
    }
}

/// One uniform `[-1, 1]` tensor per input layer, in `net.inputs` order.
pub fn synthetic_inputs(net: &Net, rng: &mut impl Rng) -> Vec<Tensor<f32>> {
    net.inputs
        .iter()
        .map(|&i| match &net.layers[i].kind {
            LayerKind::Input { shape } => zoo::random_tensor(shape.clone(), rng),
            _ => Tensor::zeros(vec![0]),
        })
        .collect()
}

/// Float inputs wrapped as blobs.
pub fn blobs(ts: &[Tensor<f32>]) -> Vec<Blob> {
    ts.iter().cloned().map(Blob::F32).collect()
}

/// Per-layer output scale `max|v| / 127` over the calibration inputs, taken
/// from the untuned float32 path.
pub fn calibrate_scales(
    net: &Net,
    registry: &Registry,
    inputs: &[Vec<Tensor<f32>>],
) -> Result<BTreeMap<String, f32>, RuntimeError> {
    let path = default_path(net, registry)?;
    let p = plan(net, registry, &path, &BTreeMap::new())?;
    let mut peak: BTreeMap<String, f32> = BTreeMap::new();
    for x in inputs {
        let slots = p.execute(&blobs(x))?;
        for (name, s) in &p.layer_slots {
            let t = slots[*s].as_ref().expect("every slot written").to_f32();
            let m = peak.entry(name.clone()).or_insert(0.0);
            *m = m.max(t.max_abs());
        }
    }
    Ok(peak
        .into_iter()
        .map(|(k, m)| (k, if m > 0.0 && m.is_finite() { m / QMAX as f32 } else { 1.0 }))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{AdaptChoice, RoutinePath};
    use crate::routines::{RoutineDescriptor, Schema};

    fn hybrid_tail(net: &Net, registry: &Registry, from: &str) -> RoutinePath<f64> {
        // float up to `from`, qint8 after it, float for softmax and output
        let mut path = default_path(net, registry).unwrap();
        let start = path.layers.iter().position(|c| c.layer == from).unwrap();
        let q8 = Schema::cpu_qint8();
        let mut names = Vec::new();
        for c in &mut path.layers[start..] {
            let l = &net.layers[net.find(&c.layer).unwrap()];
            if !registry.lookup_for(l, &q8).is_empty() && !matches!(l.kind, LayerKind::Output) {
                c.descriptor = RoutineDescriptor::new(q8.clone(), "naive");
                c.params = registry.lookup_for(l, &q8)[0].grid.enumerate().remove(0);
                names.push(c.layer.clone());
            }
        }
        for (p, c) in net.edges() {
            let (pn, cn) = (&net.layers[p].name, &net.layers[c].name);
            let (a, b) = (names.contains(pn), names.contains(cn));
            if a != b {
                path.adapts.push(AdaptChoice {
                    edge: (pn.clone(), cn.clone()),
                    from: if a { q8.clone() } else { Schema::cpu() },
                    to: if b { q8.clone() } else { Schema::cpu() },
                    time: 0.0,
                });
            }
        }
        path
    }

    #[test]
    fn float_path_has_no_adapts_and_normalizes() {
        let reg = Registry::standard();
        let net = zoo::tiny_cnn(1);
        let p = plan(&net, &reg, &default_path(&net, &reg).unwrap(), &BTreeMap::new()).unwrap();
        assert_eq!(p.adapt_steps().count(), 0);
        let x = synthetic_inputs(&net, &mut zoo::rng(3));
        let y = run(&p, &blobs(&x)).unwrap();
        let sum: f32 = y[0].to_f32().data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert_eq!(run(&p, &blobs(&x)).unwrap(), y);
    }

    #[test]
    fn qint8_tail_adapts_only_at_its_boundaries() {
        let reg = Registry::standard();
        let net = zoo::vgg16_toy(2);
        let mut path = hybrid_tail(&net, &reg, "block4_pool");
        let x = synthetic_inputs(&net, &mut zoo::rng(4));
        path.qscales = calibrate_scales(&net, &reg, &[x.clone()]).unwrap();
        let p = plan(&net, &reg, &path, &path.qscales).unwrap();
        let adapts: Vec<&str> = p.adapt_steps().map(|s| s.name.as_str()).collect();
        assert_eq!(adapts, ["block4_conv3->block4_pool", "fc3->softmax"]);
        let y = run(&p, &blobs(&x)).unwrap();
        assert_eq!(y[0].shape(), [10]);
    }

    #[test]
    fn missing_scale_is_reported() {
        let reg = Registry::standard();
        let net = zoo::tiny_cnn(1);
        let path = hybrid_tail(&net, &reg, "fc");
        assert!(matches!(
            plan(&net, &reg, &path, &BTreeMap::new()),
            Err(RuntimeError::MissingScale(_))
        ));
    }

    #[test]
    fn unlisted_adapt_is_rejected() {
        let reg = Registry::standard();
        let net = zoo::tiny_cnn(1);
        let mut path = hybrid_tail(&net, &reg, "fc");
        path.adapts.clear();
        assert!(matches!(
            plan(&net, &reg, &path, &BTreeMap::new()),
            Err(RuntimeError::InvalidPath(_))
        ));
    }

    #[test]
    fn wrong_input_shape() {
        let reg = Registry::standard();
        let net = zoo::tiny_cnn(1);
        let p = plan(&net, &reg, &default_path(&net, &reg).unwrap(), &BTreeMap::new()).unwrap();
        let bad = Blob::F32(Tensor::zeros(vec![1, 4, 4, 3]));
        assert!(matches!(run(&p, &[bad]), Err(RuntimeError::ShapeMismatch(_))));
    }
}
