use std::collections::BTreeMap;
use std::sync::Arc;

use super::RuntimeError;
use crate::graph::{layer_output_shape, topological_order, Conv2Params, LayerId, LayerKind, LayerType, Net, PoolParams};
use crate::kernels::quant::{add_qint8, max_abs_scale, maxpool2_qint8, relu_qint8, reshape_qint8};
use crate::kernels::winograd::{transform_kernel, wg_decode, wg_encode, wg_multiply};
use crate::kernels::{self, adapt_dequantize, adapt_quantize, conv2_direct, conv2_qint8, dense_qint8, ConvTuning, KernelError};
use crate::optimizer::{default_path, RoutinePath};
use crate::routines::{build_childnet, childnet_scope, AdaptKind, ParamAssignment, Registry, Routine, RoutineDescriptor, RoutineImpl};
use crate::tensor::{numel, Blob, DType, QTensor, Shape, Tensor};

type W = Arc<Tensor<f32>>;

/// Kernel of one step with everything derivable from weights precomputed.
#[derive(Debug, Clone)]
pub enum Kernel {
    /// Copies a bound input.
    Bind,
    /// Passes its single operand through (output layers).
    Identity,
    Conv {
        kernel: W,
        bias: Option<W>,
        params: Conv2Params,
        tuning: ConvTuning,
    },
    ConvQ {
        kernel: QTensor,
        bias: Option<W>,
        params: Conv2Params,
        out_scale: f32,
        task_ops: usize,
    },
    Dense {
        kernel: W,
        bias: Option<W>,
    },
    DenseQ {
        kernel: QTensor,
        bias: Option<W>,
        out_scale: f32,
    },
    Relu,
    ReluQ(f32),
    MaxPool(PoolParams),
    MaxPoolQ(PoolParams, f32),
    Softmax,
    Reshape(Shape),
    ReshapeQ(Shape, f32),
    Add,
    AddQ(f32),
    WgEnc {
        tile: usize,
        task_ops: usize,
    },
    WgConv {
        u: Arc<Tensor<f64>>,
        task_ops: usize,
    },
    WgDec {
        tile: usize,
        out_h: usize,
        out_w: usize,
        bias: Option<W>,
        task_ops: usize,
    },
    /// A childnet routine executing its own plan.
    Nested(Box<ExecutionPlan>),
    Quantize(f32),
    Dequantize,
}

impl Kernel {
    pub fn apply(&self, ins: &[&Blob]) -> Result<Blob, KernelError> {
        let f = |i: usize| -> Result<&Tensor<f32>, KernelError> { Ok(operand(ins, i)?.as_f32()?) };
        let q = |i: usize| -> Result<&QTensor, KernelError> { Ok(operand(ins, i)?.as_q8()?) };
        Ok(match self {
            Kernel::Bind | Kernel::Identity => operand(ins, 0)?.clone(),
            Kernel::Conv {
                kernel,
                bias,
                params,
                tuning,
            } => Blob::F32(conv2_direct(f(0)?, kernel, bias.as_deref(), params, *tuning)?),
            Kernel::ConvQ {
                kernel,
                bias,
                params,
                out_scale,
                task_ops,
            } => Blob::Q8(conv2_qint8(q(0)?, kernel, bias.as_deref(), params, *out_scale, *task_ops)?),
            Kernel::Dense { kernel, bias } => Blob::F32(kernels::matvec(f(0)?, kernel, bias.as_deref())?),
            Kernel::DenseQ {
                kernel,
                bias,
                out_scale,
            } => Blob::Q8(dense_qint8(q(0)?, kernel, bias.as_deref(), *out_scale)?),
            Kernel::Relu => Blob::F32(kernels::ops::relu(f(0)?)),
            Kernel::ReluQ(s) => Blob::Q8(relu_qint8(q(0)?, *s)?),
            Kernel::MaxPool(p) => Blob::F32(kernels::ops::maxpool2(f(0)?, p)?),
            Kernel::MaxPoolQ(p, s) => Blob::Q8(maxpool2_qint8(q(0)?, p, *s)?),
            Kernel::Softmax => Blob::F32(kernels::ops::softmax(f(0)?)?),
            Kernel::Reshape(shape) => Blob::F32(kernels::ops::reshape(f(0)?, shape)?),
            Kernel::ReshapeQ(shape, s) => Blob::Q8(reshape_qint8(q(0)?, shape, *s)?),
            Kernel::Add => {
                let xs = (0..ins.len()).map(f).collect::<Result<Vec<_>, _>>()?;
                Blob::F32(kernels::ops::add(&xs)?)
            }
            Kernel::AddQ(s) => {
                let xs = (0..ins.len()).map(q).collect::<Result<Vec<_>, _>>()?;
                Blob::Q8(add_qint8(&xs, *s)?)
            }
            Kernel::WgEnc { tile, task_ops } => Blob::F32(wg_encode(f(0)?, *tile, *task_ops)?),
            Kernel::WgConv { u, task_ops } => Blob::F32(wg_multiply(f(0)?, u, *task_ops)?),
            Kernel::WgDec {
                tile,
                out_h,
                out_w,
                bias,
                task_ops,
            } => Blob::F32(wg_decode(f(0)?, *tile, *out_h, *out_w, bias.as_deref(), *task_ops)?),
            Kernel::Nested(plan) => {
                let owned: Vec<Blob> = ins.iter().map(|b| (*b).clone()).collect();
                let mut outs = plan.execute(&owned).map_err(|e| match e {
                    RuntimeError::Kernel(k) => k,
                    other => KernelError::UnsupportedConfig(other.to_string()),
                })?;
                let out = plan.outputs[0].1;
                outs[out]
                    .take()
                    .ok_or_else(|| KernelError::UnsupportedConfig("childnet produced no output".into()))?
            }
            Kernel::Quantize(s) => Blob::Q8(adapt_quantize(f(0)?, *s)?),
            Kernel::Dequantize => Blob::F32(adapt_dequantize(q(0)?)),
        })
    }
}

fn operand<'a>(ins: &[&'a Blob], i: usize) -> Result<&'a Blob, KernelError> {
    ins.get(i)
        .copied()
        .ok_or_else(|| KernelError::ShapeMismatch(format!("missing operand {i}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotInfo {
    pub shape: Shape,
    pub dtype: DType,
    pub qscale: Option<f32>,
}

#[derive(Debug, Clone)]
pub struct Step {
    /// Layer name, or `producer->consumer` for adapts.
    pub name: String,
    pub kernel: Kernel,
    pub ins: Vec<usize>,
    pub out: usize,
}

/// Steps in execution order over a fixed set of slots, one per blob.
#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub net: String,
    pub steps: Vec<Step>,
    pub slots: Vec<SlotInfo>,
    /// Input layer name and the slot it binds.
    pub inputs: Vec<(String, usize)>,
    pub outputs: Vec<(String, usize)>,
    /// Output slot of every layer.
    pub layer_slots: Vec<(String, usize)>,
}

impl ExecutionPlan {
    pub fn adapt_steps(&self) -> impl Iterator<Item = &Step> {
        self.steps
            .iter()
            .filter(|s| matches!(s.kernel, Kernel::Quantize(_) | Kernel::Dequantize))
    }

    /// Runs every step and returns the full slot vector.
    pub(crate) fn execute(&self, inputs: &[Blob]) -> Result<Vec<Option<Blob>>, RuntimeError> {
        if inputs.len() != self.inputs.len() {
            return Err(RuntimeError::ShapeMismatch(format!(
                "`{}` takes {} inputs, got {}",
                self.net,
                self.inputs.len(),
                inputs.len()
            )));
        }
        let mut slots: Vec<Option<Blob>> = vec![None; self.slots.len()];
        for ((name, slot), blob) in self.inputs.iter().zip(inputs) {
            let want = &self.slots[*slot];
            if blob.shape() != want.shape.as_slice() || blob.dtype() != want.dtype {
                return Err(RuntimeError::ShapeMismatch(format!(
                    "input `{name}` expects {} {:?}, got {} {:?}",
                    want.dtype,
                    want.shape,
                    blob.dtype(),
                    blob.shape()
                )));
            }
        }
        for step in &self.steps {
            let out = if matches!(step.kernel, Kernel::Bind) {
                let pos = self
                    .inputs
                    .iter()
                    .position(|(_, s)| *s == step.out)
                    .ok_or_else(|| RuntimeError::InvalidPath(format!("`{}` is not a bound input", step.name)))?;
                inputs[pos].clone()
            } else {
                let ins = step
                    .ins
                    .iter()
                    .map(|&s| {
                        slots[s].as_ref().ok_or_else(|| {
                            RuntimeError::InvalidPath(format!("step `{}` reads an unwritten slot", step.name))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                step.kernel.apply(&ins)?
            };
            slots[step.out] = Some(out);
        }
        Ok(slots)
    }
}

pub fn run(plan: &ExecutionPlan, inputs: &[Blob]) -> Result<Vec<Blob>, RuntimeError> {
    let mut slots = plan.execute(inputs)?;
    plan.outputs
        .iter()
        .map(|(name, s)| {
            slots[*s]
                .take()
                .ok_or_else(|| RuntimeError::InvalidPath(format!("output `{name}` was never written")))
        })
        .collect()
}

fn param(params: &ParamAssignment, name: &str, default: usize) -> usize {
    params.get(name).map_or(default, |&v| v.max(1) as usize)
}

struct Planner<'a> {
    net: &'a Net,
    registry: &'a Registry,
    path: Option<&'a RoutinePath<f64>>,
    qscales: &'a BTreeMap<String, f32>,
    slots: Vec<SlotInfo>,
    steps: Vec<Step>,
}

impl Planner<'_> {
    fn slot(&mut self, info: SlotInfo) -> usize {
        self.slots.push(info);
        self.slots.len() - 1
    }

    fn scale(&self, layer: &str) -> Result<f32, RuntimeError> {
        self.qscales
            .get(layer)
            .copied()
            .filter(|s| *s > 0.0 && s.is_finite())
            .ok_or_else(|| RuntimeError::MissingScale(layer.to_string()))
    }

    fn kernel(
        &self,
        id: LayerId,
        routine: &Routine,
        params: &ParamAssignment,
        ins: &[&SlotInfo],
    ) -> Result<(Kernel, Option<f32>), RuntimeError> {
        let layer = &self.net.layers[id];
        let weight = |n: &str| layer.weights.get(n).cloned();
        let need = |n: &str| {
            weight(n).ok_or_else(|| RuntimeError::InvalidPath(format!("layer `{}` is missing weight `{n}`", layer.name)))
        };
        let task_ops = param(params, "task_ops", ConvTuning::default().task_ops);
        let in_scale = ins.first().and_then(|s| s.qscale);
        let q8 = routine.descriptor.dtype() == DType::Qint8;

        if let RoutineImpl::Childnet(_) = routine.imp {
            let shape = ins.first().map(|s| s.shape.clone()).unwrap_or_default();
            let scope = childnet_scope(&self.net.qualified(id), &routine.descriptor.algorithm, params);
            let entry = self
                .net
                .childnets
                .iter()
                .find(|e| e.layer == layer.name && e.descriptor == routine.descriptor && &e.params == params);
            let child = match entry {
                Some(e) => e.child.clone(),
                None => build_childnet(layer, &shape, routine, params, scope)?
                    .ok_or_else(|| RuntimeError::InvalidPath(format!("`{}` is not a childnet routine", routine.descriptor)))?,
            };
            let inner_path = match self.path.and_then(|p| p.childnet(&layer.name)) {
                Some(c) if c.descriptor == routine.descriptor && &c.params == params => c.path.clone(),
                _ => default_path(&child.inner, self.registry)?,
            };
            let inner = plan(&child.inner, self.registry, &inner_path, &inner_path.qscales)?;
            return Ok((Kernel::Nested(Box::new(inner)), None));
        }

        let k = match (&layer.kind, q8) {
            (LayerKind::Input { .. }, false) => Kernel::Bind,
            (LayerKind::Output, false) => Kernel::Identity,
            (LayerKind::Conv2(p), false) => Kernel::Conv {
                kernel: need("kernel")?,
                bias: weight("bias"),
                params: *p,
                tuning: ConvTuning {
                    cache: param(params, "cache", ConvTuning::default().cache),
                    task_ops,
                },
            },
            (LayerKind::Conv2(p), true) => {
                let w = need("kernel")?;
                Kernel::ConvQ {
                    kernel: QTensor::quantize(&w, max_abs_scale(&w))?,
                    bias: weight("bias"),
                    params: *p,
                    out_scale: self.scale(&layer.name)?,
                    task_ops,
                }
            }
            (LayerKind::Dense, false) => Kernel::Dense {
                kernel: need("kernel")?,
                bias: weight("bias"),
            },
            (LayerKind::Dense, true) => {
                let w = need("kernel")?;
                Kernel::DenseQ {
                    kernel: QTensor::quantize(&w, max_abs_scale(&w))?,
                    bias: weight("bias"),
                    out_scale: self.scale(&layer.name)?,
                }
            }
            (LayerKind::Relu, false) => Kernel::Relu,
            (LayerKind::MaxPool2(p), false) => Kernel::MaxPool(*p),
            (LayerKind::Softmax, false) => Kernel::Softmax,
            (LayerKind::Flatten, false) => Kernel::Reshape(vec![numel(&ins[0].shape)]),
            (LayerKind::Reshape { shape }, false) => Kernel::Reshape(shape.clone()),
            (LayerKind::Add, false) => Kernel::Add,
            (LayerKind::Add, true) => Kernel::AddQ(self.scale(&layer.name)?),
            (LayerKind::Relu | LayerKind::MaxPool2(_) | LayerKind::Flatten | LayerKind::Reshape { .. }, true) => {
                // shape and sign operators keep the scale of their operand
                let s = in_scale.ok_or_else(|| RuntimeError::MissingScale(layer.name.clone()))?;
                match &layer.kind {
                    LayerKind::Relu => Kernel::ReluQ(s),
                    LayerKind::MaxPool2(p) => Kernel::MaxPoolQ(*p, s),
                    LayerKind::Flatten => Kernel::ReshapeQ(vec![numel(&ins[0].shape)], s),
                    LayerKind::Reshape { shape } => Kernel::ReshapeQ(shape.clone(), s),
                    _ => unreachable!(),
                }
            }
            (LayerKind::WgEnc { tile, .. }, false) => Kernel::WgEnc { tile: *tile, task_ops },
            (LayerKind::WgConv { tile }, false) => Kernel::WgConv {
                u: Arc::new(transform_kernel(&*need("kernel")?, *tile)?),
                task_ops,
            },
            (LayerKind::WgDec { tile, out_h, out_w }, false) => Kernel::WgDec {
                tile: *tile,
                out_h: *out_h,
                out_w: *out_w,
                bias: weight("bias"),
                task_ops,
            },
            (kind, _) => {
                return Err(RuntimeError::InvalidPath(format!(
                    "routine `{}` cannot execute {} layer `{}`",
                    routine.descriptor,
                    kind.layer_type(),
                    layer.name
                )))
            }
        };
        let out_scale = match &k {
            Kernel::ConvQ { out_scale, .. } | Kernel::DenseQ { out_scale, .. } => Some(*out_scale),
            Kernel::AddQ(s) | Kernel::ReluQ(s) | Kernel::MaxPoolQ(_, s) | Kernel::ReshapeQ(_, s) => Some(*s),
            _ => None,
        };
        Ok((k, out_scale))
    }
}

fn resolve<'r>(registry: &'r Registry, layer_type: LayerType, d: &RoutineDescriptor) -> Result<&'r Routine, RuntimeError> {
    registry
        .find(layer_type, d)
        .ok_or_else(|| RuntimeError::InvalidPath(format!("no registered {layer_type} routine `{d}`")))
}

/// Kernel and output slot of one layer outside any plan, for timing a
/// routine in isolation. Childnet routines use their untuned inner path.
pub fn layer_kernel(
    net: &Net,
    registry: &Registry,
    id: LayerId,
    routine: &Routine,
    params: &ParamAssignment,
    ins: &[SlotInfo],
    qscales: &BTreeMap<String, f32>,
) -> Result<(Kernel, SlotInfo), RuntimeError> {
    let pl = Planner {
        net,
        registry,
        path: None,
        qscales,
        slots: Vec::new(),
        steps: Vec::new(),
    };
    let refs: Vec<&SlotInfo> = ins.iter().collect();
    let shapes: Vec<Shape> = ins.iter().map(|s| s.shape.clone()).collect();
    let shape = layer_output_shape(&net.layers[id], &shapes)?;
    let (kernel, qscale) = pl.kernel(id, routine, params, &refs)?;
    Ok((
        kernel,
        SlotInfo {
            shape,
            dtype: routine.descriptor.dtype(),
            qscale,
        },
    ))
}

/// Resolves every layer of `net` to a kernel under `path` and inserts a cast
/// on every edge whose endpoints run in different schemas.
pub fn plan(
    net: &Net,
    registry: &Registry,
    path: &RoutinePath<f64>,
    qscales: &BTreeMap<String, f32>,
) -> Result<ExecutionPlan, RuntimeError> {
    let order = topological_order(net)?;
    let mut pl = Planner {
        net,
        registry,
        path: Some(path),
        qscales,
        slots: Vec::new(),
        steps: Vec::new(),
    };
    let mut out_slot: Vec<Option<usize>> = vec![None; net.len()];
    let mut schema_of = vec![None; net.len()];
    let mut expected_adapts = 0;

    for &id in &order {
        let layer = &net.layers[id];
        if layer.layer_type().is_aux() {
            return Err(RuntimeError::InvalidPath(format!(
                "auxiliary layer `{}` cannot execute",
                layer.name
            )));
        }
        let choice = path
            .choice(&layer.name)
            .ok_or_else(|| RuntimeError::InvalidPath(format!("path has no routine for `{}`", layer.name)))?;
        let routine = resolve(registry, layer.layer_type(), &choice.descriptor)?;
        if !routine.applicable(layer) || !routine.grid.contains(&choice.params) {
            return Err(RuntimeError::InvalidPath(format!(
                "`{}` with {:?} does not apply to `{}`",
                choice.descriptor, choice.params, layer.name
            )));
        }
        let schema = routine.schema().clone();
        let dtype = routine.descriptor.dtype();

        let mut ins = Vec::with_capacity(layer.inputs.len());
        for &p in &layer.inputs {
            let src = out_slot[p].expect("producers precede consumers");
            let from = schema_of[p].clone().expect("producers precede consumers");
            if from == schema {
                ins.push(src);
                continue;
            }
            let producer = &net.layers[p].name;
            let recorded = path
                .adapts
                .iter()
                .any(|a| a.edge.0 == *producer && a.edge.1 == layer.name && a.from == from && a.to == schema);
            if !recorded {
                return Err(RuntimeError::InvalidPath(format!(
                    "edge {producer}->{} crosses {from} -> {schema} without an adapt",
                    layer.name
                )));
            }
            expected_adapts += 1;
            let adapt = registry.lookup_adapt(&from, &schema)?;
            let (kernel, qscale) = match adapt.kind {
                AdaptKind::Void => (Kernel::Identity, pl.slots[src].qscale),
                AdaptKind::Quantize => {
                    let s = pl.scale(producer)?;
                    (Kernel::Quantize(s), Some(s))
                }
                AdaptKind::Dequantize => (Kernel::Dequantize, None),
            };
            let shape = pl.slots[src].shape.clone();
            let slot = pl.slot(SlotInfo {
                shape,
                dtype: adapt.to.dtype,
                qscale,
            });
            pl.steps.push(Step {
                name: format!("{producer}->{}", layer.name),
                kernel,
                ins: vec![src],
                out: slot,
            });
            ins.push(slot);
        }

        for &s in &ins {
            if pl.slots[s].dtype != dtype {
                return Err(RuntimeError::InvalidPath(format!(
                    "`{}` reads a {} blob with a {} routine",
                    layer.name, pl.slots[s].dtype, dtype
                )));
            }
        }
        let in_infos: Vec<&SlotInfo> = ins.iter().map(|&s| &pl.slots[s]).collect();
        let in_shapes: Vec<Shape> = in_infos.iter().map(|s| s.shape.clone()).collect();
        let shape = layer_output_shape(layer, &in_shapes)?;
        let (kernel, qscale) = pl.kernel(id, routine, &choice.params, &in_infos)?;
        let slot = pl.slot(SlotInfo { shape, dtype, qscale });
        pl.steps.push(Step {
            name: layer.name.clone(),
            kernel,
            ins,
            out: slot,
        });
        out_slot[id] = Some(slot);
        schema_of[id] = Some(schema);
    }

    if expected_adapts != path.adapts.len() {
        return Err(RuntimeError::InvalidPath(format!(
            "path lists {} adapts but the schemas require {expected_adapts}",
            path.adapts.len()
        )));
    }
    let name_slot = |ids: &[LayerId]| -> Vec<(String, usize)> {
        ids.iter()
            .map(|&i| (net.layers[i].name.clone(), out_slot[i].expect("every layer planned")))
            .collect()
    };
    Ok(ExecutionPlan {
        net: net.name.clone(),
        inputs: name_slot(&net.inputs),
        outputs: name_slot(&net.outputs),
        layer_slots: name_slot(&order),
        steps: pl.steps,
        slots: pl.slots,
    })
}
