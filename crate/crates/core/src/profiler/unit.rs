use std::collections::BTreeMap;

use super::timer::{Probe, Stats, Timer};
use super::{AdaptCostEntry, ProfileEntry, ProfileTable, ProfilerError};
use crate::graph::{flatten_childnets, infer_shapes, LayerId, Net};
use crate::kernels::quant::max_abs_scale;
use crate::routines::{AdaptKind, ParamAssignment, Registry, Routine, RoutineImpl, Schema};
use crate::runtime::{calibrate_scales, layer_kernel, synthetic_inputs, Kernel, SlotInfo};
use crate::tensor::{Blob, DType, QTensor, Tensor};
use crate::zoo;

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureConfig {
    pub warmup: usize,
    pub runs: usize,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig { warmup: 3, runs: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitConfig {
    pub measure: MeasureConfig,
    /// Schemas whose routines are profiled; cpu float32 is always included
    /// because the net's input and output run there.
    pub schemas: Vec<Schema>,
    pub seed: u64,
    pub host: String,
}

impl Default for UnitConfig {
    fn default() -> Self {
        UnitConfig {
            measure: MeasureConfig::default(),
            schemas: vec![Schema::cpu(), Schema::cpu_qint8()],
            seed: 0,
            host: String::new(),
        }
    }
}

/// Smallest time a measurement reports, so measured entries stay positive.
const RESOLUTION_US: f64 = 1e-3;

/// Warmup runs are discarded; the median of the measured runs is the cost.
pub fn measure(
    probe: &Probe<'_>,
    work: &mut dyn FnMut() -> Result<(), crate::runtime::RuntimeError>,
    cfg: &MeasureConfig,
    timer: &mut dyn Timer,
) -> Result<Stats, ProfilerError> {
    if cfg.runs == 0 {
        return Err(ProfilerError::Precondition("runs must be at least 1".into()));
    }
    for _ in 0..cfg.warmup {
        work()?;
    }
    let mut samples = Vec::with_capacity(cfg.runs);
    for _ in 0..cfg.runs {
        samples.push(timer.time(probe, work)?);
    }
    Ok(Stats::of(&samples))
}

/// Times one routine with one parameter combination on `inputs`. Void
/// routines and auxiliary layers cost zero without running anything.
#[allow(clippy::too_many_arguments)]
pub fn time_routine(
    net: &Net,
    registry: &Registry,
    layer: LayerId,
    routine: &Routine,
    params: &ParamAssignment,
    inputs: &[Blob],
    qscales: &BTreeMap<String, f32>,
    cfg: &MeasureConfig,
    timer: &mut dyn Timer,
) -> Result<ProfileEntry, ProfilerError> {
    if cfg.runs == 0 {
        return Err(ProfilerError::Precondition("runs must be at least 1".into()));
    }
    let name = net.qualified(layer);
    let entry = |s: Stats| ProfileEntry {
        layer: name.clone(),
        descriptor: routine.descriptor.clone(),
        params: params.clone(),
        time_us: s.median,
        mean_us: s.mean,
        std_us: s.std,
        runs: s.runs,
    };
    if routine.imp == RoutineImpl::Void || net.layers[layer].layer_type().is_aux() {
        return Ok(entry(Stats {
            median: 0.0,
            mean: 0.0,
            std: 0.0,
            runs: cfg.runs,
        }));
    }
    let slots: Vec<SlotInfo> = inputs
        .iter()
        .map(|b| SlotInfo {
            shape: b.shape().to_vec(),
            dtype: b.dtype(),
            qscale: b.qscale(),
        })
        .collect();
    let (kernel, _) = layer_kernel(net, registry, layer, routine, params, &slots, qscales)?;
    let refs: Vec<&Blob> = inputs.iter().collect();
    let probe = Probe::Routine {
        layer: &name,
        descriptor: &routine.descriptor,
        params,
    };
    let mut work = || kernel.apply(&refs).map(|_| ()).map_err(Into::into);
    let mut s = measure(&probe, &mut work, cfg, timer)?;
    s.median = s.median.max(RESOLUTION_US);
    Ok(entry(s))
}

fn synthetic(shape: &[usize], dtype: DType, rng: &mut impl rand::Rng) -> Blob {
    let t = zoo::random_tensor(shape.to_vec(), rng);
    match dtype {
        DType::Float32 | DType::Float16 => Blob::F32(t),
        DType::Qint8 => {
            let s = max_abs_scale(&t);
            Blob::Q8(QTensor::quantize(&t, s).expect("positive scale"))
        }
    }
}

/// Profiles every routine of every layer, childnet layers included, plus a
/// cast on every edge for every ordered pair of distinct schemas.
pub fn unit_profile(
    net: &Net,
    registry: &Registry,
    cfg: &UnitConfig,
    timer: &mut dyn Timer,
) -> Result<ProfileTable, ProfilerError> {
    registry.check_schemas(&cfg.schemas).map_err(|e| ProfilerError::Precondition(e.to_string()))?;
    let mut schemas = cfg.schemas.clone();
    schemas.push(Schema::cpu());
    schemas.sort();
    schemas.dedup();

    let mut rng = zoo::rng(cfg.seed);
    let mut table = ProfileTable {
        host: cfg.host.clone(),
        ..Default::default()
    };
    for (_, sub) in flatten_childnets(net) {
        let x = synthetic_inputs(sub, &mut rng);
        let qscales = calibrate_scales(sub, registry, &[x])?;
        let shapes = infer_shapes(sub)?;
        for (id, layer) in sub.layers.iter().enumerate() {
            for schema in &schemas {
                for routine in registry.lookup_for(layer, schema) {
                    let dtype = routine.descriptor.dtype();
                    let inputs: Vec<Blob> = layer
                        .inputs
                        .iter()
                        .map(|&p| synthetic(&shapes[p], dtype, &mut rng))
                        .collect();
                    for params in routine.grid.enumerate() {
                        let e = time_routine(sub, registry, id, routine, &params, &inputs, &qscales, &cfg.measure, timer)?;
                        table.entries.push(e);
                    }
                }
            }
        }
        for (p, c) in sub.edges() {
            let (pq, cq) = (sub.qualified(p), sub.qualified(c));
            for from in &schemas {
                for to in &schemas {
                    let Ok(adapt) = registry.lookup_adapt(from, to) else {
                        continue;
                    };
                    if adapt.kind == AdaptKind::Void {
                        continue;
                    }
                    let blob = synthetic(&shapes[p], from.dtype, &mut rng);
                    let kernel = match adapt.kind {
                        AdaptKind::Quantize => Kernel::Quantize(max_abs_scale(&blob.to_f32())),
                        _ => Kernel::Dequantize,
                    };
                    let probe = Probe::Adapt {
                        edge: (&pq, &cq),
                        from,
                        to,
                    };
                    let mut work = || kernel.apply(&[&blob]).map(|_| ()).map_err(Into::into);
                    let s = measure(&probe, &mut work, &cfg.measure, timer)?;
                    table.adapts.push(AdaptCostEntry {
                        edge: (pq.clone(), cq.clone()),
                        from: from.clone(),
                        to: to.clone(),
                        time_us: s.median.max(RESOLUTION_US),
                    });
                }
            }
        }
    }
    Ok(table)
}

/// Seeded synthetic inputs for the whole net.
pub fn seeded_inputs(net: &Net, seed: u64) -> Vec<Tensor<f32>> {
    synthetic_inputs(net, &mut zoo::rng(seed))
}
