//! Recursive tuning: childnets innermost first, then the parent net.

use super::cost::CostModel;
use super::dprs::{dprs_with, DprsOptions};
use super::path::{ChildPath, LayerChoice, RoutinePath};
use super::OptimizerError;
use crate::graph::{insert_auxiliary_layers, topological_order, LayerKind, Net};
use crate::routines::{Registry, Schema};
use crate::scalar::Cost;

pub fn tune<C: Cost>(net: &Net, costs: &CostModel<C>, lambda: &[Schema]) -> Result<RoutinePath<C>, OptimizerError> {
    tune_with(net, costs, lambda, DprsOptions::default())
}

/// Each childnet is tuned within the schema of the routine it realizes and
/// its total replaces that routine's cost entry; a childnet that cannot be
/// tuned removes its routine from the candidates. The parent is then tuned
/// with auxiliary layers inserted, and those are stripped from the result.
pub fn tune_with<C: Cost>(
    net: &Net,
    costs: &CostModel<C>,
    lambda: &[Schema],
    options: DprsOptions,
) -> Result<RoutinePath<C>, OptimizerError> {
    let mut local = costs.clone();
    let mut children = Vec::new();
    for entry in &net.childnets {
        let q = net.qualified(net.find(&entry.layer).ok_or_else(|| {
            OptimizerError::Internal(format!("childnet for unknown layer `{}`", entry.layer))
        })?);
        match tune_with(&entry.child.inner, costs, &[entry.descriptor.schema.clone()], options) {
            Ok(p) => {
                local.insert(q, entry.descriptor.clone(), entry.params.clone(), p.total);
                children.push((entry, p));
            }
            Err(_) => local.remove(&q, &entry.descriptor, &entry.params),
        }
    }

    let aux = insert_auxiliary_layers(net)?;
    let mut path = dprs_with(&aux, &local, lambda, options)?.path;
    let aux_names: Vec<&str> = aux
        .layers
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::AuxInput | LayerKind::AuxOutput))
        .map(|l| l.name.as_str())
        .collect();
    path.layers.retain(|c| !aux_names.contains(&c.layer.as_str()));
    path.adapts
        .retain(|a| !aux_names.contains(&a.edge.0.as_str()) && !aux_names.contains(&a.edge.1.as_str()));

    for (entry, p) in children {
        if let Some(c) = path.choice(&entry.layer) {
            if c.descriptor == entry.descriptor && c.params == entry.params {
                path.childnets.push(ChildPath {
                    layer: entry.layer.clone(),
                    descriptor: entry.descriptor.clone(),
                    params: entry.params.clone(),
                    path: p,
                });
            }
        }
    }
    Ok(path)
}

/// The untuned float32 path: every layer runs its default routine with the
/// first parameter combination. Times are zero since nothing was measured.
pub fn default_path(net: &Net, registry: &Registry) -> Result<RoutinePath<f64>, OptimizerError> {
    let mut layers = Vec::with_capacity(net.len());
    for id in topological_order(net)? {
        let layer = &net.layers[id];
        let r = registry.default_routine(layer).ok_or_else(|| OptimizerError::AllInfeasible {
            layer: net.qualified(id),
        })?;
        layers.push(LayerChoice {
            layer: layer.name.clone(),
            descriptor: r.descriptor.clone(),
            params: r.grid.enumerate().into_iter().next().unwrap_or_default(),
            time: 0.0,
        });
    }
    Ok(RoutinePath {
        net: net.name.clone(),
        schemas: vec![Schema::cpu()],
        layers,
        adapts: Vec::new(),
        total: 0.0,
        childnets: Vec::new(),
        qscales: Default::default(),
    })
}

/// The tuning options a deployment chooses between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TuneMode {
    /// Every layer on cpu float32.
    Float32,
    /// Every layer with a qint8 routine runs it; the rest stay on float32.
    Qint8,
    /// Free choice over the given schema set.
    Hybrid,
}

impl TuneMode {
    pub const ALL: [TuneMode; 3] = [TuneMode::Float32, TuneMode::Qint8, TuneMode::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            TuneMode::Float32 => "float32",
            TuneMode::Qint8 => "qint8",
            TuneMode::Hybrid => "hybrid",
        }
    }
}

/// `lambda` only matters for [`TuneMode::Hybrid`].
pub fn tune_mode<C: Cost>(
    net: &Net,
    costs: &CostModel<C>,
    lambda: &[Schema],
    mode: TuneMode,
) -> Result<RoutinePath<C>, OptimizerError> {
    match mode {
        TuneMode::Float32 => tune(net, costs, &[Schema::cpu()]),
        TuneMode::Hybrid => tune(net, costs, lambda),
        TuneMode::Qint8 => {
            let q = Schema::cpu_qint8();
            let mut forced = costs.clone();
            let layers: Vec<String> = costs.layers().map(str::to_string).collect();
            for layer in layers {
                let entries = costs.entries(&layer);
                if entries.iter().any(|e| e.descriptor.schema == q) {
                    for e in entries.iter().filter(|e| e.descriptor.schema != q) {
                        forced.remove(&layer, &e.descriptor, &e.params);
                    }
                }
            }
            tune(net, &forced, &[Schema::cpu(), q])
        }
    }
}
