use std::collections::BTreeMap;

use super::timer::{Probe, Timer};
use super::unit::{measure, seeded_inputs, MeasureConfig};
use super::{AdaptCostEntry, ProfileEntry, ProfileTable, ProfilerError};
use crate::graph::Net;
use crate::optimizer::{tune, ChildPath, CostModel, RoutinePath};
use crate::routines::{render_params, Registry, Schema};
use crate::runtime::{blobs, calibrate_scales, plan, run};

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedConfig {
    pub measure: MeasureConfig,
    pub top_k: usize,
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for IntegratedConfig {
    fn default() -> Self {
        IntegratedConfig {
            measure: MeasureConfig::default(),
            top_k: 3,
            max_passes: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntegratedProfile {
    /// One entry per top-level layer for the accepted configuration, scaled
    /// so the entries plus adapts add up to its measured whole-net time.
    pub table: ProfileTable,
    pub seed_path: RoutinePath<f64>,
    pub path: RoutinePath<f64>,
    pub seed_us: f64,
    pub final_us: f64,
    pub measurements: usize,
}

/// The `top_k` fastest entries per (layer, schema); ties by descriptor and
/// parameter rendering.
pub fn filter_top_k(unit: &ProfileTable, top_k: usize) -> ProfileTable {
    let mut groups: BTreeMap<(String, Schema), Vec<&ProfileEntry>> = BTreeMap::new();
    for e in &unit.entries {
        groups
            .entry((e.layer.clone(), e.descriptor.schema.clone()))
            .or_default()
            .push(e);
    }
    let mut entries = Vec::new();
    for (_, mut g) in groups {
        g.sort_by(|a, b| {
            a.time_us
                .total_cmp(&b.time_us)
                .then_with(|| a.descriptor.to_string().cmp(&b.descriptor.to_string()))
                .then_with(|| render_params(&a.params).cmp(&render_params(&b.params)))
        });
        entries.extend(g.into_iter().take(top_k).cloned());
    }
    ProfileTable {
        host: unit.host.clone(),
        entries,
        adapts: unit.adapts.clone(),
    }
}

/// Refines the DPRS path over unit costs by whole-net measurements: each
/// layer in turn tries the other surviving routines of its current schema
/// and keeps a swap only when the measured net time strictly drops.
pub fn integrated_profile(
    net: &Net,
    registry: &Registry,
    unit: &ProfileTable,
    lambda: &[Schema],
    cfg: &IntegratedConfig,
    timer: &mut dyn Timer,
) -> Result<IntegratedProfile, ProfilerError> {
    let filtered = filter_top_k(unit, cfg.top_k.max(1));
    let costs = CostModel::from_profile(&filtered);
    let mut seed_path = tune(net, &costs, lambda)?.to_f64();
    let x = seeded_inputs(net, cfg.seed);
    seed_path.qscales = calibrate_scales(net, registry, &[x.clone()])?;
    let inputs = blobs(&x);

    let mut measurements = 0;
    let mut time_path = |p: &RoutinePath<f64>| -> Result<f64, ProfilerError> {
        let pl = plan(net, registry, p, &p.qscales)?;
        let mut work = || run(&pl, &inputs).map(|_| ());
        measurements += 1;
        Ok(measure(&Probe::Net { path: p }, &mut work, &cfg.measure, timer)?.median)
    };

    let seed_us = time_path(&seed_path)?;
    let (mut best, mut best_us) = (seed_path.clone(), seed_us);
    for _ in 0..cfg.max_passes {
        let mut improved = false;
        for i in 0..best.layers.len() {
            let cur = best.layers[i].clone();
            let Some(id) = net.find(&cur.layer) else { continue };
            let q = net.qualified(id);
            let candidates: Vec<ProfileEntry> = filtered
                .entries
                .iter()
                .filter(|e| e.layer == q && e.descriptor.schema == cur.descriptor.schema)
                .filter(|e| !(e.descriptor == cur.descriptor && e.params == cur.params))
                .cloned()
                .collect();
            for e in candidates {
                let mut cand = best.clone();
                cand.layers[i].descriptor = e.descriptor.clone();
                cand.layers[i].params = e.params.clone();
                cand.layers[i].time = e.time_us;
                cand.childnets.retain(|c| c.layer != cur.layer);
                if let Some(child) = child_path(net, &costs, &cur.layer, &e)? {
                    cand.childnets.push(child);
                }
                let t = time_path(&cand)?;
                if t < best_us {
                    best = cand;
                    best_us = t;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }

    best.total = best.member_sum();
    let table = rescaled(net, &best, &filtered, best_us);
    Ok(IntegratedProfile {
        table,
        seed_path,
        path: best,
        seed_us,
        final_us: best_us,
        measurements,
    })
}

/// Tuned inner path for a childnet routine picked during refinement.
fn child_path(
    net: &Net,
    costs: &CostModel<f64>,
    layer: &str,
    e: &ProfileEntry,
) -> Result<Option<ChildPath<f64>>, ProfilerError> {
    let Some(entry) = net
        .childnets
        .iter()
        .find(|c| c.layer == layer && c.descriptor == e.descriptor && c.params == e.params)
    else {
        return Ok(None);
    };
    let path = tune(&entry.child.inner, costs, &[e.descriptor.schema.clone()])?;
    Ok(Some(ChildPath {
        layer: layer.to_string(),
        descriptor: e.descriptor.clone(),
        params: e.params.clone(),
        path,
    }))
}

fn rescaled(net: &Net, path: &RoutinePath<f64>, filtered: &ProfileTable, measured: f64) -> ProfileTable {
    let predicted = path.member_sum();
    let k = if predicted > 0.0 { measured / predicted } else { 1.0 };
    let mut entries = Vec::new();
    for c in &path.layers {
        let Some(id) = net.find(&c.layer) else { continue };
        let q = net.qualified(id);
        if let Some(e) = filtered.entry(&q, &c.descriptor, &c.params) {
            entries.push(ProfileEntry {
                time_us: e.time_us * k,
                mean_us: e.mean_us * k,
                std_us: e.std_us * k,
                ..e.clone()
            });
        }
    }
    // inner layers of the chosen childnet routines keep their unit costs
    let chosen: Vec<String> = path
        .layers
        .iter()
        .filter_map(|c| {
            net.childnets
                .iter()
                .find(|e| e.layer == c.layer && e.descriptor == c.descriptor && e.params == c.params)
                .map(|e| e.child.inner.scope.clone())
        })
        .collect();
    entries.extend(
        filtered
            .entries
            .iter()
            .filter(|e| chosen.iter().any(|s| e.layer.starts_with(&format!("{s}>"))))
            .cloned(),
    );
    let adapts = path
        .adapts
        .iter()
        .filter_map(|a| {
            let find = |n: &str| net.find(n).map(|i| net.qualified(i));
            let (p, c) = (find(&a.edge.0)?, find(&a.edge.1)?);
            filtered
                .adapts
                .iter()
                .find(|x| x.edge == (p.clone(), c.clone()) && x.from == a.from && x.to == a.to)
                .map(|x| AdaptCostEntry {
                    time_us: x.time_us * k,
                    ..x.clone()
                })
        })
        .collect();
    ProfileTable {
        host: filtered.host.clone(),
        entries,
        adapts,
    }
}
