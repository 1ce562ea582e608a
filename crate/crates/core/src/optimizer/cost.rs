use std::collections::BTreeMap;

use crate::profiler::ProfileTable;
use crate::routines::{render_params, ParamAssignment, RoutineDescriptor, Schema};
use crate::scalar::Cost;

#[derive(Debug, Clone, PartialEq)]
pub struct CostEntry<C> {
    pub descriptor: RoutineDescriptor,
    pub params: ParamAssignment,
    pub time: C,
}

type AdaptKey = (String, String, Schema, Schema);

/// Per-routine and per-edge costs, keyed by qualified layer names.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel<C> {
    entries: BTreeMap<String, Vec<CostEntry<C>>>,
    adapts: BTreeMap<AdaptKey, C>,
}

impl<C> Default for CostModel<C> {
    fn default() -> Self {
        CostModel {
            entries: BTreeMap::new(),
            adapts: BTreeMap::new(),
        }
    }
}

impl<C: Cost> CostModel<C> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add or replace the entry for `(layer, descriptor, params)`.
    pub fn insert(
        &mut self,
        layer: impl Into<String>,
        descriptor: RoutineDescriptor,
        params: ParamAssignment,
        time: C,
    ) {
        let list = self.entries.entry(layer.into()).or_default();
        match list
            .iter_mut()
            .find(|e| e.descriptor == descriptor && e.params == params)
        {
            Some(e) => e.time = time,
            None => list.push(CostEntry {
                descriptor,
                params,
                time,
            }),
        }
    }

    pub fn remove(&mut self, layer: &str, descriptor: &RoutineDescriptor, params: &ParamAssignment) {
        if let Some(list) = self.entries.get_mut(layer) {
            list.retain(|e| !(&e.descriptor == descriptor && &e.params == params));
        }
    }

    pub fn set_adapt(
        &mut self,
        producer: impl Into<String>,
        consumer: impl Into<String>,
        from: Schema,
        to: Schema,
        time: C,
    ) {
        self.adapts
            .insert((producer.into(), consumer.into(), from, to), time);
    }

    pub fn entries(&self, layer: &str) -> &[CostEntry<C>] {
        self.entries.get(layer).map_or(&[], Vec::as_slice)
    }

    pub fn layers(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Cost of casting the blob on `producer → consumer`; void casts are free.
    pub fn adapt(&self, producer: &str, consumer: &str, from: &Schema, to: &Schema) -> Option<C> {
        if from == to {
            return Some(C::zero());
        }
        self.adapts
            .get(&(producer.to_string(), consumer.to_string(), from.clone(), to.clone()))
            .copied()
    }

    pub fn adapt_entries(&self) -> impl Iterator<Item = (&AdaptKey, &C)> {
        self.adapts.iter()
    }

    /// F_i(λ): the fastest entry of `layer` within `schema`.
    ///
    /// Ties go to the smaller descriptor string, then the smaller parameter
    /// rendering.
    pub fn fastest(&self, layer: &str, schema: &Schema) -> Option<&CostEntry<C>> {
        let mut best: Option<&CostEntry<C>> = None;
        for e in self.entries(layer).iter().filter(|e| &e.descriptor.schema == schema) {
            best = match best {
                None => Some(e),
                Some(b) => {
                    let key = |x: &CostEntry<C>| (x.descriptor.to_string(), render_params(&x.params));
                    if e.time < b.time || (e.time == b.time && key(e) < key(b)) {
                        Some(e)
                    } else {
                        Some(b)
                    }
                }
            }
        }
        best
    }

    /// Same structure with every cost transformed.
    pub fn map<D: Cost>(&self, f: impl Fn(C) -> D) -> CostModel<D> {
        CostModel {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| {
                    let v = v
                        .iter()
                        .map(|e| CostEntry {
                            descriptor: e.descriptor.clone(),
                            params: e.params.clone(),
                            time: f(e.time),
                        })
                        .collect();
                    (k.clone(), v)
                })
                .collect(),
            adapts: self.adapts.iter().map(|(k, &v)| (k.clone(), f(v))).collect(),
        }
    }
}

impl CostModel<f64> {
    pub fn from_profile(table: &ProfileTable) -> Self {
        let mut m = CostModel::new();
        for e in &table.entries {
            m.insert(e.layer.clone(), e.descriptor.clone(), e.params.clone(), e.time_us);
        }
        for a in &table.adapts {
            m.set_adapt(a.edge.0.clone(), a.edge.1.clone(), a.from.clone(), a.to.clone(), a.time_us);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> RoutineDescriptor {
        RoutineDescriptor::parse(s).unwrap()
    }

    #[test]
    fn fastest_breaks_ties_by_descriptor_then_params() {
        let mut m = CostModel::<f64>::new();
        m.insert("a", d("cpu/zeta"), ParamAssignment::new(), 2.0);
        m.insert("a", d("cpu/alpha"), [("x".to_string(), 2)].into(), 2.0);
        m.insert("a", d("cpu/alpha"), [("x".to_string(), 1)].into(), 2.0);
        m.insert("a", d("cpu:qint8/fast"), ParamAssignment::new(), 0.5);
        let f = m.fastest("a", &Schema::cpu()).unwrap();
        assert_eq!(f.descriptor, d("cpu/alpha"));
        assert_eq!(f.params["x"], 1);
        assert!(m.fastest("a", &Schema::parse("gpu").unwrap()).is_none());
        assert!(m.fastest("missing", &Schema::cpu()).is_none());
    }

    #[test]
    fn insert_replaces_and_void_adapt_is_free() {
        let mut m = CostModel::<f64>::new();
        m.insert("a", d("cpu/x"), ParamAssignment::new(), 3.0);
        m.insert("a", d("cpu/x"), ParamAssignment::new(), 1.0);
        assert_eq!(m.entries("a").len(), 1);
        assert_eq!(m.entries("a")[0].time, 1.0);
        assert_eq!(m.adapt("a", "b", &Schema::cpu(), &Schema::cpu()), Some(0.0));
        assert_eq!(m.adapt("a", "b", &Schema::cpu(), &Schema::cpu_qint8()), None);
        m.set_adapt("a", "b", Schema::cpu(), Schema::cpu_qint8(), 0.25);
        assert_eq!(m.adapt("a", "b", &Schema::cpu(), &Schema::cpu_qint8()), Some(0.25));
    }
}
