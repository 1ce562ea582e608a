//! The finite choice problem shared by DPRS and the exhaustive oracle.

use std::collections::BTreeSet;

use super::cost::{CostEntry, CostModel};
use super::path::{AdaptChoice, LayerChoice, RoutinePath};
use super::OptimizerError;
use crate::graph::{topological_order, LayerId, LayerKind, Net};
use crate::routines::{ParamAssignment, RoutineDescriptor, Schema};
use crate::scalar::Cost;

/// One selectable option of a layer.
#[derive(Debug, Clone)]
pub(crate) struct Opt<C> {
    /// Index into `Problem::schemas`; `None` for a schema-agnostic aux layer.
    pub schema: Option<usize>,
    pub cost: C,
    pub descriptor: RoutineDescriptor,
    pub params: ParamAssignment,
}

pub(crate) struct Problem<'a, C> {
    pub net: &'a Net,
    /// Sorted, deduplicated; Λ plus the boundary schema.
    pub schemas: Vec<Schema>,
    pub order: Vec<LayerId>,
    /// Feasible options per layer, ascending by schema index.
    pub opts: Vec<Vec<Opt<C>>>,
    /// Per consumer: (producer, adapt[producer opt][consumer opt]).
    pub incoming: Vec<Vec<(LayerId, Vec<Vec<C>>)>>,
    /// Successor count per layer.
    pub fanout: Vec<usize>,
}

pub(crate) fn void_descriptor() -> RoutineDescriptor {
    RoutineDescriptor::new(Schema::cpu(), "void")
}

/// Schema every `input`/`output` layer is pinned to.
pub(crate) fn boundary_schema() -> Schema {
    Schema::cpu()
}

impl<'a, C: Cost> Problem<'a, C> {
    pub fn new(net: &'a Net, costs: &CostModel<C>, lambda: &[Schema]) -> Result<Self, OptimizerError> {
        if lambda.is_empty() {
            return Err(OptimizerError::EmptySchemaSet);
        }
        let order = topological_order(net)?;
        let mut set: BTreeSet<Schema> = lambda.iter().cloned().collect();
        set.insert(boundary_schema());
        let schemas: Vec<Schema> = set.into_iter().collect();
        let index = |s: &Schema| schemas.iter().position(|x| x == s).expect("schema listed");
        let mut lambda_ids: Vec<usize> = lambda.iter().map(index).collect();
        lambda_ids.sort_unstable();
        lambda_ids.dedup();

        let mut opts = Vec::with_capacity(net.len());
        for (id, layer) in net.layers.iter().enumerate() {
            let fixed = |schema: Option<usize>| Opt {
                schema,
                cost: C::zero(),
                descriptor: void_descriptor(),
                params: ParamAssignment::new(),
            };
            let o = match &layer.kind {
                LayerKind::AuxInput | LayerKind::AuxOutput => vec![fixed(None)],
                LayerKind::Input { .. } | LayerKind::Output => vec![fixed(Some(index(&boundary_schema())))],
                LayerKind::Adapt { .. } => {
                    return Err(OptimizerError::Unsupported(format!(
                        "layer `{}` is an adapt layer; tune the net before inserting adapts",
                        layer.name
                    )))
                }
                _ => {
                    let q = net.qualified(id);
                    lambda_ids
                        .iter()
                        .filter_map(|&s| {
                            costs.fastest(&q, &schemas[s]).map(|e: &CostEntry<C>| Opt {
                                schema: Some(s),
                                cost: e.time,
                                descriptor: e.descriptor.clone(),
                                params: e.params.clone(),
                            })
                        })
                        .collect()
                }
            };
            if o.is_empty() {
                return Err(OptimizerError::AllInfeasible {
                    layer: net.qualified(id),
                });
            }
            opts.push(o);
        }

        let mut incoming = vec![Vec::new(); net.len()];
        let mut fanout = vec![0; net.len()];
        for (c, layer) in net.layers.iter().enumerate() {
            for &p in &layer.inputs {
                fanout[p] += 1;
                let (pq, cq) = (net.qualified(p), net.qualified(c));
                let mut table = Vec::with_capacity(opts[p].len());
                for op in &opts[p] {
                    let mut row = Vec::with_capacity(opts[c].len());
                    for oc in &opts[c] {
                        let cost = match (op.schema, oc.schema) {
                            (Some(a), Some(b)) if a != b => costs
                                .adapt(&pq, &cq, &schemas[a], &schemas[b])
                                .ok_or_else(|| OptimizerError::MissingAdaptCost {
                                    edge: (pq.clone(), cq.clone()),
                                    from: schemas[a].to_string(),
                                    to: schemas[b].to_string(),
                                })?,
                            _ => C::zero(),
                        };
                        row.push(cost);
                    }
                    table.push(row);
                }
                incoming[c].push((p, table));
            }
        }
        Ok(Problem {
            net,
            schemas,
            order,
            opts,
            incoming,
            fanout,
        })
    }

    /// Left fold in topological order: each layer's cost, then the adapt
    /// costs of its incoming edges. Layers whose option is `None` are skipped
    /// together with their edges.
    pub fn canonical_cost(&self, assign: &[Option<usize>]) -> C {
        let mut total = C::zero();
        for &l in &self.order {
            let Some(o) = assign[l] else { continue };
            total = total + self.opts[l][o].cost;
            for (p, table) in &self.incoming[l] {
                if let Some(po) = assign[*p] {
                    total = total + table[po][o];
                }
            }
        }
        total
    }

    /// Number of assignments over Λ for layers with a real choice.
    pub fn free_layers(&self) -> usize {
        self.net
            .layers
            .iter()
            .filter(|l| {
                !matches!(
                    l.kind,
                    LayerKind::AuxInput | LayerKind::AuxOutput | LayerKind::Input { .. } | LayerKind::Output
                )
            })
            .count()
    }

    pub fn into_path(&self, assign: &[usize], lambda: &[Schema]) -> RoutinePath<C> {
        let full: Vec<Option<usize>> = assign.iter().map(|&o| Some(o)).collect();
        let mut layers = Vec::with_capacity(self.net.len());
        let mut adapts = Vec::new();
        for &l in &self.order {
            let o = &self.opts[l][assign[l]];
            layers.push(LayerChoice {
                layer: self.net.layers[l].name.clone(),
                descriptor: o.descriptor.clone(),
                params: o.params.clone(),
                time: o.cost,
            });
            for (p, table) in &self.incoming[l] {
                let po = &self.opts[*p][assign[*p]];
                if let (Some(a), Some(b)) = (po.schema, o.schema) {
                    if a != b {
                        adapts.push(AdaptChoice {
                            edge: (self.net.layers[*p].name.clone(), self.net.layers[l].name.clone()),
                            from: self.schemas[a].clone(),
                            to: self.schemas[b].clone(),
                            time: table[assign[*p]][assign[l]],
                        });
                    }
                }
            }
        }
        let mut schemas: Vec<Schema> = lambda.to_vec();
        schemas.sort();
        schemas.dedup();
        RoutinePath {
            net: self.net.name.clone(),
            schemas,
            layers,
            adapts,
            total: self.canonical_cost(&full),
            childnets: Vec::new(),
            qscales: Default::default(),
        }
    }
}
