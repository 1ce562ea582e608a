//! Dynamic programming for routine selection over a 1-in-1-out DAG.
//!
//! A state is the best subpath ending at a layer for a fixed option of that
//! layer and fixed options of the branching layers still live there. Chains
//! extend states in O(1) per transition; merges combine one state per
//! predecessor that agree on their shared constraints. A branching layer's
//! constraint is dropped at its immediate post-dominator, after which every
//! path out of it has rejoined.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use super::cost::CostModel;
use super::path::RoutinePath;
use super::problem::Problem;
use super::OptimizerError;
use crate::graph::{immediate_post_dominators, GraphError, LayerId, Net};
use crate::routines::Schema;
use crate::scalar::Cost;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DprsOptions {
    /// Drop constraints at immediate post-dominators. Without it every
    /// constraint stays live until the output.
    pub relax: bool,
    /// Keep the most expensive state instead of the cheapest. Only used to
    /// exercise the oracle mismatch path.
    #[doc(hidden)]
    pub inject_fault: bool,
}

impl Default for DprsOptions {
    fn default() -> Self {
        DprsOptions {
            relax: true,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DprsStats {
    /// Stored states per layer id.
    pub states: Vec<usize>,
    /// Constraints live after each layer.
    pub live: Vec<usize>,
    /// Branching layers at or before each layer in topological order.
    pub branches_upto: Vec<usize>,
    pub max_states: usize,
    /// (branching layer, layer at which its constraint was dropped).
    pub relaxed: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DprsResult<C> {
    pub path: RoutinePath<C>,
    pub stats: DprsStats,
}

/// Cheapest candidate; equal costs go to the smallest key, which for routine
/// selection is the schema-choice vector. `None` costs are infeasible.
pub fn fastest<K: Ord, C: Cost>(
    candidates: impl IntoIterator<Item = (K, Option<C>)>,
) -> Result<(K, C), OptimizerError> {
    let mut best: Option<(K, C)> = None;
    for (k, c) in candidates {
        let Some(c) = c else { continue };
        let replace = match &best {
            None => true,
            Some((bk, bc)) => c < *bc || (c == *bc && k < *bk),
        };
        if replace {
            best = Some((k, c));
        }
    }
    best.ok_or_else(|| OptimizerError::AllInfeasible {
        layer: "(every candidate)".into(),
    })
}

pub fn dprs<C: Cost>(net: &Net, costs: &CostModel<C>, lambda: &[Schema]) -> Result<RoutinePath<C>, OptimizerError> {
    dprs_with(net, costs, lambda, DprsOptions::default()).map(|r| r.path)
}

type StateId = usize;

struct State<C> {
    layer: LayerId,
    opt: usize,
    cost: C,
    preds: Vec<StateId>,
    /// Options of `cons_out[layer]`, position by position.
    key: Vec<u16>,
}

struct Dp<'p, 'a, C> {
    pb: &'p Problem<'a, C>,
    fault: bool,
    arena: Vec<State<C>>,
    /// Materialized subpaths of states whose layer is finished.
    cache: HashMap<StateId, Vec<Option<usize>>>,
}

impl<C: Cost> Dp<'_, '_, C> {
    /// Union of the subpaths behind `roots`; a layer reached with two
    /// different options is an internal error.
    fn materialize(&self, roots: &[StateId]) -> Result<Vec<Option<usize>>, OptimizerError> {
        let mut assign = vec![None; self.pb.net.len()];
        let mut seen = HashSet::new();
        let mut stack: Vec<StateId> = roots.to_vec();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(v) = self.cache.get(&id) {
                self.merge_into(&mut assign, v)?;
                continue;
            }
            let s = &self.arena[id];
            match assign[s.layer] {
                Some(o) if o != s.opt => {
                    return Err(OptimizerError::Internal(format!(
                        "subpaths disagree on layer `{}`",
                        self.pb.net.layers[s.layer].name
                    )))
                }
                _ => assign[s.layer] = Some(s.opt),
            }
            stack.extend(s.preds.iter().copied());
        }
        Ok(assign)
    }

    fn merge_into(&self, assign: &mut [Option<usize>], other: &[Option<usize>]) -> Result<(), OptimizerError> {
        for (l, (a, &b)) in assign.iter_mut().zip(other).enumerate() {
            match (*a, b) {
                (Some(x), Some(y)) if x != y => {
                    return Err(OptimizerError::Internal(format!(
                        "subpaths disagree on layer `{}`",
                        self.pb.net.layers[l].name
                    )))
                }
                (None, Some(_)) => *a = b,
                _ => {}
            }
        }
        Ok(())
    }

    fn cache_state(&mut self, id: StateId) -> Result<(), OptimizerError> {
        if !self.cache.contains_key(&id) {
            let v = self.materialize(&[id])?;
            self.cache.insert(id, v);
        }
        Ok(())
    }

    fn vector(&self, assign: &[Option<usize>]) -> Vec<Option<usize>> {
        self.pb.order.iter().map(|&l| assign[l]).collect()
    }

    fn cost_order(&self, a: C, b: C) -> Ordering {
        let o = a.partial_cmp(&b).unwrap_or(Ordering::Equal);
        if self.fault {
            o.reverse()
        } else {
            o
        }
    }

    /// Whether a candidate beats the stored state `old`. `vec` is only
    /// evaluated on exact cost ties.
    fn beats(
        &self,
        cost: C,
        vec: impl FnOnce() -> Result<Vec<Option<usize>>, OptimizerError>,
        old: StateId,
    ) -> Result<bool, OptimizerError> {
        Ok(match self.cost_order(cost, self.arena[old].cost) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => {
                let old_vec = self.vector(&self.materialize(&[old])?);
                vec()? < old_vec
            }
        })
    }

    fn offer(
        &mut self,
        table: &mut BTreeMap<(usize, Vec<u16>), StateId>,
        cand: State<C>,
        vec: impl FnOnce(&Self) -> Result<Vec<Option<usize>>, OptimizerError>,
    ) -> Result<(), OptimizerError> {
        let k = (cand.opt, cand.key.clone());
        match table.get(&k) {
            Some(&old) => {
                if self.beats(cand.cost, || vec(self), old)? {
                    self.arena[old] = cand;
                }
            }
            None => {
                table.insert(k, self.arena.len());
                self.arena.push(cand);
            }
        }
        Ok(())
    }
}

fn dedup_ordered(ids: &[LayerId]) -> Vec<LayerId> {
    let mut out: Vec<LayerId> = Vec::with_capacity(ids.len());
    for &i in ids {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

struct Ancestors {
    words: usize,
    bits: Vec<u64>,
}

impl Ancestors {
    fn new(net: &Net, order: &[LayerId]) -> Self {
        let words = net.len().div_ceil(64);
        let mut bits = vec![0u64; words * net.len()];
        for &l in order {
            for &p in &net.layers[l].inputs {
                for w in 0..words {
                    let v = bits[p * words + w];
                    bits[l * words + w] |= v;
                }
                bits[l * words + p / 64] |= 1 << (p % 64);
            }
        }
        Ancestors { words, bits }
    }

    fn contains(&self, of: LayerId, a: LayerId) -> bool {
        self.bits[of * self.words + a / 64] >> (a % 64) & 1 == 1
    }
}

pub fn dprs_with<C: Cost>(
    net: &Net,
    costs: &CostModel<C>,
    lambda: &[Schema],
    options: DprsOptions,
) -> Result<DprsResult<C>, OptimizerError> {
    if !net.is_single_in_out() {
        return Err(GraphError::NotSingleInOut {
            inputs: net.inputs.len(),
            outputs: net.outputs.len(),
        }
        .into());
    }
    let pb = Problem::new(net, costs, lambda)?;
    let out = net.outputs[0];
    if let Some(l) = (0..net.len()).find(|&l| l != out && pb.fanout[l] == 0) {
        return Err(GraphError::DanglingLayer {
            layer: net.layers[l].name.clone(),
            reason: "does not reach the output".into(),
        }
        .into());
    }
    let ipdom = immediate_post_dominators(net)?;
    let preds: Vec<Vec<LayerId>> = net.layers.iter().map(|l| dedup_ordered(&l.inputs)).collect();
    let anc = preds.iter().any(|p| p.len() > 1).then(|| Ancestors::new(net, &pb.order));
    let branching = |l: LayerId| pb.fanout[l] >= 2 && pb.opts[l].iter().all(|o| o.schema.is_some());

    let n = net.len();
    let mut dp = Dp {
        pb: &pb,
        fault: options.inject_fault,
        arena: Vec::new(),
        cache: HashMap::new(),
    };
    let mut tables: Vec<BTreeMap<(usize, Vec<u16>), StateId>> = vec![BTreeMap::new(); n];
    let mut cons_out: Vec<Vec<LayerId>> = vec![Vec::new(); n];
    let mut stats = DprsStats {
        states: vec![0; n],
        live: vec![0; n],
        branches_upto: vec![0; n],
        ..Default::default()
    };
    let mut branches = 0;

    for &i in &pb.order {
        let ps = &preds[i];
        let mut cons_in: Vec<LayerId> = ps.iter().flat_map(|&p| cons_out[p].iter().copied()).collect();
        cons_in.sort_unstable();
        cons_in.dedup();
        if ps.len() > 1 {
            let anc = anc.as_ref().expect("computed when merges exist");
            for &p in ps {
                if let Some(&b) = cons_in
                    .iter()
                    .find(|&&b| cons_out[p].binary_search(&b).is_err() && (b == p || anc.contains(p, b)))
                {
                    return Err(OptimizerError::Internal(format!(
                        "constraint on `{}` reaches `{}` on one input but was dropped on input `{}`",
                        net.layers[b].name, net.layers[i].name, net.layers[p].name
                    )));
                }
            }
        }
        let mut co: Vec<LayerId> = Vec::with_capacity(cons_in.len() + 1);
        for &b in &cons_in {
            if options.relax && ipdom[b] == Some(i) {
                stats.relaxed.push((net.layers[b].name.clone(), net.layers[i].name.clone()));
            } else {
                co.push(b);
            }
        }
        if branching(i) {
            co.push(i);
            co.sort_unstable();
            branches += 1;
        }
        let mut table = BTreeMap::new();
        let nopt = pb.opts[i].len();

        match ps.as_slice() {
            [] => {
                for o in 0..nopt {
                    let key = co.iter().map(|_| o as u16).collect();
                    let cand = State {
                        layer: i,
                        opt: o,
                        cost: pb.opts[i][o].cost,
                        preds: Vec::new(),
                        key,
                    };
                    dp.offer(&mut table, cand, |_| unreachable_tie())?;
                }
            }
            [p] => {
                let p = *p;
                // where each outgoing constraint sits in the predecessor key
                let from: Vec<Option<usize>> = co
                    .iter()
                    .map(|&c| (c != i).then(|| cons_out[p].binary_search(&c).expect("inherited")))
                    .collect();
                let pstates: Vec<StateId> = tables[p].values().copied().collect();
                for sid in pstates {
                    for o in 0..nopt {
                        let s = &dp.arena[sid];
                        let mut cost = s.cost + pb.opts[i][o].cost;
                        for (_, t) in &pb.incoming[i] {
                            cost = cost + t[s.opt][o];
                        }
                        let key = from.iter().map(|f| f.map_or(o as u16, |k| s.key[k])).collect();
                        let cand = State {
                            layer: i,
                            opt: o,
                            cost,
                            preds: vec![sid],
                            key,
                        };
                        dp.offer(&mut table, cand, |dp| {
                            let mut a = dp.materialize(&[sid])?;
                            a[i] = Some(o);
                            Ok(dp.vector(&a))
                        })?;
                    }
                }
            }
            _ => {
                let lists: Vec<Vec<StateId>> = ps.iter().map(|&p| tables[p].values().copied().collect()).collect();
                for &sid in lists.iter().flatten() {
                    dp.cache_state(sid)?;
                }
                let groups = group_preds(&dp, ps, &cons_out, &lists);
                let mut fixed = vec![0u16; n];
                let mut pick = Vec::with_capacity(ps.len());
                let mut union = vec![None; n];
                combine(&groups, 0, &mut fixed, &mut pick, &mut |combo| {
                    union.fill(None);
                    for sid in combo {
                        dp.merge_into(&mut union, &dp.cache[sid])?;
                    }
                    // every layer of the union precedes `i`, so appending
                    // `i` to the canonical fold of the union is exact
                    let base = pb.canonical_cost(&union);
                    for o in 0..nopt {
                        let mut cost = base + pb.opts[i][o].cost;
                        for (p, t) in &pb.incoming[i] {
                            cost = cost + t[union[*p].expect("predecessor in its own subpath")][o];
                        }
                        let key = co
                            .iter()
                            .map(|&c| if c == i { Some(o as u16) } else { union[c].map(|v| v as u16) })
                            .map(|v| v.ok_or_else(|| missing(net, i, i)))
                            .collect::<Result<_, _>>()?;
                        let cand = State {
                            layer: i,
                            opt: o,
                            cost,
                            preds: combo.to_vec(),
                            key,
                        };
                        dp.offer(&mut table, cand, |dp| {
                            let mut a = union.clone();
                            a[i] = Some(o);
                            Ok(dp.vector(&a))
                        })?;
                    }
                    Ok(())
                })?;
            }
        }
        stats.states[i] = table.len();
        stats.live[i] = co.len();
        stats.branches_upto[i] = branches;
        stats.max_states = stats.max_states.max(table.len());
        tables[i] = table;
        cons_out[i] = co;
    }

    if options.relax && !cons_out[out].is_empty() {
        return Err(OptimizerError::Internal(format!(
            "{} constraint(s) still live at the output",
            cons_out[out].len()
        )));
    }
    let finals: Vec<StateId> = tables[out].values().copied().collect();
    let mut best: Option<StateId> = None;
    for sid in finals {
        let better = match best {
            None => true,
            Some(b) => dp.beats(dp.arena[sid].cost, || Ok(dp.vector(&dp.materialize(&[sid])?)), b)?,
        };
        if better {
            best = Some(sid);
        }
    }
    let best = best.ok_or_else(|| OptimizerError::AllInfeasible {
        layer: net.layers[out].name.clone(),
    })?;
    let assign = dp.materialize(&[best])?;
    let full: Vec<usize> = assign
        .iter()
        .enumerate()
        .map(|(l, o)| o.ok_or_else(|| missing(net, l, out)))
        .collect::<Result<_, _>>()?;
    Ok(DprsResult {
        path: pb.into_path(&full, lambda),
        stats,
    })
}

fn missing(net: &Net, layer: LayerId, at: LayerId) -> OptimizerError {
    OptimizerError::Internal(format!(
        "layer `{}` has no choice in the subpath at `{}`",
        net.layers[layer].name, net.layers[at].name
    ))
}

/// Sources have a single state per option, so ties never arise.
fn unreachable_tie() -> Result<Vec<Option<usize>>, OptimizerError> {
    Err(OptimizerError::Internal("duplicate source state".into()))
}

/// Predecessor states grouped by their key restricted to the layers
/// already fixed by earlier predecessors, so each step of the enumeration
/// is a lookup rather than a scan. Each state carries its values for the
/// constraints it fixes first.
struct Groups {
    shared: Vec<LayerId>,
    fresh: Vec<LayerId>,
    by_key: HashMap<Vec<u16>, Vec<(StateId, Vec<u16>)>>,
}

fn group_preds<C: Cost>(dp: &Dp<'_, '_, C>, ps: &[LayerId], cons_out: &[Vec<LayerId>], lists: &[Vec<StateId>]) -> Vec<Groups> {
    let mut seen: HashSet<LayerId> = HashSet::new();
    let mut out = Vec::with_capacity(ps.len());
    for (d, &p) in ps.iter().enumerate() {
        let (shared, fresh): (Vec<_>, Vec<_>) = cons_out[p].iter().copied().enumerate().partition(|(_, c)| seen.contains(c));
        let mut by_key: HashMap<Vec<u16>, Vec<(StateId, Vec<u16>)>> = HashMap::new();
        for &sid in &lists[d] {
            let key = &dp.arena[sid].key;
            let vals = fresh.iter().map(|&(j, _)| key[j]).collect();
            by_key
                .entry(shared.iter().map(|&(j, _)| key[j]).collect())
                .or_default()
                .push((sid, vals));
        }
        seen.extend(cons_out[p].iter().copied());
        out.push(Groups {
            shared: shared.into_iter().map(|(_, c)| c).collect(),
            fresh: fresh.into_iter().map(|(_, c)| c).collect(),
            by_key,
        });
    }
    out
}

/// Calls `visit` with one state per predecessor for every combination that
/// agrees wherever their constraints overlap.
fn combine(
    groups: &[Groups],
    depth: usize,
    fixed: &mut [u16],
    pick: &mut Vec<StateId>,
    visit: &mut dyn FnMut(&[StateId]) -> Result<(), OptimizerError>,
) -> Result<(), OptimizerError> {
    let Some(g) = groups.get(depth) else {
        return visit(pick);
    };
    let probe: Vec<u16> = g.shared.iter().map(|&c| fixed[c]).collect();
    let Some(list) = g.by_key.get(&probe) else {
        return Ok(());
    };
    for (sid, vals) in list {
        for (&c, &v) in g.fresh.iter().zip(vals) {
            fixed[c] = v;
        }
        pick.push(*sid);
        combine(groups, depth + 1, fixed, pick, visit)?;
        pick.pop();
    }
    Ok(())
}
