use std::collections::HashMap;

use super::{GraphError, Layer, LayerId, LayerKind, Net, Weights};
use crate::routines::{Registry, Schema};

pub const AUX_INPUT: &str = "aux_input";
pub const AUX_OUTPUT: &str = "aux_output";

fn fresh_name(net: &Net, base: &str) -> String {
    let mut name = base.to_string();
    let mut n = 1;
    while net.find(&name).is_some() {
        name = format!("{base}_{n}");
        n += 1;
    }
    name
}

/// Normalize to 1-in-1-out: an aux input feeding every former input and an
/// aux output fed by every former output. Aux layers are always added.
pub fn insert_auxiliary_layers(net: &Net) -> Result<Net, GraphError> {
    net.validate()?;
    let in_name = fresh_name(net, AUX_INPUT);
    let out_name = fresh_name(net, AUX_OUTPUT);
    // aux input takes index 0, so every existing id shifts by one
    let shift = |i: LayerId| i + 1;
    let mut layers = Vec::with_capacity(net.len() + 2);
    layers.push(Layer {
        name: in_name,
        kind: LayerKind::AuxInput,
        weights: Weights::new(),
        inputs: Vec::new(),
    });
    for (i, l) in net.layers.iter().enumerate() {
        let mut l = l.clone();
        l.inputs = l.inputs.iter().map(|&p| shift(p)).collect();
        if net.inputs.contains(&i) {
            l.inputs.insert(0, 0);
        }
        layers.push(l);
    }
    let aux_out = layers.len();
    layers.push(Layer {
        name: out_name,
        kind: LayerKind::AuxOutput,
        weights: Weights::new(),
        inputs: net.outputs.iter().map(|&o| shift(o)).collect(),
    });
    Ok(Net {
        name: net.name.clone(),
        scope: net.scope.clone(),
        layers,
        inputs: vec![0],
        outputs: vec![aux_out],
        childnets: net.childnets.clone(),
    })
}

/// Schema a layer produces (`None` for aux layers, which accept any).
fn out_schema(layer: &Layer, schemas: &HashMap<String, Schema>) -> Result<Option<Schema>, GraphError> {
    match &layer.kind {
        LayerKind::Adapt { to, .. } => Ok(Some(to.clone())),
        LayerKind::AuxInput | LayerKind::AuxOutput => Ok(None),
        _ => schemas
            .get(&layer.name)
            .cloned()
            .map(Some)
            .ok_or_else(|| GraphError::MissingRoutine(layer.name.clone())),
    }
}

fn in_schema(layer: &Layer, schemas: &HashMap<String, Schema>) -> Result<Option<Schema>, GraphError> {
    match &layer.kind {
        LayerKind::Adapt { from, .. } => Ok(Some(from.clone())),
        _ => out_schema(layer, schemas),
    }
}

/// Splice an `adapt` layer into every edge whose endpoint schemas differ.
///
/// `schemas` maps layer names to the schema of their chosen routine.
pub fn insert_adapt_layers(
    net: &Net,
    schemas: &HashMap<String, Schema>,
    registry: &Registry,
) -> Result<Net, GraphError> {
    let mut out = net.clone();
    for (p, c) in net.edges() {
        let (pl, cl) = (&net.layers[p], &net.layers[c]);
        let (Some(from), Some(to)) = (out_schema(pl, schemas)?, in_schema(cl, schemas)?) else {
            continue;
        };
        if from == to {
            continue;
        }
        registry
            .lookup_adapt(&from, &to)
            .map_err(|_| GraphError::NoAdaptRoutine {
                from: from.to_string(),
                to: to.to_string(),
                edge: (pl.name.clone(), cl.name.clone()),
            })?;
        let name = fresh_name(&out, &format!("adapt({},{})", pl.name, cl.name));
        let id = out.layers.len();
        out.layers.push(Layer {
            name,
            kind: LayerKind::Adapt { from, to },
            weights: Weights::new(),
            inputs: vec![p],
        });
        for slot in out.layers[c].inputs.iter_mut() {
            if *slot == p {
                *slot = id;
            }
        }
    }
    Ok(out)
}

/// Childnets innermost first, then the net itself, with nesting depth.
pub fn flatten_childnets(net: &Net) -> Vec<(usize, &Net)> {
    fn walk<'a>(net: &'a Net, depth: usize, out: &mut Vec<(usize, &'a Net)>) {
        let mut inner = Vec::new();
        for c in &net.childnets {
            walk(&c.child.inner, depth + 1, &mut inner);
        }
        inner.sort_by(|a, b| b.0.cmp(&a.0));
        out.extend(inner);
        out.push((depth, net));
    }
    let mut out = Vec::new();
    walk(net, 0, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::super::test_nets::relu_net;
    use super::super::{Childnet, ChildnetEntry};
    use super::*;
    use crate::routines::{ParamAssignment, RoutineDescriptor};

    #[test]
    fn two_in_two_out_becomes_single() {
        let net = relu_net(
            &[("a", &[]), ("b", &[]), ("c", &["a", "b"]), ("d", &["c"]), ("e", &["c"])],
            &["a", "b"],
            &["d", "e"],
        );
        let aux = insert_auxiliary_layers(&net).unwrap();
        assert_eq!(aux.len(), net.len() + 2);
        assert!(aux.is_single_in_out());
        aux.validate().unwrap();
        let ai = aux.inputs[0];
        let succ = aux.successors();
        assert_eq!(succ[ai].len(), 2);
        assert_eq!(aux.layers[aux.outputs[0]].inputs.len(), 2);
    }

    #[test]
    fn aux_added_even_when_already_single() {
        let net = relu_net(&[("a", &[]), ("b", &["a"])], &["a"], &["b"]);
        let aux = insert_auxiliary_layers(&net).unwrap();
        assert_eq!(aux.len(), 4);
        assert_eq!(aux.layers[0].name, AUX_INPUT);
    }

    #[test]
    fn empty_inputs_fail_validation() {
        let net = relu_net(&[("a", &[]), ("b", &["a"])], &[], &["b"]);
        assert_eq!(insert_auxiliary_layers(&net), Err(GraphError::NoInputs));
    }

    fn schema_map(pairs: &[(&str, Schema)]) -> HashMap<String, Schema> {
        pairs.iter().map(|(n, s)| (n.to_string(), s.clone())).collect()
    }

    #[test]
    fn adapt_layers_at_mismatches_only() {
        let net = relu_net(&[("a", &[]), ("b", &["a"]), ("c", &["b"])], &["a"], &["c"]);
        let reg = Registry::standard();
        let all_f = schema_map(&[("a", Schema::cpu()), ("b", Schema::cpu()), ("c", Schema::cpu())]);
        assert_eq!(insert_adapt_layers(&net, &all_f, &reg).unwrap(), net);

        let mixed = schema_map(&[("a", Schema::cpu()), ("b", Schema::cpu_qint8()), ("c", Schema::cpu_qint8())]);
        let once = insert_adapt_layers(&net, &mixed, &reg).unwrap();
        assert_eq!(once.len(), 4);
        let adapt = &once.layers[3];
        assert_eq!(
            adapt.kind,
            LayerKind::Adapt {
                from: Schema::cpu(),
                to: Schema::cpu_qint8()
            }
        );
        assert_eq!(once.layers[1].inputs, vec![3]);
        once.validate().unwrap();
        let twice = insert_adapt_layers(&once, &mixed, &reg).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn unsupported_pair_errors() {
        let net = relu_net(&[("a", &[]), ("b", &["a"])], &["a"], &["b"]);
        let cuda = Schema::parse("cuda").unwrap();
        let m = schema_map(&[("a", Schema::cpu()), ("b", cuda)]);
        assert!(matches!(
            insert_adapt_layers(&net, &m, &Registry::standard()),
            Err(GraphError::NoAdaptRoutine { .. })
        ));
    }

    fn entry(inner: Net) -> ChildnetEntry {
        ChildnetEntry {
            layer: "a".into(),
            descriptor: RoutineDescriptor::parse("cpu/x").unwrap(),
            params: ParamAssignment::new(),
            child: Childnet {
                inner,
                binding: Vec::new(),
            },
        }
    }

    #[test]
    fn flatten_orders_innermost_first() {
        let leaf = || relu_net(&[("a", &[])], &["a"], &["a"]);
        let parent = leaf();
        assert_eq!(flatten_childnets(&parent).len(), 1);

        let mut mid = leaf();
        mid.name = "mid".into();
        let mut deepest = leaf();
        deepest.name = "deep".into();
        mid.childnets.push(entry(deepest));
        let mut top = leaf();
        top.name = "top".into();
        top.childnets.push(entry(mid));
        let flat: Vec<(usize, &str)> = flatten_childnets(&top)
            .into_iter()
            .map(|(d, n)| (d, n.name.as_str()))
            .collect();
        assert_eq!(flat, [(2, "deep"), (1, "mid"), (0, "top")]);
    }
}
