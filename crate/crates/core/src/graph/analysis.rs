use std::collections::{BTreeSet, HashSet};

use super::{GraphError, LayerId, Net};

/// Kahn's algorithm; among ready layers the smallest name goes first.
pub fn topological_order(net: &Net) -> Result<Vec<LayerId>, GraphError> {
    let succ = net.successors();
    let mut indeg: Vec<usize> = net.layers.iter().map(|l| l.inputs.len()).collect();
    let mut ready: BTreeSet<(&str, LayerId)> = indeg
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| (net.layers[i].name.as_str(), i))
        .collect();
    let mut order = Vec::with_capacity(net.len());
    while let Some(first) = ready.pop_first() {
        let id = first.1;
        order.push(id);
        for &s in &succ[id] {
            // successors are deduplicated, in-degrees are not
            let times = net.layers[s].inputs.iter().filter(|&&p| p == id).count();
            indeg[s] -= times;
            if indeg[s] == 0 {
                ready.insert((net.layers[s].name.as_str(), s));
            }
        }
    }
    if order.len() != net.len() {
        let stuck = (0..net.len())
            .filter(|i| indeg[*i] > 0)
            .min_by_key(|&i| &net.layers[i].name)
            .unwrap();
        return Err(GraphError::CycleDetected {
            layer: net.layers[stuck].name.clone(),
        });
    }
    Ok(order)
}

fn single_output(net: &Net) -> Result<LayerId, GraphError> {
    match net.outputs.as_slice() {
        [o] => Ok(*o),
        _ => Err(GraphError::NotSingleInOut {
            inputs: net.inputs.len(),
            outputs: net.outputs.len(),
        }),
    }
}

/// The nearest strict post-dominator of every layer (`None` for the output
/// and for layers that cannot reach it).
///
/// One sweep in reverse topological order, intersecting the successors'
/// post-dominator tree paths; linear in edges times tree depth walked.
pub fn immediate_post_dominators(net: &Net) -> Result<Vec<Option<LayerId>>, GraphError> {
    let out = single_output(net)?;
    let order = topological_order(net)?;
    let succ = net.successors();
    let mut rank = vec![0; net.len()];
    for (r, &v) in order.iter().rev().enumerate() {
        rank[v] = r;
    }
    let mut idom: Vec<Option<LayerId>> = vec![None; net.len()];
    let reaches = |v: LayerId, idom: &[Option<LayerId>]| v == out || idom[v].is_some();
    for &v in order.iter().rev() {
        if v == out {
            continue;
        }
        let mut acc: Option<LayerId> = None;
        for &s in succ[v].iter().filter(|&&s| reaches(s, &idom)) {
            acc = Some(match acc {
                None => s,
                Some(mut a) => {
                    let mut b = s;
                    while a != b {
                        while rank[a] > rank[b] {
                            a = idom[a].expect("walk stays below the output");
                        }
                        while rank[b] > rank[a] {
                            b = idom[b].expect("walk stays below the output");
                        }
                    }
                    a
                }
            });
        }
        idom[v] = acc;
    }
    Ok(idom)
}

/// Post-dominator sets for every layer, each excluding the layer itself.
pub fn post_dominator_sets(net: &Net) -> Result<Vec<HashSet<LayerId>>, GraphError> {
    let idom = immediate_post_dominators(net)?;
    Ok((0..net.len())
        .map(|v| {
            let mut set = HashSet::new();
            let mut cur = idom[v];
            while let Some(u) = cur {
                set.insert(u);
                cur = idom[u];
            }
            set
        })
        .collect())
}

/// Layers through which every path from `layer` to the output passes.
pub fn post_dominators(net: &Net, layer: LayerId) -> Result<BTreeSet<LayerId>, GraphError> {
    let idom = immediate_post_dominators(net)?;
    let mut set = BTreeSet::new();
    let mut cur = idom[layer];
    while let Some(u) = cur {
        set.insert(u);
        cur = idom[u];
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::super::test_nets::relu_net;
    use super::*;

    fn names(net: &Net, ids: impl IntoIterator<Item = LayerId>) -> Vec<String> {
        ids.into_iter().map(|i| net.layers[i].name.clone()).collect()
    }

    #[test]
    fn chain_order() {
        let net = relu_net(&[("C", &["B"]), ("A", &[]), ("B", &["A"])], &["A"], &["C"]);
        assert_eq!(names(&net, topological_order(&net).unwrap()), ["A", "B", "C"]);
    }

    #[test]
    fn diamond_tie_broken_by_name() {
        let net = relu_net(
            &[("D", &["C", "B"]), ("C", &["A"]), ("B", &["A"]), ("A", &[])],
            &["A"],
            &["D"],
        );
        assert_eq!(
            names(&net, topological_order(&net).unwrap()),
            ["A", "B", "C", "D"]
        );
    }

    #[test]
    fn singleton() {
        let net = relu_net(&[("A", &[])], &["A"], &["A"]);
        assert_eq!(topological_order(&net).unwrap(), vec![0]);
        assert!(post_dominators(&net, 0).unwrap().is_empty());
    }

    #[test]
    fn chain_and_diamond_post_dominators() {
        let chain = relu_net(&[("A", &[]), ("B", &["A"]), ("C", &["B"])], &["A"], &["C"]);
        assert_eq!(names(&chain, post_dominators(&chain, 0).unwrap()), ["B", "C"]);
        let diamond = relu_net(
            &[("A", &[]), ("B", &["A"]), ("C", &["A"]), ("D", &["B", "C"])],
            &["A"],
            &["D"],
        );
        assert_eq!(names(&diamond, post_dominators(&diamond, 0).unwrap()), ["D"]);
        let ipdom = immediate_post_dominators(&diamond).unwrap();
        assert_eq!(ipdom[0], Some(3));
        assert_eq!(ipdom[3], None);
    }

    /// Fixed-point set intersection, independent of the tree sweep.
    fn pdom_by_intersection(net: &Net) -> Vec<HashSet<LayerId>> {
        let out = net.outputs[0];
        let succ = net.successors();
        let all: HashSet<LayerId> = (0..net.len()).collect();
        let mut pdom = vec![all; net.len()];
        pdom[out] = HashSet::from([out]);
        loop {
            let mut changed = false;
            for v in 0..net.len() {
                if v == out {
                    continue;
                }
                let mut next = succ[v]
                    .iter()
                    .map(|&s| pdom[s].clone())
                    .reduce(|a, b| a.intersection(&b).copied().collect())
                    .unwrap_or_default();
                next.insert(v);
                if next != pdom[v] {
                    pdom[v] = next;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for (v, s) in pdom.iter_mut().enumerate() {
            s.remove(&v);
        }
        pdom
    }

    #[test]
    fn sweep_matches_fixed_point_on_random_dags() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.gen_range(2..14);
            let names: Vec<String> = (0..n).map(|i| format!("l{i:02}")).collect();
            let mut spec: Vec<(String, Vec<String>)> = vec![(names[0].clone(), vec![])];
            for i in 1..n {
                let k = rng.gen_range(1..=3.min(i));
                let mut ins: Vec<String> = (0..k).map(|_| names[rng.gen_range(0..i)].clone()).collect();
                ins.sort();
                ins.dedup();
                spec.push((names[i].clone(), ins));
            }
            // every dangling layer feeds the last one so the output is unique
            let used: HashSet<&String> = spec.iter().flat_map(|(_, i)| i.iter()).collect();
            let sinks: Vec<String> = names[..n - 1].iter().filter(|x| !used.contains(x)).cloned().collect();
            spec[n - 1].1.extend(sinks);
            spec[n - 1].1.sort();
            spec[n - 1].1.dedup();
            let refs: Vec<(&str, Vec<&str>)> = spec
                .iter()
                .map(|(a, b)| (a.as_str(), b.iter().map(String::as_str).collect()))
                .collect();
            let defs: Vec<(&str, &[&str])> = refs.iter().map(|(a, b)| (*a, b.as_slice())).collect();
            let net = relu_net(&defs, &[names[0].as_str()], &[names[n - 1].as_str()]);
            assert_eq!(post_dominator_sets(&net).unwrap(), pdom_by_intersection(&net));
        }
    }
}
