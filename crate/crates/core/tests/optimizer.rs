use num_rational::Ratio;
use proptest::prelude::*;
use rand::Rng;
use rtune::graph::{LayerDef, LayerKind, Net};
use rtune::optimizer::{
    brute_force_optimal, dprs, dprs_with, tune, CostModel, DprsOptions, OptimizerError, RoutinePath,
};
use rtune::routines::{expand_childnets, ParamAssignment, Registry, RoutineDescriptor, Schema};
use rtune::tensor::Tensor;
use rtune::zoo::{self, CostRanges};

fn gpu() -> Schema {
    Schema::parse("gpu").unwrap()
}

fn lambda(k: usize) -> Vec<Schema> {
    [Schema::cpu(), Schema::cpu_qint8(), gpu()][..k].to_vec()
}

fn schemas_of<C: rtune::scalar::Cost>(p: &RoutinePath<C>) -> Vec<String> {
    p.layers.iter().map(|c| format!("{}={}", c.layer, c.descriptor)).collect()
}

fn put<C: rtune::scalar::Cost>(m: &mut CostModel<C>, layer: &str, s: &Schema, t: C) {
    m.insert(layer, RoutineDescriptor::new(s.clone(), "x"), ParamAssignment::new(), t);
}

#[test]
fn two_layer_example() {
    let net = zoo::chain(4);
    let (a, b) = (Schema::cpu(), Schema::cpu_qint8());
    let mut m = CostModel::new();
    for (l, ta, tb) in [("l0001", 5.0, 3.0), ("l0002", 2.0, 10.0)] {
        put(&mut m, l, &a, ta);
        put(&mut m, l, &b, tb);
    }
    m.set_adapt("l0001", "l0002", a.clone(), b.clone(), 1.0);
    m.set_adapt("l0001", "l0002", b.clone(), a.clone(), 1.0);
    // the boundary layers are float32; make entering β free
    m.set_adapt("l0000", "l0001", a.clone(), b.clone(), 0.0);
    m.set_adapt("l0002", "l0003", b.clone(), a.clone(), 0.0);
    let lam = [a.clone(), b.clone()];
    for p in [dprs(&net, &m, &lam).unwrap(), brute_force_optimal(&net, &m, &lam).unwrap()] {
        assert_eq!(p.total, 6.0);
        assert_eq!(p.choice("l0001").unwrap().descriptor.schema, b);
        assert_eq!(p.choice("l0002").unwrap().descriptor.schema, a);
        assert_eq!(p.adapts.len(), 2);
        assert_eq!(p.member_sum(), 6.0);
    }
}

#[test]
fn random_dags_match_oracle_exactly() {
    let mut r = zoo::rng(11);
    for case in 0..200 {
        let n = r.gen_range(3..=12);
        let net = zoo::random_dag(n, 3, &mut r);
        let lam = lambda(r.gen_range(2..=3));
        let ranges = CostRanges {
            missing: if case % 4 == 0 { 0.3 } else { 0.0 },
            ..Default::default()
        };
        let m = zoo::random_costs(&net, &lam, ranges, &mut r);
        let d = dprs(&net, &m, &lam).unwrap();
        let o = brute_force_optimal(&net, &m, &lam).unwrap();
        assert_eq!(d.total, o.total, "case {case}");
        assert_eq!(schemas_of(&d), schemas_of(&o), "case {case}");
        assert_eq!(d.adapts, o.adapts);
    }
}

#[test]
fn rational_costs_match_oracle() {
    let mut r = zoo::rng(12);
    for _ in 0..60 {
        let net = zoo::random_dag(r.gen_range(3..=10), 3, &mut r);
        let lam = lambda(3);
        let m = zoo::random_costs(&net, &lam, Default::default(), &mut r)
            .map(|v| Ratio::new((v * 64.0).round() as i64, 7));
        let d = dprs(&net, &m, &lam).unwrap();
        let o = brute_force_optimal(&net, &m, &lam).unwrap();
        assert_eq!(d.total, o.total);
        assert_eq!(d.total, d.member_sum());
        assert_eq!(schemas_of(&d), schemas_of(&o));
    }
}

#[test]
fn diamond_with_disagreeing_branches() {
    // alone, B prefers A in α and C prefers A in β; the shared choice must
    // account for both arms at once
    let net = zoo::diamond();
    let (a, b) = (Schema::cpu(), Schema::cpu_qint8());
    let mut m = CostModel::new();
    for (l, ta, tb) in [("A", 10.0, 10.0), ("B", 1.0, 30.0), ("C", 30.0, 1.0), ("D", 5.0, 5.0)] {
        put(&mut m, l, &a, ta);
        put(&mut m, l, &b, tb);
    }
    for (p, c) in net.edges() {
        let (p, c) = (&net.layers[p].name, &net.layers[c].name);
        let t = if (p.as_str(), c.as_str()) == ("A", "C") { 3.0 } else { 12.0 };
        m.set_adapt(p, c, a.clone(), b.clone(), t);
        m.set_adapt(p, c, b.clone(), a.clone(), t);
    }
    let lam = [a.clone(), b.clone()];
    let d = dprs_with(&net, &m, &lam, DprsOptions::default()).unwrap();
    let o = brute_force_optimal(&net, &m, &lam).unwrap();
    assert_eq!(d.path.total, o.total);
    assert_eq!(schemas_of(&d.path), schemas_of(&o));
    assert_eq!(d.stats.relaxed, vec![("A".to_string(), "D".to_string())]);
}

#[test]
fn nested_constraints_relax_at_their_merges() {
    let net = zoo::nested_branches();
    let mut r = zoo::rng(3);
    let lam = lambda(3);
    for _ in 0..20 {
        let m = zoo::random_costs(&net, &lam, Default::default(), &mut r);
        let d = dprs_with(&net, &m, &lam, DprsOptions::default()).unwrap();
        assert_eq!(
            d.stats.relaxed,
            vec![("B".to_string(), "E".to_string()), ("A".to_string(), "G".to_string())]
        );
        let id = |n: &str| net.find(n).unwrap();
        // the outer constraint is still live inside the inner diamond
        assert_eq!(d.stats.live[id("C")], 2);
        assert_eq!(d.stats.live[id("E")], 1);
        assert_eq!(d.stats.live[id("G")], 0);
        for l in 0..net.len() {
            assert!(d.stats.states[l] <= 3usize.pow(1 + d.stats.live[l] as u32));
        }
        let o = brute_force_optimal(&net, &m, &lam).unwrap();
        assert_eq!(d.path.total, o.total);
    }
}

#[test]
fn unrelaxed_dp_is_also_exact() {
    let mut r = zoo::rng(5);
    for _ in 0..40 {
        let net = zoo::random_multi_branch(1, &mut r);
        let lam = lambda(2);
        let m = zoo::random_costs(&net, &lam, Default::default(), &mut r);
        let relaxed = dprs_with(&net, &m, &lam, DprsOptions::default()).unwrap();
        let plain = dprs_with(&net, &m, &lam, DprsOptions { relax: false, ..Default::default() }).unwrap();
        assert_eq!(relaxed.path.total, plain.path.total);
        assert!(relaxed.stats.max_states <= plain.stats.max_states);
    }
}

#[test]
fn missing_entries_and_adapts_are_reported() {
    let net = zoo::chain(4);
    let mut m = CostModel::new();
    put(&mut m, "l0001", &Schema::cpu(), 1.0);
    assert_eq!(
        dprs(&net, &m, &[Schema::cpu()]),
        Err(OptimizerError::AllInfeasible { layer: "l0002".into() })
    );
    put(&mut m, "l0002", &Schema::cpu_qint8(), 1.0);
    assert!(matches!(
        dprs(&net, &m, &[Schema::cpu(), Schema::cpu_qint8()]),
        Err(OptimizerError::MissingAdaptCost { .. })
    ));
    assert_eq!(dprs(&net, &m, &[]), Err(OptimizerError::EmptySchemaSet));
}

#[test]
fn oracle_refuses_large_nets() {
    let net = zoo::chain(40);
    let mut r = zoo::rng(0);
    let lam = lambda(2);
    let m = zoo::random_costs(&net, &lam, Default::default(), &mut r);
    assert!(matches!(
        brute_force_optimal(&net, &m, &lam),
        Err(OptimizerError::TooLarge { .. })
    ));
    // the DP itself has no such limit
    dprs(&net, &m, &lam).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hybrid_never_loses(seed in any::<u64>(), n in 3usize..17) {
        let mut r = zoo::rng(seed);
        let net = zoo::random_dag(n, 3, &mut r);
        let lam = lambda(2);
        let m = zoo::random_costs(&net, &lam, Default::default(), &mut r);
        let hybrid = dprs(&net, &m, &lam).unwrap().total;
        for single in &lam {
            let t = dprs(&net, &m, std::slice::from_ref(single)).unwrap().total;
            prop_assert!(hybrid <= t);
        }
    }

    #[test]
    fn scaling_keeps_the_selection(seed in any::<u64>(), num in 1i64..50, den in 1i64..50) {
        let mut r = zoo::rng(seed);
        let net = zoo::random_dag(r.gen_range(3..=14), 3, &mut r);
        let lam = lambda(3);
        // integer costs make ties likely, which exercises the tie rule
        let m = zoo::random_costs(&net, &lam, Default::default(), &mut r)
            .map(|v| Ratio::from_integer((v / 10.0).round() as i64));
        let k = Ratio::new(num, den);
        let scaled = m.map(|v| v * k);
        let a = dprs(&net, &m, &lam).unwrap();
        let b = dprs(&net, &scaled, &lam).unwrap();
        prop_assert_eq!(schemas_of(&a), schemas_of(&b));
        prop_assert_eq!(a.total * k, b.total);
    }
}

fn single_conv_net(k: usize) -> Net {
    Net::from_defs(
        "conv",
        vec![
            LayerDef::new("in", LayerKind::Input { shape: vec![1, 8, 8, 2] }, &[]),
            LayerDef::new("conv", LayerKind::Conv2(Default::default()), &["in"])
                .weight("kernel", Tensor::zeros(vec![k, k, 2, 2])),
            LayerDef::new("out", LayerKind::Output, &["conv"]),
        ],
        &["in"],
        &["out"],
    )
    .unwrap()
}

/// Direct conv at `direct`; each Winograd childnet's inner layers cost
/// `inner(tile)` apiece.
fn childnet_costs(net: &Net, direct: f64, inner: impl Fn(i64) -> f64) -> CostModel<f64> {
    let mut m = CostModel::new();
    m.insert(
        "conv",
        RoutineDescriptor::parse("cpu/naive").unwrap(),
        [("cache".to_string(), 4096), ("task_ops".to_string(), 8192)].into(),
        direct,
    );
    for e in &net.childnets {
        let tile = e.params["tile_size"];
        for id in 0..e.child.inner.len() {
            m.insert(
                e.child.inner.qualified(id),
                RoutineDescriptor::parse("cpu/naive").unwrap(),
                [("task_ops".to_string(), 8192)].into(),
                inner(tile),
            );
        }
    }
    m
}

#[test]
fn childnet_totals_compete_with_direct_routines() {
    let net = expand_childnets(&single_conv_net(3), &Registry::standard()).unwrap();
    assert_eq!(net.childnets.len(), 4);
    // three inner layers each; tile 6 sums to 3 × 2 = 6 < 7
    let m = childnet_costs(&net, 7.0, |t| if t == 6 { 2.0 } else { 4.0 });
    let p = tune(&net, &m, &[Schema::cpu()]).unwrap();
    let c = p.choice("conv").unwrap();
    assert_eq!(c.descriptor.to_string(), "cpu/wg2");
    assert_eq!(c.params["tile_size"], 6);
    assert_eq!(c.time, 6.0);
    assert_eq!(p.childnets.len(), 1);
    assert_eq!(p.childnets[0].path.layers.len(), 5);
    assert!(p.choice(rtune::graph::AUX_INPUT).is_none());

    // every childnet is slower than the direct routine
    let m = childnet_costs(&net, 5.0, |_| 2.0);
    let p = tune(&net, &m, &[Schema::cpu()]).unwrap();
    assert_eq!(p.choice("conv").unwrap().descriptor.to_string(), "cpu/naive");
    assert!(p.childnets.is_empty());
    let o = brute_force_optimal(&net, &m, &[Schema::cpu()]).unwrap();
    assert_eq!(o.total, p.total);
}

#[test]
fn tune_without_childnets_equals_dprs() {
    let mut r = zoo::rng(9);
    for _ in 0..20 {
        let net = zoo::random_dag(r.gen_range(3..=10), 3, &mut r);
        let lam = lambda(2);
        let m = zoo::random_costs(&net, &lam, Default::default(), &mut r);
        let t = tune(&net, &m, &lam).unwrap();
        let d = dprs(&net, &m, &lam).unwrap();
        assert_eq!(t.total, d.total);
        assert_eq!(schemas_of(&t), schemas_of(&d));
        assert_eq!(t.adapts, d.adapts);
    }
}

#[test]
fn multi_in_out_nets_tune_through_aux_layers() {
    let mut r = zoo::rng(21);
    for _ in 0..20 {
        let net = zoo::random_two_in_two_out(r.gen_range(2..=7), &mut r);
        let lam = lambda(2);
        // exact costs, since the aux net folds in a different order
        let m = zoo::random_costs(&net, &lam, Default::default(), &mut r)
            .map(|v| Ratio::new((v * 16.0).round() as i64, 16));
        let t = tune(&net, &m, &lam).unwrap();
        let o = brute_force_optimal(&net, &m, &lam).unwrap();
        assert_eq!(t.total, o.total);
        let sorted = |p: &RoutinePath<Ratio<i64>>| {
            let mut v = schemas_of(p);
            v.sort();
            v
        };
        assert_eq!(sorted(&t), sorted(&o));
    }
}
