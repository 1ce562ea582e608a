//! Bundled example nets and seeded generators for nets and cost tables.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Conv2Params, LayerDef, LayerKind, Net, PoolParams};
use crate::optimizer::CostModel;
use crate::routines::{ParamAssignment, RoutineDescriptor, Schema};
use crate::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in [-1, 1].
pub fn random_tensor(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0f32..=1.0))
}

fn scaled(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor<f32> {
    let s = (3.0 / fan_in as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-s..=s))
}

fn conv(name: &str, input: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> LayerDef {
    LayerDef::new(name, LayerKind::Conv2(Conv2Params::default()), &[input])
        .weight("kernel", scaled(vec![3, 3, cin, cout], 9 * cin, rng))
        .weight("bias", scaled(vec![cout], 9 * cin, rng))
}

fn dense(name: &str, input: &str, c: usize, k: usize, rng: &mut impl Rng) -> LayerDef {
    LayerDef::new(name, LayerKind::Dense, &[input])
        .weight("kernel", scaled(vec![c, k], c, rng))
        .weight("bias", scaled(vec![k], c, rng))
}

fn pool(name: &str, input: &str) -> LayerDef {
    LayerDef::new(name, LayerKind::MaxPool2(PoolParams::default()), &[input])
}

/// input → conv → relu → pool → flatten → dense → softmax → output.
pub fn tiny_cnn(seed: u64) -> Net {
    let mut r = rng(seed);
    let defs = vec![
        LayerDef::new("input", LayerKind::Input { shape: vec![1, 8, 8, 3] }, &[]),
        conv("conv", "input", 3, 8, &mut r),
        LayerDef::new("relu", LayerKind::Relu, &["conv"]),
        pool("pool", "relu"),
        LayerDef::new("flatten", LayerKind::Flatten, &["pool"]),
        dense("fc", "flatten", 128, 10, &mut r),
        LayerDef::new("softmax", LayerKind::Softmax, &["fc"]),
        LayerDef::new("output", LayerKind::Output, &["softmax"]),
    ];
    Net::from_defs("tiny_cnn", defs, &["input"], &["output"]).expect("well-formed")
}

/// VGG-16 layer structure at toy width on a 32×32 input.
pub fn vgg16_toy(seed: u64) -> Net {
    let mut r = rng(seed);
    let mut defs = vec![LayerDef::new("input", LayerKind::Input { shape: vec![1, 32, 32, 3] }, &[])];
    let mut prev = "input".to_string();
    let mut c = 3;
    for (b, (convs, width)) in [(2, 4), (2, 8), (3, 8), (3, 16), (3, 16)].into_iter().enumerate() {
        for i in 1..=convs {
            let name = format!("block{}_conv{i}", b + 1);
            defs.push(conv(&name, &prev, c, width, &mut r));
            prev = name;
            c = width;
        }
        let name = format!("block{}_pool", b + 1);
        defs.push(pool(&name, &prev));
        prev = name;
    }
    defs.push(LayerDef::new("flatten", LayerKind::Flatten, &[&prev]));
    defs.push(dense("fc1", "flatten", 16, 32, &mut r));
    defs.push(dense("fc2", "fc1", 32, 32, &mut r));
    defs.push(dense("fc3", "fc2", 32, 10, &mut r));
    defs.push(LayerDef::new("softmax", LayerKind::Softmax, &["fc3"]));
    defs.push(LayerDef::new("output", LayerKind::Output, &["softmax"]));
    Net::from_defs("vgg16_toy", defs, &["input"], &["output"]).expect("well-formed")
}

/// input → conv → {left conv, right conv} → add → relu → output.
pub fn conv_diamond(seed: u64) -> Net {
    let mut r = rng(seed);
    let defs = vec![
        LayerDef::new("input", LayerKind::Input { shape: vec![1, 8, 8, 2] }, &[]),
        conv("stem", "input", 2, 4, &mut r),
        conv("left", "stem", 4, 4, &mut r),
        conv("right", "stem", 4, 4, &mut r),
        LayerDef::new("merge", LayerKind::Add, &["left", "right"]),
        LayerDef::new("relu", LayerKind::Relu, &["merge"]),
        LayerDef::new("output", LayerKind::Output, &["relu"]),
    ];
    Net::from_defs("conv_diamond", defs, &["input"], &["output"]).expect("well-formed")
}

const ELEM: usize = 4;

fn elementwise(name: &str, inputs: &[&str]) -> LayerDef {
    let kind = if inputs.len() > 1 { LayerKind::Add } else { LayerKind::Relu };
    LayerDef::new(name, kind, inputs)
}

fn from_spec(name: &str, spec: &[(String, Vec<String>)], inputs: &[&str], outputs: &[&str]) -> Net {
    let defs = spec
        .iter()
        .map(|(n, ins)| {
            let ins: Vec<&str> = ins.iter().map(String::as_str).collect();
            if ins.is_empty() {
                LayerDef::new(n.as_str(), LayerKind::Input { shape: vec![ELEM] }, &[])
            } else if outputs.contains(&n.as_str()) {
                LayerDef::new(n.as_str(), LayerKind::Output, &ins)
            } else {
                elementwise(n, &ins)
            }
        })
        .collect();
    Net::from_defs(name, defs, inputs, outputs).expect("generated net is well-formed")
}

/// Straight chain of `n` layers: input, `n - 2` relus, output.
pub fn chain(n: usize) -> Net {
    assert!(n >= 2);
    let spec: Vec<(String, Vec<String>)> = (0..n)
        .map(|i| (format!("l{i:04}"), if i == 0 { vec![] } else { vec![format!("l{:04}", i - 1)] }))
        .collect();
    let (first, last) = (spec[0].0.clone(), spec[n - 1].0.clone());
    from_spec("chain", &spec, &[&first], &[&last])
}

/// input → A → {B, C} → D → output.
pub fn diamond() -> Net {
    let s = |n: &str, ins: &[&str]| (n.to_string(), ins.iter().map(|s| s.to_string()).collect());
    let spec = vec![
        s("input", &[]),
        s("A", &["input"]),
        s("B", &["A"]),
        s("C", &["A"]),
        s("D", &["B", "C"]),
        s("output", &["D"]),
    ];
    from_spec("diamond", &spec, &["input"], &["output"])
}

/// Outer branch whose left arm holds an inner diamond:
/// A → {B → {C, D} → E, F} → G.
pub fn nested_branches() -> Net {
    let s = |n: &str, ins: &[&str]| (n.to_string(), ins.iter().map(|s| s.to_string()).collect());
    let spec = vec![
        s("input", &[]),
        s("A", &["input"]),
        s("B", &["A"]),
        s("C", &["B"]),
        s("D", &["B"]),
        s("E", &["C", "D"]),
        s("F", &["A"]),
        s("G", &["E", "F"]),
        s("output", &["G"]),
    ];
    from_spec("nested", &spec, &["input"], &["output"])
}

/// Random single-input single-output DAG of exactly `n` layers, fan-in and
/// fan-out at most `max_branch` except where dangling layers are collected
/// into the last hidden layer.
pub fn random_dag(n: usize, max_branch: usize, rng: &mut impl Rng) -> Net {
    assert!(n >= 3 && max_branch >= 1);
    let name = |i: usize| format!("l{i:02}");
    let hidden = n - 2;
    let mut spec: Vec<(String, Vec<String>)> = vec![(name(0), vec![])];
    let mut fanout = vec![0usize; n];
    for j in 1..=hidden {
        let open: Vec<usize> = (0..j).filter(|&p| fanout[p] < max_branch).collect();
        let pool = if open.is_empty() { (0..j).collect() } else { open };
        let k = rng.gen_range(1..=max_branch.min(pool.len()));
        let mut ins: Vec<usize> = pool.choose_multiple(rng, k).copied().collect();
        if j == hidden {
            let dangling: Vec<usize> = (0..j).filter(|&p| fanout[p] == 0 && !ins.contains(&p)).collect();
            ins.extend(dangling);
        }
        ins.sort_unstable();
        for &p in &ins {
            fanout[p] += 1;
        }
        spec.push((name(j), ins.into_iter().map(name).collect()));
    }
    spec.push((name(n - 1), vec![name(hidden)]));
    from_spec("random_dag", &spec, &[&name(0)], &[&name(n - 1)])
}

/// Series-parallel net with nested branches: every parallel block splits
/// into 2 or 3 arms, each arm itself a chain or a nested block.
pub fn random_multi_branch(max_depth: usize, rng: &mut impl Rng) -> Net {
    struct B {
        spec: Vec<(String, Vec<String>)>,
    }
    impl B {
        fn push(&mut self, ins: Vec<String>) -> String {
            let n = format!("l{:02}", self.spec.len());
            self.spec.push((n.clone(), ins));
            n
        }
        /// Returns the last layer of the block.
        fn block(&mut self, from: String, depth: usize, rng: &mut impl Rng) -> String {
            let split = self.push(vec![from]);
            let arms = rng.gen_range(2..=3);
            let mut ends = Vec::new();
            for _ in 0..arms {
                let mut cur = split.clone();
                if depth > 0 && rng.gen_bool(0.5) {
                    cur = self.block(cur, depth - 1, rng);
                } else {
                    for _ in 0..rng.gen_range(1..=2) {
                        cur = self.push(vec![cur]);
                    }
                }
                ends.push(cur);
            }
            self.push(ends)
        }
    }
    let mut b = B { spec: Vec::new() };
    let input = b.push(vec![]);
    let mut cur = input.clone();
    for _ in 0..rng.gen_range(1..=2) {
        cur = b.block(cur, max_depth, rng);
    }
    let out = b.push(vec![cur]);
    from_spec("multi_branch", &b.spec, &[&input], &[&out])
}

/// Random DAG with two input and two output layers and `hidden` layers in
/// between; every hidden layer reaches some output.
pub fn random_two_in_two_out(hidden: usize, rng: &mut impl Rng) -> Net {
    assert!(hidden >= 2);
    let name = |i: usize| format!("l{i:02}");
    let mut spec: Vec<(String, Vec<String>)> = vec![(name(0), vec![]), (name(1), vec![])];
    let mut used = vec![false; hidden + 4];
    for j in 2..hidden + 2 {
        let k = rng.gen_range(1..=2.min(j));
        let mut ins: Vec<usize> = (0..j).collect::<Vec<_>>().choose_multiple(rng, k).copied().collect();
        // both inputs must have a consumer
        if j == 2 && !ins.contains(&0) {
            ins.push(0);
        }
        if j == 3 && !used[1] && !ins.contains(&1) {
            ins.push(1);
        }
        ins.sort_unstable();
        ins.dedup();
        for &p in &ins {
            used[p] = true;
        }
        spec.push((name(j), ins.into_iter().map(name).collect()));
    }
    let last = hidden + 1;
    let dangling: Vec<usize> = (2..last).filter(|&p| !used[p]).collect();
    let mut a_ins = vec![last - 1];
    a_ins.extend(dangling.iter().copied().filter(|&p| p != last - 1));
    a_ins.sort_unstable();
    a_ins.dedup();
    // two output layers, each fed by one producer
    let (oa, ob) = (hidden + 2, hidden + 3);
    let collector = if a_ins.len() > 1 {
        let n = format!("c{:02}", last);
        spec.push((n.clone(), a_ins.into_iter().map(name).collect()));
        n
    } else {
        name(a_ins[0])
    };
    spec.push((name(oa), vec![collector]));
    spec.push((name(ob), vec![name(last)]));
    from_spec("two_in_two_out", &spec, &[&name(0), &name(1)], &[&name(oa), &name(ob)])
}

/// Options for [`random_costs`].
#[derive(Debug, Clone, Copy)]
pub struct CostRanges {
    pub layer: (f64, f64),
    pub adapt: (f64, f64),
    /// Probability that a layer lacks routines in some non-float schema.
    pub missing: f64,
}

impl Default for CostRanges {
    fn default() -> Self {
        CostRanges {
            layer: (1.0, 100.0),
            adapt: (0.0, 20.0),
            missing: 0.0,
        }
    }
}

/// A cost table over `schemas` for every layer and edge of `net`: one or two
/// routines per (layer, schema) and an adapt cost per edge and ordered pair.
/// The float32 `cpu` schema is always present so boundary layers can connect.
pub fn random_costs(net: &Net, schemas: &[Schema], ranges: CostRanges, rng: &mut impl Rng) -> CostModel<f64> {
    let mut all: Vec<Schema> = schemas.to_vec();
    all.push(Schema::cpu());
    all.sort();
    all.dedup();
    let mut m = CostModel::new();
    for id in 0..net.len() {
        let q = net.qualified(id);
        for s in schemas {
            if s != &Schema::cpu() && rng.gen_bool(ranges.missing) {
                continue;
            }
            for r in 0..rng.gen_range(1..=2) {
                let t = rng.gen_range(ranges.layer.0..=ranges.layer.1);
                m.insert(q.clone(), RoutineDescriptor::new(s.clone(), format!("r{r}")), ParamAssignment::new(), t);
            }
        }
    }
    for (p, c) in net.edges() {
        let (pq, cq) = (net.qualified(p), net.qualified(c));
        for a in &all {
            for b in &all {
                if a != b {
                    let t = rng.gen_range(ranges.adapt.0..=ranges.adapt.1);
                    m.set_adapt(pq.clone(), cq.clone(), a.clone(), b.clone(), t);
                }
            }
        }
    }
    m
}
