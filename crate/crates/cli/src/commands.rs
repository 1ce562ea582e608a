use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use rtune::graph::model_io::{load_net, save_net};
use rtune::graph::{insert_auxiliary_layers, GraphError, Net};
use rtune::optimizer::{
    brute_force_optimal, default_path, dprs_with, path_to_string, render_selection_table, save_path, load_path,
    tune_mode, CostModel, DprsOptions, OptimizerError, RoutinePath, TuneMode,
};
use rtune::profiler::{
    integrated_profile, load_profile, save_profile, seeded_inputs, unit_profile, FakeTimer, IntegratedConfig,
    MeasureConfig, ProfileEntry, ProfileTable, ProfilerError, Stats, Timer, UnitConfig, WallTimer,
};
use rtune::routines::{expand_childnets, render_params, Registry, Schema};
use rtune::runtime::{blobs, calibrate_scales, load_tensor, plan, run as execute, save_tensor, RuntimeError};
use rtune::tensor::Tensor;
use rtune::zoo;

use crate::{Shared, ZooNet};

pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn new(code: u8, message: impl Display) -> Self {
        CliError {
            code,
            message: message.to_string(),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::new(2, e)
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        let code = match &e {
            OptimizerError::AllInfeasible { .. } | OptimizerError::MissingAdaptCost { .. } => 4,
            OptimizerError::TooLarge { .. } => 6,
            OptimizerError::Internal(_) | OptimizerError::Unsupported(_) => 1,
            _ => 2,
        };
        CliError::new(code, e)
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Kernel(_) => CliError::new(3, e),
            RuntimeError::Optimizer(o) => o.into(),
            _ => CliError::new(2, e),
        }
    }
}

impl From<ProfilerError> for CliError {
    fn from(e: ProfilerError) -> Self {
        match e {
            ProfilerError::Runtime(r) => r.into(),
            ProfilerError::Optimizer(o) => o.into(),
            _ => CliError::new(2, e),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Float32,
    Qint8,
    Hybrid,
}

impl From<Mode> for TuneMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Float32 => TuneMode::Float32,
            Mode::Qint8 => TuneMode::Qint8,
            Mode::Hybrid => TuneMode::Hybrid,
        }
    }
}

fn schemas(shared: &Shared, registry: &Registry) -> Result<Vec<Schema>> {
    let list = shared
        .schemas
        .iter()
        .map(|s| Schema::parse(s.trim()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::new(2, e))?;
    if list.is_empty() {
        return Err(CliError::new(2, "empty schema set"));
    }
    registry.check_schemas(&list).map_err(|e| CliError::new(2, e))?;
    Ok(list)
}

fn timer(shared: &Shared) -> Box<dyn Timer> {
    if shared.fake_timer {
        Box::new(FakeTimer::hashed())
    } else {
        Box::new(WallTimer)
    }
}

fn measure(shared: &Shared) -> MeasureConfig {
    MeasureConfig {
        warmup: shared.warmup,
        runs: shared.runs,
    }
}

fn host() -> String {
    format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS)
}

fn load_model(model: &Path) -> Result<Net> {
    Ok(load_net(model)?)
}

/// Fastest entry per top-level layer over every schema.
fn fastest_per_layer<'a>(net: &Net, table: &'a ProfileTable) -> Vec<&'a ProfileEntry> {
    net.layers
        .iter()
        .enumerate()
        .filter_map(|(id, _)| {
            let q = net.qualified(id);
            table
                .entries
                .iter()
                .filter(|e| e.layer == q)
                .min_by(|a, b| a.time_us.total_cmp(&b.time_us))
        })
        .collect()
}

pub fn profile(model: &Path, out: &Path, integrated: bool, shared: &Shared) -> Result<()> {
    let registry = Registry::standard();
    let lambda = schemas(shared, &registry)?;
    let net = expand_childnets(&load_model(model)?, &registry)?;
    let mut timer = timer(shared);
    let cfg = UnitConfig {
        measure: measure(shared),
        schemas: lambda.clone(),
        seed: shared.seed,
        host: if shared.fake_timer { "fake".into() } else { host() },
    };
    let mut table = unit_profile(&net, &registry, &cfg, timer.as_mut())?;
    let mut summary = json!({ "entries": table.entries.len(), "adapts": table.adapts.len() });
    if integrated {
        let icfg = IntegratedConfig {
            measure: measure(shared),
            top_k: shared.top_k,
            max_passes: shared.max_passes,
            seed: shared.seed,
        };
        let r = integrated_profile(&net, &registry, &table, &lambda, &icfg, timer.as_mut())?;
        summary["integrated"] = json!({
            "seed_us": r.seed_us,
            "final_us": r.final_us,
            "measurements": r.measurements,
        });
        table = r.table;
    }
    save_profile(&table, out)?;

    let best = fastest_per_layer(&net, &table);
    if shared.json {
        summary["fastest"] = best
            .iter()
            .map(|e| {
                json!({
                    "layer": e.layer,
                    "descriptor": e.descriptor.to_string(),
                    "params": render_params(&e.params),
                    "time_us": e.time_us,
                })
            })
            .collect();
        println!("{summary:#}");
    } else {
        print!(
            "{}",
            render_selection_table(best.iter().map(|e| (e.layer.as_str(), &e.descriptor, &e.params)))
        );
        if let Some(i) = summary.get("integrated") {
            println!("integrated profiling: {:.3} us -> {:.3} us", i["seed_us"], i["final_us"]);
        }
        println!("wrote {} ({} entries, {} adapts)", out.display(), table.entries.len(), table.adapts.len());
    }
    Ok(())
}

fn calibration(net: &Net, calib: Option<&Path>, seed: u64) -> Result<Vec<Tensor<f32>>> {
    match calib {
        None => Ok(seeded_inputs(net, seed)),
        Some(p) if net.inputs.len() == 1 => Ok(vec![load_tensor(p)?]),
        Some(_) => Err(CliError::new(2, "--calib takes one tensor; the net has several inputs")),
    }
}

pub fn tune(model: &Path, profile: &Path, out: &Path, mode: Mode, calib: Option<&Path>, shared: &Shared) -> Result<()> {
    let registry = Registry::standard();
    let lambda = schemas(shared, &registry)?;
    let net = expand_childnets(&load_model(model)?, &registry)?;
    let costs = CostModel::from_profile(&load_profile(profile)?);

    let mut chosen = None;
    let mut totals = Vec::new();
    for m in TuneMode::ALL {
        let r = tune_mode(&net, &costs, &lambda, m).map(|p| p.to_f64());
        totals.push((m, r.as_ref().map(|p| p.total).map_err(|e| e.to_string())));
        if m == mode.into() {
            chosen = Some(r);
        }
    }
    let mut path: RoutinePath<f64> = chosen.expect("selected mode is tuned")?;
    let x = calibration(&net, calib, shared.seed)?;
    let used: Vec<&str> = path.layers.iter().map(|c| c.layer.as_str()).collect();
    path.qscales = calibrate_scales(&net, &registry, &[x])?
        .into_iter()
        .filter(|(k, _)| used.contains(&k.as_str()))
        .collect();
    save_path(&path, out)?;

    if shared.json {
        let modes: serde_json::Map<String, serde_json::Value> = totals
            .iter()
            .map(|(m, t)| {
                let v = match t {
                    Ok(us) => json!(us),
                    Err(e) => json!({ "error": e }),
                };
                (m.name().to_string(), v)
            })
            .collect();
        let report = json!({
            "mode": TuneMode::from(mode).name(),
            "predicted_us": modes,
            "path": serde_json::from_str::<serde_json::Value>(&path_to_string(&path)).expect("valid path json"),
        });
        println!("{report:#}");
    } else {
        for (m, t) in &totals {
            match t {
                Ok(us) => println!("{:<8} predicted {us:.3} us", m.name()),
                Err(e) => println!("{:<8} infeasible: {e}", m.name()),
            }
        }
        println!();
        print!("{}", path.render_table(true));
        println!("wrote {}", out.display());
    }
    Ok(())
}

struct Timing {
    outputs: Vec<Tensor<f32>>,
    stats: Stats,
}

fn timed(net: &Net, registry: &Registry, path: &RoutinePath<f64>, inputs: &[Tensor<f32>], shared: &Shared) -> Result<Timing> {
    if shared.runs == 0 {
        return Err(CliError::new(2, "runs must be at least 1"));
    }
    let p = plan(net, registry, path, &path.qscales)?;
    let x = blobs(inputs);
    for _ in 0..shared.warmup {
        execute(&p, &x)?;
    }
    let mut samples = Vec::with_capacity(shared.runs);
    let mut last = Vec::new();
    for _ in 0..shared.runs {
        let t = Instant::now();
        last = execute(&p, &x)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(Timing {
        outputs: last.iter().map(|b| b.to_f32()).collect(),
        stats: Stats::of(&samples),
    })
}

fn argmax(t: &Tensor<f32>) -> usize {
    t.data()
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn output_files(out: &Path, n: usize) -> Vec<PathBuf> {
    if n == 1 {
        return vec![out.to_path_buf()];
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = out.extension().and_then(|s| s.to_str()).map(|e| format!(".{e}")).unwrap_or_default();
    (0..n).map(|i| out.with_file_name(format!("{stem}.{i}{ext}"))).collect()
}

pub fn run(model: &Path, path: &Path, input: &Path, out: Option<&Path>, shared: &Shared) -> Result<()> {
    let registry = Registry::standard();
    let net = load_model(model)?;
    let tuned = load_path(path)?;
    if net.inputs.len() != 1 {
        return Err(CliError::new(2, "run takes one input tensor; the net has several inputs"));
    }
    let x = vec![load_tensor(input)?];
    let untuned = default_path(&net, &registry)?;

    let a = timed(&net, &registry, &tuned, &x, shared)?;
    let b = timed(&net, &registry, &untuned, &x, shared)?;
    let same: Vec<bool> = a.outputs.iter().zip(&b.outputs).map(|(p, q)| argmax(p) == argmax(q)).collect();
    let diff = a
        .outputs
        .iter()
        .zip(&b.outputs)
        .flat_map(|(p, q)| p.data().iter().zip(q.data()).map(|(u, v)| (u - v).abs()))
        .fold(0.0f32, f32::max);
    if let Some(out) = out {
        for (t, f) in a.outputs.iter().zip(output_files(out, a.outputs.len())) {
            save_tensor(t, &f)?;
        }
    }

    if shared.json {
        let report = json!({
            "tuned_ms": { "mean": a.stats.mean, "std": a.stats.std, "runs": a.stats.runs },
            "untuned_ms": { "mean": b.stats.mean, "std": b.stats.std, "runs": b.stats.runs },
            "argmax_equal": same.iter().all(|&s| s),
            "max_abs_diff": diff,
        });
        println!("{report:#}");
    } else {
        println!("tuned    {:.3} ± {:.3} ms ({} runs)", a.stats.mean, a.stats.std, a.stats.runs);
        println!("untuned  {:.3} ± {:.3} ms ({} runs)", b.stats.mean, b.stats.std, b.stats.runs);
        println!(
            "argmax {} (max abs diff {diff:.6})",
            if same.iter().all(|&s| s) { "equal" } else { "DIFFERS" }
        );
    }
    Ok(())
}

/// DPRS runs on the net with auxiliary layers inserted; the oracle searches
/// the original graph directly.
pub fn oracle_check(model: &Path, profile: &Path, inject_fault: bool, shared: &Shared) -> Result<()> {
    let registry = Registry::standard();
    let lambda = schemas(shared, &registry)?;
    let net = load_model(model)?;
    let costs = CostModel::from_profile(&load_profile(profile)?);
    let oracle = brute_force_optimal(&net, &costs, &lambda)?;
    let aux = insert_auxiliary_layers(&net)?;
    let options = DprsOptions {
        inject_fault,
        ..Default::default()
    };
    let dp = dprs_with(&aux, &costs, &lambda, options)?.path;
    let equal = dp.total == oracle.total;
    if shared.json {
        println!("{:#}", json!({ "dprs_us": dp.total, "oracle_us": oracle.total, "equal": equal }));
    } else {
        println!("dprs    {:.6} us", dp.total);
        println!("oracle  {:.6} us", oracle.total);
        println!("{}", if equal { "match" } else { "MISMATCH" });
    }
    if equal {
        Ok(())
    } else {
        Err(CliError::new(5, format!("dprs total {} differs from oracle total {}", dp.total, oracle.total)))
    }
}

pub fn zoo(net: ZooNet, layers: usize, out: &Path, input: Option<&Path>, seed: u64) -> Result<()> {
    let n = match net {
        ZooNet::TinyCnn => zoo::tiny_cnn(seed),
        ZooNet::Vgg16Toy => zoo::vgg16_toy(seed),
        ZooNet::ConvDiamond => zoo::conv_diamond(seed),
        ZooNet::Diamond => zoo::diamond(),
        ZooNet::NestedBranches => zoo::nested_branches(),
        ZooNet::Chain => zoo::chain(layers),
    };
    save_net(&n, out).map_err(|e| CliError::new(2, e))?;
    if let Some(p) = input {
        let x = seeded_inputs(&n, seed);
        let first = x.first().ok_or_else(|| CliError::new(2, "net has no inputs"))?;
        save_tensor(first, p)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
