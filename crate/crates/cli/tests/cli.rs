use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        Work {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn rtune(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_rtune"))
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.rtune(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    fn json(&self, args: &[&str]) -> Value {
        let mut a = args.to_vec();
        a.push("--json");
        serde_json::from_str(&self.ok(&a)).unwrap()
    }

    /// Zoo net, seeded input and a fake-timer profile.
    fn setup(&self, net: &str) {
        self.ok(&["zoo", net, "-o", "net.json", "--input", "x.json"]);
        self.ok(&["profile", "net.json", "-o", "prof.json", "--fake-timer", "--runs", "2", "--warmup", "0"]);
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn profile_records_the_run_count_and_prints_the_table() {
    let w = Work::new();
    w.ok(&["zoo", "tiny-cnn", "-o", "net.json"]);
    let out = w.ok(&["profile", "net.json", "-o", "prof.json", "--fake-timer", "--runs", "20"]);
    assert!(out.starts_with("Layer"), "{out}");
    let header: Vec<&str> = out.lines().next().unwrap().split('|').map(str::trim).collect();
    assert_eq!(header, ["Layer", "Routine Descriptor", "Routine Parameters"]);
    let prof = read_json(&w.p("prof.json"));
    let entries = prof["entries"].as_array().unwrap();
    assert!(entries.iter().all(|e| e["runs"] == 20));
}

#[test]
fn float_schema_only_profile() {
    let w = Work::new();
    w.ok(&["zoo", "tiny-cnn", "-o", "net.json"]);
    w.ok(&["profile", "net.json", "-o", "prof.json", "--fake-timer", "--runs", "1", "--schemas", "cpu"]);
    let prof = read_json(&w.p("prof.json"));
    for e in prof["entries"].as_array().unwrap() {
        assert!(!e["descriptor"].as_str().unwrap().contains("qint8"), "{e}");
    }
}

#[test]
fn missing_or_malformed_model_exits_2() {
    let w = Work::new();
    assert_eq!(code(&w.rtune(&["profile", "missing.json", "-o", "p.json"])), 2);
    std::fs::write(w.p("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&w.rtune(&["profile", "bad.json", "-o", "p.json"])), 2);
}

#[test]
fn fake_timer_runs_are_deterministic() {
    let w = Work::new();
    w.setup("conv-diamond");
    let first = std::fs::read(w.p("prof.json")).unwrap();
    w.ok(&["profile", "net.json", "-o", "prof.json", "--fake-timer", "--runs", "2", "--warmup", "0"]);
    assert_eq!(first, std::fs::read(w.p("prof.json")).unwrap());
}

#[test]
fn integrated_profile_never_reports_a_slowdown() {
    let w = Work::new();
    w.ok(&["zoo", "tiny-cnn", "-o", "net.json"]);
    let r = w.json(&["profile", "net.json", "-o", "prof.json", "--fake-timer", "--runs", "1", "--integrated"]);
    let i = &r["integrated"];
    assert!(i["final_us"].as_f64().unwrap() <= i["seed_us"].as_f64().unwrap());
    w.ok(&["tune", "net.json", "prof.json", "-o", "path.json"]);
}

#[test]
fn hybrid_prediction_is_never_worse() {
    for net in ["tiny-cnn", "vgg16-toy", "conv-diamond"] {
        let w = Work::new();
        w.setup(net);
        let r = w.json(&["tune", "net.json", "prof.json", "-o", "path.json"]);
        let p = &r["predicted_us"];
        let h = p["hybrid"].as_f64().unwrap();
        for m in ["float32", "qint8"] {
            if let Some(t) = p[m].as_f64() {
                assert!(h <= t, "{net}: hybrid {h} > {m} {t}");
            }
        }
    }
}

#[test]
fn float32_only_selects_cpu_routines() {
    let w = Work::new();
    w.setup("tiny-cnn");
    w.ok(&["tune", "net.json", "prof.json", "-o", "path.json", "--float32-only"]);
    let path = read_json(&w.p("path.json"));
    for l in path["layers"].as_array().unwrap() {
        assert!(l["descriptor"].as_str().unwrap().starts_with("cpu/"), "{l}");
    }
}

#[test]
fn profile_missing_a_layer_exits_4_naming_it() {
    let w = Work::new();
    w.setup("tiny-cnn");
    let mut prof = read_json(&w.p("prof.json"));
    prof["entries"].as_array_mut().unwrap().retain(|e| {
        let l = e["layer"].as_str().unwrap();
        l != "fc" && !l.starts_with("fc>")
    });
    std::fs::write(w.p("prof.json"), prof.to_string()).unwrap();
    let o = w.rtune(&["tune", "net.json", "prof.json", "-o", "path.json"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fc"));
}

#[test]
fn tuned_and_untuned_runs_agree() {
    let w = Work::new();
    w.setup("tiny-cnn");
    w.ok(&["tune", "net.json", "prof.json", "-o", "path.json"]);
    let text = w.ok(&["run", "net.json", "path.json", "x.json", "-o", "y.json", "--runs", "3"]);
    assert!(text.contains("tuned") && text.contains(" ± ") && text.contains("ms"), "{text}");
    let r = w.json(&["run", "net.json", "path.json", "x.json", "--runs", "1"]);
    assert_eq!(r["argmax_equal"], true);
    assert_eq!(r["tuned_ms"]["std"], 0.0);
    assert!(w.p("y.json").exists());
}

#[test]
fn wrong_input_shape_exits_2() {
    let w = Work::new();
    w.setup("tiny-cnn");
    w.ok(&["tune", "net.json", "prof.json", "-o", "path.json"]);
    w.ok(&["zoo", "vgg16-toy", "-o", "other.json", "--input", "other_x.json"]);
    assert_eq!(code(&w.rtune(&["run", "net.json", "path.json", "other_x.json"])), 2);
}

#[test]
fn nonpositive_scales_are_rejected() {
    let w = Work::new();
    w.setup("tiny-cnn");
    w.ok(&["tune", "net.json", "prof.json", "-o", "path.json", "--qint8-only"]);
    let mut path = read_json(&w.p("path.json"));
    for (_, v) in path["qscales"].as_object_mut().unwrap() {
        *v = Value::from(-1.0);
    }
    std::fs::write(w.p("path.json"), path.to_string()).unwrap();
    let o = w.rtune(&["run", "net.json", "path.json", "x.json", "--runs", "1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("scale"));
}

#[test]
fn oracle_check_codes() {
    let w = Work::new();
    w.setup("conv-diamond");
    assert_eq!(code(&w.rtune(&["oracle-check", "net.json", "prof.json"])), 0);
    assert_eq!(code(&w.rtune(&["oracle-check", "net.json", "prof.json", "--inject-fault"])), 5);

    w.ok(&["zoo", "chain", "--layers", "40", "-o", "long.json"]);
    w.ok(&["profile", "long.json", "-o", "long_prof.json", "--fake-timer", "--runs", "1", "--warmup", "0"]);
    assert_eq!(code(&w.rtune(&["oracle-check", "long.json", "long_prof.json"])), 6);
}

#[test]
fn every_bundled_net_passes_the_oracle_check() {
    for net in ["tiny-cnn", "conv-diamond", "diamond", "nested-branches"] {
        let w = Work::new();
        w.setup(net);
        let r = w.json(&["oracle-check", "net.json", "prof.json"]);
        assert_eq!(r["equal"], true, "{net}");
    }
}
