use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OptimizerError;
use crate::routines::{ParamAssignment, RoutineDescriptor, Schema};
use crate::scalar::Cost;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerChoice<C> {
    pub layer: String,
    pub descriptor: RoutineDescriptor,
    pub params: ParamAssignment,
    pub time: C,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptChoice<C> {
    pub edge: (String, String),
    pub from: Schema,
    pub to: Schema,
    pub time: C,
}

/// Tuned inner path of the childnet routine selected for `layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChildPath<C> {
    pub layer: String,
    pub descriptor: RoutineDescriptor,
    pub params: ParamAssignment,
    pub path: RoutinePath<C>,
}

/// One routine per layer plus the casts on schema-mismatch edges.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutinePath<C> {
    pub net: String,
    pub schemas: Vec<Schema>,
    /// In topological order.
    pub layers: Vec<LayerChoice<C>>,
    pub adapts: Vec<AdaptChoice<C>>,
    pub total: C,
    pub childnets: Vec<ChildPath<C>>,
    /// Calibrated scale per layer-output blob, filled in before deployment.
    pub qscales: BTreeMap<String, f32>,
}

impl<C: Cost> RoutinePath<C> {
    pub fn choice(&self, layer: &str) -> Option<&LayerChoice<C>> {
        self.layers.iter().find(|c| c.layer == layer)
    }

    pub fn schema_map(&self) -> HashMap<String, Schema> {
        self.layers
            .iter()
            .map(|c| (c.layer.clone(), c.descriptor.schema.clone()))
            .collect()
    }

    pub fn childnet(&self, layer: &str) -> Option<&ChildPath<C>> {
        self.childnets.iter().find(|c| c.layer == layer)
    }

    /// Sum of member costs in path order.
    pub fn member_sum(&self) -> C {
        let l = self.layers.iter().fold(C::zero(), |s, c| s + c.time);
        self.adapts.iter().fold(l, |s, a| s + a.time)
    }

    pub fn to_f64(&self) -> RoutinePath<f64> {
        RoutinePath {
            net: self.net.clone(),
            schemas: self.schemas.clone(),
            layers: self
                .layers
                .iter()
                .map(|c| LayerChoice {
                    layer: c.layer.clone(),
                    descriptor: c.descriptor.clone(),
                    params: c.params.clone(),
                    time: c.time.to_f64_lossy(),
                })
                .collect(),
            adapts: self
                .adapts
                .iter()
                .map(|a| AdaptChoice {
                    edge: a.edge.clone(),
                    from: a.from.clone(),
                    to: a.to.clone(),
                    time: a.time.to_f64_lossy(),
                })
                .collect(),
            total: self.total.to_f64_lossy(),
            childnets: self
                .childnets
                .iter()
                .map(|c| ChildPath {
                    layer: c.layer.clone(),
                    descriptor: c.descriptor.clone(),
                    params: c.params.clone(),
                    path: c.path.to_f64(),
                })
                .collect(),
            qscales: self.qscales.clone(),
        }
    }

    /// `Layer | Routine Descriptor | Routine Parameters`, one parameter per row.
    pub fn render_table(&self, skip_void: bool) -> String {
        render_selection_table(
            self.layers
                .iter()
                .filter(|c| !(skip_void && c.descriptor.algorithm == "void"))
                .map(|c| (c.layer.as_str(), &c.descriptor, &c.params)),
        )
    }
}

pub fn render_selection_table<'a>(
    rows: impl Iterator<Item = (&'a str, &'a RoutineDescriptor, &'a ParamAssignment)>,
) -> String {
    let header = ["Layer", "Routine Descriptor", "Routine Parameters"];
    let mut lines: Vec<[String; 3]> = Vec::new();
    for (layer, d, params) in rows {
        let rendered: Vec<String> = params.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        let first = rendered.first().cloned().unwrap_or_default();
        lines.push([layer.to_string(), d.to_string(), first]);
        for p in rendered.into_iter().skip(1) {
            lines.push([String::new(), String::new(), p]);
        }
    }
    let mut w = header.map(str::len);
    for l in &lines {
        for i in 0..3 {
            w[i] = w[i].max(l[i].len());
        }
    }
    let row = |c: [&str; 3]| {
        format!("{:<w0$} | {:<w1$} | {}", c[0], c[1], c[2], w0 = w[0], w1 = w[1])
            .trim_end()
            .to_string()
    };
    let mut out = vec![row(header)];
    out.push(format!("{}-+-{}-+-{}", "-".repeat(w[0]), "-".repeat(w[1]), "-".repeat(w[2])));
    for l in &lines {
        out.push(row([&l[0], &l[1], &l[2]]));
    }
    out.join("\n") + "\n"
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    layer: String,
    descriptor: String,
    params: BTreeMap<String, i64>,
    time_us: f64,
}

#[derive(Serialize, Deserialize)]
struct AdaptJson {
    edge: (String, String),
    from: String,
    to: String,
    time_us: f64,
}

#[derive(Serialize, Deserialize)]
struct ChildJson {
    layer: String,
    descriptor: String,
    params: BTreeMap<String, i64>,
    path: PathJson,
}

#[derive(Serialize, Deserialize)]
struct PathJson {
    net: String,
    schemas: Vec<String>,
    layers: Vec<LayerJson>,
    adapts: Vec<AdaptJson>,
    total_us: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    qscales: BTreeMap<String, f32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    childnets: Vec<ChildJson>,
}

fn to_json(p: &RoutinePath<f64>) -> PathJson {
    PathJson {
        net: p.net.clone(),
        schemas: p.schemas.iter().map(Schema::to_string).collect(),
        layers: p
            .layers
            .iter()
            .map(|c| LayerJson {
                layer: c.layer.clone(),
                descriptor: c.descriptor.to_string(),
                params: c.params.clone(),
                time_us: c.time,
            })
            .collect(),
        adapts: p
            .adapts
            .iter()
            .map(|a| AdaptJson {
                edge: a.edge.clone(),
                from: a.from.to_string(),
                to: a.to.to_string(),
                time_us: a.time,
            })
            .collect(),
        total_us: p.total,
        qscales: p.qscales.clone(),
        childnets: p
            .childnets
            .iter()
            .map(|c| ChildJson {
                layer: c.layer.clone(),
                descriptor: c.descriptor.to_string(),
                params: c.params.clone(),
                path: to_json(&c.path),
            })
            .collect(),
    }
}

fn from_json(j: PathJson) -> Result<RoutinePath<f64>, OptimizerError> {
    let bad = |e: crate::routines::RoutineError| OptimizerError::MalformedPath(e.to_string());
    let time = |t: f64, what: &str| {
        if t.is_finite() && t >= 0.0 {
            Ok(t)
        } else {
            Err(OptimizerError::MalformedPath(format!("{what} has time_us {t}")))
        }
    };
    Ok(RoutinePath {
        net: j.net,
        schemas: j
            .schemas
            .iter()
            .map(|s| Schema::parse(s))
            .collect::<Result<_, _>>()
            .map_err(bad)?,
        layers: j
            .layers
            .into_iter()
            .map(|l| {
                Ok(LayerChoice {
                    time: time(l.time_us, &l.layer)?,
                    descriptor: RoutineDescriptor::parse(&l.descriptor).map_err(bad)?,
                    params: l.params,
                    layer: l.layer,
                })
            })
            .collect::<Result<_, OptimizerError>>()?,
        adapts: j
            .adapts
            .into_iter()
            .map(|a| {
                Ok(AdaptChoice {
                    time: time(a.time_us, &format!("adapt {:?}", a.edge))?,
                    from: Schema::parse(&a.from).map_err(bad)?,
                    to: Schema::parse(&a.to).map_err(bad)?,
                    edge: a.edge,
                })
            })
            .collect::<Result<_, OptimizerError>>()?,
        total: time(j.total_us, "path total")?,
        qscales: j.qscales,
        childnets: j
            .childnets
            .into_iter()
            .map(|c| {
                Ok(ChildPath {
                    descriptor: RoutineDescriptor::parse(&c.descriptor).map_err(bad)?,
                    params: c.params,
                    path: from_json(c.path)?,
                    layer: c.layer,
                })
            })
            .collect::<Result<_, OptimizerError>>()?,
    })
}

pub fn path_to_string(p: &RoutinePath<f64>) -> String {
    serde_json::to_string_pretty(&to_json(p)).expect("path serializes")
}

pub fn path_from_str(s: &str) -> Result<RoutinePath<f64>, OptimizerError> {
    let j: PathJson = serde_json::from_str(s).map_err(|e| OptimizerError::MalformedPath(e.to_string()))?;
    from_json(j)
}

pub fn save_path(p: &RoutinePath<f64>, file: &Path) -> Result<(), OptimizerError> {
    std::fs::write(file, path_to_string(p)).map_err(|e| OptimizerError::Io(e.to_string()))
}

pub fn load_path(file: &Path) -> Result<RoutinePath<f64>, OptimizerError> {
    let s = std::fs::read_to_string(file).map_err(|e| OptimizerError::Io(format!("{}: {e}", file.display())))?;
    path_from_str(&s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RoutinePath<f64> {
        let d = |s: &str| RoutineDescriptor::parse(s).unwrap();
        let inner = RoutinePath {
            net: "conv>wg2[tile_size=4]".into(),
            schemas: vec![Schema::cpu()],
            layers: vec![LayerChoice {
                layer: "enc".into(),
                descriptor: d("cpu/naive"),
                params: [("task_ops".to_string(), 8192)].into(),
                time: 1.5,
            }],
            adapts: vec![],
            total: 1.5,
            childnets: vec![],
            qscales: BTreeMap::new(),
        };
        RoutinePath {
            net: "n".into(),
            schemas: vec![Schema::cpu(), Schema::cpu_qint8()],
            layers: vec![
                LayerChoice {
                    layer: "conv".into(),
                    descriptor: d("cpu/wg2"),
                    params: [("tile_size".to_string(), 4)].into(),
                    time: 1.5,
                },
                LayerChoice {
                    layer: "pool".into(),
                    descriptor: d("cpu:qint8/naive"),
                    params: ParamAssignment::new(),
                    time: 0.25,
                },
            ],
            adapts: vec![AdaptChoice {
                edge: ("conv".into(), "pool".into()),
                from: Schema::cpu(),
                to: Schema::cpu_qint8(),
                time: 0.125,
            }],
            total: 1.875,
            childnets: vec![ChildPath {
                layer: "conv".into(),
                descriptor: d("cpu/wg2"),
                params: [("tile_size".to_string(), 4)].into(),
                path: inner,
            }],
            qscales: [("pool".to_string(), 0.5f32)].into(),
        }
    }

    #[test]
    fn json_round_trip() {
        let p = sample();
        let s = path_to_string(&p);
        assert!(s.contains("\"total_us\""));
        assert_eq!(path_from_str(&s).unwrap(), p);
    }

    #[test]
    fn negative_time_rejected() {
        let s = path_to_string(&sample()).replace("0.25", "-0.25");
        assert!(matches!(path_from_str(&s), Err(OptimizerError::MalformedPath(_))));
    }

    #[test]
    fn table_layout() {
        let d = RoutineDescriptor::parse("cpu/naive").unwrap();
        let p: ParamAssignment = [("cache".to_string(), 8192), ("task_ops".to_string(), 32768)].into();
        let none = ParamAssignment::new();
        let t = render_selection_table([("block1_conv1", &d, &p), ("softmax", &d, &none)].into_iter());
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "Layer        | Routine Descriptor | Routine Parameters");
        assert_eq!(lines[2], "block1_conv1 | cpu/naive          | cache:8192");
        assert_eq!(lines[3], "             |                    | task_ops:32768");
        assert_eq!(lines[4], "softmax      | cpu/naive          |");
    }
}
