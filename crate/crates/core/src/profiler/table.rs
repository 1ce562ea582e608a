//! Profile tables and their JSON form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ProfilerError;
use crate::routines::{ParamAssignment, RoutineDescriptor, Schema};

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEntry {
    /// Qualified layer name.
    pub layer: String,
    pub descriptor: RoutineDescriptor,
    pub params: ParamAssignment,
    /// Median of the measured runs; the cost the optimizer uses.
    pub time_us: f64,
    pub mean_us: f64,
    pub std_us: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptCostEntry {
    pub edge: (String, String),
    pub from: Schema,
    pub to: Schema,
    pub time_us: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileTable {
    pub host: String,
    pub entries: Vec<ProfileEntry>,
    pub adapts: Vec<AdaptCostEntry>,
}

impl ProfileTable {
    pub fn entry(&self, layer: &str, descriptor: &RoutineDescriptor, params: &ParamAssignment) -> Option<&ProfileEntry> {
        self.entries
            .iter()
            .find(|e| e.layer == layer && &e.descriptor == descriptor && &e.params == params)
    }
}

#[derive(Serialize, Deserialize)]
struct EntryJson {
    layer: String,
    descriptor: String,
    params: ParamAssignment,
    time_us: f64,
    mean_us: f64,
    std_us: f64,
    runs: usize,
}

#[derive(Serialize, Deserialize)]
struct AdaptJson {
    edge: (String, String),
    from: String,
    to: String,
    time_us: f64,
}

#[derive(Serialize, Deserialize)]
struct TableJson {
    #[serde(default)]
    host: String,
    entries: Vec<EntryJson>,
    #[serde(default)]
    adapts: Vec<AdaptJson>,
}

fn check_time(what: &str, t: f64) -> Result<f64, ProfilerError> {
    if t.is_finite() && t >= 0.0 {
        Ok(t)
    } else {
        Err(ProfilerError::MalformedProfile(format!("{what} has time_us {t}")))
    }
}

pub fn profile_to_string(t: &ProfileTable) -> String {
    let j = TableJson {
        host: t.host.clone(),
        entries: t
            .entries
            .iter()
            .map(|e| EntryJson {
                layer: e.layer.clone(),
                descriptor: e.descriptor.to_string(),
                params: e.params.clone(),
                time_us: e.time_us,
                mean_us: e.mean_us,
                std_us: e.std_us,
                runs: e.runs,
            })
            .collect(),
        adapts: t
            .adapts
            .iter()
            .map(|a| AdaptJson {
                edge: a.edge.clone(),
                from: a.from.to_string(),
                to: a.to.to_string(),
                time_us: a.time_us,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&j).expect("profile serializes")
}

pub fn profile_from_str(s: &str) -> Result<ProfileTable, ProfilerError> {
    let j: TableJson = serde_json::from_str(s).map_err(|e| ProfilerError::MalformedProfile(e.to_string()))?;
    let bad = |e: crate::routines::RoutineError| ProfilerError::MalformedProfile(e.to_string());
    let mut entries = Vec::with_capacity(j.entries.len());
    for e in j.entries {
        let what = format!("entry `{}` {}", e.layer, e.descriptor);
        entries.push(ProfileEntry {
            descriptor: RoutineDescriptor::parse(&e.descriptor).map_err(bad)?,
            time_us: check_time(&what, e.time_us)?,
            mean_us: check_time(&what, e.mean_us)?,
            std_us: check_time(&what, e.std_us)?,
            layer: e.layer,
            params: e.params,
            runs: e.runs,
        });
    }
    let mut adapts = Vec::with_capacity(j.adapts.len());
    for a in j.adapts {
        let what = format!("adapt {:?}", a.edge);
        adapts.push(AdaptCostEntry {
            from: Schema::parse(&a.from).map_err(bad)?,
            to: Schema::parse(&a.to).map_err(bad)?,
            time_us: check_time(&what, a.time_us)?,
            edge: a.edge,
        });
    }
    Ok(ProfileTable {
        host: j.host,
        entries,
        adapts,
    })
}

pub fn save_profile(t: &ProfileTable, file: &Path) -> Result<(), ProfilerError> {
    std::fs::write(file, profile_to_string(t)).map_err(|e| ProfilerError::Io(format!("{}: {e}", file.display())))
}

pub fn load_profile(file: &Path) -> Result<ProfileTable, ProfilerError> {
    let s = std::fs::read_to_string(file).map_err(|e| ProfilerError::Io(format!("{}: {e}", file.display())))?;
    profile_from_str(&s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ProfileTable {
        ProfileTable {
            host: "test".into(),
            entries: vec![ProfileEntry {
                layer: "conv".into(),
                descriptor: RoutineDescriptor::parse("cpu/wg2").unwrap(),
                params: [("tile_size".to_string(), 4)].into(),
                time_us: 12.5,
                mean_us: 13.0,
                std_us: 0.75,
                runs: 20,
            }],
            adapts: vec![AdaptCostEntry {
                edge: ("a".into(), "b".into()),
                from: Schema::cpu(),
                to: Schema::cpu_qint8(),
                time_us: 0.5,
            }],
        }
    }

    #[test]
    fn round_trip() {
        let t = sample();
        assert_eq!(profile_from_str(&profile_to_string(&t)).unwrap(), t);
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("p.json");
        save_profile(&t, &f).unwrap();
        assert_eq!(load_profile(&f).unwrap(), t);
    }

    #[test]
    fn negative_time_rejected() {
        let s = profile_to_string(&sample()).replace("12.5", "-1.0");
        assert!(matches!(profile_from_str(&s), Err(ProfilerError::MalformedProfile(_))));
    }

    #[test]
    fn missing_adapts_load_empty() {
        let s = r#"{"host":"h","entries":[]}"#;
        assert!(profile_from_str(s).unwrap().adapts.is_empty());
        assert!(matches!(
            load_profile(Path::new("/nonexistent/p.json")),
            Err(ProfilerError::Io(_))
        ));
    }
}
