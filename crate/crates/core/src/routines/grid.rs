use std::collections::BTreeMap;

use super::RoutineError;

/// One value per routine parameter, keyed by parameter name.
pub type ParamAssignment = BTreeMap<String, i64>;

/// Candidate values for each routine parameter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamGrid {
    params: BTreeMap<String, Vec<i64>>,
}

impl ParamGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, values: &[i64]) -> Self {
        self.params.insert(name.to_string(), values.to_vec());
        self
    }

    pub fn validate(&self) -> Result<(), RoutineError> {
        match self.params.iter().find(|(_, v)| v.is_empty()) {
            Some((k, _)) => Err(RoutineError::EmptyParam(k.clone())),
            None => Ok(()),
        }
    }

    pub fn params(&self) -> &BTreeMap<String, Vec<i64>> {
        &self.params
    }

    pub fn combinations(&self) -> usize {
        self.params.values().map(Vec::len).product()
    }

    /// Full Cartesian product; parameters sorted by name, the first varying slowest.
    pub fn enumerate(&self) -> Vec<ParamAssignment> {
        let mut out = vec![ParamAssignment::new()];
        for (name, values) in &self.params {
            out = out
                .into_iter()
                .flat_map(|base| {
                    values.iter().map(move |&v| {
                        let mut a = base.clone();
                        a.insert(name.clone(), v);
                        a
                    })
                })
                .collect();
        }
        out
    }

    pub fn contains(&self, a: &ParamAssignment) -> bool {
        a.len() == self.params.len()
            && a.iter()
                .all(|(k, v)| self.params.get(k).is_some_and(|vs| vs.contains(v)))
    }
}

/// `cache:8192 task_ops:32768`, the layout used in selection tables.
pub fn render_params(a: &ParamAssignment) -> String {
    a.iter()
        .map(|(k, v)| format!("{k}:{v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// `cache=8192,task_ops=32768`, used inside qualified layer names.
pub fn render_params_compact(a: &ParamAssignment) -> String {
    a.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}
