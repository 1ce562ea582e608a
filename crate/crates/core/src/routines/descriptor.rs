use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::tensor::DType;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutineError {
    #[error("malformed routine descriptor `{0}`")]
    MalformedDescriptor(String),
    #[error("malformed routine schema `{0}`")]
    MalformedSchema(String),
    #[error("no adapt routine from `{from}` to `{to}`")]
    NoAdaptRoutine { from: String, to: String },
    #[error("parameter `{0}` has an empty value list")]
    EmptyParam(String),
    #[error("schema `{0}` is not registered")]
    UnknownSchema(String),
}

/// Platform plus data type; the part of a descriptor before the slash.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schema {
    pub platform: String,
    pub dtype: DType,
}

impl Schema {
    pub fn new(platform: impl Into<String>, dtype: DType) -> Self {
        Schema {
            platform: platform.into(),
            dtype,
        }
    }

    pub fn cpu() -> Self {
        Schema::new("cpu", DType::Float32)
    }

    pub fn cpu_qint8() -> Self {
        Schema::new("cpu", DType::Qint8)
    }

    pub fn parse(s: &str) -> Result<Schema, RoutineError> {
        let bad = || RoutineError::MalformedSchema(s.to_string());
        let (platform, dtype) = match s.split_once(':') {
            Some((p, d)) => (p, DType::parse(d).ok_or_else(bad)?),
            None => (s, DType::Float32),
        };
        if platform.is_empty() || platform.contains('/') {
            return Err(bad());
        }
        Ok(Schema::new(platform, dtype))
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dtype {
            DType::Float32 => f.write_str(&self.platform),
            d => write!(f, "{}:{}", self.platform, d),
        }
    }
}

impl FromStr for Schema {
    type Err = RoutineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Schema::parse(s)
    }
}

/// Schemas order by their rendered string.
impl Ord for Schema {
    fn cmp(&self, other: &Self) -> Ordering {
        self.to_string().cmp(&other.to_string())
    }
}

impl PartialOrd for Schema {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// `platform[:dtype]/algorithm`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoutineDescriptor {
    pub schema: Schema,
    pub algorithm: String,
}

impl RoutineDescriptor {
    pub fn new(schema: Schema, algorithm: impl Into<String>) -> Self {
        RoutineDescriptor {
            schema,
            algorithm: algorithm.into(),
        }
    }

    pub fn parse(s: &str) -> Result<RoutineDescriptor, RoutineError> {
        let bad = || RoutineError::MalformedDescriptor(s.to_string());
        let (schema, algorithm) = s.split_once('/').ok_or_else(bad)?;
        if algorithm.is_empty() || algorithm.contains('/') || algorithm.contains(':') {
            return Err(bad());
        }
        let schema = Schema::parse(schema).map_err(|_| bad())?;
        Ok(RoutineDescriptor::new(schema, algorithm))
    }

    pub fn platform(&self) -> &str {
        &self.schema.platform
    }

    pub fn dtype(&self) -> DType {
        self.schema.dtype
    }
}

impl fmt::Display for RoutineDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.schema, self.algorithm)
    }
}

impl FromStr for RoutineDescriptor {
    type Err = RoutineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RoutineDescriptor::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_descriptor_forms() {
        let d = RoutineDescriptor::parse("cuda:float16/cudnn").unwrap();
        assert_eq!((d.platform(), d.dtype(), d.algorithm.as_str()), ("cuda", DType::Float16, "cudnn"));
        let d = RoutineDescriptor::parse("cpu/wg2").unwrap();
        assert_eq!((d.platform(), d.dtype(), d.algorithm.as_str()), ("cpu", DType::Float32, "wg2"));
        let d = RoutineDescriptor::parse("cpu:qint8/neon").unwrap();
        assert_eq!((d.platform(), d.dtype(), d.algorithm.as_str()), ("cpu", DType::Qint8, "neon"));
    }

    #[test]
    fn rejects_malformed() {
        for s in ["wg2", "/wg2", "cpu/", "cpu:int3/x", "cpu:qint8", "a/b/c", ""] {
            assert!(
                matches!(RoutineDescriptor::parse(s), Err(RoutineError::MalformedDescriptor(_))),
                "{s}"
            );
        }
    }

    #[test]
    fn equal_platform_and_dtype_give_equal_schema() {
        let a = RoutineDescriptor::parse("cpu:float32/naive").unwrap();
        let b = RoutineDescriptor::parse("cpu/wg2").unwrap();
        assert_eq!(a.schema, b.schema);
        assert_eq!(a.to_string(), "cpu/naive");
    }

    #[test]
    fn schema_order_is_string_order() {
        assert!(Schema::cpu() < Schema::cpu_qint8());
        assert!(Schema::new("cpu2", DType::Float32) < Schema::cpu_qint8());
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(
            platform in "[a-z][a-z0-9_]{0,6}",
            dtype in prop::sample::select(vec![DType::Float32, DType::Float16, DType::Qint8]),
            algo in "[a-z0-9_]{1,8}",
        ) {
            let d = RoutineDescriptor::new(Schema::new(platform, dtype), algo);
            prop_assert_eq!(RoutineDescriptor::parse(&d.to_string()).unwrap(), d);
        }
    }
}
