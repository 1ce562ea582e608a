use crate::graph::{Layer, LayerKind, LayerType, Padding};

use super::{ParamGrid, RoutineDescriptor, RoutineError, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChildnetKind {
    /// wgenc → wgconv → wgdec.
    Winograd,
    /// reshape → 1×1 conv2 → reshape.
    DenseConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutineImpl {
    /// Nothing executes; measured cost is zero by definition.
    Void,
    Kernel,
    Childnet(ChildnetKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Routine {
    pub descriptor: RoutineDescriptor,
    pub layer_type: LayerType,
    pub grid: ParamGrid,
    pub imp: RoutineImpl,
}

impl Routine {
    pub fn schema(&self) -> &Schema {
        &self.descriptor.schema
    }

    /// Whether this routine supports the layer's parameters and weights.
    pub fn applicable(&self, layer: &Layer) -> bool {
        if layer.layer_type() != self.layer_type {
            return false;
        }
        match (self.imp, &layer.kind) {
            (RoutineImpl::Childnet(ChildnetKind::Winograd), LayerKind::Conv2(p)) => {
                let k3 = layer
                    .weight("kernel")
                    .is_some_and(|k| k.shape().len() == 4 && k.shape()[..2] == [3, 3]);
                k3 && p.strides == (1, 1) && p.dilations == (1, 1) && p.padding == Padding::Same
            }
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptKind {
    Void,
    Quantize,
    Dequantize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptRoutine {
    pub from: Schema,
    pub to: Schema,
    pub kind: AdaptKind,
}

impl AdaptRoutine {
    pub fn descriptor(&self) -> RoutineDescriptor {
        let algo = match self.kind {
            AdaptKind::Void => "void",
            AdaptKind::Quantize => "quantize",
            AdaptKind::Dequantize => "dequantize",
        };
        RoutineDescriptor::new(self.to.clone(), algo)
    }
}

/// Static table of routines, populated once at startup.
#[derive(Debug, Clone)]
pub struct Registry {
    schemas: Vec<Schema>,
    routines: Vec<Routine>,
    adapts: Vec<AdaptRoutine>,
}

pub const TILE_SIZES: [i64; 4] = [2, 4, 6, 8];
pub const TASK_OPS: [i64; 2] = [8192, 32768];
pub const CACHE_SIZES: [i64; 2] = [4096, 8192];

impl Registry {
    pub fn empty(schemas: Vec<Schema>) -> Self {
        let mut schemas = schemas;
        schemas.sort();
        schemas.dedup();
        Registry {
            schemas,
            routines: Vec::new(),
            adapts: Vec::new(),
        }
    }

    pub fn register(&mut self, r: Routine) {
        debug_assert!(self.schemas.contains(r.schema()), "unregistered schema");
        self.routines.push(r);
    }

    pub fn register_adapt(&mut self, a: AdaptRoutine) {
        self.adapts.push(a);
    }

    /// The built-in cpu float32 + qint8 routine set.
    pub fn standard() -> Self {
        use LayerType as T;
        let f32s = Schema::cpu();
        let q8 = Schema::cpu_qint8();
        let mut reg = Registry::empty(vec![f32s.clone(), q8.clone()]);
        let mut add = |t: LayerType, s: &Schema, algo: &str, grid: ParamGrid, imp: RoutineImpl| {
            reg.register(Routine {
                descriptor: RoutineDescriptor::new(s.clone(), algo),
                layer_type: t,
                grid,
                imp,
            })
        };
        let none = ParamGrid::new;
        let tasks = || ParamGrid::new().with("task_ops", &TASK_OPS);

        for t in [T::Input, T::Output, T::AuxInput, T::AuxOutput] {
            add(t, &f32s, "void", none(), RoutineImpl::Void);
        }
        add(
            T::Conv2,
            &f32s,
            "naive",
            ParamGrid::new()
                .with("cache", &CACHE_SIZES)
                .with("task_ops", &TASK_OPS),
            RoutineImpl::Kernel,
        );
        add(
            T::Conv2,
            &f32s,
            "wg2",
            ParamGrid::new().with("tile_size", &TILE_SIZES),
            RoutineImpl::Childnet(ChildnetKind::Winograd),
        );
        add(T::Conv2, &q8, "naive", tasks(), RoutineImpl::Kernel);
        add(T::Dense, &f32s, "naive", none(), RoutineImpl::Kernel);
        add(
            T::Dense,
            &f32s,
            "conv",
            none(),
            RoutineImpl::Childnet(ChildnetKind::DenseConv),
        );
        add(T::Dense, &q8, "naive", none(), RoutineImpl::Kernel);
        for t in [T::Relu, T::MaxPool2, T::Flatten, T::Reshape, T::Add] {
            add(t, &f32s, "naive", none(), RoutineImpl::Kernel);
            add(t, &q8, "naive", none(), RoutineImpl::Kernel);
        }
        add(T::Softmax, &f32s, "naive", none(), RoutineImpl::Kernel);
        for t in [T::WgEnc, T::WgConv, T::WgDec] {
            add(t, &f32s, "naive", tasks(), RoutineImpl::Kernel);
        }
        reg.register_adapt(AdaptRoutine {
            from: f32s.clone(),
            to: q8.clone(),
            kind: AdaptKind::Quantize,
        });
        reg.register_adapt(AdaptRoutine {
            from: q8,
            to: f32s,
            kind: AdaptKind::Dequantize,
        });
        reg
    }

    /// The declared schema set, sorted by schema string.
    pub fn schemas(&self) -> &[Schema] {
        &self.schemas
    }

    pub fn routines(&self) -> &[Routine] {
        &self.routines
    }

    /// Routines for a layer type within one schema; empty when unavailable.
    pub fn lookup(&self, layer_type: LayerType, schema: &Schema) -> Vec<&Routine> {
        self.routines
            .iter()
            .filter(|r| r.layer_type == layer_type && r.schema() == schema)
            .collect()
    }

    /// Routines in `schema` that can run this particular layer.
    pub fn lookup_for(&self, layer: &Layer, schema: &Schema) -> Vec<&Routine> {
        self.lookup(layer.layer_type(), schema)
            .into_iter()
            .filter(|r| r.applicable(layer))
            .collect()
    }

    pub fn find(&self, layer_type: LayerType, descriptor: &RoutineDescriptor) -> Option<&Routine> {
        self.routines
            .iter()
            .find(|r| r.layer_type == layer_type && &r.descriptor == descriptor)
    }

    /// Cast between two schemas; equal schemas give the zero-cost void adapt.
    pub fn lookup_adapt(&self, from: &Schema, to: &Schema) -> Result<AdaptRoutine, RoutineError> {
        if from == to {
            return Ok(AdaptRoutine {
                from: from.clone(),
                to: to.clone(),
                kind: AdaptKind::Void,
            });
        }
        self.adapts
            .iter()
            .find(|a| &a.from == from && &a.to == to)
            .cloned()
            .ok_or_else(|| RoutineError::NoAdaptRoutine {
                from: from.to_string(),
                to: to.to_string(),
            })
    }

    /// The default float32 routine for a layer: first registered, first combo.
    pub fn default_routine(&self, layer: &Layer) -> Option<&Routine> {
        self.lookup_for(layer, &Schema::cpu()).into_iter().next()
    }

    pub fn check_schemas(&self, schemas: &[Schema]) -> Result<(), RoutineError> {
        match schemas.iter().find(|s| !self.schemas.contains(s)) {
            Some(s) => Err(RoutineError::UnknownSchema(s.to_string())),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LayerDef;
    use crate::tensor::Tensor;

    fn algos(v: Vec<&Routine>) -> Vec<String> {
        v.iter().map(|r| r.descriptor.to_string()).collect()
    }

    #[test]
    fn lookup_examples() {
        let reg = Registry::standard();
        assert_eq!(
            algos(reg.lookup(LayerType::Conv2, &Schema::cpu())),
            ["cpu/naive", "cpu/wg2"]
        );
        assert_eq!(
            algos(reg.lookup(LayerType::Conv2, &Schema::cpu_qint8())),
            ["cpu:qint8/naive"]
        );
        assert!(reg.lookup(LayerType::Softmax, &Schema::cpu_qint8()).is_empty());
    }

    #[test]
    fn adapt_lookup() {
        let reg = Registry::standard();
        let q = reg.lookup_adapt(&Schema::cpu(), &Schema::cpu_qint8()).unwrap();
        assert_eq!(q.kind, AdaptKind::Quantize);
        let d = reg.lookup_adapt(&Schema::cpu_qint8(), &Schema::cpu()).unwrap();
        assert_eq!(d.kind, AdaptKind::Dequantize);
        let cuda = Schema::parse("cuda").unwrap();
        assert!(matches!(
            reg.lookup_adapt(&Schema::cpu(), &cuda),
            Err(RoutineError::NoAdaptRoutine { .. })
        ));
        assert_eq!(
            reg.lookup_adapt(&cuda, &cuda).unwrap().kind,
            AdaptKind::Void
        );
    }

    #[test]
    fn every_routine_schema_is_declared() {
        let reg = Registry::standard();
        for r in reg.routines() {
            assert!(reg.schemas().contains(r.schema()), "{}", r.descriptor);
            r.grid.validate().unwrap();
            assert_eq!(
                RoutineDescriptor::parse(&r.descriptor.to_string()).unwrap(),
                r.descriptor
            );
        }
    }

    #[test]
    fn winograd_only_for_3x3_unit_stride() {
        let reg = Registry::standard();
        let conv = |k: usize, s: usize| {
            let def = LayerDef::new(
                "c",
                LayerKind::Conv2(crate::graph::Conv2Params {
                    strides: (s, s),
                    ..Default::default()
                }),
                &[],
            )
            .weight("kernel", Tensor::zeros(vec![k, k, 1, 1]));
            crate::graph::Net::from_defs("n", vec![def], &[], &[]).unwrap().layers[0].clone()
        };
        let names = |l: &Layer| algos(reg.lookup_for(l, &Schema::cpu()));
        assert_eq!(names(&conv(3, 1)), ["cpu/naive", "cpu/wg2"]);
        assert_eq!(names(&conv(5, 1)), ["cpu/naive"]);
        assert_eq!(names(&conv(3, 2)), ["cpu/naive"]);
    }
}
