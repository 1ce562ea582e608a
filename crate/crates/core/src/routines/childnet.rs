//! Routines implemented as inner nets of existing layers.

use std::sync::Arc;

use crate::graph::{
    infer_shapes, qualify, Childnet, ChildnetEntry, Conv2Params, GraphError, Layer, LayerDef,
    LayerKind, Net,
};
use crate::tensor::{Shape, Tensor};

use super::{render_params_compact, ChildnetKind, ParamAssignment, Registry, Routine, RoutineImpl};

/// Scope of the inner net realizing `routine` with `params` at `layer`.
pub fn childnet_scope(qualified_layer: &str, algorithm: &str, params: &ParamAssignment) -> String {
    format!("{qualified_layer}>{algorithm}[{}]", render_params_compact(params))
}

fn finish(mut net: Net, scope: String) -> Net {
    net.name = scope.clone();
    net.scope = scope;
    net
}

/// `in → wgenc → wgconv → wgdec → out` for a 3×3 same-padded conv.
pub fn winograd_childnet(
    layer: &Layer,
    input_shape: &[usize],
    tile: usize,
    scope: String,
) -> Result<Childnet, GraphError> {
    let &[_, h, w, _] = input_shape else {
        return Err(GraphError::ShapeMismatch {
            layer: layer.name.clone(),
            detail: format!("winograd routine needs an NHWC input, got {input_shape:?}"),
        });
    };
    let kernel = layer
        .weights
        .get("kernel")
        .cloned()
        .ok_or_else(|| GraphError::MissingWeight {
            layer: layer.name.clone(),
            weight: "kernel".into(),
        })?;
    let mut conv = LayerDef::new("conv", LayerKind::WgConv { tile }, &["enc"]);
    conv.weights.insert("kernel".into(), kernel);
    let mut dec = LayerDef::new(
        "dec",
        LayerKind::WgDec {
            tile,
            out_h: h,
            out_w: w,
        },
        &["conv"],
    );
    let mut binding = vec![("kernel".to_string(), "conv".to_string(), "kernel".to_string())];
    if let Some(b) = layer.weights.get("bias") {
        dec.weights.insert("bias".into(), b.clone());
        binding.push(("bias".into(), "dec".into(), "bias".into()));
    }
    let defs = vec![
        LayerDef::new(
            "in",
            LayerKind::Input {
                shape: input_shape.to_vec(),
            },
            &[],
        ),
        LayerDef::new(
            "enc",
            LayerKind::WgEnc {
                tile,
                out_h: h,
                out_w: w,
            },
            &["in"],
        ),
        conv,
        dec,
        LayerDef::new("out", LayerKind::Output, &["dec"]),
    ];
    let inner = finish(Net::from_defs("", defs, &["in"], &["out"])?, scope);
    Ok(Childnet { inner, binding })
}

/// `in → reshape(1,1,1,C) → conv2(1×1×C×K) → reshape(K) → out`.
pub fn dense_conv_childnet(layer: &Layer, scope: String) -> Result<Childnet, GraphError> {
    let kernel = layer.weight("kernel").ok_or_else(|| GraphError::MissingWeight {
        layer: layer.name.clone(),
        weight: "kernel".into(),
    })?;
    let &[c, k] = kernel.shape() else {
        return Err(GraphError::ShapeMismatch {
            layer: layer.name.clone(),
            detail: format!("dense kernel must be [C,K], got {:?}", kernel.shape()),
        });
    };
    let conv_kernel = Tensor::new(vec![1, 1, c, k], kernel.data().to_vec())
        .expect("same element count");
    let mut conv = LayerDef::new("conv", LayerKind::Conv2(Conv2Params::default()), &["pre"])
        .weight("kernel", conv_kernel);
    let mut binding = vec![("kernel".to_string(), "conv".to_string(), "kernel".to_string())];
    if let Some(b) = layer.weights.get("bias") {
        conv.weights.insert("bias".into(), Arc::clone(b));
        binding.push(("bias".into(), "conv".into(), "bias".into()));
    }
    let defs = vec![
        LayerDef::new("in", LayerKind::Input { shape: vec![c] }, &[]),
        LayerDef::new(
            "pre",
            LayerKind::Reshape {
                shape: vec![1, 1, 1, c],
            },
            &["in"],
        ),
        conv,
        LayerDef::new("post", LayerKind::Reshape { shape: vec![k] }, &["conv"]),
        LayerDef::new("out", LayerKind::Output, &["post"]),
    ];
    let inner = finish(Net::from_defs("", defs, &["in"], &["out"])?, scope);
    Ok(Childnet { inner, binding })
}

/// Inner net realizing a childnet routine; `None` for plain kernels.
pub fn build_childnet(
    layer: &Layer,
    input_shape: &Shape,
    routine: &Routine,
    params: &ParamAssignment,
    scope: String,
) -> Result<Option<Childnet>, GraphError> {
    match routine.imp {
        RoutineImpl::Childnet(ChildnetKind::Winograd) => {
            let tile = params.get("tile_size").copied().unwrap_or(2) as usize;
            winograd_childnet(layer, input_shape, tile, scope).map(Some)
        }
        RoutineImpl::Childnet(ChildnetKind::DenseConv) => dense_conv_childnet(layer, scope).map(Some),
        _ => Ok(None),
    }
}

/// Attach an inner net for every childnet routine × parameter combination of
/// every layer, recursively. Existing entries are replaced.
pub fn expand_childnets(net: &Net, registry: &Registry) -> Result<Net, GraphError> {
    let shapes = infer_shapes(net)?;
    let mut out = net.clone();
    out.childnets.clear();
    for (id, layer) in net.layers.iter().enumerate() {
        let input_shape = match layer.inputs.first() {
            Some(&p) => shapes[p].clone(),
            None => continue,
        };
        for schema in registry.schemas() {
            for routine in registry.lookup_for(layer, schema) {
                for params in routine.grid.enumerate() {
                    let scope = childnet_scope(
                        &qualify(&net.scope, &net.layers[id].name),
                        &routine.descriptor.algorithm,
                        &params,
                    );
                    if let Some(mut child) = build_childnet(layer, &input_shape, routine, &params, scope)? {
                        child.inner = expand_childnets(&child.inner, registry)?;
                        out.childnets.push(ChildnetEntry {
                            layer: layer.name.clone(),
                            descriptor: routine.descriptor.clone(),
                            params,
                            child,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::flatten_childnets;

    fn conv_net(k: usize) -> Net {
        Net::from_defs(
            "c",
            vec![
                LayerDef::new("in", LayerKind::Input { shape: vec![1, 6, 6, 2] }, &[]),
                LayerDef::new("conv", LayerKind::Conv2(Default::default()), &["in"])
                    .weight("kernel", Tensor::zeros(vec![k, k, 2, 3]))
                    .weight("bias", Tensor::zeros(vec![3])),
                LayerDef::new("out", LayerKind::Output, &["conv"]),
            ],
            &["in"],
            &["out"],
        )
        .unwrap()
    }

    #[test]
    fn winograd_childnet_per_tile_size() {
        let net = expand_childnets(&conv_net(3), &Registry::standard()).unwrap();
        assert_eq!(net.childnets.len(), 4);
        let c = &net.childnets[1];
        assert_eq!(c.params["tile_size"], 4);
        assert_eq!(c.child.inner.scope, "conv>wg2[tile_size=4]");
        let types: Vec<_> = c.child.inner.layers.iter().map(|l| l.layer_type().as_str()).collect();
        assert_eq!(types, ["input", "wgenc", "wgconv", "wgdec", "output"]);
        net.validate().unwrap();
        let shapes = infer_shapes(&c.child.inner).unwrap();
        assert_eq!(shapes[3], vec![1, 6, 6, 3]);
        let flat = flatten_childnets(&net);
        assert_eq!(flat.len(), 5);
        assert_eq!(flat.last().unwrap().0, 0);
    }

    #[test]
    fn no_winograd_for_5x5() {
        let net = expand_childnets(&conv_net(5), &Registry::standard()).unwrap();
        assert!(net.childnets.is_empty());
    }

    #[test]
    fn dense_childnet_shapes() {
        let dense = Net::from_defs(
            "d",
            vec![
                LayerDef::new("in", LayerKind::Input { shape: vec![5] }, &[]),
                LayerDef::new("fc", LayerKind::Dense, &["in"])
                    .weight("kernel", Tensor::zeros(vec![5, 3])),
                LayerDef::new("out", LayerKind::Output, &["fc"]),
            ],
            &["in"],
            &["out"],
        )
        .unwrap();
        let net = expand_childnets(&dense, &Registry::standard()).unwrap();
        assert_eq!(net.childnets.len(), 1);
        let inner = &net.childnets[0].child.inner;
        let shapes = infer_shapes(inner).unwrap();
        assert_eq!(shapes[1], vec![1, 1, 1, 5]);
        assert_eq!(shapes[3], vec![3]);
    }
}
