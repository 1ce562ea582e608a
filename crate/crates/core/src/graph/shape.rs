use super::{topological_order, GraphError, Layer, LayerKind, Net, Padding};
use crate::kernels::winograd::{tile_count, WinogradTransform};
use crate::tensor::{numel, Shape};

fn mismatch(layer: &Layer, detail: impl Into<String>) -> GraphError {
    GraphError::ShapeMismatch {
        layer: layer.name.clone(),
        detail: detail.into(),
    }
}

fn need_weight<'a>(layer: &'a Layer, name: &str) -> Result<&'a [usize], GraphError> {
    layer
        .weight(name)
        .map(|w| w.shape())
        .ok_or_else(|| GraphError::MissingWeight {
            layer: layer.name.clone(),
            weight: name.to_string(),
        })
}

fn check_bias(layer: &Layer, cout: usize) -> Result<(), GraphError> {
    if let Some(b) = layer.weight("bias") {
        if b.shape() != [cout] {
            return Err(mismatch(
                layer,
                format!("bias shape {:?}, expected [{cout}]", b.shape()),
            ));
        }
    }
    Ok(())
}

fn rank4<'a>(layer: &Layer, s: &'a Shape) -> Result<(usize, usize, usize, usize), GraphError> {
    match s.as_slice() {
        &[n, h, w, c] => Ok((n, h, w, c)),
        _ => Err(mismatch(layer, format!("expected a rank-4 NHWC input, got {s:?}"))),
    }
}

/// Output extent of a windowed op along one axis.
pub(crate) fn window_out(
    size: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Option<usize> {
    match padding {
        Padding::Same => Some(size.div_ceil(stride)),
        Padding::Valid => {
            let span = (k - 1) * dilation + 1;
            (size >= span).then(|| (size - span) / stride + 1)
        }
    }
}

/// Infer the output shape of one layer from its input shapes.
pub fn layer_output_shape(layer: &Layer, ins: &[Shape]) -> Result<Shape, GraphError> {
    let one = || -> Result<&Shape, GraphError> {
        match ins {
            [s] => Ok(s),
            _ => Err(mismatch(layer, format!("expected 1 input, got {}", ins.len()))),
        }
    };
    match &layer.kind {
        LayerKind::Input { shape } => Ok(shape.clone()),
        LayerKind::AuxInput | LayerKind::AuxOutput => Ok(Vec::new()),
        LayerKind::Output | LayerKind::Relu | LayerKind::Softmax | LayerKind::Adapt { .. } => {
            Ok(one()?.clone())
        }
        LayerKind::Flatten => Ok(vec![numel(one()?)]),
        LayerKind::Reshape { shape } => {
            let s = one()?;
            if numel(s) != numel(shape) {
                return Err(mismatch(layer, format!("cannot reshape {s:?} to {shape:?}")));
            }
            Ok(shape.clone())
        }
        LayerKind::Add => {
            if ins.len() < 2 {
                return Err(mismatch(layer, "add needs at least two inputs"));
            }
            if ins.iter().any(|s| s != &ins[0]) {
                return Err(mismatch(layer, format!("operand shapes differ: {ins:?}")));
            }
            Ok(ins[0].clone())
        }
        LayerKind::Conv2(p) => {
            let (n, h, w, c) = rank4(layer, one()?)?;
            let k = need_weight(layer, "kernel")?;
            let &[kh, kw, cin, cout] = k else {
                return Err(mismatch(layer, format!("kernel must be rank 4, got {k:?}")));
            };
            if cin != c {
                return Err(mismatch(
                    layer,
                    format!("kernel expects {cin} input channels, blob has {c}"),
                ));
            }
            if p.strides.0 == 0 || p.strides.1 == 0 || p.dilations.0 == 0 || p.dilations.1 == 0 {
                return Err(mismatch(layer, "strides and dilations must be >= 1"));
            }
            check_bias(layer, cout)?;
            let oh = window_out(h, kh, p.strides.0, p.dilations.0, p.padding);
            let ow = window_out(w, kw, p.strides.1, p.dilations.1, p.padding);
            match (oh, ow) {
                (Some(oh), Some(ow)) => Ok(vec![n, oh, ow, cout]),
                _ => Err(mismatch(layer, "kernel larger than input")),
            }
        }
        LayerKind::Dense => {
            let s = one()?;
            let k = need_weight(layer, "kernel")?;
            let (&[c], &[kc, kk]) = (s.as_slice(), k) else {
                return Err(mismatch(
                    layer,
                    format!("dense expects rank-1 input and [C,K] kernel, got {s:?} / {k:?}"),
                ));
            };
            if c != kc {
                return Err(mismatch(layer, format!("kernel expects {kc} inputs, blob has {c}")));
            }
            check_bias(layer, kk)?;
            Ok(vec![kk])
        }
        LayerKind::MaxPool2(p) => {
            let (n, h, w, c) = rank4(layer, one()?)?;
            if p.pool.0 == 0 || p.pool.1 == 0 || p.strides.0 == 0 || p.strides.1 == 0 {
                return Err(mismatch(layer, "pool size and strides must be >= 1"));
            }
            let oh = window_out(h, p.pool.0, p.strides.0, 1, Padding::Valid);
            let ow = window_out(w, p.pool.1, p.strides.1, 1, Padding::Valid);
            match (oh, ow) {
                (Some(oh), Some(ow)) => Ok(vec![n, oh, ow, c]),
                _ => Err(mismatch(layer, "pool window larger than input")),
            }
        }
        LayerKind::WgEnc { tile, out_h, out_w } => {
            let (n, h, w, c) = rank4(layer, one()?)?;
            if (h, w) != (*out_h, *out_w) {
                return Err(mismatch(layer, "winograd encoder spatial size differs from input"));
            }
            let alpha = WinogradTransform::alpha_for(*tile);
            Ok(vec![alpha * alpha, n * tile_count(h, w, *tile), c])
        }
        LayerKind::WgConv { tile } => {
            let s = one()?;
            let k = need_weight(layer, "kernel")?;
            let alpha = WinogradTransform::alpha_for(*tile);
            match (s.as_slice(), k) {
                (&[a2, t, c], &[3, 3, cin, cout]) if a2 == alpha * alpha && cin == c => {
                    Ok(vec![a2, t, cout])
                }
                _ => Err(mismatch(
                    layer,
                    format!("winograd product got {s:?} with kernel {k:?}"),
                )),
            }
        }
        LayerKind::WgDec { tile, out_h, out_w } => {
            let s = one()?;
            let alpha = WinogradTransform::alpha_for(*tile);
            let tiles = tile_count(*out_h, *out_w, *tile);
            match s.as_slice() {
                &[a2, t, k] if a2 == alpha * alpha && tiles > 0 && t % tiles == 0 => {
                    check_bias(layer, k)?;
                    Ok(vec![t / tiles, *out_h, *out_w, k])
                }
                _ => Err(mismatch(layer, format!("winograd decoder got {s:?}"))),
            }
        }
    }
}

/// Output shape of every layer, indexed by layer id.
pub fn infer_shapes(net: &Net) -> Result<Vec<Shape>, GraphError> {
    let order = topological_order(net)?;
    let mut shapes: Vec<Option<Shape>> = vec![None; net.len()];
    for id in order {
        let layer = net.layer(id);
        let ins: Vec<Shape> = layer
            .inputs
            .iter()
            .filter(|&&p| !net.layer(p).layer_type().is_aux())
            .map(|&p| shapes[p].clone().expect("producer precedes consumer"))
            .collect();
        let ins = if matches!(layer.kind, LayerKind::Input { .. }) {
            Vec::new()
        } else {
            ins
        };
        shapes[id] = Some(layer_output_shape(layer, &ins)?);
    }
    Ok(shapes.into_iter().map(|s| s.unwrap()).collect())
}
