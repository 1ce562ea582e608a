//! Tensor files: `{"shape", "data"}` JSON with base64 data, or raw
//! little-endian float32 with the shape in a `<file>.shape` JSON sidecar.

use std::path::{Path, PathBuf};

use super::RuntimeError;
use crate::graph::model_io::{decode_f32_le, TensorJson};
use crate::tensor::{numel, Shape, Tensor};

fn io_err(path: &Path, e: impl std::fmt::Display) -> RuntimeError {
    RuntimeError::Io(format!("{}: {e}", path.display()))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".shape");
    PathBuf::from(s)
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

pub fn tensor_to_json(t: &Tensor<f32>) -> String {
    serde_json::to_string(&TensorJson::encode(t)).expect("tensor serializes")
}

pub fn tensor_from_json(text: &str) -> Result<Tensor<f32>, RuntimeError> {
    let j: TensorJson = serde_json::from_str(text).map_err(|e| RuntimeError::ShapeMismatch(format!("bad tensor file: {e}")))?;
    Ok(j.decode()?)
}

pub fn load_tensor(path: &Path) -> Result<Tensor<f32>, RuntimeError> {
    if is_json(path) {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        return tensor_from_json(&text);
    }
    let side = sidecar(path);
    let shape_text = std::fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
    let shape: Shape =
        serde_json::from_str(&shape_text).map_err(|e| RuntimeError::ShapeMismatch(format!("{}: {e}", side.display())))?;
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let data = decode_f32_le(&bytes)?;
    if data.len() != numel(&shape) {
        return Err(RuntimeError::ShapeMismatch(format!(
            "{} holds {} values but its shape is {shape:?}",
            path.display(),
            data.len()
        )));
    }
    Ok(Tensor::new(shape, data)?)
}

pub fn save_tensor(t: &Tensor<f32>, path: &Path) -> Result<(), RuntimeError> {
    if is_json(path) {
        return std::fs::write(path, tensor_to_json(t)).map_err(|e| io_err(path, e));
    }
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    let side = sidecar(path);
    std::fs::write(&side, serde_json::to_string(t.shape()).expect("shape serializes")).map_err(|e| io_err(&side, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_formats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.25, 0.0, 1e-3, -7.0]).unwrap();
        for name in ["x.json", "x.bin"] {
            let p = dir.path().join(name);
            save_tensor(&t, &p).unwrap();
            assert_eq!(load_tensor(&p).unwrap(), t);
        }
        assert!(dir.path().join("x.bin.shape").exists());
    }

    #[test]
    fn raw_file_with_wrong_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, [0u8; 8]).unwrap();
        std::fs::write(sidecar(&p), "[3]").unwrap();
        assert!(matches!(load_tensor(&p), Err(RuntimeError::ShapeMismatch(_))));
    }
}
