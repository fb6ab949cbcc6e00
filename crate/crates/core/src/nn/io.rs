//! Named f32 tensors on disk in the safetensors format.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use safetensors::{Dtype, SafeTensors};

use crate::{Error, Result};

pub type TensorMap = BTreeMap<String, ArrayD<f32>>;

pub fn save_tensors(path: &Path, tensors: &TensorMap, metadata: Option<HashMap<String, String>>) -> Result<()> {
    let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = tensors
        .iter()
        .map(|(k, v)| {
            let data = v.iter().flat_map(|x| x.to_le_bytes()).collect();
            (k.clone(), data, v.shape().to_vec())
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(k, data, shape)| {
            safetensors::tensor::TensorView::new(Dtype::F32, shape.clone(), data)
                .map(|v| (k.as_str(), v))
                .map_err(|e| Error::Checkpoint(format!("{k}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = safetensors::serialize(views, metadata).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Every tensor in the file (converted to f32) plus the free-form metadata.
pub fn load_tensors(path: &Path) -> Result<(TensorMap, HashMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: safetensors::SafeTensorError| Error::Checkpoint(format!("{}: {e}", path.display()));
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(bad)?;
    let st = SafeTensors::deserialize(&bytes).map_err(bad)?;
    let mut out = TensorMap::new();
    for (name, view) in st.tensors() {
        let data = view.data();
        let values: Vec<f32> = match view.dtype() {
            Dtype::F32 => data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::F64 => data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
                .collect(),
            other => {
                return Err(Error::Checkpoint(format!(
                    "{}: tensor {name} has unsupported dtype {other:?}",
                    path.display()
                )))
            }
        };
        let arr = ArrayD::from_shape_vec(IxDyn(view.shape()), values)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        out.insert(name, arr);
    }
    Ok((out, meta.metadata().clone().unwrap_or_default()))
}
