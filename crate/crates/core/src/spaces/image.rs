use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `C×H×W` image with entries in `[0, 1]`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidInput(
                "image entries must lie in [0, 1]".into(),
            ));
        }
        if data.is_empty() {
            return Err(Error::InvalidInput("image has an empty dimension".into()));
        }
        Ok(ImageTensor { data })
    }

    pub fn from_flat(shape: [usize; 3], values: Vec<f64>) -> Result<Self> {
        let data = Array3::from_shape_vec(shape, values)
            .map_err(|e| Error::InvalidInput(format!("bad image shape: {e}")))?;
        Self::new(data)
    }

    pub fn filled(shape: [usize; 3], value: f64) -> Result<Self> {
        Self::new(Array3::from_elem(shape, value))
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn array(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    /// Flattened values in channel-major, row-major order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.data.iter().copied().collect()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let (shape, values) = read_tensor_file(path.as_ref())?;
        Self::from_flat(shape, values)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_tensor_file(path.as_ref(), self.shape(), self.data.iter().copied())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    shape: [usize; 3],
}

/// Reads the tensor file format: one UTF-8 JSON header line
/// `{"shape":[C,H,W]}` followed by `C·H·W` little-endian `f32` values.
/// Values are not range-checked here, so perturbations can use it too.
pub fn read_tensor_file(path: &Path) -> Result<([usize; 3], Vec<f64>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| Error::io(path, e))?;
    let header: TensorHeader = serde_json::from_str(header.trim_end())
        .map_err(|e| Error::malformed(path, format!("bad header: {e}")))?;
    let count: usize = header.shape.iter().product();
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * count {
        return Err(Error::malformed(
            path,
            format!("expected {} payload bytes, found {}", 4 * count, bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((header.shape, values))
}

pub fn write_tensor_file(
    path: &Path,
    shape: [usize; 3],
    values: impl IntoIterator<Item = f64>,
) -> Result<()> {
    let mut out = serde_json::to_vec(&TensorHeader { shape })?;
    out.push(b'\n');
    let mut count = 0;
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
        count += 1;
    }
    if count != shape.iter().product::<usize>() {
        return Err(Error::InvalidInput(format!(
            "tensor has {count} values but shape {shape:?}"
        )));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}
