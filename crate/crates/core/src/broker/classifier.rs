use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::exec::Execution;

/// A closed-box model returning raw logits for a batch of flattened inputs.
pub trait Classifier: Send + Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;

    /// One logit vector per input row, in row order.
    fn logits(&self, inputs: ArrayView2<'_, f64>, exec: Execution) -> Result<Vec<Vec<f64>>>;

    fn logits_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(self.logits(view, Execution::Sequential)?.remove(0))
    }
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &str) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite values")))
    }
}

/// `y = W x + b` with `W` of shape `K×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmax {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct LinearFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl LinearSoftmax {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        ensure_dim(weights.nrows(), bias.len())?;
        if weights.nrows() < 2 {
            return Err(Error::InvalidInput("a classifier needs at least two classes".into()));
        }
        if weights.ncols() == 0 {
            return Err(Error::InvalidInput("input dimension must be positive".into()));
        }
        check_finite(weights.iter().copied(), "weights")?;
        check_finite(bias.iter().copied(), "bias")?;
        Ok(LinearSoftmax { weights, bias })
    }

    /// Reads `{"weights": [[..], ..], "bias": [..]}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: LinearFile =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        Self::from_rows(file.weights, file.bias).map_err(|e| Error::malformed(path, e.to_string()))
    }

    pub fn from_rows(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        let d = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("weight rows have different lengths".into()));
        }
        let flat = weights.into_iter().flatten().collect();
        let w = Array2::from_shape_vec((k, d), flat).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::new(w, Array1::from(bias))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = LinearFile {
            weights: self.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
            bias: self.bias.to_vec(),
        };
        fs::write(path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    fn eval(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        (self.weights.dot(&x) + &self.bias).to_vec()
    }
}

impl Classifier for LinearSoftmax {
    fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    fn logits(&self, inputs: ArrayView2<'_, f64>, exec: Execution) -> Result<Vec<Vec<f64>>> {
        ensure_dim(self.input_dim(), inputs.ncols())?;
        Ok(exec.map_range(inputs.nrows(), |i| self.eval(inputs.row(i))))
    }
}

/// The fixed 16-input, 4-class linear model used by the toy campaigns.
/// `W[k][j] = sin(1.7 (k+1)(j+1) + 0.3 k)`, `b = 0`.
pub fn toy_linear_classifier() -> LinearSoftmax {
    let w = Array2::from_shape_fn((4, 16), |(k, j)| {
        (1.7 * ((k + 1) * (j + 1)) as f64 + 0.3 * k as f64).sin()
    });
    LinearSoftmax::new(w, Array1::zeros(4)).expect("toy weights are valid")
}

/// Two-layer perceptron `W2 · max(0, W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyMlp {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpHeader {
    dims: [usize; 3],
}

impl TinyMlp {
    pub fn new(w1: Array2<f64>, b1: Array1<f64>, w2: Array2<f64>, b2: Array1<f64>) -> Result<Self> {
        ensure_dim(w1.nrows(), b1.len())?;
        ensure_dim(w1.nrows(), w2.ncols())?;
        ensure_dim(w2.nrows(), b2.len())?;
        if w2.nrows() < 2 {
            return Err(Error::InvalidInput("a classifier needs at least two classes".into()));
        }
        if w1.ncols() == 0 || w1.nrows() == 0 {
            return Err(Error::InvalidInput("layer sizes must be positive".into()));
        }
        for (arr, name) in [(w1.iter(), "W1"), (w2.iter(), "W2")] {
            check_finite(arr.copied(), name)?;
        }
        check_finite(b1.iter().chain(b2.iter()).copied(), "biases")?;
        Ok(TinyMlp { w1, b1, w2, b2 })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.w1.ncols(), self.w1.nrows(), self.w2.nrows()]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&MlpHeader { dims: self.dims() }).expect("header serializes");
        out.push(b'\n');
        for v in self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or("missing header line")?;
        let header: MlpHeader = serde_json::from_slice(&bytes[..split])
            .map_err(|e| format!("bad header: {e}"))?;
        let [d, h, k] = header.dims;
        let payload = &bytes[split + 1..];
        let expected = d * h + h + h * k + k;
        if payload.len() != 4 * expected {
            return Err(format!(
                "expected {expected} floats for dims {:?}, found {} bytes",
                header.dims,
                payload.len()
            ));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let mut take = |n: usize| floats.by_ref().take(n).collect::<Vec<_>>();
        let w1 = Array2::from_shape_vec((h, d), take(d * h)).map_err(|e| e.to_string())?;
        let b1 = Array1::from(take(h));
        let w2 = Array2::from_shape_vec((k, h), take(h * k)).map_err(|e| e.to_string())?;
        let b2 = Array1::from(take(k));
        TinyMlp::new(w1, b1, w2, b2).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    fn eval(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let hidden = (self.w1.dot(&x) + &self.b1).mapv(|v| v.max(0.0));
        (self.w2.dot(&hidden) + &self.b2).to_vec()
    }
}

/// Loads a perceptron from its weights file: a JSON header line
/// `{"dims":[d,hidden,K]}` followed by little-endian `f32` values for
/// `W1 (hidden×d), b1, W2 (K×hidden), b2`, each row-major.
pub fn load_tiny_mlp(path: impl AsRef<Path>) -> Result<TinyMlp> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TinyMlp::from_bytes(&bytes).map_err(|reason| Error::malformed(path, reason))
}

impl Classifier for TinyMlp {
    fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    fn num_classes(&self) -> usize {
        self.w2.nrows()
    }

    fn logits(&self, inputs: ArrayView2<'_, f64>, exec: Execution) -> Result<Vec<Vec<f64>>> {
        ensure_dim(self.input_dim(), inputs.ncols())?;
        Ok(exec.map_range(inputs.nrows(), |i| self.eval(inputs.row(i))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    #[test]
    fn identity_linear_map() {
        let clf = LinearSoftmax::new(Array::eye(3), Array1::zeros(3)).unwrap();
        assert_eq!(clf.logits_one(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(clf.logits_one(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn rejects_degenerate_models() {
        assert!(LinearSoftmax::new(Array2::zeros((1, 3)), Array1::zeros(1)).is_err());
        assert!(LinearSoftmax::new(array![[f64::NAN, 0.0], [0.0, 0.0]], Array1::zeros(2)).is_err());
        assert!(LinearSoftmax::from_rows(vec![vec![1.0], vec![1.0, 2.0]], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn linear_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lin.json");
        let clf = toy_linear_classifier();
        clf.save(&path).unwrap();
        assert_eq!(LinearSoftmax::load(&path).unwrap(), clf);
    }

    #[test]
    fn zero_mlp_gives_zero_logits() {
        let mlp = TinyMlp::new(Array2::zeros((5, 3)), Array1::zeros(5), Array2::zeros((2, 5)), Array1::zeros(2)).unwrap();
        assert_eq!(mlp.logits_one(&[0.3, 0.9, 0.1]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mlp_matches_hand_evaluation() {
        let mlp = TinyMlp::new(
            array![[1.0, -1.0], [0.5, 0.5]],
            array![0.0, -1.0],
            array![[1.0, 2.0], [-1.0, 0.0]],
            array![0.25, 0.0],
        )
        .unwrap();
        // hidden = relu([0.2, -0.5]) = [0.2, 0]
        let y = mlp.logits_one(&[0.6, 0.4]).unwrap();
        assert!((y[0] - 0.45).abs() < 1e-12);
        assert!((y[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn mlp_bytes_round_trip_and_errors() {
        let mlp = TinyMlp::new(
            array![[1.0, -1.0, 0.5]],
            array![0.25],
            array![[2.0], [-0.5]],
            array![0.0, 1.0],
        )
        .unwrap();
        let bytes = mlp.to_bytes();
        assert_eq!(TinyMlp::from_bytes(&bytes).unwrap(), mlp);
        assert!(TinyMlp::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(TinyMlp::from_bytes(b"{\"dims\":[1,1,2]}").is_err());
        assert!(TinyMlp::from_bytes(b"not json\n").is_err());
    }

    #[test]
    fn parallel_logits_match_sequential() {
        let clf = toy_linear_classifier();
        let inputs = Array2::from_shape_fn((37, 16), |(i, j)| ((i * 7 + j) % 11) as f64 / 10.0);
        assert_eq!(
            clf.logits(inputs.view(), Execution::Parallel).unwrap(),
            clf.logits(inputs.view(), Execution::Sequential).unwrap()
        );
    }
}
