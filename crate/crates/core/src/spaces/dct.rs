//! Orthonormal separable 2D DCT-II, applied per channel.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, ArrayView1, ArrayViewMut2, Axis};

use crate::error::{Error, Result};

/// Orthonormal DCT-II matrix: `M[k, i] = a_k cos(π (2i + 1) k / 2n)` with
/// `a_0 = sqrt(1/n)` and `a_k = sqrt(2/n)` otherwise.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    let nf = n as f64;
    Array2::from_shape_fn((n, n), |(k, i)| {
        let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        scale * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    })
}

/// Precomputed transform for `H×W` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dct2 {
    rows: Array2<f64>,
    cols: Array2<f64>,
}

impl Dct2 {
    pub fn new(height: usize, width: usize) -> Self {
        Dct2 {
            rows: dct_matrix(height),
            cols: dct_matrix(width),
        }
    }

    pub fn height(&self) -> usize {
        self.rows.nrows()
    }

    pub fn width(&self) -> usize {
        self.cols.nrows()
    }

    /// `D(x)`: per channel `R · X · Cᵀ`.
    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        self.per_channel(x, |ch| self.rows.dot(&ch).dot(&self.cols.t()))
    }

    /// `D⁻¹(y)`: per channel `Rᵀ · Y · C`.
    pub fn inverse(&self, y: &Array3<f64>) -> Array3<f64> {
        self.per_channel(y, |ch| self.rows.t().dot(&ch).dot(&self.cols))
    }

    fn per_channel<F>(&self, input: &Array3<f64>, f: F) -> Array3<f64>
    where
        F: Fn(ndarray::ArrayView2<'_, f64>) -> Array2<f64>,
    {
        assert_eq!(input.shape()[1], self.height());
        assert_eq!(input.shape()[2], self.width());
        let mut out = Array3::zeros(input.raw_dim());
        for (src, mut dst) in input.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            dst.assign(&f(src));
        }
        out
    }

    /// Writes `D⁻¹` of the coefficient-space unit vector at `(kh, kw)` into a
    /// single channel: the outer product of two basis rows.
    pub fn basis_image_into(&self, kh: usize, kw: usize, scale: f64, mut out: ArrayViewMut2<'_, f64>) {
        let r = self.rows.row(kh);
        let c = self.cols.row(kw);
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let ri = scale * r[i];
            row.zip_mut_with(&c, |o, &cv| *o = ri * cv);
        }
    }
}

pub fn dct_forward(x: &Array3<f64>) -> Array3<f64> {
    let s = x.shape();
    Dct2::new(s[1], s[2]).forward(x)
}

pub fn dct_inverse(y: &Array3<f64>) -> Array3<f64> {
    let s = y.shape();
    Dct2::new(s[1], s[2]).inverse(y)
}

/// Places `C·m·m` coefficients into the top-left `m×m` corner of each
/// `H×W` channel, zero elsewhere.
pub fn dct_place(s: ArrayView1<'_, f64>, shape: [usize; 3], modes: usize) -> Result<Array3<f64>> {
    let [c, h, w] = shape;
    if modes == 0 || modes > h.min(w) {
        return Err(Error::InvalidConfig(format!(
            "{modes} DCT modes do not fit a {h}x{w} image"
        )));
    }
    if s.len() != c * modes * modes {
        return Err(Error::DimensionMismatch {
            expected: c * modes * modes,
            actual: s.len(),
        });
    }
    let coeffs = s
        .to_owned()
        .into_shape_with_order((c, modes, modes))
        .expect("length checked above");
    let mut out = Array3::zeros((c, h, w));
    out.slice_mut(s![.., ..modes, ..modes]).assign(&coeffs);
    Ok(out)
}
