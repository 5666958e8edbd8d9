//! Latent attack spaces and their application maps `T(s; x)`.
//!
//! A latent point `s` is turned into a queried image by the space's
//! application map followed by the budget projection and the `[0, 1]` clip;
//! see [`AttackSpace::query_image`].

pub mod dct;
pub mod image;

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{Budget, LatentSet, Norm};
use crate::error::{ensure_dim, Error, Result};
use crate::numerics::ball_clamp;
use crate::rng::rng_from_seed;

pub use dct::{dct_forward, dct_inverse, dct_place, Dct2};
pub use image::ImageTensor;

/// Which parameterization the latent vector uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceKind {
    /// `s` is an additive image perturbation.
    Direct,
    /// Low-resolution perturbation upsampled by pixel tiling.
    LowRes { height: usize, width: usize },
    /// `count` pixels, each `(color ∈ [0,1]^C, position ∈ [0,1]^2)`.
    Pixel { count: usize },
    /// The lowest `modes × modes` DCT coefficients per channel.
    Dct { modes: usize },
    /// `count` squares, each `(side, row, column) ∈ [0,1]^3`.
    Square { count: usize, stripes_seed: u64 },
}

/// A latent space bound to an image shape and a norm budget.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpace {
    kind: SpaceKind,
    image_shape: [usize; 3],
    budget: Budget,
    dct: Option<Dct2>,
}

/// Per-run randomness of a space, drawn once when a run starts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpaceContext {
    pub square: Option<SquareContext>,
}

/// Fixed square colors `ζ ∈ {−ε, ε}^{P×C}` and the vertical-stripes image.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareContext {
    pub zeta: Array2<f64>,
    pub stripes: Array3<f64>,
    pub epsilon: f64,
}

impl SquareContext {
    pub fn sample<R: Rng + ?Sized>(
        count: usize,
        shape: [usize; 3],
        epsilon: f64,
        stripes_seed: u64,
        rng: &mut R,
    ) -> Self {
        let zeta = Array2::from_shape_fn((count, shape[0]), |_| random_sign(rng) * epsilon);
        SquareContext {
            zeta,
            stripes: stripes_image(shape, epsilon, stripes_seed),
            epsilon,
        }
    }
}

fn random_sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// One `{−ε, ε}` draw per (channel, column), constant down each column.
pub fn stripes_image(shape: [usize; 3], epsilon: f64, seed: u64) -> Array3<f64> {
    let [c, h, w] = shape;
    let mut rng = rng_from_seed(seed);
    let columns = Array2::from_shape_fn((c, w), |_| random_sign(&mut rng) * epsilon);
    Array3::from_shape_fn((c, h, w), |(ci, _, wi)| columns[[ci, wi]])
}

impl AttackSpace {
    pub fn new(kind: SpaceKind, image_shape: [usize; 3], budget: Budget) -> Result<Self> {
        let [c, h, w] = image_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidConfig(format!("empty image shape {image_shape:?}")));
        }
        let mut dct = None;
        match kind {
            SpaceKind::Direct => {}
            SpaceKind::LowRes { height, width } => {
                if height == 0 || width == 0 || height > h || width > w {
                    return Err(Error::InvalidConfig(format!(
                        "low-resolution grid {height}x{width} must fit inside {h}x{w}"
                    )));
                }
            }
            SpaceKind::Pixel { count } | SpaceKind::Square { count, .. } => {
                if count == 0 {
                    return Err(Error::InvalidConfig("need at least one pixel or square".into()));
                }
            }
            SpaceKind::Dct { modes } => {
                if modes == 0 || modes > h.min(w) {
                    return Err(Error::InvalidConfig(format!(
                        "{modes} DCT modes do not fit a {h}x{w} image"
                    )));
                }
                dct = Some(Dct2::new(h, w));
            }
        }
        if matches!(kind, SpaceKind::Square { .. }) && budget.norm != Norm::Linf {
            return Err(Error::InvalidConfig("square attacks use an l-infinity budget".into()));
        }
        Ok(AttackSpace {
            kind,
            image_shape,
            budget,
            dct,
        })
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn latent_dim(&self) -> usize {
        let [c, h, w] = self.image_shape;
        match self.kind {
            SpaceKind::Direct => c * h * w,
            SpaceKind::LowRes { height, width } => c * height * width,
            SpaceKind::Pixel { count } => count * (c + 2),
            SpaceKind::Dct { modes } => c * modes * modes,
            SpaceKind::Square { count, .. } => 3 * count,
        }
    }

    /// Feasible latent set used for initialization and the projection step.
    pub fn latent_set(&self) -> LatentSet {
        match self.kind {
            SpaceKind::Direct | SpaceKind::LowRes { .. } | SpaceKind::Dct { .. } => LatentSet::Ball {
                norm: self.budget.norm,
                radius: self.budget.epsilon,
            },
            SpaceKind::Pixel { .. } | SpaceKind::Square { .. } => LatentSet::Box {
                lower: 0.0,
                upper: 1.0,
            },
        }
    }

    /// Shape of the latent vector when it is itself an image-like tensor.
    pub fn latent_image_shape(&self) -> Option<[usize; 3]> {
        let [c, ..] = self.image_shape;
        match self.kind {
            SpaceKind::Direct => Some(self.image_shape),
            SpaceKind::LowRes { height, width } => Some([c, height, width]),
            _ => None,
        }
    }

    pub fn context<R: Rng + ?Sized>(&self, rng: &mut R) -> SpaceContext {
        match self.kind {
            SpaceKind::Square { count, stripes_seed } => SpaceContext {
                square: Some(SquareContext::sample(
                    count,
                    self.image_shape,
                    self.budget.epsilon,
                    stripes_seed,
                    rng,
                )),
            },
            _ => SpaceContext::default(),
        }
    }

    /// The application map `T(s; x)`.
    pub fn apply(&self, s: ArrayView1<'_, f64>, x: &ImageTensor, ctx: &SpaceContext) -> Result<ImageTensor> {
        ensure_dim(self.latent_dim(), s.len())?;
        if x.shape() != self.image_shape {
            return Err(Error::InvalidInput(format!(
                "image shape {:?} does not match space shape {:?}",
                x.shape(),
                self.image_shape
            )));
        }
        match self.kind {
            SpaceKind::Direct => apply_direct(s, x),
            SpaceKind::LowRes { height, width } => apply_lowres(s, (height, width), x),
            SpaceKind::Pixel { count } => apply_pixels(s, count, x),
            SpaceKind::Dct { modes } => {
                apply_dct(s, modes, x, self.dct.as_ref().expect("plan built for DCT spaces"))
            }
            SpaceKind::Square { .. } => {
                let sq = ctx.square.as_ref().ok_or_else(|| {
                    Error::InvalidInput("square space needs a sampled context".into())
                })?;
                apply_squares(s, x, sq)
            }
        }
    }

    /// The image actually sent to the classifier: box latents are clamped into
    /// their box, then `R(Π_B(T(s; x)))` with `B` the budget ball around `x`.
    pub fn query_image(&self, s: ArrayView1<'_, f64>, x: &ImageTensor, ctx: &SpaceContext) -> Result<ImageTensor> {
        let image = match self.latent_set() {
            set @ LatentSet::Box { .. } if !set.contains(s) => {
                let mut clamped = s.to_owned();
                set.project(clamped.view_mut());
                self.apply(clamped.view(), x, ctx)?
            }
            _ => self.apply(s, x, ctx)?,
        };
        let shape = image.shape();
        let mut flat = Array1::from(image.to_flat());
        let center = Array1::from(x.to_flat());
        self.budget.project(flat.view_mut(), center.view());
        let projected = Array3::from_shape_vec(shape, flat.to_vec()).expect("shape preserved");
        clip_r(projected)
    }

    /// Latent point that leaves the image untouched (for the square space
    /// only the stripes remain).
    pub fn neutral_latent(&self) -> Array1<f64> {
        match self.kind {
            SpaceKind::Pixel { .. } => {
                let [c, ..] = self.image_shape;
                let mut s = Array1::from_elem(self.latent_dim(), 0.5);
                for chunk in s.as_slice_mut().expect("contiguous").chunks_mut(c + 2) {
                    chunk[..c].fill(0.0);
                }
                s
            }
            _ => self.latent_set().neutral(self.latent_dim()),
        }
    }
}

/// `R(z)`: componentwise clamp to `[0, 1]`.
pub fn clip_r(z: Array3<f64>) -> Result<ImageTensor> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("cannot clip a non-finite entry".into()));
    }
    ImageTensor::new(z.mapv(|v| v.clamp(0.0, 1.0)))
}

fn add_and_clip(x: &ImageTensor, perturbation: &Array3<f64>) -> Result<ImageTensor> {
    if perturbation.shape() != x.array().shape() {
        return Err(Error::InvalidInput("perturbation shape mismatch".into()));
    }
    clip_r(x.array() + perturbation)
}

/// `T(s; x) = R(x + s)`.
pub fn apply_direct(s: ArrayView1<'_, f64>, x: &ImageTensor) -> Result<ImageTensor> {
    ensure_dim(x.len(), s.len())?;
    let delta = s
        .to_owned()
        .into_shape_with_order(x.array().raw_dim())
        .expect("length checked");
    add_and_clip(x, &delta)
}

/// Nearest-neighbour upsampling: pixel `(h, w)` reads cell
/// `(⌊h·H_low/H⌋, ⌊w·W_low/W⌋)`.
pub fn upsample_nearest(s: ArrayView1<'_, f64>, channels: usize, low: (usize, usize), full: (usize, usize)) -> Result<Array3<f64>> {
    let (hl, wl) = low;
    let (h, w) = full;
    if hl > h || wl > w || hl == 0 || wl == 0 {
        return Err(Error::InvalidConfig(format!(
            "low-resolution grid {hl}x{wl} must fit inside {h}x{w}"
        )));
    }
    ensure_dim(channels * hl * wl, s.len())?;
    Ok(Array3::from_shape_fn((channels, h, w), |(c, i, j)| {
        s[(c * hl + i * hl / h) * wl + j * wl / w]
    }))
}

/// `T(s; x) = R(x + I(s))` with pixel tiling `I`.
pub fn apply_lowres(s: ArrayView1<'_, f64>, low: (usize, usize), x: &ImageTensor) -> Result<ImageTensor> {
    let [c, h, w] = x.shape();
    let delta = upsample_nearest(s, c, low, (h, w))?;
    add_and_clip(x, &delta)
}

/// `γ(π) = (⌊π₁ H⌋, ⌊π₂ W⌋)`, 0-based, with `π = 1` mapped to the last index.
pub fn pixel_gamma(pos: (f64, f64), height: usize, width: usize) -> Result<(usize, usize)> {
    let (p1, p2) = pos;
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) {
        return Err(Error::InvalidInput(format!("pixel position {pos:?} outside [0,1]^2")));
    }
    let row = ((p1 * height as f64).floor() as usize).min(height - 1);
    let col = ((p2 * width as f64).floor() as usize).min(width - 1);
    Ok((row, col))
}

/// Adds each tuple's color at its pixel (colliding pixels accumulate), then clips.
pub fn apply_pixels(s: ArrayView1<'_, f64>, count: usize, x: &ImageTensor) -> Result<ImageTensor> {
    let [c, h, w] = x.shape();
    if s.len() != count * (c + 2) {
        return Err(Error::InvalidInput(format!(
            "expected {count} tuples of length {}, got {} values",
            c + 2,
            s.len()
        )));
    }
    let mut out = x.array().clone();
    for p in 0..count {
        let tuple = s.slice(ndarray::s![p * (c + 2)..(p + 1) * (c + 2)]);
        let (row, col) = pixel_gamma((tuple[c], tuple[c + 1]), h, w)?;
        for ch in 0..c {
            out[[ch, row, col]] += tuple[ch];
        }
    }
    clip_r(out)
}

/// `T(s; x) = R(D⁻¹(P(s)) + x)`.
pub fn apply_dct(s: ArrayView1<'_, f64>, modes: usize, x: &ImageTensor, plan: &Dct2) -> Result<ImageTensor> {
    let placed = dct_place(s, x.shape(), modes)?;
    add_and_clip(x, &plan.inverse(&placed))
}

/// Rows (or columns) whose pixel centers lie within `radius` of `center`,
/// always including the pixel that contains `center`.
fn square_span(center: f64, radius: f64, n: usize) -> (usize, usize) {
    let nf = n as f64;
    let own = ((center * nf).floor().max(0.0) as usize).min(n - 1);
    let inside = |i: usize| ((i as f64 + 0.5) / nf - center).abs() <= radius;
    let mut lo = own;
    while lo > 0 && inside(lo - 1) {
        lo -= 1;
    }
    let mut hi = own;
    while hi + 1 < n && inside(hi + 1) {
        hi += 1;
    }
    (lo, hi)
}

/// `T(s; x) = R(x + C(Σ_p β_p(s_p) + I))` with `C` the clamp to `[−ε, ε]`.
pub fn apply_squares(s: ArrayView1<'_, f64>, x: &ImageTensor, ctx: &SquareContext) -> Result<ImageTensor> {
    let [c, h, w] = x.shape();
    let count = ctx.zeta.nrows();
    if s.len() != 3 * count || s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "expected {count} finite (side, row, column) triples, got {} values",
            s.len()
        )));
    }
    if ctx.zeta.ncols() != c || ctx.stripes.shape() != [c, h, w] {
        return Err(Error::InvalidInput("square context does not match image".into()));
    }
    let mut delta = ctx.stripes.clone();
    for p in 0..count {
        let (side, r_row, r_col) = (s[3 * p], s[3 * p + 1], s[3 * p + 2]);
        let (r0, r1) = square_span(r_row, side, h);
        let (c0, c1) = square_span(r_col, side, w);
        for ch in 0..c {
            let value = ctx.zeta[[p, ch]];
            delta
                .slice_mut(ndarray::s![ch, r0..=r1, c0..=c1])
                .mapv_inplace(|v| v + value);
        }
    }
    let eps = ctx.epsilon;
    let mut out = x.array().clone();
    out.zip_mut_with(&delta, |xv, &d| {
        let center = *xv;
        *xv = ball_clamp(center + d.clamp(-eps, eps), center, eps).clamp(0.0, 1.0);
    });
    ImageTensor::new(out)
}

#[cfg(test)]
mod tests;
