//! Principal-component view of an optimizer path.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Components whose variance is below this fraction of the largest are
/// treated as zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTrajectory {
    /// Coordinates of every point along the first two components.
    pub coords: Vec<[f64; 2]>,
    /// `σ_i² / Σ σ_j²` for every component, in decreasing order.
    pub explained: Vec<f64>,
    /// ℓ2 distance of every centered point to its rank-2 reconstruction.
    pub residuals: Vec<f64>,
}

/// Shifts the path by its final point, mean-centers it and decomposes the
/// resulting `d × L` matrix `M`. The singular triples come from the
/// symmetric eigendecomposition of the smaller of `MᵀM` and `MMᵀ`. Paths of
/// rank below two get a zero second coordinate; a constant path gets
/// `explained = [1, 0, ...]`.
pub fn pca_trajectory(path: &[Vec<f64>]) -> Result<PcaTrajectory> {
    let l = path.len();
    if l < 3 {
        return Err(Error::InvalidInput(format!("PCA needs at least 3 points, got {l}")));
    }
    let d = path[0].len();
    if d == 0 || path.iter().any(|p| p.len() != d) {
        return Err(Error::InvalidInput("path points must share a positive dimension".into()));
    }
    let last = &path[l - 1];
    let mut m = DMatrix::from_fn(d, l, |i, j| path[j][i] - last[i]);
    for mut row in m.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }

    let right = l <= d;
    let gram = if right { m.transpose() * &m } else { &m * m.transpose() };
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let top = lambda[0];

    let total: f64 = lambda.iter().sum();
    let explained = if total > 0.0 {
        lambda.iter().map(|v| v / total).collect()
    } else {
        let mut e = vec![0.0; lambda.len()];
        e[0] = 1.0;
        e
    };

    let mut coords = vec![[0.0; 2]; l];
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for (axis, &k) in order.iter().take(2).enumerate() {
        if !(top > 0.0 && lambda[axis] > RANK_TOLERANCE * top) {
            continue;
        }
        let vector = eig.eigenvectors.column(k);
        let u = if right {
            &m * vector / lambda[axis].sqrt()
        } else {
            vector.into_owned()
        };
        let projection = m.transpose() * &u;
        for (c, p) in coords.iter_mut().zip(projection.iter()) {
            c[axis] = *p;
        }
        basis.push(u);
    }
    let residuals = (0..l)
        .map(|j| {
            let mut r = m.column(j).into_owned();
            for u in &basis {
                let dot = u.dot(&r);
                r.axpy(-dot, u, 1.0);
            }
            r.norm()
        })
        .collect();
    Ok(PcaTrajectory {
        coords,
        explained,
        residuals,
    })
}
