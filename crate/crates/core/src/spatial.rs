//! GEVD spatial filter: directions that maximize the energy of the averaged
//! target response relative to the overall signal energy.
//!
//! With `C` the mean epoch covariance and `C_TA` the covariance of the
//! averaged target epoch, the decomposition finds an invertible `U` with
//! `U C Uᵀ = I` and `U C_TA Uᵀ = Λ` diagonal. The filter keeps the rows of
//! `U` belonging to the largest generalized eigenvalues.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inv_sqrt_spd, off_diagonal_norm, rows, shrink, sym_eigen_desc, symmetrize};

/// Shrinkage applied to `C` before the decomposition.
pub const COVARIANCE_SHRINKAGE: f64 = 1e-6;
pub const WHITENING_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_COMPONENTS: usize = 4;

fn check_shapes(epochs: &[&DMatrix<f64>]) -> Result<(usize, usize)> {
    let first = epochs
        .first()
        .ok_or_else(|| Error::EmptyInput("no epochs for covariance".into()))?;
    let shape = first.shape();
    if let Some(e) = epochs.iter().find(|e| e.shape() != shape) {
        return Err(Error::ShapeMismatch(format!(
            "epoch shapes {shape:?} and {:?}",
            e.shape()
        )));
    }
    Ok(shape)
}

/// `C = 1/(K+L) Σ X Xᵀ` over all target and nontarget epochs, no centering.
pub fn mean_covariance(ta: &[&DMatrix<f64>], nt: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let all: Vec<&DMatrix<f64>> = ta.iter().chain(nt).copied().collect();
    let (n_ch, _) = check_shapes(&all)?;
    let mut c = DMatrix::<f64>::zeros(n_ch, n_ch);
    for x in &all {
        c.gemm(1.0, x, &x.transpose(), 1.0);
    }
    Ok(symmetrize(&(c / all.len() as f64)))
}

/// `C_TA = X̄ X̄ᵀ` with `X̄` the mean target epoch.
pub fn evoked_covariance(ta: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    check_shapes(ta)?;
    let mean = crate::epochs::mean_of(ta.iter().copied()).expect("nonempty");
    Ok(symmetrize(&(&mean * mean.transpose())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gevd {
    /// Rows are generalized eigenvectors, ordered like `eigenvalues`.
    pub u: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// `‖U C Uᵀ − I‖_F`.
    pub whitening_residual: f64,
    /// Off-diagonal Frobenius norm of `U C_TA Uᵀ`.
    pub diagonalization_residual: f64,
}

/// Generalized eigendecomposition by whitening with `C^{-1/2}` and a
/// symmetric eigendecomposition of the whitened `C_TA`. Each row of `U` is
/// signed so that its largest-magnitude entry is positive.
pub fn gevd(c: &DMatrix<f64>, c_ta: &DMatrix<f64>) -> Result<Gevd> {
    if !c.is_square() || c.shape() != c_ta.shape() {
        return Err(Error::ShapeMismatch(format!(
            "C is {:?}, C_TA is {:?}",
            c.shape(),
            c_ta.shape()
        )));
    }
    let c = symmetrize(c);
    let c_ta = symmetrize(c_ta);
    let whiten = inv_sqrt_spd(&c)?;
    let m = &whiten * &c_ta * &whiten;
    let (eigenvalues, q) = sym_eigen_desc(&m);
    let mut u = q.transpose() * &whiten;
    for mut row in u.row_iter_mut() {
        let (mut best, mut arg) = (0.0f64, 0);
        for (j, v) in row.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                arg = j;
            }
        }
        if row[arg] < 0.0 {
            row.neg_mut();
        }
    }

    let n = c.nrows();
    let whitening_residual = (&u * &c * u.transpose() - DMatrix::<f64>::identity(n, n)).norm();
    let diagonalization_residual = off_diagonal_norm(&(&u * &c_ta * u.transpose()));
    let scale = eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if !(whitening_residual < WHITENING_TOLERANCE) || !(diagonalization_residual < WHITENING_TOLERANCE * scale) {
        return Err(Error::Numerical(format!(
            "GEVD residuals too large: whitening {whitening_residual:e}, off-diagonal {diagonalization_residual:e}"
        )));
    }
    Ok(Gevd {
        u,
        eigenvalues,
        whitening_residual,
        diagonalization_residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialFilter {
    /// `n_components × n_channels`.
    #[serde(with = "rows")]
    pub weights: DMatrix<f64>,
    /// Generalized eigenvalues of the kept components, descending.
    pub eigenvalues: Vec<f64>,
    pub n_components: usize,
}

impl SpatialFilter {
    pub fn n_channels(&self) -> usize {
        self.weights.ncols()
    }

    /// `W · X` for one epoch.
    pub fn apply(&self, epoch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if epoch.nrows() != self.weights.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "filter expects {} channels, epoch has {}",
                self.weights.ncols(),
                epoch.nrows()
            )));
        }
        Ok(&self.weights * epoch)
    }
}

pub fn fit_spatial_filter(
    ta: &[&DMatrix<f64>],
    nt: &[&DMatrix<f64>],
    n_components: usize,
) -> Result<SpatialFilter> {
    let c = mean_covariance(ta, nt)?;
    let c_ta = evoked_covariance(ta)?;
    let n_channels = c.nrows();
    if n_components == 0 || n_components > n_channels {
        return Err(Error::InvalidArgument(format!(
            "n_components must be in 1..={n_channels}, got {n_components}"
        )));
    }
    let decomposition = gevd(&shrink(&c, COVARIANCE_SHRINKAGE), &c_ta)?;
    Ok(SpatialFilter {
        weights: decomposition.u.rows(0, n_components).into_owned(),
        eigenvalues: decomposition.eigenvalues[..n_components].to_vec(),
        n_components,
    })
}

pub fn apply_filter(filter: &SpatialFilter, epoch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    filter.apply(epoch)
}
