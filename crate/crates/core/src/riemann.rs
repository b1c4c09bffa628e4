//! SPD covariance features, the symmetric log-determinant divergence, its
//! fixed-point mean, and the minimum-distance-to-mean classifier.
//!
//! The divergence used is
//! `δ²(A, B) = log det((A+B)/2) − ½ log det(A) − ½ log det(B)`,
//! and the class mean `G` of `C_1..C_N` solves
//! `G = [ (1/N) Σ ((G + C_i)/2)⁻¹ ]⁻¹`.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, rows, shrink, symmetrize};
use crate::model::Label;
use crate::spatial::{fit_spatial_filter, SpatialFilter};

/// Shrinkage toward the scaled identity applied to every feature.
pub const FEATURE_SHRINKAGE: f64 = 1e-6;

/// Symmetric positive-definite matrix with its cached log-determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    logdet: f64,
}

impl SpdMatrix {
    /// Accepts `m` if it is square, symmetric to within `1e-10` relative to
    /// its largest entry, and Cholesky-factorizable.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!("SPD matrix must be square, got {:?}", m.shape())));
        }
        let scale = m.abs().max().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).abs().max();
        if !(asym <= 1e-10 * scale) {
            return Err(Error::NotPositiveDefinite(format!("matrix not symmetric (asymmetry {asym:e})")));
        }
        let matrix = symmetrize(&m);
        let chol = cholesky(&matrix)?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !logdet.is_finite() {
            return Err(Error::NotPositiveDefinite("log-determinant is not finite".into()));
        }
        Ok(SpdMatrix { matrix, logdet })
    }

    pub fn from_diagonal(values: &[f64]) -> Result<Self> {
        SpdMatrix::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        Ok(symmetrize(&cholesky(&self.matrix)?.inverse()))
    }

    /// `M A Mᵀ`.
    pub fn congruence(&self, m: &DMatrix<f64>) -> Result<SpdMatrix> {
        SpdMatrix::new(symmetrize(&(m * &self.matrix * m.transpose())))
    }

    pub fn scaled(&self, alpha: f64) -> Result<SpdMatrix> {
        SpdMatrix::new(&self.matrix * alpha)
    }
}

impl Serialize for SpdMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        rows::serialize(&self.matrix, s)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = rows::deserialize(d)?;
        SpdMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// `(1/T)·[P; Z][P; Z]ᵀ` with the class prototype `P` stacked above the
    /// filtered epoch `Z`.
    #[default]
    Augmented,
    /// `(1/T)·Z Zᵀ`.
    Plain,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "augmented" => Ok(FeatureMode::Augmented),
            "plain" => Ok(FeatureMode::Plain),
            other => Err(Error::InvalidArgument(format!("unknown feature mode {other:?}"))),
        }
    }
}

/// Covariance feature of one spatially filtered epoch.
pub fn epoch_feature(filtered: &DMatrix<f64>, prototype: Option<&DMatrix<f64>>, mode: FeatureMode) -> Result<SpdMatrix> {
    let t = filtered.ncols() as f64;
    let stacked;
    let z = match mode {
        FeatureMode::Plain => filtered,
        FeatureMode::Augmented => {
            let p = prototype.ok_or_else(|| {
                Error::InvalidArgument("augmented features need a prototype".into())
            })?;
            if p.ncols() != filtered.ncols() {
                return Err(Error::ShapeMismatch(format!(
                    "prototype has {} samples, epoch {}",
                    p.ncols(),
                    filtered.ncols()
                )));
            }
            let (np, nz) = (p.nrows(), filtered.nrows());
            stacked = DMatrix::from_fn(np + nz, filtered.ncols(), |r, c| {
                if r < np {
                    p[(r, c)]
                } else {
                    filtered[(r - np, c)]
                }
            });
            &stacked
        }
    };
    let cov = (z * z.transpose()) / t;
    SpdMatrix::new(symmetrize(&shrink(&cov, FEATURE_SHRINKAGE))).map_err(|e| match e {
        Error::NotPositiveDefinite(msg) => Error::NotPositiveDefinite(format!("degenerate epoch feature: {msg}")),
        other => other,
    })
}

fn check_dims(a: &SpdMatrix, b: &SpdMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("dimensions {} and {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `δ²(A, B)`, clamped at zero against rounding.
pub fn logdet_divergence_sq(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    check_dims(a, b)?;
    let mid = SpdMatrix::new((a.matrix() + b.matrix()) * 0.5)?;
    Ok((mid.logdet() - 0.5 * (a.logdet() + b.logdet())).max(0.0))
}

pub fn logdet_divergence(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    logdet_divergence_sq(a, b).map(f64::sqrt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanOptions {
    pub max_iterations: usize,
    /// Stop once `‖G_{k+1} − G_k‖_F / ‖G_k‖_F` falls below this.
    pub tolerance: f64,
}

impl Default for MeanOptions {
    fn default() -> Self {
        MeanOptions {
            max_iterations: 100,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogdetMean {
    pub mean: SpdMatrix,
    pub iterations: usize,
    /// Relative change of the last step.
    pub residual: f64,
}

/// Fixed-point iteration for the log-det mean, started at the arithmetic mean.
pub fn logdet_mean(matrices: &[SpdMatrix], options: MeanOptions) -> Result<LogdetMean> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::EmptyInput("log-det mean of zero matrices".into()))?;
    if let Some(m) = matrices.iter().find(|m| m.dim() != first.dim()) {
        check_dims(first, m)?;
    }
    let n = matrices.len() as f64;
    let mut g = matrices
        .iter()
        .fold(DMatrix::zeros(first.dim(), first.dim()), |acc, m| acc + m.matrix())
        / n;
    let mut residual = f64::INFINITY;
    for it in 1..=options.max_iterations {
        let mut acc = DMatrix::<f64>::zeros(first.dim(), first.dim());
        for m in matrices {
            let mid = symmetrize(&((&g + m.matrix()) * 0.5));
            acc += cholesky(&mid)?.inverse();
        }
        acc /= n;
        let next = symmetrize(&cholesky(&symmetrize(&acc))?.inverse());
        residual = (&next - &g).norm() / g.norm();
        g = next;
        if residual < options.tolerance {
            return Ok(LogdetMean {
                mean: SpdMatrix::new(g)?,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: options.max_iterations,
        residual,
    })
}

/// Class means under the log-det divergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdmClassifier {
    pub target_mean: SpdMatrix,
    pub nontarget_mean: SpdMatrix,
}

pub fn mdm_fit(features: &[(SpdMatrix, Label)]) -> Result<MdmClassifier> {
    let pick = |label: Label| -> Vec<SpdMatrix> {
        features
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(f, _)| f.clone())
            .collect()
    };
    let (ta, nt) = (pick(Label::Target), pick(Label::NonTarget));
    if ta.is_empty() || nt.is_empty() {
        return Err(Error::EmptyInput(format!(
            "MDM fit needs both classes ({} target, {} nontarget)",
            ta.len(),
            nt.len()
        )));
    }
    Ok(MdmClassifier {
        target_mean: logdet_mean(&ta, MeanOptions::default())?.mean,
        nontarget_mean: logdet_mean(&nt, MeanOptions::default())?.mean,
    })
}

impl MdmClassifier {
    /// `δ(f, G_NT) − δ(f, G_TA)`; positive means closer to the target mean.
    pub fn score(&self, feature: &SpdMatrix) -> Result<f64> {
        Ok(logdet_divergence(feature, &self.nontarget_mean)? - logdet_divergence(feature, &self.target_mean)?)
    }

    /// Target iff the score is strictly positive.
    pub fn classify(&self, feature: &SpdMatrix) -> Result<Label> {
        Ok(Label::from_is_target(self.score(feature)? > 0.0))
    }
}

pub fn mdm_score(model: &MdmClassifier, feature: &SpdMatrix) -> Result<f64> {
    model.score(feature)
}

pub fn mdm_classify(model: &MdmClassifier, feature: &SpdMatrix) -> Result<Label> {
    model.classify(feature)
}

/// Spatial filter, target prototype and class means fitted together on
/// single-trial training epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdmModel {
    pub filter: SpatialFilter,
    #[serde(with = "rows::option")]
    pub prototype: Option<DMatrix<f64>>,
    pub mode: FeatureMode,
    pub classifier: MdmClassifier,
}

impl MdmModel {
    pub fn fit(
        targets: &[&DMatrix<f64>],
        nontargets: &[&DMatrix<f64>],
        n_components: usize,
        mode: FeatureMode,
    ) -> Result<Self> {
        let filter = fit_spatial_filter(targets, nontargets, n_components)?;
        let filtered_ta = targets.iter().map(|x| filter.apply(x)).collect::<Result<Vec<_>>>()?;
        let filtered_nt = nontargets.iter().map(|x| filter.apply(x)).collect::<Result<Vec<_>>>()?;
        let prototype = match mode {
            FeatureMode::Augmented => crate::epochs::mean_of(filtered_ta.iter()),
            FeatureMode::Plain => None,
        };
        let mut features = Vec::with_capacity(filtered_ta.len() + filtered_nt.len());
        for (set, label) in [(&filtered_ta, Label::Target), (&filtered_nt, Label::NonTarget)] {
            for z in set {
                features.push((epoch_feature(z, prototype.as_ref(), mode)?, label));
            }
        }
        Ok(MdmModel {
            classifier: mdm_fit(&features)?,
            filter,
            prototype,
            mode,
        })
    }

    pub fn feature(&self, epoch: &DMatrix<f64>) -> Result<SpdMatrix> {
        epoch_feature(&self.filter.apply(epoch)?, self.prototype.as_ref(), self.mode)
    }

    pub fn score_epoch(&self, epoch: &DMatrix<f64>) -> Result<f64> {
        self.classifier.score(&self.feature(epoch)?)
    }

    pub fn classify_epoch(&self, epoch: &DMatrix<f64>) -> Result<Label> {
        self.classifier.classify(&self.feature(epoch)?)
    }
}
