//! PCA projections for compressing embeddings (768/1792 → 512/256/128).
//!
//! The covariance uses the 1/(n−1) normalization. Component rows are the
//! top-k eigenvectors ordered by descending eigenvalue, each with its
//! largest-magnitude entry made positive so a refit on the same data is
//! bit-identical.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::linalg::symmetric_eigen;
use crate::vector::{EmbeddingVector, VectorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PcaError {
    #[error("need at least 2 rows to fit, got {0}")]
    TooFewRows(usize),
    #[error("target dimension {target} must be in 1..={max}")]
    InvalidTargetDim { target: usize, max: usize },
    #[error("all rows are identical; covariance is zero")]
    DegenerateData,
    #[error("no rows supplied")]
    EmptyData,
    #[error("inconsistent model: {0}")]
    InvalidModel(&'static str),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: EmbeddingVector,
    /// Row-major `target_dim × source_dim`.
    components: Vec<f32>,
    explained_variance: Vec<f32>,
    target_dim: usize,
}

impl PcaModel {
    /// Fits a `target_dim` projection to `data`.
    ///
    /// Identical rows are rejected with [`PcaError::DegenerateData`] rather
    /// than producing an arbitrary basis for a zero covariance.
    pub fn fit(data: &[EmbeddingVector], target_dim: usize) -> Result<Self, PcaError> {
        let n = data.len();
        if n < 2 {
            return Err(PcaError::TooFewRows(n));
        }
        let d = data[0].dim();
        for row in data {
            if row.dim() != d {
                return Err(VectorError::DimensionMismatch {
                    expected: d,
                    actual: row.dim(),
                }
                .into());
            }
        }
        let max = n.min(d);
        if target_dim == 0 || target_dim > max {
            return Err(PcaError::InvalidTargetDim {
                target: target_dim,
                max,
            });
        }

        let mut mean = vec![0f64; d];
        for row in data {
            for (m, &x) in mean.iter_mut().zip(row.iter()) {
                *m += x as f64;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }

        // upper triangle of Xcᵀ Xc
        let mut cov = vec![0f64; d * d];
        let mut centered = vec![0f64; d];
        for row in data {
            for ((c, &x), &m) in centered.iter_mut().zip(row.iter()).zip(&mean) {
                *c = x as f64 - m;
            }
            for i in 0..d {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                let out = &mut cov[i * d + i..(i + 1) * d];
                for (o, &cj) in out.iter_mut().zip(&centered[i..]) {
                    *o += ci * cj;
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / denom;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        if cov.iter().all(|&c| c == 0.0) {
            return Err(PcaError::DegenerateData);
        }

        let eig = symmetric_eigen(&cov, d);
        let mut components = Vec::with_capacity(target_dim * d);
        let mut explained_variance = Vec::with_capacity(target_dim);
        for j in (d - target_dim..d).rev() {
            let mut row = eig.vector(j);
            let pivot = row
                .iter()
                .enumerate()
                .fold((0usize, 0f64), |best, (i, &x)| {
                    if x.abs() > best.1 {
                        (i, x.abs())
                    } else {
                        best
                    }
                })
                .0;
            if row[pivot] < 0.0 {
                for x in &mut row {
                    *x = -*x;
                }
            }
            components.extend(row.iter().map(|&x| x as f32));
            explained_variance.push(eig.values[j].max(0.0) as f32);
        }

        let mean = EmbeddingVector::new(mean.iter().map(|&m| m as f32).collect())?;
        Ok(Self {
            mean,
            components,
            explained_variance,
            target_dim,
        })
    }

    /// Reassembles a model from stored parts, checking shapes.
    pub fn from_parts(
        mean: EmbeddingVector,
        components: Vec<f32>,
        explained_variance: Vec<f32>,
    ) -> Result<Self, PcaError> {
        let target_dim = explained_variance.len();
        if target_dim == 0 || target_dim > mean.dim() {
            return Err(PcaError::InvalidModel("target dimension out of range"));
        }
        if components.len() != target_dim * mean.dim() {
            return Err(PcaError::InvalidModel("component matrix shape"));
        }
        if components.iter().chain(&explained_variance).any(|x| !x.is_finite()) {
            return Err(PcaError::InvalidModel("non-finite parameter"));
        }
        Ok(Self {
            mean,
            components,
            explained_variance,
            target_dim,
        })
    }

    pub fn source_dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn mean(&self) -> &EmbeddingVector {
        &self.mean
    }

    pub fn components(&self) -> &[f32] {
        &self.components
    }

    pub fn component(&self, row: usize) -> &[f32] {
        let d = self.source_dim();
        &self.components[row * d..(row + 1) * d]
    }

    pub fn explained_variance(&self) -> &[f32] {
        &self.explained_variance
    }

    /// `components · (v − mean)`
    pub fn transform(&self, v: &EmbeddingVector) -> Result<EmbeddingVector, PcaError> {
        self.check_source(v)?;
        let centered: Vec<f64> = v
            .iter()
            .zip(self.mean.iter())
            .map(|(&x, &m)| x as f64 - m as f64)
            .collect();
        let out = (0..self.target_dim)
            .map(|r| {
                self.component(r)
                    .iter()
                    .zip(&centered)
                    .map(|(&c, &x)| c as f64 * x)
                    .sum::<f64>() as f32
            })
            .collect();
        Ok(EmbeddingVector::new(out)?)
    }

    /// `mean + componentsᵀ · z`
    pub fn inverse_transform(&self, z: &EmbeddingVector) -> Result<EmbeddingVector, PcaError> {
        if z.dim() != self.target_dim {
            return Err(VectorError::DimensionMismatch {
                expected: self.target_dim,
                actual: z.dim(),
            }
            .into());
        }
        let mut out: Vec<f64> = self.mean.iter().map(|&m| m as f64).collect();
        for (r, &zr) in z.iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(self.component(r)) {
                *o += c as f64 * zr as f64;
            }
        }
        Ok(EmbeddingVector::new(out.into_iter().map(|x| x as f32).collect())?)
    }

    /// Mean over rows of the squared distance between a row and its
    /// projection round trip.
    pub fn reconstruction_error(&self, data: &[EmbeddingVector]) -> Result<f64, PcaError> {
        if data.is_empty() {
            return Err(PcaError::EmptyData);
        }
        let mut total = 0f64;
        for row in data {
            let back = self.inverse_transform(&self.transform(row)?)?;
            total += crate::vector::squared_l2(row, &back);
        }
        Ok(total / data.len() as f64)
    }

    fn check_source(&self, v: &EmbeddingVector) -> Result<(), PcaError> {
        if v.dim() != self.source_dim() {
            return Err(VectorError::DimensionMismatch {
                expected: self.source_dim(),
                actual: v.dim(),
            }
            .into());
        }
        Ok(())
    }
}
