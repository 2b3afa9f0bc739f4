//! Sample container shared by fitters, estimators and the harness.

use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// An ordered collection of i.i.d. samples, optionally paired with
/// per-sample contexts.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Matrix,
    contexts: Option<Matrix>,
}

impl Dataset {
    pub fn new(samples: Matrix) -> Self {
        Self {
            samples,
            contexts: None,
        }
    }

    pub fn with_contexts(samples: Matrix, contexts: Matrix) -> Result<Self> {
        if samples.rows() != contexts.rows() {
            return Err(Error::Dimension(format!(
                "{} samples but {} contexts",
                samples.rows(),
                contexts.rows()
            )));
        }
        Ok(Self {
            samples,
            contexts: Some(contexts),
        })
    }

    /// Builds a one-dimensional dataset from scalar samples.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Ok(Self::new(Matrix::new(values.len(), 1, values.to_vec())?))
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim_xi(&self) -> usize {
        self.samples.cols()
    }

    pub fn dim_z(&self) -> Option<usize> {
        self.contexts.as_ref().map(Matrix::cols)
    }

    pub fn xi(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    pub fn z(&self, i: usize) -> Option<&[f64]> {
        self.contexts.as_ref().map(|c| c.row(i))
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn contexts(&self) -> Option<&Matrix> {
        self.contexts.as_ref()
    }

    /// Column `j` of the sample matrix as an owned vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.samples[(i, j)]).collect()
    }

    /// Scalar view of a one-dimensional dataset.
    pub fn scalars(&self) -> Result<Vec<f64>> {
        if self.dim_xi() != 1 {
            return Err(Error::Dimension(format!(
                "expected one-dimensional samples, got {}",
                self.dim_xi()
            )));
        }
        Ok(self.column(0))
    }

    /// New dataset restricted to the given sample indices, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let samples = Matrix::from_fn(indices.len(), self.dim_xi(), |i, j| {
            self.samples[(indices[i], j)]
        });
        let contexts = self.contexts.as_ref().map(|c| {
            Matrix::from_fn(indices.len(), c.cols(), |i, j| c[(indices[i], j)])
        });
        Dataset { samples, contexts }
    }

    /// Complement subset: all samples except the given index.
    pub fn leave_one_out(&self, skip: usize) -> Dataset {
        let indices: Vec<usize> = (0..self.len()).filter(|&i| i != skip).collect();
        self.subset(&indices)
    }
}
