use serde::{Deserialize, Serialize};

use super::AutodiffError;

/// Dense row-major array of `f64`.
///
/// Gradient bookkeeping does not live here: a tensor placed on a [`Tape`]
/// becomes a node that may require gradients, and the tape owns the
/// gradient buffers.
///
/// [`Tape`]: super::Tape
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, AutodiffError> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(AutodiffError::Shape {
                op: "tensor",
                left: shape,
                right: vec![values.len()],
            });
        }
        Ok(Self { shape, values })
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            values: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![v; n],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
        }
    }

    /// Builds a `rows × cols` matrix from row-major values.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(
            rows * cols,
            values.len(),
            "matrix: {rows}x{cols} != {}",
            values.len()
        );
        Self {
            shape: vec![rows, cols],
            values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(
            self.values.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.values[0]
    }

    /// Rows and columns when viewed as a matrix; a vector is one row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => {
                let c = *s.last().unwrap();
                (self.values.len() / c.max(1), c)
            }
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, AutodiffError> {
        let n: usize = shape.iter().product();
        if n != self.values.len() {
            return Err(AutodiffError::Shape {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Splits a `[B, T, D]` tensor into `T` matrices of shape `[B, D]`.
    pub fn time_steps(&self) -> Result<Vec<Tensor>, AutodiffError> {
        let [b, t, d] = self.shape[..] else {
            return Err(AutodiffError::Shape {
                op: "time_steps",
                left: self.shape.clone(),
                right: vec![0, 0, 0],
            });
        };
        Ok((0..t)
            .map(|ti| {
                let mut vals = Vec::with_capacity(b * d);
                for bi in 0..b {
                    let off = (bi * t + ti) * d;
                    vals.extend_from_slice(&self.values[off..off + d]);
                }
                Tensor::matrix(b, d, vals)
            })
            .collect())
    }

    /// Stacks `T` matrices of shape `[B, D]` into `[B, T, D]`.
    pub fn stack_time(steps: &[Tensor]) -> Result<Tensor, AutodiffError> {
        let Some(first) = steps.first() else {
            return Err(AutodiffError::EmptySequence);
        };
        let (b, d) = first.dims2();
        let t = steps.len();
        let mut vals = vec![0.0; b * t * d];
        for (ti, s) in steps.iter().enumerate() {
            if s.dims2() != (b, d) {
                return Err(AutodiffError::Shape {
                    op: "stack_time",
                    left: first.shape.clone(),
                    right: s.shape.clone(),
                });
            }
            for bi in 0..b {
                let off = (bi * t + ti) * d;
                vals[off..off + d].copy_from_slice(&s.values[bi * d..(bi + 1) * d]);
            }
        }
        Tensor::new(vec![b, t, d], vals)
    }
}
