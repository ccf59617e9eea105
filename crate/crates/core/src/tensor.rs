//! Dense row-major f32 tensors of rank 1 to 5.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 5;

/// A dense tensor. The last index varies fastest.
///
/// Invariants: `1 <= rank <= 5`, every extent is at least 1 and
/// `shape.iter().product() == data.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::InvalidTensor(format!(
            "rank {} outside 1..={MAX_RANK}",
            shape.len()
        )));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::InvalidTensor(format!("extent of axis {axis} is zero")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} holds {len} values but {} were supplied",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f32) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data under a new shape of equal size.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Leading-axis slice `[start, end)` as a new tensor.
    pub fn slice_outer(&self, start: usize, end: usize) -> Result<Self> {
        let outer = self.shape[0];
        if start >= end || end > outer {
            return Err(Error::InvalidTensor(format!(
                "outer slice {start}..{end} of extent {outer}"
            )));
        }
        let inner = self.len() / outer;
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Self::new(&shape, self.data[start * inner..end * inner].to_vec())
    }

    /// Concatenates tensors along the leading axis. Trailing extents must agree.
    pub fn concat_outer(parts: &[&Tensor]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("concat_outer"))?;
        let inner_shape = &first.shape[1..];
        let mut outer = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for part in parts {
            if &part.shape[1..] != inner_shape {
                return Err(Error::InvalidTensor(format!(
                    "cannot concatenate {:?} with {:?}",
                    part.shape, first.shape
                )));
            }
            outer += part.shape[0];
            data.extend_from_slice(&part.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = outer;
        Self::new(&shape, data)
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::InvalidTensor(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::zeros(&[]).is_err());
        assert!(Tensor::zeros(&[1, 2, 3, 4, 5, 6]).is_err());
        assert!(Tensor::zeros(&[3, 0]).is_err());
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
        assert_eq!(Tensor::zeros(&[2, 3]).unwrap().len(), 6);
    }

    #[test]
    fn slice_and_concat_are_inverse() {
        let t = Tensor::from_fn(&[4, 3], |i| i as f32).unwrap();
        let a = t.slice_outer(0, 1).unwrap();
        let b = t.slice_outer(1, 4).unwrap();
        assert_eq!(b.shape(), &[3, 3]);
        assert_eq!(Tensor::concat_outer(&[&a, &b]).unwrap(), t);
        assert!(t.slice_outer(2, 2).is_err());
    }
}
