//! Row-major 2-D tensor. Everything in this project is a batch of rows, so a
//! dedicated rank-2 type keeps shape handling honest without rank generics.
//! Scalars are (1,1), vectors are (1,d).

use rand::Rng;

use super::real::Real;
use crate::error::{CospaError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<R> {
    rows: usize,
    cols: usize,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![R::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<R>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CospaError::Shape(format!(
                "tensor {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_rows(rows_data: &[Vec<R>]) -> Result<Self> {
        let rows = rows_data.len();
        if rows == 0 {
            return Err(CospaError::Shape("tensor needs at least one row".into()));
        }
        let cols = rows_data[0].len();
        let mut data = Vec::with_capacity(rows * cols);
        for r in rows_data {
            if r.len() != cols {
                return Err(CospaError::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn scalar(v: R) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| R::from_f64(lo + (hi - lo) * rng.random::<f64>()))
            .collect();
        Tensor { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, r: usize, c: usize) -> R {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: R) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[R] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[R] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn item(&self) -> R {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret as a different 2-D shape with the same element count.
    pub fn reshaped(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(CospaError::Shape(format!(
                "cannot reshape {} values to {}x{}",
                self.data.len(),
                rows,
                cols
            )));
        }
        self.rows = rows;
        self.cols = cols;
        Ok(self)
    }

    pub fn transposed(&self) -> Tensor<R> {
        let mut out = vec![R::zero(); self.data.len()];
        super::kernels::transpose(&self.data, self.rows, self.cols, &mut out);
        Tensor { rows: self.cols, cols: self.rows, data: out }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.to_f64c()).collect(),
        }
    }
}
