use std::collections::HashMap;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Rows of a table that received gradient since the last reset.
#[derive(Debug, Clone, Default)]
struct TouchedRows {
    rows: Vec<u32>,
    marked: Vec<bool>,
}

impl TouchedRows {
    fn new(n: usize) -> Self {
        Self {
            rows: Vec::new(),
            marked: vec![false; n],
        }
    }

    fn mark(&mut self, row: usize) {
        if !self.marked[row] {
            self.marked[row] = true;
            self.rows.push(row as u32);
        }
    }

    fn clear(&mut self) {
        for &r in &self.rows {
            self.marked[r as usize] = false;
        }
        self.rows.clear();
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
    touched: Option<TouchedRows>,
}

impl<T: Scalar> Param<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Tensor<T> {
        &mut self.grad
    }

    /// Row-sparse parameters (embedding tables) track which rows have
    /// nonzero gradient so that resets and updates skip the rest.
    pub fn is_sparse(&self) -> bool {
        self.touched.is_some()
    }

    /// Rows with (potentially) nonzero gradient; all rows for dense params.
    pub fn active_rows(&self) -> Vec<usize> {
        match &self.touched {
            Some(t) => t.rows.iter().map(|&r| r as usize).collect(),
            None => (0..self.value.rows()).collect(),
        }
    }

    /// Adds `g` into gradient row `row`.
    pub fn accumulate_row(&mut self, row: usize, g: &[T]) {
        if let Some(t) = &mut self.touched {
            t.mark(row);
        }
        for (dst, &v) in self.grad.row_mut(row).iter_mut().zip(g) {
            *dst += v;
        }
    }

    pub fn zero_grad(&mut self) {
        match &mut self.touched {
            Some(t) => {
                for &r in &t.rows {
                    self.grad.row_mut(r as usize).fill(T::zero());
                }
                t.clear();
            }
            None => self.grad.fill(T::zero()),
        }
    }

    /// Multiplies the gradient by `factor`.
    pub fn scale_grad(&mut self, factor: T) {
        for r in self.active_rows() {
            self.grad.row_mut(r).iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// `value -= lr * grad`, over active rows only.
    pub fn sgd_update(&mut self, lr: T) {
        let cols = self.value.cols();
        let values = self.value.data_mut();
        let grads = self.grad.data();
        match &self.touched {
            Some(t) => {
                for &r in &t.rows {
                    let span = r as usize * cols..(r as usize + 1) * cols;
                    for (v, &g) in values[span.clone()].iter_mut().zip(&grads[span]) {
                        *v -= lr * g;
                    }
                }
            }
            None => {
                for (v, &g) in values.iter_mut().zip(grads) {
                    *v -= lr * g;
                }
            }
        }
    }
}

/// Named parameter tensors with per-entry gradient accumulators.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, sparse: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        let grad = Tensor::zeros(value.shape().to_vec());
        let touched = sparse.then(|| TouchedRows::new(value.rows()));
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
            touched,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    /// Adds a table whose gradient is accumulated row-sparsely.
    pub fn add_sparse(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Param::zero_grad);
    }

    /// Converts values to another precision; gradients start at zero and
    /// sparsity flags are preserved.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.insert(&p.name, p.value.cast(), p.is_sparse())
                .expect("names are unique");
        }
        out
    }
}
