use crate::error::{AdError, Result};
use crate::scalar::Real;
use crate::tape::Gradients;
use crate::tensor::Tensor;

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Parameters kept in lexicographic name order.
///
/// The position of a parameter in that order is its index; tapes refer to
/// parameters by index so recording never copies a weight matrix.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<Parameter<T>>,
    /// (parameter name, row) pairs held at zero after every update.
    pinned_rows: Vec<(String, usize)>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), pinned_rows: Vec::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        match self.entries.binary_search_by(|p| p.name.as_str().cmp(name)) {
            Ok(_) => Err(AdError::DuplicateParameter(name.to_string())),
            Err(pos) => {
                let tensor = if tensor.requires_grad() { tensor } else { tensor.with_grad() };
                self.entries.insert(pos, Parameter { name: name.to_string(), tensor });
                Ok(())
            }
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.binary_search_by(|p| p.name.as_str().cmp(name)).ok()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index_of(name)
            .map(|i| &self.entries[i].tensor)
            .ok_or_else(|| AdError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index_of(name) {
            Some(i) => Ok(&mut self.entries[i].tensor),
            None => Err(AdError::UnknownParameter(name.to_string())),
        }
    }

    pub fn by_index(&self, idx: usize) -> &Parameter<T> {
        &self.entries[idx]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|p| p.name.as_str()).collect()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.tensor.zero_grad();
        }
    }

    /// Adds the parameter gradients of a finished backward pass.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (idx, g) in grads.param_grads() {
            let entry = self
                .entries
                .get_mut(idx)
                .ok_or_else(|| AdError::UnknownParameter(format!("#{idx}")))?;
            entry.tensor.accumulate_grad(g)?;
        }
        Ok(())
    }

    /// Global L2 norm over every gradient, accumulated in f64.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: T) {
        for p in &mut self.entries {
            if let Some(g) = p.tensor.grad_mut() {
                g.iter_mut().for_each(|v| *v = *v * factor);
            }
        }
    }

    /// Keeps `row` of a matrix parameter at zero; applied immediately and by
    /// [`enforce_pinned`](Self::enforce_pinned).
    pub fn pin_zero_row(&mut self, name: &str, row: usize) -> Result<()> {
        let t = self.get_mut(name)?;
        let (rows, cols) = t.rows_cols();
        if row >= rows {
            return Err(AdError::IndexOutOfRange { id: row, size: rows });
        }
        t.data_mut()[row * cols..(row + 1) * cols].iter_mut().for_each(|v| *v = T::zero());
        if !self.pinned_rows.iter().any(|(n, r)| n == name && *r == row) {
            self.pinned_rows.push((name.to_string(), row));
        }
        Ok(())
    }

    pub fn pinned_rows(&self) -> &[(String, usize)] {
        &self.pinned_rows
    }

    pub fn enforce_pinned(&mut self) {
        let pinned = self.pinned_rows.clone();
        for (name, row) in pinned {
            if let Ok(t) = self.get_mut(&name) {
                let (_, cols) = t.rows_cols();
                t.data_mut()[row * cols..(row + 1) * cols].iter_mut().for_each(|v| *v = T::zero());
                if let Some(g) = t.grad_mut() {
                    g[row * cols..(row + 1) * cols].iter_mut().for_each(|v| *v = T::zero());
                }
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|p| Parameter { name: p.name.clone(), tensor: p.tensor.cast() })
                .collect(),
            pinned_rows: self.pinned_rows.clone(),
        }
    }

    /// True when every value buffer matches `other` bit for bit.
    pub fn bit_identical(&self, other: &ParamStore<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.tensor.shape() == b.tensor.shape()
                    && a.tensor
                        .data()
                        .iter()
                        .zip(b.tensor.data())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}
