//! Flat parameter vectors with a named block layout.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("no parameter block named {0:?}")]
    UnknownBlock(String),
    #[error("cannot average an empty list of parameter vectors")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered named blocks packed back to back.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block and returns its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.len;
        let block = ParamBlock { name: name.into(), shape: shape.to_vec(), offset };
        self.len += block.len();
        self.blocks.push(block);
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Result<&ParamBlock, ParamError> {
        self.blocks.iter().find(|b| b.name == name).ok_or_else(|| ParamError::UnknownBlock(name.to_string()))
    }
}

/// A named tensor as produced by [`ParamVector::unflatten`].
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ParamVector {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.values == other.values
    }
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self, ParamError> {
        if values.len() != layout.len() {
            return Err(ParamError::Length { expected: layout.len(), got: values.len() });
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
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

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn block(&self, name: &str) -> Result<&[f64], ParamError> {
        let b = self.layout.block(name)?;
        Ok(&self.values[b.offset..b.offset + b.len()])
    }

    pub fn block_mut(&mut self, name: &str) -> Result<&mut [f64], ParamError> {
        let b = self.layout.block(name)?.clone();
        Ok(&mut self.values[b.offset..b.offset + b.len()])
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &ParamVector) -> Result<(), ParamError> {
        if !self.same_layout(x) {
            return Err(ParamError::LayoutMismatch);
        }
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    /// Overwrites `self` with `other` (hard target sync).
    pub fn copy_from(&mut self, other: &ParamVector) -> Result<(), ParamError> {
        if !self.same_layout(other) {
            return Err(ParamError::LayoutMismatch);
        }
        self.values.copy_from_slice(&other.values);
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn unflatten(&self) -> Vec<NamedTensor> {
        self.layout
            .blocks()
            .iter()
            .map(|b| NamedTensor {
                name: b.name.clone(),
                shape: b.shape.clone(),
                values: self.values[b.offset..b.offset + b.len()].to_vec(),
            })
            .collect()
    }

    /// Rebuilds a vector from tensors in layout order.
    pub fn flatten(layout: Arc<ParamLayout>, tensors: &[NamedTensor]) -> Result<Self, ParamError> {
        if tensors.len() != layout.blocks().len() {
            return Err(ParamError::LayoutMismatch);
        }
        let mut values = Vec::with_capacity(layout.len());
        for (t, b) in tensors.iter().zip(layout.blocks()) {
            if t.name != b.name || t.shape != b.shape || t.values.len() != b.len() {
                return Err(ParamError::LayoutMismatch);
            }
            values.extend_from_slice(&t.values);
        }
        Self::from_values(layout, values)
    }
}

/// Element-wise mean of vectors sharing one layout.
pub fn average(vectors: &[&ParamVector]) -> Result<ParamVector, ParamError> {
    let first = vectors.first().ok_or(ParamError::Empty)?;
    if vectors.len() == 1 {
        return Ok((*first).clone());
    }
    let mut out = ParamVector::zeros(first.layout.clone());
    for v in vectors {
        out.axpy(1.0, v)?;
    }
    out.scale(1.0 / vectors.len() as f64);
    Ok(out)
}
