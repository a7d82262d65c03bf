//! Named parameter registry and flat parameter vectors.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Which part of the model a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Encoder parameters shared by every task.
    Shared,
    /// Head parameters owned by a single task.
    Task(usize),
    /// Parameters of the task-weighting model.
    Weighting,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered `(name, offset, shape)` table describing a flat vector.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
    len: usize,
}

impl PartialEq for ParamLayout {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl ParamLayout {
    fn from_entries(entries: Vec<ParamEntry>) -> Self {
        let by_name = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), i))
            .collect();
        let len = entries.last().map_or(0, |e| e.offset + e.len());
        Self {
            entries,
            by_name,
            len,
        }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.index_of(name).map(|i| &self.entries[i])
    }

    /// Number of values in the given group.
    pub fn group_len(&self, group: ParamGroup) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .map(ParamEntry::len)
            .sum()
    }
}

/// Collects parameters until [`ParamRegistry::freeze`]; later registrations fail.
#[derive(Debug, Default)]
pub struct ParamRegistry {
    entries: Vec<ParamEntry>,
    values: Vec<f64>,
    frozen: bool,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        group: ParamGroup,
        init: Vec<f64>,
    ) -> Result<()> {
        let name = name.into();
        if self.frozen {
            return Err(Error::usage(format!(
                "cannot register `{name}`: parameter registry is frozen"
            )));
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::config(format!("parameter `{name}` registered twice")));
        }
        let n: usize = shape.iter().product();
        if init.len() != n {
            return Err(Error::config(format!(
                "parameter `{name}` with shape {shape:?} needs {n} values, got {}",
                init.len()
            )));
        }
        if let Some(i) = init.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric("register", format!("`{name}`[{i}] is not finite")));
        }
        self.entries.push(ParamEntry {
            name,
            offset: self.values.len(),
            shape: shape.to_vec(),
            group,
        });
        self.values.extend(init);
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Fixes the layout and returns the initial parameter values.
    pub fn freeze(&mut self) -> ParamVector {
        self.frozen = true;
        ParamVector {
            layout: Arc::new(ParamLayout::from_entries(self.entries.clone())),
            values: self.values.clone(),
        }
    }
}

/// Flat parameter (or gradient) values together with their layout.
#[derive(Clone, Debug)]
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
    pub fn from_layout(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if layout.len() != values.len() {
            return Err(Error::usage(format!(
                "layout expects {} values, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros_like(other: &ParamVector) -> Self {
        Self {
            layout: other.layout.clone(),
            values: vec![0.0; other.values.len()],
        }
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &ParamVector, op: &str) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::usage(format!("{op}: parameter layouts differ")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        let e = self.entry(name)?;
        Ok(&self.values[e.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let r = self.entry(name)?.range();
        Ok(&mut self.values[r])
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let e = self.entry(name)?;
        Tensor::new(e.shape.clone(), self.values[e.range()].to_vec())
    }

    pub fn set(&mut self, name: &str, t: &Tensor) -> Result<()> {
        let e = self.entry(name)?.clone();
        if e.shape != t.shape() {
            return Err(Error::usage(format!(
                "`{name}` has shape {:?}, got {:?}",
                e.shape,
                t.shape()
            )));
        }
        self.values[e.range()].copy_from_slice(t.data());
        Ok(())
    }

    fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.layout
            .entry(name)
            .ok_or_else(|| Error::usage(format!("unknown parameter `{name}`")))
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other, "dot")?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(other, "sub")?;
        Ok(self.zip(other, |a, b| a - b))
    }

    pub fn scale(&self, s: f64) -> ParamVector {
        ParamVector {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += a · x`.
    pub fn axpy(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        self.check_layout(x, "axpy")?;
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
        Ok(())
    }

    fn zip(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> ParamVector {
        ParamVector {
            layout: self.layout.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Sub-vector holding only the entries accepted by `keep`, with a compacted layout.
    pub fn restrict(&self, keep: impl Fn(&ParamEntry) -> bool) -> ParamVector {
        let mut entries = Vec::new();
        let mut values = Vec::new();
        for e in self.layout.entries() {
            if keep(e) {
                entries.push(ParamEntry {
                    offset: values.len(),
                    ..e.clone()
                });
                values.extend_from_slice(&self.values[e.range()]);
            }
        }
        ParamVector {
            layout: Arc::new(ParamLayout::from_entries(entries)),
            values,
        }
    }

    pub fn restrict_group(&self, group: ParamGroup) -> ParamVector {
        self.restrict(|e| e.group == group)
    }

    /// Copies every entry of `part` into the same-named entry of `self`.
    pub fn overwrite_from(&mut self, part: &ParamVector) -> Result<()> {
        for e in part.layout.entries() {
            let dst = self.entry(&e.name)?.clone();
            if dst.shape != e.shape {
                return Err(Error::usage(format!(
                    "`{}` has shape {:?} here but {:?} in source",
                    e.name, dst.shape, e.shape
                )));
            }
            self.values[dst.range()].copy_from_slice(&part.values[e.range()]);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
