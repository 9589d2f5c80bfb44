//! Flat parameter views: layouts, scoped extraction and loading.

use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use serde::{Deserialize, Serialize};

/// Which slice of the layout an operation touches. Policy and value index
/// sets are disjoint and their union covers the full layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamScope {
    PolicyOnly,
    ValueOnly,
    All,
}

/// Scope a single tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorScope {
    Policy,
    Value,
}

impl TensorScope {
    pub fn included_in(self, scope: ParamScope) -> bool {
        match scope {
            ParamScope::All => true,
            ParamScope::PolicyOnly => self == TensorScope::Policy,
            ParamScope::ValueOnly => self == TensorScope::Value,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayoutEntry {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub scope: TensorScope,
    pub offset: usize,
}

/// Fixed, documented ordering of all trainable scalars of a model.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    tag: String,
    entries: Vec<LayoutEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new(tag: String, specs: &[(&'static str, Vec<usize>, TensorScope)]) -> Self {
        let mut entries = Vec::with_capacity(specs.len());
        let mut offset = 0;
        for (name, shape, scope) in specs {
            let numel: usize = shape.iter().product();
            entries.push(LayoutEntry { name, shape: shape.clone(), scope: *scope, offset });
            offset += numel;
        }
        ParamLayout { tag, entries, total: offset }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    /// Flat indices covered by the given scope, in layout order.
    pub fn scope_indices(&self, scope: ParamScope) -> Vec<usize> {
        let mut idx = Vec::new();
        for e in &self.entries {
            if e.scope.included_in(scope) {
                let numel: usize = e.shape.iter().product();
                idx.extend(e.offset..e.offset + numel);
            }
        }
        idx
    }

    pub fn check_tag(&self, other: &str) -> Result<()> {
        if self.tag != other {
            return Err(Error::LayoutMismatch { expected: self.tag.clone(), got: other.to_string() });
        }
        Ok(())
    }
}

/// Ordered array of all trainable scalars plus the layout tag identifying
/// the architecture it came from. The unit of EMA/reset arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub layout_tag: String,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout_tag: impl Into<String>, values: Vec<f64>) -> Self {
        ParamVector { layout_tag: layout_tag.into(), values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_compatible(&self, other: &ParamVector) -> Result<()> {
        if self.layout_tag != other.layout_tag || self.values.len() != other.values.len() {
            return Err(Error::LayoutMismatch {
                expected: format!("{} ({} values)", self.layout_tag, self.values.len()),
                got: format!("{} ({} values)", other.layout_tag, other.values.len()),
            });
        }
        Ok(())
    }
}

/// Concatenate tensors (in layout order) into a flat vector.
pub fn flatten(layout: &ParamLayout, tensors: &[Tensor]) -> ParamVector {
    debug_assert_eq!(layout.entries.len(), tensors.len());
    let mut values = Vec::with_capacity(layout.total);
    for t in tensors {
        values.extend_from_slice(t.data());
    }
    ParamVector::new(layout.tag.clone(), values)
}

/// Write `source` entries into `tensors` for every layout entry within
/// `scope`; out-of-scope tensors are untouched.
pub fn load_scoped(
    layout: &ParamLayout,
    tensors: &mut [Tensor],
    source: &ParamVector,
    scope: ParamScope,
) -> Result<()> {
    layout.check_tag(&source.layout_tag)?;
    if source.values.len() != layout.total {
        return Err(Error::LayoutMismatch {
            expected: format!("{} values", layout.total),
            got: format!("{} values", source.values.len()),
        });
    }
    for (entry, tensor) in layout.entries.iter().zip(tensors.iter_mut()) {
        if !entry.scope.included_in(scope) {
            continue;
        }
        let numel: usize = entry.shape.iter().product();
        let slice = &source.values[entry.offset..entry.offset + numel];
        *tensor = Tensor::new(entry.shape.clone(), slice.to_vec())?;
    }
    Ok(())
}
