use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::DemandError;

/// A point in the multidimensional evaluation space: named integer indexes.
///
/// The stored order is whatever the caller supplied; [`Context::canonicalize`]
/// yields the sorted form used for hashing and comparison.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Context {
    dims: Vec<(String, i64)>,
}

impl Context {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a context from raw dimension pairs. Uniqueness is checked by
    /// [`Context::canonicalize`], not here.
    pub fn from_dims<I, S>(dims: I) -> Self
    where
        I: IntoIterator<Item = (S, i64)>,
        S: Into<String>,
    {
        Self {
            dims: dims.into_iter().map(|(n, i)| (n.into(), i)).collect(),
        }
    }

    pub fn dims(&self) -> &[(String, i64)] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<i64> {
        self.dims.iter().find(|(n, _)| n == name).map(|(_, i)| *i)
    }

    /// Returns a copy with `name` set to `index`, adding the dimension if absent.
    pub fn with(&self, name: &str, index: i64) -> Self {
        let mut dims = self.dims.clone();
        match dims.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = index,
            None => dims.push((name.to_owned(), index)),
        }
        Self { dims }
    }

    /// Sorted ascending by dimension name. Idempotent.
    pub fn canonicalize(&self) -> Result<Context, DemandError> {
        let mut seen = HashSet::with_capacity(self.dims.len());
        for (name, _) in &self.dims {
            if !seen.insert(name.as_str()) {
                return Err(DemandError::DuplicateDimension(name.clone()));
            }
        }
        Ok(self.sorted())
    }

    /// Total order used for hashing even when names repeat (ties broken by index).
    pub(crate) fn sorted(&self) -> Context {
        let mut dims = self.dims.clone();
        dims.sort();
        Context { dims }
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (n, v)) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{n}:{v}")?;
        }
        f.write_str("}")
    }
}
