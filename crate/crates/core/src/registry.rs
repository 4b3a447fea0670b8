//! Name-keyed lookup of strategy constructors.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Maps a strategy name to its constructor. Names are matched exactly.
#[derive(Debug, Clone)]
pub struct Registry<C> {
    kind: &'static str,
    entries: BTreeMap<String, C>,
}

impl<C: Clone> Registry<C> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, ctor: C) -> &mut Self {
        self.entries.insert(name.into(), ctor);
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Result<C> {
        self.entries.get(name).cloned().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown {} '{name}'; expected one of {{{}}}",
                self.kind,
                self.names().join(", ")
            ))
        })
    }
}
