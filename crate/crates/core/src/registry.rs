//! Name-keyed registries of interchangeable implementations.

use crate::error::{MunitError, Result};

/// Ordered table of named builders. `B` is usually a function pointer that
/// produces a boxed trait object.
pub struct Registry<B> {
    kind: &'static str,
    entries: Vec<(&'static str, B)>,
}

impl<B> Registry<B> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn register(mut self, name: &'static str, builder: B) -> Self {
        assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "{} `{name}` registered twice",
            self.kind
        );
        self.entries.push((name, builder));
        self
    }

    pub fn get(&self, name: &str) -> Result<&B> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, b)| b)
            .ok_or_else(|| MunitError::UnknownVariant {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_lists_known() {
        let r = Registry::new("widget").register("a", 1).register("b", 2);
        assert_eq!(*r.get("b").unwrap(), 2);
        let msg = r.get("c").unwrap_err().to_string();
        assert!(msg.contains("widget `c`") && msg.contains("a, b"), "{msg}");
    }
}
