//! Category catalog: ordered foreground categories with optional retrieval aliases.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// One foreground category. `retrieval_alias`, when set, replaces the name in
/// text-embedding lookups (homonym disambiguation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryEntry {
    pub name: String,
    pub retrieval_alias: Option<String>,
}

impl CategoryEntry {
    /// The text used for retrieval: the alias when present, the name otherwise.
    pub fn retrieval_text(&self) -> &str {
        self.retrieval_alias.as_deref().unwrap_or(&self.name)
    }
}

/// Ordered list of foreground categories. Background is implicit index 0;
/// the first listed category has index 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryCatalog {
    entries: Vec<CategoryEntry>,
}

impl CategoryCatalog {
    pub fn new(entries: Vec<CategoryEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Catalog("catalog has no categories".into()));
        }
        let mut names = HashSet::new();
        let mut aliases = HashSet::new();
        for e in &entries {
            if e.name.trim().is_empty() {
                return Err(Error::Catalog("empty category name".into()));
            }
            if !names.insert(e.name.to_lowercase()) {
                return Err(Error::Catalog(format!("duplicate category name {:?}", e.name)));
            }
            if let Some(a) = &e.retrieval_alias {
                if a.trim().is_empty() {
                    return Err(Error::Catalog(format!("empty alias for {:?}", e.name)));
                }
                if !aliases.insert(a.to_lowercase()) {
                    return Err(Error::Catalog(format!("duplicate alias {a:?}")));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_names<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(
            names
                .into_iter()
                .map(|n| CategoryEntry {
                    name: n.into(),
                    retrieval_alias: None,
                })
                .collect(),
        )
    }

    /// Number of foreground categories (background excluded).
    pub fn num_foreground(&self) -> usize {
        self.entries.len()
    }

    /// Total class count including background: foreground + 1.
    pub fn num_classes(&self) -> u16 {
        self.entries.len() as u16 + 1
    }

    /// Entry for foreground index `idx` (1-based; 0 is background).
    pub fn entry(&self, idx: u16) -> Option<&CategoryEntry> {
        if idx == 0 {
            return None;
        }
        self.entries.get(idx as usize - 1)
    }

    /// Foreground index of a category name (case-insensitive), if present.
    pub fn index_of(&self, name: &str) -> Option<u16> {
        let lower = name.to_lowercase();
        self.entries
            .iter()
            .position(|e| e.name.to_lowercase() == lower)
            .map(|p| p as u16 + 1)
    }

    /// Iterates (index, entry) pairs, indices starting at 1.
    pub fn iter(&self) -> impl Iterator<Item = (u16, &CategoryEntry)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i as u16 + 1, e))
    }

    /// Parses a catalog file: one category per line, `name` or `name|alias`.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn read_from(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, alias) = match line.split_once('|') {
                Some((n, a)) => (n.trim().to_string(), Some(a.trim().to_string())),
                None => (line.to_string(), None),
            };
            entries.push(CategoryEntry {
                name,
                retrieval_alias: alias,
            });
        }
        Self::new(entries)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            match &e.retrieval_alias {
                Some(a) => out.push_str(&format!("{}|{}\n", e.name, a)),
                None => out.push_str(&format!("{}\n", e.name)),
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected_case_insensitive() {
        let err = CategoryCatalog::from_names(["cat", "Cat"]).unwrap_err();
        assert!(matches!(err, Error::Catalog(_)));
    }

    #[test]
    fn indices_start_at_one() {
        let c = CategoryCatalog::from_names(["a", "b"]).unwrap();
        assert_eq!(c.index_of("a"), Some(1));
        assert_eq!(c.index_of("b"), Some(2));
        assert_eq!(c.index_of("background"), None);
        assert_eq!(c.num_classes(), 3);
    }

    #[test]
    fn file_round_trip_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.txt");
        let c = CategoryCatalog::new(vec![
            CategoryEntry {
                name: "crane".into(),
                retrieval_alias: Some("crane bird".into()),
            },
            CategoryEntry {
                name: "dog".into(),
                retrieval_alias: None,
            },
        ])
        .unwrap();
        c.write_to(&path).unwrap();
        let back = CategoryCatalog::read_from(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.entry(1).unwrap().retrieval_text(), "crane bird");
        assert_eq!(back.entry(2).unwrap().retrieval_text(), "dog");
    }
}
