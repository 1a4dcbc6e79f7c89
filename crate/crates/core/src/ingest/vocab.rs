use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Visible-entity vocabulary: lowercase entries of one or two words.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityVocabulary {
    entries: BTreeSet<String>,
}

impl EntityVocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry after lowercasing and collapsing whitespace.
    pub fn insert(&mut self, entry: &str) -> Result<()> {
        let words: Vec<String> = entry.split_whitespace().map(str::to_lowercase).collect();
        match words.len() {
            0 => Err(Error::invalid("empty vocabulary entry")),
            1 | 2 => {
                self.entries.insert(words.join(" "));
                Ok(())
            }
            n => Err(Error::invalid(format!(
                "entry {entry:?} has {n} words, at most 2 allowed"
            ))),
        }
    }

    pub fn contains(&self, entity: &str) -> bool {
        self.entries.contains(entity)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }
}

impl<'a> FromIterator<&'a str> for EntityVocabulary {
    /// Panics on entries of three or more words; use [`EntityVocabulary::insert`]
    /// for fallible construction.
    fn from_iter<T: IntoIterator<Item = &'a str>>(iter: T) -> Self {
        let mut v = Self::new();
        for e in iter {
            v.insert(e).expect("valid vocabulary entry");
        }
        v
    }
}

pub fn parse_vocabulary<R: BufRead>(source: R) -> Result<EntityVocabulary> {
    let mut vocab = EntityVocabulary::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        vocab.insert(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: match e {
                Error::InvalidArgument(m) => m,
                other => other.to_string(),
            },
        })?;
    }
    Ok(vocab)
}

pub fn write_vocabulary<W: Write>(vocab: &EntityVocabulary, mut sink: W) -> Result<()> {
    for e in vocab.iter() {
        writeln!(sink, "{e}")?;
    }
    Ok(())
}
