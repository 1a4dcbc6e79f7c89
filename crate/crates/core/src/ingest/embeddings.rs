use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Frozen word-embedding lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
    /// Rows whose word was already present; the later row wins.
    pub duplicates: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(Self {
            dim,
            entries: BTreeMap::new(),
            duplicates: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Insert or replace a vector. Returns true if the word was already present.
    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Dim {
                expected: self.dim,
                got: vector.len(),
                context: "embedding vector",
            });
        }
        Ok(self.entries.insert(word.into(), vector).is_some())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Vector for a one- or two-word entity.
    ///
    /// Tries the entity as written, then with spaces joined by `_`, then
    /// the mean of its word vectors. `None` if any of those words is absent.
    pub fn entity_vector(&self, entity: &str) -> Option<Vec<f64>> {
        if let Some(v) = self.get(entity) {
            return Some(v.to_vec());
        }
        if !entity.contains(' ') {
            return None;
        }
        if let Some(v) = self.get(&entity.replace(' ', "_")) {
            return Some(v.to_vec());
        }
        let words: Vec<&str> = entity.split_whitespace().collect();
        let mut acc = vec![0.0; self.dim];
        for w in &words {
            let v = self.get(w)?;
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        let n = words.len() as f64;
        Some(acc.into_iter().map(|a| a / n).collect())
    }

    /// Vectors for every entity, or the list of entities that have none.
    pub fn entity_vectors<'a, I>(&self, entities: I) -> Result<BTreeMap<String, Vec<f64>>>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut found = BTreeMap::new();
        let mut missing = Vec::new();
        for e in entities {
            match self.entity_vector(e) {
                Some(v) => {
                    found.insert(e.to_string(), v);
                }
                None => missing.push(e.to_string()),
            }
        }
        if missing.is_empty() {
            Ok(found)
        } else {
            missing.sort();
            missing.dedup();
            Err(Error::MissingEmbeddings(missing))
        }
    }
}

/// Parse the `N D` header word-vector text format.
pub fn parse_embeddings<R: BufRead>(source: R) -> Result<EmbeddingTable> {
    let mut lines = source.lines().enumerate();
    let (n, dim) = loop {
        match lines.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "missing header".into(),
                })
            }
            Some((_, line)) if line.as_ref().is_ok_and(|l| l.trim().is_empty()) => continue,
            Some((i, line)) => {
                let line = line?;
                let parts: Vec<&str> = line.split_whitespace().collect();
                let parsed = match parts.as_slice() {
                    [n, d] => n.parse::<usize>().ok().zip(d.parse::<usize>().ok()),
                    _ => None,
                };
                match parsed {
                    Some((n, d)) if d > 0 => break (n, d),
                    _ => {
                        return Err(Error::Parse {
                            line: i + 1,
                            msg: format!("missing header: expected \"N D\", found {line:?}"),
                        })
                    }
                }
            }
        }
    };

    let mut table = EmbeddingTable::new(dim)?;
    let mut rows = 0usize;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line");
        let mut vector = Vec::with_capacity(dim);
        for (j, raw) in parts.enumerate() {
            let v: f64 = raw.parse().map_err(|_| Error::Field {
                line: i + 1,
                field: j + 2,
                msg: format!("not a number: {raw:?}"),
            })?;
            vector.push(v);
        }
        if vector.len() != dim {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("{} components, expected {dim}", vector.len()),
            });
        }
        if table.insert(word, vector)? {
            table.duplicates += 1;
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header declares {n} rows, found {rows}"),
        });
    }
    Ok(table)
}

pub fn write_embeddings<W: Write>(table: &EmbeddingTable, mut sink: W) -> Result<()> {
    writeln!(sink, "{} {}", table.len(), table.dim())?;
    for (word, v) in table.iter() {
        write!(sink, "{word}")?;
        for x in v {
            write!(sink, " {x}")?;
        }
        writeln!(sink)?;
    }
    Ok(())
}
