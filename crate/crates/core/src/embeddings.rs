//! Pretrained word vectors and precomputed per-token context vectors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Word vectors in file order: one word per line followed by its values.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub dim: usize,
    pub vectors: Vec<(String, Vec<f64>)>,
}

impl Pretrained {
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors
            .iter()
            .find(|(w, _)| w == word)
            .map(|(_, v)| v.as_slice())
    }
}

/// Parses the plain-text vector format: `word v1 v2 ... vd` per line. A
/// first line of exactly two integers is a count/dim header and is
/// skipped. The first surviving line fixes the dimension.
pub fn parse_pretrained(text: &str, file: &str) -> Result<Pretrained> {
    let mut dim = None;
    let mut vectors: Vec<(String, Vec<f64>)> = Vec::new();
    let mut seen_first = false;
    for (no, line) in text.lines().enumerate() {
        let line_no = no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-blank line has a first token");
        let rest: Vec<&str> = parts.collect();
        if !seen_first {
            seen_first = true;
            if rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok()
            {
                continue; // "N D" header
            }
        }
        let mut values = Vec::with_capacity(rest.len());
        for v in &rest {
            values.push(v.parse::<f64>().map_err(|_| {
                Error::parse(file, line_no, format!("non-numeric vector value {v:?}"))
            })?);
        }
        match dim {
            None => {
                if values.is_empty() {
                    return Err(Error::parse(file, line_no, "line carries no vector values"));
                }
                dim = Some(values.len());
            }
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    file,
                    line_no,
                    format!("vector dimension {} differs from {}", values.len(), d),
                ));
            }
            _ => {}
        }
        // First occurrence of a word wins.
        if !vectors.iter().any(|(w, _)| w == word) {
            vectors.push((word.to_string(), values));
        }
    }
    let dim = dim.ok_or_else(|| Error::Input(format!("{file}: no vectors found")))?;
    Ok(Pretrained { dim, vectors })
}

pub fn read_pretrained(path: &Path) -> Result<Pretrained> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pretrained(&text, &path.display().to_string())
}

/// Precomputed per-token vectors keyed by sentence id (the hook standing
/// in for contextualized encoders).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVectors {
    pub dim: usize,
    pub by_sentence: BTreeMap<String, Vec<Vec<f64>>>,
}

impl ContextVectors {
    pub fn for_sentence(&self, id: &str, n: usize) -> Result<&[Vec<f64>]> {
        let rows = self
            .by_sentence
            .get(id)
            .ok_or_else(|| Error::Input(format!("no context vectors for sentence {id}")))?;
        if rows.len() != n {
            return Err(Error::Input(format!(
                "sentence {id}: {} context vectors for {n} tokens",
                rows.len()
            )));
        }
        Ok(rows)
    }
}

/// Reads a JSON object mapping sentence id → per-token vectors.
pub fn read_context_vectors(path: &Path) -> Result<ContextVectors> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let by_sentence: BTreeMap<String, Vec<Vec<f64>>> =
        serde_json::from_str(&text).map_err(|e| Error::parse(&name, e.line(), e.to_string()))?;
    let mut dim = None;
    for (id, rows) in &by_sentence {
        for row in rows {
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::Input(format!(
                        "sentence {id}: context vector dimension {} differs from {d}",
                        row.len()
                    )));
                }
                _ => {}
            }
        }
    }
    let dim = dim.ok_or_else(|| Error::Input(format!("{name}: no context vectors found")))?;
    Ok(ContextVectors { dim, by_sentence })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_line_file_without_header() {
        let p = parse_pretrained("cat 0.1 0.2 0.3\ndog -1 0 1\n", "v.vec").unwrap();
        assert_eq!(p.dim, 3);
        assert_eq!(p.vectors.len(), 2);
        assert_eq!(p.get("dog"), Some(&[-1.0, 0.0, 1.0][..]));
        assert_eq!(p.get("fish"), None);
    }

    #[test]
    fn count_dim_header_is_skipped() {
        let with = parse_pretrained("2 3\ncat 0.1 0.2 0.3\ndog -1 0 1\n", "v.vec").unwrap();
        let without = parse_pretrained("cat 0.1 0.2 0.3\ndog -1 0 1\n", "v.vec").unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn inconsistent_dimension_reports_line() {
        let err = parse_pretrained("cat 0.1 0.2\ndog 1\n", "bad.vec").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.vec:2"), "{msg}");
        assert!(msg.contains("dimension"), "{msg}");
    }

    #[test]
    fn non_numeric_value_reports_line() {
        let err = parse_pretrained("cat 0.1 oops\n", "bad.vec").unwrap_err();
        assert!(err.to_string().contains("bad.vec:1"));
    }

    #[test]
    fn first_occurrence_of_a_duplicate_word_wins() {
        let p = parse_pretrained("cat 1 1\ncat 2 2\n", "v.vec").unwrap();
        assert_eq!(p.vectors.len(), 1);
        assert_eq!(p.get("cat"), Some(&[1.0, 1.0][..]));
    }

    #[test]
    fn context_vectors_validate_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ctx.json");
        std::fs::write(&path, r#"{"s0": [[1.0, 2.0], [3.0, 4.0]]}"#).unwrap();
        let ctx = read_context_vectors(&path).unwrap();
        assert_eq!(ctx.dim, 2);
        assert_eq!(ctx.for_sentence("s0", 2).unwrap().len(), 2);
        assert!(ctx.for_sentence("s0", 3).is_err());
        assert!(ctx.for_sentence("s1", 2).is_err());

        std::fs::write(&path, r#"{"s0": [[1.0], [3.0, 4.0]]}"#).unwrap();
        assert!(read_context_vectors(&path).is_err());
    }
}
