//! Corpus I/O: tab-separated CoNLL-2009 blocks and a JSON corpus format.
//!
//! CoNLL-2009 rows carry 14 fixed columns (ID FORM LEMMA PLEMMA POS PPOS
//! FEAT PFEAT HEAD PHEAD DEPREL PDEPREL FILLPRED PRED) plus one APRED
//! column per FILLPRED=Y row; the j-th APRED column belongs to the j-th
//! predicate in token order. Gold syntax columns are used by default, the
//! predicted (P*) columns behind the `predicted` flag.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Sentence, SrlGraph, Token};
use crate::error::{Error, Result};

const FIXED_COLS: usize = 14;

/// Parses CoNLL-2009 text. `file` names the source in errors.
pub fn parse_conll09(text: &str, file: &str, predicted: bool) -> Result<Vec<(Sentence, SrlGraph)>> {
    let mut out = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                out.push(parse_block(&block, file, predicted, out.len())?);
                block.clear();
            }
        } else {
            block.push((no + 1, line));
        }
    }
    if !block.is_empty() {
        out.push(parse_block(&block, file, predicted, out.len())?);
    }
    Ok(out)
}

fn parse_block(
    rows: &[(usize, &str)],
    file: &str,
    predicted: bool,
    index: usize,
) -> Result<(Sentence, SrlGraph)> {
    let first_line = rows[0].0;
    let cells: Vec<(usize, Vec<&str>)> = rows
        .iter()
        .map(|&(no, line)| (no, line.split('\t').collect()))
        .collect();
    let ncols = cells[0].1.len();
    if ncols < FIXED_COLS {
        return Err(Error::parse(
            file,
            first_line,
            format!("expected at least {FIXED_COLS} columns, found {ncols}"),
        ));
    }
    for (no, row) in &cells {
        if row.len() != ncols {
            return Err(Error::parse(
                file,
                *no,
                format!("ragged row: expected {ncols} columns, found {}", row.len()),
            ));
        }
    }

    let n = cells.len();
    let mut tokens = Vec::with_capacity(n);
    let mut predicates = Vec::new();
    let (lemma_col, pos_col, head_col, deprel_col) = if predicted {
        (3, 5, 9, 11)
    } else {
        (2, 4, 8, 10)
    };
    for (i, (no, row)) in cells.iter().enumerate() {
        let id: usize = row[0]
            .parse()
            .map_err(|_| Error::parse(file, *no, format!("non-numeric ID {:?}", row[0])))?;
        if id != i + 1 {
            return Err(Error::parse(
                file,
                *no,
                format!("ID {} out of sequence, expected {}", id, i + 1),
            ));
        }
        let head_raw: usize = row[head_col].parse().map_err(|_| {
            Error::parse(file, *no, format!("non-numeric HEAD {:?}", row[head_col]))
        })?;
        if head_raw > n {
            return Err(Error::parse(
                file,
                *no,
                format!("HEAD {head_raw} out of range for {n} tokens"),
            ));
        }
        match row[12] {
            "Y" => predicates.push(i),
            "_" => {}
            other => {
                return Err(Error::parse(
                    file,
                    *no,
                    format!("FILLPRED must be Y or _, found {other:?}"),
                ));
            }
        }
        tokens.push(Token {
            form: row[1].to_string(),
            lemma: row[lemma_col].to_string(),
            pos: row[pos_col].to_string(),
            head: head_raw.checked_sub(1),
            deprel: row[deprel_col].to_string(),
        });
    }

    let napred = ncols - FIXED_COLS;
    if napred != predicates.len() {
        return Err(Error::parse(
            file,
            first_line,
            format!(
                "{} APRED column(s) for {} FILLPRED=Y row(s)",
                napred,
                predicates.len()
            ),
        ));
    }

    let sent = Sentence { id: format!("s{index}"), tokens };
    sent.validate_tree()
        .map_err(|e| Error::parse(file, first_line, e.to_string()))?;

    let mut graph = SrlGraph::new();
    for (j, &p) in predicates.iter().enumerate() {
        graph.add_predicate(p);
        let sense = cells[p].1[13];
        if sense != "_" {
            graph.set_sense(p, sense);
        }
        for (i, (no, row)) in cells.iter().enumerate() {
            let cell = row[FIXED_COLS + j];
            if cell != "_" {
                graph
                    .insert(p, i, cell)
                    .map_err(|e| Error::parse(file, *no, e.to_string()))?;
            }
        }
    }
    Ok((sent, graph))
}

/// Renders sentences back to CoNLL-2009. Gold and predicted syntax
/// columns receive the same values; unconsumed columns are `_`.
pub fn render_conll09(items: &[(Sentence, SrlGraph)]) -> String {
    let mut out = String::new();
    for (sent, graph) in items {
        let preds: Vec<usize> = graph.predicates().collect();
        for (i, tok) in sent.tokens.iter().enumerate() {
            let head = match tok.head {
                None => 0,
                Some(h) => h + 1,
            };
            let fillpred = if graph.is_predicate(i) { "Y" } else { "_" };
            let sense = graph.sense(i).unwrap_or("_");
            let mut cells: Vec<String> = vec![
                (i + 1).to_string(),
                tok.form.clone(),
                tok.lemma.clone(),
                tok.lemma.clone(),
                tok.pos.clone(),
                tok.pos.clone(),
                "_".into(),
                "_".into(),
                head.to_string(),
                head.to_string(),
                tok.deprel.clone(),
                tok.deprel.clone(),
                fillpred.into(),
                sense.into(),
            ];
            for &p in &preds {
                cells.push(graph.role(p, i).unwrap_or("_").to_string());
            }
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonSentence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lemmas: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    heads: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    deprels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predicates: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    senses: BTreeMap<String, String>,
    #[serde(default)]
    triplets: Vec<(usize, usize, String)>,
}

/// Parses the JSON corpus format: a top-level array of sentence objects
/// with keys `tokens`, `triplets` and optional `id`, `lemmas`, `pos`,
/// `heads` (-1 for the root), `deprels`, `predicates`, `senses`.
pub fn parse_json_corpus(text: &str, file: &str) -> Result<Vec<(Sentence, SrlGraph)>> {
    let raw: Vec<JsonSentence> = serde_json::from_str(text)
        .map_err(|e| Error::parse(file, e.line(), e.to_string()))?;
    let mut out = Vec::with_capacity(raw.len());
    for (index, js) in raw.into_iter().enumerate() {
        let id = js.id.unwrap_or_else(|| format!("s{index}"));
        let n = js.tokens.len();
        let ctx = |msg: String| Error::Input(format!("sentence {id}: {msg}"));
        if n == 0 {
            return Err(ctx("empty token list".into()));
        }
        let check_len = |name: &str, len: usize| -> Result<()> {
            if len != n {
                Err(ctx(format!("{name} has {len} entries for {n} tokens")))
            } else {
                Ok(())
            }
        };
        let lemmas = js.lemmas.unwrap_or_else(|| js.tokens.clone());
        check_len("lemmas", lemmas.len())?;
        let pos = js.pos.unwrap_or_else(|| vec!["_".to_string(); n]);
        check_len("pos", pos.len())?;
        // Default syntax: token 0 is the root, everything else attaches
        // to it.
        let heads = js
            .heads
            .unwrap_or_else(|| (0..n).map(|i| if i == 0 { -1 } else { 0 }).collect());
        check_len("heads", heads.len())?;
        let deprels = js.deprels.unwrap_or_else(|| {
            heads
                .iter()
                .map(|&h| if h < 0 { "root".to_string() } else { "dep".to_string() })
                .collect()
        });
        check_len("deprels", deprels.len())?;

        let mut tokens = Vec::with_capacity(n);
        for i in 0..n {
            let head = match heads[i] {
                -1 => None,
                h if h >= 0 && (h as usize) < n => Some(h as usize),
                h => return Err(ctx(format!("head {h} of token {i} out of range"))),
            };
            tokens.push(Token {
                form: js.tokens[i].clone(),
                lemma: lemmas[i].clone(),
                pos: pos[i].clone(),
                head,
                deprel: deprels[i].clone(),
            });
        }
        let sent = Sentence { id: id.clone(), tokens };
        sent.validate_tree()?;

        let mut graph = SrlGraph::new();
        for (p, a, role) in &js.triplets {
            if *p >= n || *a >= n {
                return Err(ctx(format!(
                    "triplet ({p}, {a}, {role}) references a token outside 0..{n}"
                )));
            }
            graph.insert(*p, *a, role.clone()).map_err(|e| ctx(e.to_string()))?;
        }
        for p in js.predicates.unwrap_or_default() {
            if p >= n {
                return Err(ctx(format!("predicate {p} outside 0..{n}")));
            }
            graph.add_predicate(p);
        }
        for (key, sense) in js.senses {
            let p: usize = key
                .parse()
                .map_err(|_| ctx(format!("non-numeric sense key {key:?}")))?;
            if p >= n {
                return Err(ctx(format!("sense key {p} outside 0..{n}")));
            }
            graph.set_sense(p, sense);
        }
        out.push((sent, graph));
    }
    Ok(out)
}

/// Renders the JSON corpus format with every field populated.
pub fn render_json_corpus(items: &[(Sentence, SrlGraph)]) -> String {
    let raw: Vec<JsonSentence> = items
        .iter()
        .map(|(sent, graph)| JsonSentence {
            id: Some(sent.id.clone()),
            tokens: sent.tokens.iter().map(|t| t.form.clone()).collect(),
            lemmas: Some(sent.tokens.iter().map(|t| t.lemma.clone()).collect()),
            pos: Some(sent.tokens.iter().map(|t| t.pos.clone()).collect()),
            heads: Some(
                sent.tokens
                    .iter()
                    .map(|t| t.head.map(|h| h as i64).unwrap_or(-1))
                    .collect(),
            ),
            deprels: Some(sent.tokens.iter().map(|t| t.deprel.clone()).collect()),
            predicates: Some(graph.predicates().collect()),
            senses: graph
                .predicates()
                .filter_map(|p| graph.sense(p).map(|s| (p.to_string(), s.to_string())))
                .collect(),
            triplets: graph
                .triplets()
                .map(|(p, a, r)| (p, a, r.to_string()))
                .collect(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&raw).expect("corpus serialization is infallible");
    s.push('\n');
    s
}

/// Corpus container format, chosen by file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Json,
    Conll09,
}

impl CorpusFormat {
    pub fn detect(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => CorpusFormat::Json,
            _ => CorpusFormat::Conll09,
        }
    }
}

/// Reads a corpus file, dispatching on its extension.
pub fn read_corpus(path: &Path, predicted: bool) -> Result<Vec<(Sentence, SrlGraph)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    match CorpusFormat::detect(path) {
        CorpusFormat::Json => parse_json_corpus(&text, &name),
        CorpusFormat::Conll09 => parse_conll09(&text, &name, predicted),
    }
}

/// Renders a corpus in the given format.
pub fn render_corpus(items: &[(Sentence, SrlGraph)], format: CorpusFormat) -> String {
    match format {
        CorpusFormat::Json => render_json_corpus(items),
        CorpusFormat::Conll09 => render_conll09(items),
    }
}

pub fn write_corpus(path: &Path, items: &[(Sentence, SrlGraph)]) -> Result<()> {
    let text = render_corpus(items, CorpusFormat::detect(path));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
