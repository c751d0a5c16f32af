//! Core data types: tokens, sentences, predicate-argument graphs and
//! symbol tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One token. `head` is `None` on the syntactic root, otherwise the
/// 0-based index of the governor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub lemma: String,
    pub pos: String,
    pub head: Option<usize>,
    pub deprel: String,
}

/// A sentence with a stable identifier. Token indices are 0-based and
/// contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks the head links: indices in range, no self-loops, exactly one
    /// root, and every token reaches the root (no cycles).
    pub fn validate_tree(&self) -> Result<()> {
        let n = self.len();
        let mut roots = 0;
        for (i, tok) in self.tokens.iter().enumerate() {
            match tok.head {
                None => roots += 1,
                Some(h) if h >= n => {
                    return Err(Error::Input(format!(
                        "sentence {}: token {} has head {} out of range for {} tokens",
                        self.id, i, h, n
                    )));
                }
                Some(h) if h == i => {
                    return Err(Error::Input(format!(
                        "sentence {}: token {} is its own head",
                        self.id, i
                    )));
                }
                Some(_) => {}
            }
        }
        if roots != 1 {
            return Err(Error::Input(format!(
                "sentence {}: expected exactly one root, found {}",
                self.id, roots
            )));
        }
        // Walk each token upward; a walk longer than n tokens means a cycle.
        for start in 0..n {
            let mut cur = start;
            let mut hops = 0;
            while let Some(h) = self.tokens[cur].head {
                cur = h;
                hops += 1;
                if hops > n {
                    return Err(Error::Input(format!(
                        "sentence {}: cyclic head links reachable from token {}",
                        self.id, start
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Predicate-argument structure of one sentence: the set of predicate
/// token indices plus labeled (predicate, argument, role) arcs. Predicate
/// senses are carried for round-tripping only and take no part in
/// equality.
#[derive(Debug, Clone, Default)]
pub struct SrlGraph {
    predicates: BTreeSet<usize>,
    arcs: BTreeMap<(usize, usize), String>,
    senses: BTreeMap<usize, String>,
}

impl PartialEq for SrlGraph {
    fn eq(&self, other: &Self) -> bool {
        self.predicates == other.predicates && self.arcs == other.arcs
    }
}

impl Eq for SrlGraph {}

impl SrlGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Marks a token as a predicate, with or without arguments.
    pub fn add_predicate(&mut self, p: usize) {
        self.predicates.insert(p);
    }

    /// Adds one labeled arc. The predicate is recorded implicitly.
    pub fn insert(&mut self, predicate: usize, argument: usize, role: impl Into<String>) -> Result<()> {
        if predicate == argument {
            return Err(Error::Input(format!(
                "token {predicate} cannot be its own argument"
            )));
        }
        if self.arcs.contains_key(&(predicate, argument)) {
            return Err(Error::Input(format!(
                "duplicate arc between predicate {predicate} and argument {argument}"
            )));
        }
        self.predicates.insert(predicate);
        self.arcs.insert((predicate, argument), role.into());
        Ok(())
    }

    pub fn set_sense(&mut self, p: usize, sense: impl Into<String>) {
        self.predicates.insert(p);
        self.senses.insert(p, sense.into());
    }

    pub fn sense(&self, p: usize) -> Option<&str> {
        self.senses.get(&p).map(|s| s.as_str())
    }

    pub fn predicates(&self) -> impl Iterator<Item = usize> + '_ {
        self.predicates.iter().copied()
    }

    pub fn is_predicate(&self, p: usize) -> bool {
        self.predicates.contains(&p)
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    /// Arcs in (predicate, argument) order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, &str)> + '_ {
        self.arcs.iter().map(|(&(p, a), r)| (p, a, r.as_str()))
    }

    pub fn role(&self, predicate: usize, argument: usize) -> Option<&str> {
        self.arcs.get(&(predicate, argument)).map(|s| s.as_str())
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty() && self.arcs.is_empty()
    }

    /// Largest token index mentioned, for range validation.
    pub fn max_index(&self) -> Option<usize> {
        let p = self.predicates.iter().next_back().copied();
        let a = self.arcs.keys().map(|&(_, a)| a).max();
        p.max(a)
    }

    /// Groups arcs by predicate, arguments sorted by token index.
    /// Predicates without arguments appear with an empty list.
    pub fn frames(&self) -> BTreeMap<usize, Vec<(usize, &str)>> {
        let mut out: BTreeMap<usize, Vec<(usize, &str)>> = BTreeMap::new();
        for &p in &self.predicates {
            out.entry(p).or_default();
        }
        for (&(p, a), r) in &self.arcs {
            out.entry(p).or_default().push((a, r.as_str()));
        }
        out
    }
}

pub const UNK: usize = 0;
pub const PAD: usize = 1;
pub const RESERVED: usize = 2;

/// Symbol table with two reserved entries: UNK (id 0) for unseen symbols
/// and PAD (id 1) for padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl From<Vec<String>> for Vocab {
    fn from(symbols: Vec<String>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocab { symbols, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.symbols
    }
}

impl Vocab {
    pub fn new() -> Self {
        Vocab::from(vec!["<unk>".to_string(), "<pad>".to_string()])
    }

    /// Interns a symbol, returning its id; existing symbols keep theirs.
    pub fn intern(&mut self, s: &str) -> usize {
        if let Some(&id) = self.index.get(s) {
            return id;
        }
        let id = self.symbols.len();
        self.symbols.push(s.to_string());
        self.index.insert(s.to_string(), id);
        id
    }

    /// Id of a symbol, UNK when absent.
    pub fn id(&self, s: &str) -> usize {
        self.index.get(s).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, s: &str) -> bool {
        self.index.contains_key(s)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(|s| s.as_str())
    }

    /// Total size including the reserved entries.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.len() <= RESERVED
    }

    /// Number of non-reserved symbols.
    pub fn known(&self) -> usize {
        self.symbols.len() - RESERVED
    }

    /// Non-reserved symbols in id order.
    pub fn known_symbols(&self) -> &[String] {
        &self.symbols[RESERVED..]
    }

    /// Vocab id of the k-th non-reserved symbol.
    pub fn known_id(k: usize) -> usize {
        k + RESERVED
    }

    /// Index among non-reserved symbols for a vocab id, if non-reserved.
    pub fn known_index(id: usize) -> Option<usize> {
        id.checked_sub(RESERVED)
    }
}

/// The six symbol tables used by the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabs {
    pub words: Vocab,
    pub chars: Vocab,
    pub pos: Vocab,
    pub deprels: Vocab,
    pub roles: Vocab,
    pub actions: Vocab,
}

impl Vocabs {
    pub fn new() -> Vocabs {
        Vocabs {
            words: Vocab::new(),
            chars: Vocab::new(),
            pos: Vocab::new(),
            deprels: Vocab::new(),
            roles: Vocab::new(),
            actions: Vocab::new(),
        }
    }
}

impl Default for Vocabs {
    fn default() -> Self {
        Self::new()
    }
}

/// Builds all vocabularies from a corpus. `min_freq` thresholds words and
/// characters; POS tags, dependency relations and role labels are closed
/// sets and are always kept. Ids are assigned in first-occurrence order,
/// so a fixed corpus yields a fixed assignment.
pub fn build_vocabs(corpus: &[(Sentence, SrlGraph)], min_freq: usize) -> Vocabs {
    let mut word_order: Vec<String> = Vec::new();
    let mut word_count: HashMap<String, usize> = HashMap::new();
    let mut char_order: Vec<String> = Vec::new();
    let mut char_count: HashMap<String, usize> = HashMap::new();
    let mut pos = Vocab::new();
    let mut deprels = Vocab::new();
    let mut roles = Vocab::new();

    for (sent, graph) in corpus {
        for tok in &sent.tokens {
            let c = word_count.entry(tok.form.clone()).or_insert(0);
            if *c == 0 {
                word_order.push(tok.form.clone());
            }
            *c += 1;
            for ch in tok.form.chars() {
                let key = ch.to_string();
                let c = char_count.entry(key.clone()).or_insert(0);
                if *c == 0 {
                    char_order.push(key);
                }
                *c += 1;
            }
            pos.intern(&tok.pos);
            deprels.intern(&tok.deprel);
        }
        for (_, _, role) in graph.triplets() {
            roles.intern(role);
        }
    }

    let mut words = Vocab::new();
    for w in &word_order {
        if word_count[w] >= min_freq {
            words.intern(w);
        }
    }
    let mut chars = Vocab::new();
    for c in &char_order {
        if char_count[c] >= min_freq {
            chars.intern(c);
        }
    }

    let mut actions = Vocab::new();
    for name in crate::transition::ActionKind::ALL.iter().map(|k| k.name()) {
        actions.intern(name);
    }

    Vocabs { words, chars, pos, deprels, roles, actions }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(form: &str, pos: &str, head: Option<usize>) -> Token {
        Token {
            form: form.to_string(),
            lemma: form.to_lowercase(),
            pos: pos.to_string(),
            head,
            deprel: "dep".to_string(),
        }
    }

    fn sent(forms: &[&str]) -> Sentence {
        let tokens = forms
            .iter()
            .enumerate()
            .map(|(i, f)| tok(f, "N", if i == 0 { None } else { Some(0) }))
            .collect();
        Sentence { id: "s0".into(), tokens }
    }

    #[test]
    fn graph_rejects_self_argument() {
        let mut g = SrlGraph::new();
        assert!(g.insert(1, 1, "A0").is_err());
    }

    #[test]
    fn graph_rejects_duplicate_pair() {
        let mut g = SrlGraph::new();
        g.insert(1, 0, "A0").unwrap();
        assert!(g.insert(1, 0, "A1").is_err());
    }

    #[test]
    fn frames_group_and_sort_arguments() {
        let mut g = SrlGraph::new();
        g.insert(2, 3, "A3").unwrap();
        g.insert(2, 1, "A1").unwrap();
        g.insert(6, 2, "A-TMP").unwrap();
        g.insert(6, 5, "A1").unwrap();
        let frames = g.frames();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[&2], vec![(1, "A1"), (3, "A3")]);
        assert_eq!(frames[&6], vec![(2, "A-TMP"), (5, "A1")]);
    }

    #[test]
    fn frames_keep_argumentless_predicates() {
        let mut g = SrlGraph::new();
        g.add_predicate(4);
        let frames = g.frames();
        assert_eq!(frames[&4], Vec::<(usize, &str)>::new());
    }

    #[test]
    fn equality_ignores_senses() {
        let mut a = SrlGraph::new();
        a.insert(1, 0, "A0").unwrap();
        let mut b = a.clone();
        b.set_sense(1, "chase.01");
        assert_eq!(a, b);
    }

    #[test]
    fn vocab_reserves_unk_and_pad() {
        let mut v = Vocab::new();
        assert_eq!(v.len(), RESERVED);
        let id = v.intern("cats");
        assert_eq!(id, RESERVED);
        assert_eq!(v.id("cats"), id);
        assert_eq!(v.id("never-seen"), UNK);
        assert_eq!(v.known(), 1);
        assert_eq!(v.known_symbols(), &["cats".to_string()]);
    }

    #[test]
    fn vocab_roundtrips_through_serde() {
        let mut v = Vocab::new();
        v.intern("a");
        v.intern("b");
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.id("b"), v.id("b"));
    }

    #[test]
    fn build_vocabs_counts_roles_exactly() {
        let s = sent(&["cats", "chase", "mice"]);
        let mut g = SrlGraph::new();
        g.insert(1, 0, "A0").unwrap();
        g.insert(1, 2, "A1").unwrap();
        let vs = build_vocabs(&[(s, g)], 1);
        assert_eq!(vs.roles.known(), 2);
        assert_eq!(vs.words.known(), 3);
        assert_eq!(vs.actions.known(), 6);
    }

    #[test]
    fn build_vocabs_applies_min_freq_to_words() {
        let s1 = sent(&["cats", "chase", "cats"]);
        let s2 = sent(&["mice"]);
        let vs = build_vocabs(&[(s1, SrlGraph::new()), (s2, SrlGraph::new())], 2);
        assert!(vs.words.contains("cats"));
        assert!(!vs.words.contains("chase"));
        assert!(!vs.words.contains("mice"));
    }

    #[test]
    fn validate_tree_rejects_two_roots_and_cycles() {
        let mut s = sent(&["a", "b", "c"]);
        s.tokens[1].head = None;
        assert!(s.validate_tree().is_err());

        let mut s = sent(&["a", "b", "c"]);
        s.tokens[1].head = Some(2);
        s.tokens[2].head = Some(1);
        assert!(s.validate_tree().is_err());

        let s = sent(&["a", "b", "c"]);
        assert!(s.validate_tree().is_ok());
    }
}
