//! Scoring: labeled argument F1, predicate-identification F1,
//! per-distance breakdown, role-inventory violation counts, and a
//! decoding throughput benchmark.
//!
//! All precision/recall numbers are micro-averaged: counts accumulate
//! over the whole corpus before any ratio is taken.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Sentence, SrlGraph};
use crate::decoder::{decode_corpus, DecodeConfig};
use crate::embeddings::ContextVectors;
use crate::error::{Error, Result};
use crate::scorer::SrlModel;

/// Micro-averaged precision, recall, and F1. Every ratio with a zero
/// denominator is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    fn prf(self) -> Prf {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

/// Checks that the two corpora are the same sentences in the same order.
fn check_aligned(
    gold: &[(Sentence, SrlGraph)],
    pred: &[(Sentence, SrlGraph)],
) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!(
            "corpus size mismatch: {} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (i, ((g, _), (p, _))) in gold.iter().zip(pred).enumerate() {
        if g.id != p.id {
            return Err(Error::Input(format!(
                "sentence {} mismatch: gold id {:?} vs predicted id {:?}",
                i, g.id, p.id
            )));
        }
    }
    Ok(())
}

fn triplet_counts(gold: &SrlGraph, pred: &SrlGraph) -> Counts {
    let mut c = Counts::default();
    for (p, a, role) in pred.triplets() {
        if gold.role(p, a) == Some(role) {
            c.tp += 1;
        } else {
            c.fp += 1;
        }
    }
    for (p, a, role) in gold.triplets() {
        if pred.role(p, a) != Some(role) {
            c.fn_ += 1;
        }
    }
    c
}

/// Labeled F1 over (predicate, argument, role) triplets; an arc with the
/// wrong role counts as both a false positive and a false negative.
pub fn score_triplets(
    gold: &[(Sentence, SrlGraph)],
    pred: &[(Sentence, SrlGraph)],
) -> Result<Prf> {
    check_aligned(gold, pred)?;
    let mut c = Counts::default();
    for ((_, g), (_, p)) in gold.iter().zip(pred) {
        c.add(triplet_counts(g, p));
    }
    Ok(c.prf())
}

/// F1 over predicate positions, ignoring arguments entirely.
pub fn score_predicates(
    gold: &[(Sentence, SrlGraph)],
    pred: &[(Sentence, SrlGraph)],
) -> Result<Prf> {
    check_aligned(gold, pred)?;
    let mut c = Counts::default();
    for ((_, g), (_, p)) in gold.iter().zip(pred) {
        c.tp += g.predicates().filter(|i| p.is_predicate(*i)).count();
        c.fn_ += g.predicates().filter(|i| !p.is_predicate(*i)).count();
        c.fp += p.predicates().filter(|i| !g.is_predicate(*i)).count();
    }
    Ok(c.prf())
}

/// The seven distance buckets: 1–6 tokens between argument and
/// predicate, and everything farther under "7+".
fn bucket_label(p: usize, a: usize) -> String {
    let d = p.abs_diff(a);
    if d >= 7 {
        "7+".into()
    } else {
        d.to_string()
    }
}

/// Labeled argument F1 broken down by linear predicate–argument
/// distance. True positives and false negatives land in the gold arc's
/// bucket, false positives in the predicted arc's bucket, so the bucket
/// counts partition the overall counts exactly.
pub fn distance_buckets(
    gold: &[(Sentence, SrlGraph)],
    pred: &[(Sentence, SrlGraph)],
) -> Result<BTreeMap<String, Prf>> {
    check_aligned(gold, pred)?;
    let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
    for d in 1..=6 {
        counts.insert(d.to_string(), Counts::default());
    }
    counts.insert("7+".into(), Counts::default());

    for ((_, g), (_, p)) in gold.iter().zip(pred) {
        for (pr, a, role) in p.triplets() {
            let bucket = counts.get_mut(&bucket_label(pr, a)).expect("bucket exists");
            if g.role(pr, a) == Some(role) {
                bucket.tp += 1;
            } else {
                bucket.fp += 1;
            }
        }
        for (pr, a, role) in g.triplets() {
            if p.role(pr, a) != Some(role) {
                counts.get_mut(&bucket_label(pr, a)).expect("bucket exists").fn_ += 1;
            }
        }
    }
    Ok(counts.into_iter().map(|(k, c)| (k, c.prf())).collect())
}

/// Counts of role-inventory constraint violations, per frame:
///
/// * `unique` — a core label (A0–A5, AA) appearing more than once; each
///   occurrence beyond the first counts.
/// * `continuation` — a `C-X` argument with no plain `X` argument at a
///   smaller token index in the same frame.
/// * `reference` — an `R-X` argument whose plain `X` is absent from the
///   frame altogether.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    pub unique: usize,
    pub continuation: usize,
    pub reference: usize,
}

impl Violations {
    pub fn total(&self) -> usize {
        self.unique + self.continuation + self.reference
    }
}

const CORE_LABELS: [&str; 7] = ["A0", "A1", "A2", "A3", "A4", "A5", "AA"];

/// Scans every frame of every graph for role-inventory violations.
pub fn role_violations<'a>(graphs: impl IntoIterator<Item = &'a SrlGraph>) -> Violations {
    let mut v = Violations::default();
    for graph in graphs {
        for (_, args) in graph.frames() {
            for core in CORE_LABELS {
                let n = args.iter().filter(|(_, role)| *role == core).count();
                v.unique += n.saturating_sub(1);
            }
            for (i, (a, role)) in args.iter().enumerate() {
                if let Some(base) = role.strip_prefix("C-") {
                    let ok = args[..i]
                        .iter()
                        .any(|(b, r)| *r == base && b < a);
                    if !ok {
                        v.continuation += 1;
                    }
                } else if let Some(base) = role.strip_prefix("R-") {
                    if !args.iter().any(|(_, r)| *r == base) {
                        v.reference += 1;
                    }
                }
            }
        }
    }
    v
}

/// Full evaluation of a predicted corpus against gold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub arg: Prf,
    pub prd: Prf,
    pub distance: BTreeMap<String, Prf>,
    /// Violations found in the *predicted* graphs.
    pub violations: Violations,
    /// Filled by the benchmark path only.
    pub tokens_per_second: Option<f64>,
}

pub fn evaluate(
    gold: &[(Sentence, SrlGraph)],
    pred: &[(Sentence, SrlGraph)],
) -> Result<EvalReport> {
    Ok(EvalReport {
        arg: score_triplets(gold, pred)?,
        prd: score_predicates(gold, pred)?,
        distance: distance_buckets(gold, pred)?,
        violations: role_violations(pred.iter().map(|(_, g)| g)),
        tokens_per_second: None,
    })
}

/// Plain-text rendering of a report, one metric per line.
pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let line = |out: &mut String, name: &str, p: &Prf| {
        out.push_str(&format!(
            "{name:<12} P {:6.2}  R {:6.2}  F1 {:6.2}\n",
            100.0 * p.precision,
            100.0 * p.recall,
            100.0 * p.f1
        ));
    };
    line(&mut out, "arguments", &report.arg);
    line(&mut out, "predicates", &report.prd);
    for (bucket, prf) in &report.distance {
        line(&mut out, &format!("distance {bucket}"), prf);
    }
    out.push_str(&format!(
        "violations   unique {}  continuation {}  reference {}\n",
        report.violations.unique, report.violations.continuation, report.violations.reference
    ));
    if let Some(tps) = report.tokens_per_second {
        out.push_str(&format!("throughput   {tps:.1} tokens/s\n"));
    }
    out
}

/// Decoding throughput: one untimed warm-up pass, then at least three
/// timed passes over the corpus; returns the median tokens-per-second.
pub fn bench_decode(
    model: &SrlModel,
    sentences: &[Sentence],
    context: Option<&ContextVectors>,
    beam: usize,
    reps: usize,
    workers: usize,
) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::Input("benchmark corpus is empty".into()));
    }
    let cfg = DecodeConfig { beam, expand_roles: false };
    let tokens: usize = sentences.iter().map(|s| s.len()).sum();

    decode_corpus(model, sentences, context, cfg, workers)?;
    let mut rates = Vec::new();
    for _ in 0..reps.max(3) {
        let start = Instant::now();
        decode_corpus(model, sentences, context, cfg, workers)?;
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        rates.push(tokens as f64 / secs);
    }
    rates.sort_by(|a, b| a.total_cmp(b));
    Ok(rates[rates.len() / 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocabs, Token};
    use crate::scorer::tiny_config;
    use crate::synth::{self, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sentence(id: &str, len: usize) -> Sentence {
        let tokens = (0..len)
            .map(|i| Token {
                form: format!("w{i}"),
                lemma: format!("w{i}"),
                pos: "X".into(),
                head: if i == 0 { None } else { Some(0) },
                deprel: "dep".into(),
            })
            .collect();
        Sentence { id: id.into(), tokens }
    }

    fn graph(predicates: &[usize], arcs: &[(usize, usize, &str)]) -> SrlGraph {
        let mut g = SrlGraph::default();
        for &p in predicates {
            g.add_predicate(p);
        }
        for &(p, a, role) in arcs {
            g.insert(p, a, role).unwrap();
        }
        g
    }

    fn pair(id: &str, len: usize, g: SrlGraph) -> (Sentence, SrlGraph) {
        (sentence(id, len), g)
    }

    fn synth_corpus(count: usize, seed: u64) -> Vec<(Sentence, SrlGraph)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        synth::corpus(&mut rng, count, &SynthConfig::default())
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let corpus = synth_corpus(40, 1);
        assert!(corpus.iter().map(|(_, g)| g.num_arcs()).sum::<usize>() > 0);
        let report = evaluate(&corpus, &corpus).unwrap();
        assert_eq!(report.arg, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(report.prd, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        for (bucket, prf) in &report.distance {
            assert!(
                prf.f1 == 1.0 || prf.f1 == 0.0,
                "bucket {bucket} has partial score {prf:?} on identical corpora"
            );
        }
    }

    #[test]
    fn empty_predictions_score_zero() {
        let corpus = synth_corpus(20, 2);
        assert!(corpus.iter().map(|(_, g)| g.num_arcs()).sum::<usize>() > 0);
        let empty: Vec<(Sentence, SrlGraph)> =
            corpus.iter().map(|(s, _)| (s.clone(), SrlGraph::default())).collect();
        let arg = score_triplets(&corpus, &empty).unwrap();
        assert_eq!((arg.precision, arg.recall, arg.f1), (0.0, 0.0, 0.0));
        let prd = score_predicates(&corpus, &empty).unwrap();
        assert_eq!((prd.precision, prd.recall, prd.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn a_mislabeled_arc_is_both_a_false_positive_and_a_false_negative() {
        let gold = vec![pair("s", 4, graph(&[1], &[(1, 0, "A0"), (1, 2, "A1")]))];
        let pred = vec![pair("s", 4, graph(&[1], &[(1, 0, "A0"), (1, 2, "A0")]))];
        let prf = score_triplets(&gold, &pred).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn missed_predicate_has_perfect_precision_and_half_recall() {
        let gold = vec![pair("s", 8, graph(&[1, 5], &[]))];
        let pred = vec![pair("s", 8, graph(&[1], &[]))];
        let prf = score_predicates(&gold, &pred).unwrap();
        assert_eq!(prf.precision, 1.0);
        assert_eq!(prf.recall, 0.5);
        assert!((prf.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn spurious_argumentless_predicate_still_costs_precision() {
        let gold = vec![pair("s", 6, graph(&[1], &[]))];
        let pred = vec![pair("s", 6, graph(&[1, 3], &[]))];
        let prf = score_predicates(&gold, &pred).unwrap();
        assert_eq!(prf.precision, 0.5);
        assert_eq!(prf.recall, 1.0);
        assert!((prf.f1 - 2.0 / 3.0).abs() < 1e-12);
        // No arcs on either side: argument scores stay zero.
        let arg = score_triplets(&gold, &pred).unwrap();
        assert_eq!(arg.f1, 0.0);
    }

    #[test]
    fn swapping_gold_and_predictions_swaps_precision_and_recall() {
        let a = synth_corpus(25, 3);
        let b: Vec<(Sentence, SrlGraph)> = {
            // Same sentences, independently drawn graphs.
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            a.iter()
                .map(|(s, _)| {
                    let g = synth::random_graph(&mut rng, s.len(), &SynthConfig::default());
                    (s.clone(), g)
                })
                .collect()
        };
        let ab = score_triplets(&a, &b).unwrap();
        let ba = score_triplets(&b, &a).unwrap();
        assert_eq!(ab.precision, ba.recall);
        assert_eq!(ab.recall, ba.precision);
        assert_eq!(ab.f1, ba.f1);
    }

    #[test]
    fn distance_buckets_partition_the_overall_counts() {
        let gold = synth_corpus(30, 4);
        let pred: Vec<(Sentence, SrlGraph)> = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            gold.iter()
                .map(|(s, _)| {
                    let g = synth::random_graph(&mut rng, s.len(), &SynthConfig::default());
                    (s.clone(), g)
                })
                .collect()
        };

        let overall = score_triplets(&gold, &pred).unwrap();
        let buckets = distance_buckets(&gold, &pred).unwrap();
        assert_eq!(
            buckets.keys().cloned().collect::<Vec<_>>(),
            vec!["1", "2", "3", "4", "5", "6", "7+"]
        );

        // Rebuild micro counts from per-bucket ratios is lossy; instead
        // recount raw pairs per bucket and compare the totals.
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for ((_, g), (_, p)) in gold.iter().zip(&pred) {
            for (pr, a, role) in p.triplets() {
                if g.role(pr, a) == Some(role) {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
            for (pr, a, role) in g.triplets() {
                if p.role(pr, a) != Some(role) {
                    fn_ += 1;
                }
            }
        }
        let total = Counts { tp, fp, fn_ }.prf();
        assert_eq!(total, overall);
    }

    #[test]
    fn hand_counted_distance_buckets() {
        let gold = vec![pair("s", 12, graph(&[5, 0], &[(5, 1, "A0"), (0, 7, "A1")]))];
        let pred = vec![pair("s", 12, graph(&[5, 2], &[(5, 1, "A0"), (2, 3, "A1")]))];
        let buckets = distance_buckets(&gold, &pred).unwrap();
        // (5,1) matched: distance 4. (2,3) spurious: distance 1.
        // (0,7) missed: distance 7 → the "7+" bucket.
        assert_eq!(buckets["4"], Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(buckets["1"].precision, 0.0);
        assert_eq!(buckets["7+"].recall, 0.0);
        assert_eq!(buckets["2"], Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
    }

    #[test]
    fn well_formed_frames_have_no_violations() {
        let g = graph(
            &[4],
            &[(4, 0, "A0"), (4, 1, "A1"), (4, 2, "C-A1"), (4, 3, "R-A0"), (4, 5, "AM-TMP")],
        );
        assert_eq!(role_violations(std::iter::once(&g)), Violations::default());
    }

    #[test]
    fn duplicate_core_labels_count_beyond_the_first() {
        let one = graph(&[3], &[(3, 0, "A0"), (3, 1, "A0")]);
        assert_eq!(role_violations(std::iter::once(&one)).unique, 1);
        let two = graph(&[3], &[(3, 0, "A1"), (3, 1, "A1"), (3, 2, "A1")]);
        assert_eq!(role_violations(std::iter::once(&two)).unique, 2);
        // Modifier labels may repeat freely.
        let mods = graph(&[3], &[(3, 0, "AM-TMP"), (3, 1, "AM-TMP")]);
        assert_eq!(role_violations(std::iter::once(&mods)), Violations::default());
        // Distinct frames are independent.
        let frames = graph(&[3, 5], &[(3, 0, "A0"), (5, 0, "A0")]);
        assert_eq!(role_violations(std::iter::once(&frames)), Violations::default());
    }

    #[test]
    fn continuation_requires_its_base_at_a_smaller_index() {
        let ok = graph(&[5], &[(5, 1, "A1"), (5, 3, "C-A1")]);
        assert_eq!(role_violations(std::iter::once(&ok)).continuation, 0);
        let late_base = graph(&[5], &[(5, 1, "C-A1"), (5, 3, "A1")]);
        assert_eq!(role_violations(std::iter::once(&late_base)).continuation, 1);
        let orphan = graph(&[5], &[(5, 1, "C-A1")]);
        assert_eq!(role_violations(std::iter::once(&orphan)).continuation, 1);
        // Only one prefix is stripped: C-C-A1 chains onto C-A1.
        let chain = graph(&[5], &[(5, 0, "A1"), (5, 1, "C-A1"), (5, 2, "C-C-A1")]);
        assert_eq!(role_violations(std::iter::once(&chain)).continuation, 0);
    }

    #[test]
    fn reference_requires_its_base_anywhere_in_the_frame() {
        let before = graph(&[5], &[(5, 0, "A0"), (5, 2, "R-A0")]);
        assert_eq!(role_violations(std::iter::once(&before)).reference, 0);
        let after = graph(&[5], &[(5, 0, "R-A0"), (5, 2, "A0")]);
        assert_eq!(role_violations(std::iter::once(&after)).reference, 0);
        let orphan = graph(&[5], &[(5, 0, "R-A0")]);
        assert_eq!(role_violations(std::iter::once(&orphan)).reference, 1);
    }

    #[test]
    fn misaligned_corpora_are_input_errors() {
        let a = vec![pair("x", 3, SrlGraph::default())];
        let b = vec![pair("y", 3, SrlGraph::default())];
        let err = score_triplets(&a, &b).unwrap_err();
        assert!(matches!(err, Error::Input(_)), "{err}");

        let longer =
            vec![pair("x", 3, SrlGraph::default()), pair("z", 3, SrlGraph::default())];
        let err = score_predicates(&a, &longer).unwrap_err();
        assert!(matches!(err, Error::Input(_)), "{err}");
    }

    #[test]
    fn benchmark_reports_a_positive_finite_rate() {
        let corpus = synth_corpus(4, 6);
        let vocabs = build_vocabs(&corpus, 1);
        let model = SrlModel::new(tiny_config(), vocabs, None, 0).unwrap();
        let sents: Vec<Sentence> = corpus.iter().map(|(s, _)| s.clone()).collect();
        let rate = bench_decode(&model, &sents, None, 1, 3, 1).unwrap();
        assert!(rate.is_finite() && rate > 0.0, "rate {rate}");
        assert!(bench_decode(&model, &[], None, 1, 3, 1).is_err());
    }

    #[test]
    fn text_report_mentions_every_section() {
        let corpus = synth_corpus(5, 7);
        let report = evaluate(&corpus, &corpus).unwrap();
        let text = render_text(&report);
        assert!(text.contains("arguments"));
        assert!(text.contains("predicates"));
        assert!(text.contains("distance 7+"));
        assert!(text.contains("violations"));
    }
}
