//! Static oracle: derives the action sequence that reproduces a gold
//! graph, and the replay/round-trip machinery used to validate it.

use std::collections::BTreeMap;

use crate::data::{Sentence, SrlGraph};
use crate::error::{Error, Result};
use crate::transition::{ActionKind, ActionStep, ParsingOrder, Side, State, TraceStep};

pub use crate::transition::ParsingOrder as Order;

/// Oracle switches. By default the oracle closes a predicate as soon as
/// its last gold argument is attached; `trailing_no_arcs` instead keeps
/// popping NO-ARC until both stacks are exhausted before SHIFT.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleOptions {
    pub order: ParsingOrder,
    pub trailing_no_arcs: bool,
}

impl OracleOptions {
    pub fn with_order(order: ParsingOrder) -> Self {
        OracleOptions { order, ..Default::default() }
    }
}

fn validate_gold(n: usize, gold: &SrlGraph) -> Result<()> {
    if let Some(max) = gold.max_index() {
        if max >= n {
            return Err(Error::Input(format!(
                "gold graph references token {max} of a {n}-token sentence"
            )));
        }
    }
    Ok(())
}

/// Derives the gold action sequence for one sentence. The result replays
/// to exactly `gold` under the same order, and every step is legal when
/// emitted.
pub fn derive_actions(n: usize, gold: &SrlGraph, opts: &OracleOptions) -> Result<Vec<ActionStep>> {
    validate_gold(n, gold)?;
    let frames: BTreeMap<usize, BTreeMap<usize, &str>> = gold
        .frames()
        .into_iter()
        .map(|(p, args)| (p, args.into_iter().collect()))
        .collect();

    let mut state = State::initial(n)?;
    let mut steps: Vec<ActionStep> = Vec::new();
    while !state.is_terminal() {
        let step = match state.lambda_p {
            None => {
                let cand = state.candidate().expect("non-terminal implies a candidate");
                if frames.contains_key(&cand) {
                    ActionStep::plain(ActionKind::PrdGen)
                } else {
                    ActionStep::plain(ActionKind::NoPrd)
                }
            }
            Some(p) => {
                let frame = &frames[&p];
                // Arguments not yet attached are exactly those still
                // sitting in a context stack.
                let remaining = state
                    .sigma_l
                    .iter()
                    .chain(&state.sigma_r)
                    .filter(|a| frame.contains_key(a))
                    .count();
                if remaining == 0 && !opts.trailing_no_arcs {
                    ActionStep::plain(ActionKind::Shift)
                } else {
                    match state.schedule(opts.order) {
                        None => ActionStep::plain(ActionKind::Shift),
                        Some(Side::Left) => {
                            let top = state.sigma_l_top().expect("left schedule implies a top");
                            match frame.get(&top) {
                                Some(role) => ActionStep::arc(ActionKind::LeftArc, *role),
                                None => ActionStep::plain(ActionKind::NoArc),
                            }
                        }
                        Some(Side::Right) => {
                            let top = state.sigma_r_top().expect("right schedule implies a top");
                            match frame.get(&top) {
                                Some(role) => ActionStep::arc(ActionKind::RightArc, *role),
                                None => ActionStep::plain(ActionKind::NoArc),
                            }
                        }
                    }
                }
            }
        };
        state = state.apply(&step, opts.order)?;
        steps.push(step);
    }
    debug_assert_eq!(&state.graph, gold);
    Ok(steps)
}

/// Applies a full action sequence and returns the resulting graph.
/// An illegal action fails with its step index and the violated
/// constraint.
pub fn replay(n: usize, actions: &[ActionStep], order: ParsingOrder) -> Result<SrlGraph> {
    let mut state = State::initial(n)?;
    for (t, step) in actions.iter().enumerate() {
        state = state
            .apply(step, order)
            .map_err(|e| Error::Contract(format!("step {t}: {e}")))?;
    }
    Ok(state.graph)
}

/// Result of an oracle round-trip over a corpus.
#[derive(Debug, Default)]
pub struct RoundTrip {
    pub checked: usize,
    pub actions: usize,
    pub failures: Vec<String>,
}

impl RoundTrip {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks replay(derive_actions(gold)) == gold for every sentence.
pub fn roundtrip_check(corpus: &[(Sentence, SrlGraph)], opts: &OracleOptions) -> RoundTrip {
    let mut report = RoundTrip::default();
    for (sent, gold) in corpus {
        report.checked += 1;
        match derive_actions(sent.len(), gold, opts) {
            Err(e) => report.failures.push(format!("{}: derivation failed: {e}", sent.id)),
            Ok(actions) => {
                report.actions += actions.len();
                match replay(sent.len(), &actions, opts.order) {
                    Err(e) => report.failures.push(format!("{}: replay failed: {e}", sent.id)),
                    Ok(got) => {
                        if &got != gold {
                            report.failures.push(format!(
                                "{}: replayed graph differs from gold",
                                sent.id
                            ));
                        }
                    }
                }
            }
        }
    }
    report
}

/// Derivation trace: one captured row per oracle step.
pub fn trace(sent: &Sentence, gold: &SrlGraph, opts: &OracleOptions) -> Result<Vec<TraceStep>> {
    let actions = derive_actions(sent.len(), gold, opts)?;
    let mut state = State::initial(sent.len())?;
    let mut rows = Vec::with_capacity(actions.len());
    for (t, step) in actions.iter().enumerate() {
        rows.push(TraceStep::capture(t, &state, step, opts.order));
        state = state.apply(step, opts.order)?;
    }
    Ok(rows)
}

/// Upper bound on oracle sequence length: one consuming action per token
/// plus, per predicate, PRD-GEN, at most n-1 pops and SHIFT.
pub fn action_count_bound(n: usize, predicates: usize) -> usize {
    n + predicates * (n + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kinds(steps: &[ActionStep]) -> Vec<ActionKind> {
        steps.iter().map(|s| s.kind).collect()
    }

    #[test]
    fn three_token_canonical_sequence() {
        let mut gold = SrlGraph::new();
        gold.insert(1, 0, "A0").unwrap();
        gold.insert(1, 2, "A1").unwrap();
        let steps = derive_actions(3, &gold, &OracleOptions::default()).unwrap();
        assert_eq!(
            kinds(&steps),
            vec![
                ActionKind::NoPrd,
                ActionKind::PrdGen,
                ActionKind::LeftArc,
                ActionKind::RightArc,
                ActionKind::Shift,
                ActionKind::NoPrd,
            ]
        );
        assert_eq!(steps[2].role.as_deref(), Some("A0"));
        assert_eq!(steps[3].role.as_deref(), Some("A1"));
        assert_eq!(replay(3, &steps, ParsingOrder::CloseFirst).unwrap(), gold);
    }

    #[test]
    fn no_predicates_yields_all_no_prd() {
        let steps = derive_actions(4, &SrlGraph::new(), &OracleOptions::default()).unwrap();
        assert_eq!(kinds(&steps), vec![ActionKind::NoPrd; 4]);
    }

    #[test]
    fn predicate_as_argument_of_later_predicate() {
        // Tokens: When(0) witnesses(1) stay(2) silent(3) ,(4) nothing(5)
        // changes(6) .(7); stay has arguments {1:A1, 3:A3}, changes has
        // {2:A-TMP, 5:A1}. Hand-derived close-first sequence.
        let mut gold = SrlGraph::new();
        gold.insert(2, 1, "A1").unwrap();
        gold.insert(2, 3, "A3").unwrap();
        gold.insert(6, 2, "A-TMP").unwrap();
        gold.insert(6, 5, "A1").unwrap();
        let steps = derive_actions(8, &gold, &OracleOptions::default()).unwrap();
        use ActionKind::*;
        assert_eq!(
            kinds(&steps),
            vec![
                NoPrd, NoPrd, PrdGen, LeftArc, RightArc, Shift, NoPrd, NoPrd, NoPrd, PrdGen,
                LeftArc, NoArc, NoArc, NoArc, LeftArc, Shift, NoPrd,
            ]
        );
        assert_eq!(steps[10].role.as_deref(), Some("A1"));
        assert_eq!(steps[14].role.as_deref(), Some("A-TMP"));
        assert_eq!(replay(8, &steps, ParsingOrder::CloseFirst).unwrap(), gold);
        assert!(steps.len() <= action_count_bound(8, 2));
    }

    #[test]
    fn argumentless_predicate_is_prd_gen_then_shift() {
        let mut gold = SrlGraph::new();
        gold.add_predicate(1);
        let steps = derive_actions(2, &gold, &OracleOptions::default()).unwrap();
        assert_eq!(
            kinds(&steps),
            vec![ActionKind::NoPrd, ActionKind::PrdGen, ActionKind::Shift]
        );
        assert_eq!(replay(2, &steps, ParsingOrder::CloseFirst).unwrap(), gold);
    }

    #[test]
    fn out_of_range_gold_is_rejected() {
        let mut gold = SrlGraph::new();
        gold.insert(1, 7, "A0").unwrap();
        let err = derive_actions(5, &gold, &OracleOptions::default()).unwrap_err();
        assert!(err.to_string().contains("token 7"));
    }

    #[test]
    fn empty_sequence_on_empty_sentence_is_rejected() {
        assert!(replay(0, &[], ParsingOrder::CloseFirst).is_err());
    }

    #[test]
    fn corrupted_sequence_fails_with_step_index() {
        let mut gold = SrlGraph::new();
        gold.insert(1, 0, "A0").unwrap();
        let mut steps = derive_actions(3, &gold, &OracleOptions::default()).unwrap();
        // Duplicate the LEFT-ARC: the second one acts on an exhausted side.
        let arc = steps[2].clone();
        steps.insert(3, arc);
        let err = replay(3, &steps, ParsingOrder::CloseFirst).unwrap_err();
        assert!(err.to_string().contains("step 3"));
    }

    #[test]
    fn close_first_arc_distances_are_nondecreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = synth::SynthConfig::default();
        for _ in 0..300 {
            let (sent, gold) = synth::random_sentence(&mut rng, &cfg);
            let steps = derive_actions(sent.len(), &gold, &OracleOptions::default()).unwrap();
            let mut state = State::initial(sent.len()).unwrap();
            let mut last_dist: Option<usize> = None;
            for step in &steps {
                if step.kind.is_arc() {
                    let p = state.lambda_p.unwrap();
                    let a = match step.kind {
                        ActionKind::LeftArc => state.sigma_l_top().unwrap(),
                        _ => state.sigma_r_top().unwrap(),
                    };
                    let d = if a < p { p - a } else { a - p };
                    if let Some(prev) = last_dist {
                        assert!(d >= prev, "{}: arc distance decreased", sent.id);
                    }
                    last_dist = Some(d);
                }
                if step.kind == ActionKind::Shift {
                    last_dist = None;
                }
                state = state.apply(step, ParsingOrder::CloseFirst).unwrap();
            }
        }
    }

    #[test]
    fn no_arc_never_pops_past_farthest_remaining_argument() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = synth::SynthConfig::default();
        for _ in 0..300 {
            let (sent, gold) = synth::random_sentence(&mut rng, &cfg);
            let frames = gold.frames();
            let steps = derive_actions(sent.len(), &gold, &OracleOptions::default()).unwrap();
            let mut state = State::initial(sent.len()).unwrap();
            for step in &steps {
                if step.kind == ActionKind::NoArc {
                    let p = state.lambda_p.unwrap();
                    let top = match state.schedule(ParsingOrder::CloseFirst).unwrap() {
                        Side::Left => state.sigma_l_top().unwrap(),
                        Side::Right => state.sigma_r_top().unwrap(),
                    };
                    let td = if top < p { p - top } else { top - p };
                    let remaining_max = state
                        .sigma_l
                        .iter()
                        .chain(&state.sigma_r)
                        .filter(|a| frames[&p].iter().any(|(x, _)| x == *a))
                        .map(|&a| if a < p { p - a } else { a - p })
                        .max()
                        .expect("NO-ARC requires a remaining argument");
                    assert!(td <= remaining_max);
                }
                state = state.apply(step, ParsingOrder::CloseFirst).unwrap();
            }
        }
    }

    #[test]
    fn all_orders_replay_to_gold_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = synth::SynthConfig::default();
        for _ in 0..200 {
            let (sent, gold) = synth::random_sentence(&mut rng, &cfg);
            for order in [
                ParsingOrder::CloseFirst,
                ParsingOrder::LeftToRight,
                ParsingOrder::RightToLeft,
            ] {
                let opts = OracleOptions::with_order(order);
                let steps = derive_actions(sent.len(), &gold, &opts).unwrap();
                assert!(steps.len() <= action_count_bound(sent.len(), gold.num_predicates()));
                assert_eq!(replay(sent.len(), &steps, order).unwrap(), gold, "{order:?}");
            }
        }
    }

    #[test]
    fn trailing_no_arcs_flag_exhausts_stacks_before_shift() {
        let mut gold = SrlGraph::new();
        gold.insert(2, 1, "A0").unwrap();
        let opts = OracleOptions { trailing_no_arcs: true, ..Default::default() };
        let steps = derive_actions(5, &gold, &opts).unwrap();
        // Episode for predicate 2: LEFT-ARC then NO-ARC through tokens
        // 0, 3, 4 before SHIFT (early variant stops after the arc).
        let episode: Vec<ActionKind> = kinds(&steps)[3..8].to_vec();
        use ActionKind::*;
        assert_eq!(episode, vec![LeftArc, NoArc, NoArc, NoArc, Shift]);
        assert_eq!(replay(5, &steps, opts.order).unwrap(), gold);

        let early = derive_actions(5, &gold, &OracleOptions::default()).unwrap();
        assert_eq!(kinds(&early)[3..5], [LeftArc, Shift]);
        assert_eq!(replay(5, &early, ParsingOrder::CloseFirst).unwrap(), gold);
    }
}
