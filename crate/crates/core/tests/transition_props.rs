//! Property tests for the transition system and its oracle: structural
//! generators build arbitrary gold graphs and arbitrary legal walks, and
//! the invariants must hold for every case proptest explores.

use proptest::prelude::*;

use tsrl::data::SrlGraph;
use tsrl::oracle::{action_count_bound, derive_actions, replay, OracleOptions};
use tsrl::transition::{ActionKind, ActionStep, ParsingOrder, State};

const ORDERS: [ParsingOrder; 3] = [
    ParsingOrder::CloseFirst,
    ParsingOrder::LeftToRight,
    ParsingOrder::RightToLeft,
];

const ROLES: [&str; 6] = ["A0", "A1", "A2", "AM-TMP", "C-A1", "R-A0"];

/// Builds a gold graph from raw generator output, dropping entries that
/// fall outside the sentence or would duplicate an arc.
fn graph_from_raw(n: usize, raw_arcs: &[(usize, usize, usize)], extra_preds: &[usize]) -> SrlGraph {
    let mut gold = SrlGraph::new();
    for &p in extra_preds {
        if p < n {
            gold.add_predicate(p);
        }
    }
    for &(p, a, r) in raw_arcs {
        if p < n && a < n && p != a && gold.role(p, a).is_none() {
            gold.insert(p, a, ROLES[r % ROLES.len()]).expect("checked arc");
        }
    }
    gold
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    /// Any gold graph the generator can express round-trips through
    /// derivation and replay under every parsing order, within the
    /// action-count bound.
    #[test]
    fn oracle_round_trips_arbitrary_graphs(
        n in 1usize..=10,
        raw_arcs in proptest::collection::vec((0usize..10, 0usize..10, 0usize..ROLES.len()), 0..14),
        extra_preds in proptest::collection::vec(0usize..10, 0..3),
    ) {
        let gold = graph_from_raw(n, &raw_arcs, &extra_preds);
        for order in ORDERS {
            let opts = OracleOptions::with_order(order);
            let actions = derive_actions(n, &gold, &opts).expect("derivation succeeds");
            prop_assert!(
                actions.len() <= action_count_bound(n, gold.num_predicates()),
                "{order:?}: {} actions exceed the bound {}",
                actions.len(),
                action_count_bound(n, gold.num_predicates())
            );
            let replayed = replay(n, &actions, order).expect("replay succeeds");
            prop_assert_eq!(&replayed, &gold, "{:?}: replay diverged", order);
        }
    }

    /// Any sequence of legal choices terminates within the bound, keeps
    /// every structural invariant, and ends with a graph whose contents
    /// match the actions taken.
    #[test]
    fn legal_walks_terminate_with_consistent_graphs(
        n in 1usize..=10,
        choices in proptest::collection::vec(any::<u16>(), 1..64),
        order_index in 0usize..3,
    ) {
        let order = ORDERS[order_index];
        let bound = action_count_bound(n, n);
        let mut state = State::initial(n).expect("initial state");
        let mut predicates = 0usize;
        let mut arcs = 0usize;
        let mut steps = 0usize;
        while !state.is_terminal() {
            prop_assert!(steps < bound, "walk exceeded the action bound {}", bound);
            let legal = state.legal_actions(order).expect("legal actions exist");
            let kind = legal[choices[steps % choices.len()] as usize % legal.len()];
            match kind {
                ActionKind::PrdGen => predicates += 1,
                ActionKind::LeftArc | ActionKind::RightArc => arcs += 1,
                _ => {}
            }
            let step = if kind.is_arc() {
                ActionStep::arc(kind, ROLES[steps % ROLES.len()])
            } else {
                ActionStep::plain(kind)
            };
            state = state.apply(&step, order).expect("legal action applies");
            state.check_invariants().expect("invariants hold after every step");
            steps += 1;
        }
        prop_assert_eq!(state.graph.num_predicates(), predicates);
        prop_assert_eq!(state.graph.num_arcs(), arcs);
        prop_assert_eq!(state.history.len(), steps);
    }
}
