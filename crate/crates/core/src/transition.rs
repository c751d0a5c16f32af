//! The incremental transition system. One pass over the sentence decides
//! for each token whether it is a predicate (NO-PRD / PRD-GEN); after
//! PRD-GEN the two context stacks are searched for arguments (LEFT-ARC /
//! RIGHT-ARC / NO-ARC) until SHIFT closes the predicate and restores the
//! stacks for the next candidate.

use serde::{Deserialize, Serialize};

use crate::data::SrlGraph;
use crate::error::{Error, Result};

/// The six transition kinds. The discriminant order is the scoring and
/// tie-breaking order everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    NoPrd,
    PrdGen,
    LeftArc,
    RightArc,
    NoArc,
    Shift,
}

pub const NUM_ACTION_KINDS: usize = 6;

impl ActionKind {
    pub const ALL: [ActionKind; NUM_ACTION_KINDS] = [
        ActionKind::NoPrd,
        ActionKind::PrdGen,
        ActionKind::LeftArc,
        ActionKind::RightArc,
        ActionKind::NoArc,
        ActionKind::Shift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::NoPrd => "NO-PRD",
            ActionKind::PrdGen => "PRD-GEN",
            ActionKind::LeftArc => "LEFT-ARC",
            ActionKind::RightArc => "RIGHT-ARC",
            ActionKind::NoArc => "NO-ARC",
            ActionKind::Shift => "SHIFT",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionKind> {
        ActionKind::ALL.get(i).copied()
    }

    pub fn is_arc(self) -> bool {
        matches!(self, ActionKind::LeftArc | ActionKind::RightArc)
    }
}

/// One applied action: a kind plus, for arc actions, the role label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionStep {
    pub kind: ActionKind,
    pub role: Option<String>,
}

impl ActionStep {
    pub fn plain(kind: ActionKind) -> Self {
        ActionStep { kind, role: None }
    }

    pub fn arc(kind: ActionKind, role: impl Into<String>) -> Self {
        ActionStep { kind, role: Some(role.into()) }
    }

    pub fn label(&self) -> String {
        match &self.role {
            Some(r) => format!("{}[{}]", self.kind.name(), r),
            None => self.kind.name().to_string(),
        }
    }
}

/// Which context stack the next arc decision inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Argument search order around each predicate. `CloseFirst` inspects
/// whichever stack top is nearer to the predicate (ties go left);
/// `LeftToRight` exhausts the left stack before touching the right one,
/// `RightToLeft` is the mirror. Within one stack the search always runs
/// from the predicate outward, because pops are irreversible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsingOrder {
    #[default]
    CloseFirst,
    LeftToRight,
    RightToLeft,
}

/// Full configuration of the machine over one sentence of `n` tokens.
///
/// Stacks keep their top at the back of the `Vec`. `beta` is always the
/// contiguous token suffix `beta_front..n`, so only its front is stored.
/// While no predicate is active, `sigma_r` mirrors the buffer tail in
/// reverse (nearest upcoming token on top) so the right context can be
/// searched by popping.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub n: usize,
    pub sigma_l: Vec<usize>,
    pub alpha_l: Vec<usize>,
    pub lambda_p: Option<usize>,
    pub alpha_r: Vec<usize>,
    pub sigma_r: Vec<usize>,
    pub beta_front: usize,
    pub graph: SrlGraph,
    pub history: Vec<ActionStep>,
}

impl State {
    /// Start state: the buffer holds all tokens and `sigma_r` pre-loads
    /// every token except the first in reverse order.
    pub fn initial(n: usize) -> Result<State> {
        if n == 0 {
            return Err(Error::Input("cannot parse an empty sentence".into()));
        }
        Ok(State {
            n,
            sigma_l: Vec::new(),
            alpha_l: Vec::new(),
            lambda_p: None,
            alpha_r: Vec::new(),
            sigma_r: (1..n).rev().collect(),
            beta_front: 0,
            graph: SrlGraph::new(),
            history: Vec::new(),
        })
    }

    pub fn is_terminal(&self) -> bool {
        self.beta_front == self.n && self.lambda_p.is_none()
    }

    /// Front of the buffer: the token currently under consideration.
    pub fn candidate(&self) -> Option<usize> {
        (self.beta_front < self.n).then_some(self.beta_front)
    }

    pub fn beta_len(&self) -> usize {
        self.n - self.beta_front
    }

    pub fn sigma_l_top(&self) -> Option<usize> {
        self.sigma_l.last().copied()
    }

    pub fn sigma_r_top(&self) -> Option<usize> {
        self.sigma_r.last().copied()
    }

    /// Stack the next arc decision inspects, `None` when no predicate is
    /// active or both stacks are exhausted.
    pub fn schedule(&self, order: ParsingOrder) -> Option<Side> {
        let p = self.lambda_p?;
        let l = self.sigma_l_top();
        let r = self.sigma_r_top();
        match order {
            ParsingOrder::CloseFirst => match (l, r) {
                (None, None) => None,
                (Some(_), None) => Some(Side::Left),
                (None, Some(_)) => Some(Side::Right),
                (Some(a), Some(b)) => {
                    debug_assert!(a < p && b > p);
                    if p - a <= b - p {
                        Some(Side::Left)
                    } else {
                        Some(Side::Right)
                    }
                }
            },
            ParsingOrder::LeftToRight => l.map(|_| Side::Left).or(r.map(|_| Side::Right)),
            ParsingOrder::RightToLeft => r.map(|_| Side::Right).or(l.map(|_| Side::Left)),
        }
    }

    /// Action kinds legal in this state, in scoring order. Calling this on
    /// a terminal state is a caller bug.
    pub fn legal_actions(&self, order: ParsingOrder) -> Result<Vec<ActionKind>> {
        if self.is_terminal() {
            return Err(Error::Contract("legal_actions called on a terminal state".into()));
        }
        if self.lambda_p.is_none() {
            return Ok(vec![ActionKind::NoPrd, ActionKind::PrdGen]);
        }
        let mut out = Vec::with_capacity(3);
        match self.schedule(order) {
            Some(Side::Left) => {
                out.push(ActionKind::LeftArc);
                out.push(ActionKind::NoArc);
            }
            Some(Side::Right) => {
                out.push(ActionKind::RightArc);
                out.push(ActionKind::NoArc);
            }
            None => {}
        }
        out.push(ActionKind::Shift);
        Ok(out)
    }

    /// Applies one action, returning the successor state. Illegal actions
    /// are rejected with the violated constraint named.
    pub fn apply(&self, step: &ActionStep, order: ParsingOrder) -> Result<State> {
        let mut s = self.clone();
        match step.kind {
            ActionKind::NoPrd => {
                let cand = s.require_no_predicate("NO-PRD")?;
                s.sigma_l.push(cand);
                s.sigma_r.pop(); // no-op on the last token
                s.beta_front += 1;
            }
            ActionKind::PrdGen => {
                let cand = s.require_no_predicate("PRD-GEN")?;
                s.lambda_p = Some(cand);
                s.graph.add_predicate(cand);
            }
            ActionKind::LeftArc => {
                let p = s.require_predicate("LEFT-ARC")?;
                s.require_side(order, Side::Left, "LEFT-ARC")?;
                let role = step.role.clone().ok_or_else(|| {
                    Error::Contract("LEFT-ARC requires a role label".into())
                })?;
                let a = s.sigma_l.pop().expect("schedule guarantees a left top");
                s.graph.insert(p, a, role).map_err(|e| {
                    Error::Contract(format!("LEFT-ARC produced an invalid arc: {e}"))
                })?;
                s.alpha_l.push(a);
            }
            ActionKind::RightArc => {
                let p = s.require_predicate("RIGHT-ARC")?;
                s.require_side(order, Side::Right, "RIGHT-ARC")?;
                let role = step.role.clone().ok_or_else(|| {
                    Error::Contract("RIGHT-ARC requires a role label".into())
                })?;
                let a = s.sigma_r.pop().expect("schedule guarantees a right top");
                s.graph.insert(p, a, role).map_err(|e| {
                    Error::Contract(format!("RIGHT-ARC produced an invalid arc: {e}"))
                })?;
                s.alpha_r.push(a);
            }
            ActionKind::NoArc => {
                s.require_predicate("NO-ARC")?;
                match s.schedule(order) {
                    Some(Side::Left) => {
                        let a = s.sigma_l.pop().expect("left schedule implies a left top");
                        s.alpha_l.push(a);
                    }
                    Some(Side::Right) => {
                        let a = s.sigma_r.pop().expect("right schedule implies a right top");
                        s.alpha_r.push(a);
                    }
                    None => {
                        return Err(Error::Contract(
                            "NO-ARC requires a non-exhausted context stack".into(),
                        ));
                    }
                }
            }
            ActionKind::Shift => {
                let cand = match (s.lambda_p, s.candidate()) {
                    (Some(_), Some(c)) => c,
                    (None, _) => {
                        return Err(Error::Contract("SHIFT requires an active predicate".into()))
                    }
                    (_, None) => {
                        return Err(Error::Contract("SHIFT requires a buffer candidate".into()))
                    }
                };
                // Undo the episode's pops, restoring both stacks to their
                // contents at the matching PRD-GEN.
                while let Some(a) = s.alpha_l.pop() {
                    s.sigma_l.push(a);
                }
                while let Some(a) = s.alpha_r.pop() {
                    s.sigma_r.push(a);
                }
                s.lambda_p = None;
                s.sigma_l.push(cand);
                s.sigma_r.pop(); // no-op on the last token
                s.beta_front += 1;
            }
        }
        s.history.push(step.clone());
        Ok(s)
    }

    fn require_no_predicate(&mut self, what: &str) -> Result<usize> {
        if self.lambda_p.is_some() {
            return Err(Error::Contract(format!(
                "{what} requires no active predicate"
            )));
        }
        self.candidate()
            .ok_or_else(|| Error::Contract(format!("{what} requires a non-empty buffer")))
    }

    fn require_predicate(&self, what: &str) -> Result<usize> {
        self.lambda_p
            .ok_or_else(|| Error::Contract(format!("{what} requires an active predicate")))
    }

    fn require_side(&self, order: ParsingOrder, side: Side, what: &str) -> Result<()> {
        if self.schedule(order) != Some(side) {
            return Err(Error::Contract(format!(
                "{what} is not on the scheduled side"
            )));
        }
        Ok(())
    }

    /// Structural invariants, checked by fuzz tests after every step.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Contract(msg));
        let n = self.n;
        for &i in self
            .sigma_l
            .iter()
            .chain(&self.alpha_l)
            .chain(&self.sigma_r)
            .chain(&self.alpha_r)
        {
            if i >= n {
                return fail(format!("index {i} out of range for {n} tokens"));
            }
        }
        if self.beta_front > n {
            return fail(format!("buffer front {} past the end", self.beta_front));
        }
        let mut left: Vec<usize> = self.sigma_l.iter().chain(&self.alpha_l).copied().collect();
        if let Some(p) = self.lambda_p {
            left.push(p);
        }
        let total = left.len();
        left.sort_unstable();
        left.dedup();
        if left.len() != total {
            return fail("duplicate index among sigma_l, alpha_l, lambda_p".into());
        }
        let mut right: Vec<usize> = self.sigma_r.iter().chain(&self.alpha_r).copied().collect();
        let total = right.len();
        right.sort_unstable();
        right.dedup();
        if right.len() != total {
            return fail("duplicate index among sigma_r, alpha_r".into());
        }
        if self.lambda_p.is_none() {
            if !self.alpha_l.is_empty() || !self.alpha_r.is_empty() {
                return fail("alpha stacks must be empty with no active predicate".into());
            }
            let want: Vec<usize> = ((self.beta_front + 1).min(n)..n).rev().collect();
            if self.sigma_r != want {
                return fail(format!(
                    "sigma_r {:?} does not mirror the buffer tail {:?}",
                    self.sigma_r, want
                ));
            }
            let mut seen: Vec<usize> = self.sigma_l.clone();
            seen.extend(self.beta_front..n);
            seen.sort_unstable();
            let want: Vec<usize> = (0..n).collect();
            if seen != want {
                return fail("sigma_l and the buffer do not partition the sentence".into());
            }
        }
        for (p, a, _) in self.graph.triplets() {
            if p >= n || a >= n {
                return fail(format!("arc ({p}, {a}) out of range"));
            }
            if !self.graph.is_predicate(p) {
                return fail(format!("arc predicate {p} was never generated"));
            }
        }
        Ok(())
    }
}

/// One row of a derivation or decode trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub action: ActionStep,
    pub side: Option<Side>,
    pub candidate: Option<usize>,
    pub sigma_l_top: Option<usize>,
    pub sigma_r_top: Option<usize>,
    pub added: Option<(usize, usize, String)>,
    pub log_prob: Option<f64>,
}

impl TraceStep {
    /// Captures everything about applying `step` to `state` except the
    /// log-probability, which only decoding knows.
    pub fn capture(index: usize, state: &State, step: &ActionStep, order: ParsingOrder) -> Self {
        let side = match step.kind {
            ActionKind::LeftArc | ActionKind::RightArc | ActionKind::NoArc => state.schedule(order),
            _ => None,
        };
        let added = match (step.kind, state.lambda_p) {
            (ActionKind::LeftArc, Some(p)) => state
                .sigma_l_top()
                .map(|a| (p, a, step.role.clone().unwrap_or_default())),
            (ActionKind::RightArc, Some(p)) => state
                .sigma_r_top()
                .map(|a| (p, a, step.role.clone().unwrap_or_default())),
            _ => None,
        };
        TraceStep {
            step: index,
            action: step.clone(),
            side,
            candidate: state.candidate(),
            sigma_l_top: state.sigma_l_top(),
            sigma_r_top: state.sigma_r_top(),
            added,
            log_prob: None,
        }
    }
}

/// Renders trace rows as a fixed-width table, one line per step.
pub fn format_trace(steps: &[TraceStep], forms: &[String]) -> String {
    let name = |i: Option<usize>| -> String {
        match i {
            Some(i) => format!("{}({})", forms.get(i).map(|s| s.as_str()).unwrap_or("?"), i),
            None => "-".to_string(),
        }
    };
    let mut out = String::new();
    for t in steps {
        let side = match t.side {
            Some(Side::Left) => "left",
            Some(Side::Right) => "right",
            None => "-",
        };
        let added = match &t.added {
            Some((p, a, r)) => format!("+({p},{a},{r})"),
            None => "-".to_string(),
        };
        let lp = match t.log_prob {
            Some(lp) => format!(" logp={lp:.4}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{:>3}  {:<16} side={:<5} cand={:<12} sl={:<12} sr={:<12} {}{}\n",
            t.step,
            t.action.label(),
            side,
            name(t.candidate),
            name(t.sigma_l_top),
            name(t.sigma_r_top),
            added,
            lp,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CF: ParsingOrder = ParsingOrder::CloseFirst;

    fn step(kind: ActionKind) -> ActionStep {
        ActionStep::plain(kind)
    }

    #[test]
    fn initial_state_preloads_right_stack() {
        let s = State::initial(3).unwrap();
        assert_eq!(s.sigma_r, vec![2, 1]);
        assert_eq!(s.candidate(), Some(0));
        assert!(s.sigma_l.is_empty());
        assert!(!s.is_terminal());
        s.check_invariants().unwrap();

        let s = State::initial(1).unwrap();
        assert!(s.sigma_r.is_empty());
        assert_eq!(s.candidate(), Some(0));
    }

    #[test]
    fn empty_sentence_is_rejected() {
        assert!(State::initial(0).is_err());
    }

    #[test]
    fn single_token_no_prd_terminates() {
        let s = State::initial(1).unwrap();
        let s = s.apply(&step(ActionKind::NoPrd), CF).unwrap();
        assert!(s.is_terminal());
        assert_eq!(s.sigma_l, vec![0]);
        s.check_invariants().unwrap();
    }

    #[test]
    fn predicate_decision_legality() {
        let s = State::initial(2).unwrap();
        assert_eq!(
            s.legal_actions(CF).unwrap(),
            vec![ActionKind::NoPrd, ActionKind::PrdGen]
        );
    }

    #[test]
    fn schedule_prefers_strictly_nearer_top_and_ties_left() {
        // Predicate at 2 of 6 tokens: sigma_l top 1 (distance 1),
        // sigma_r top 3 (distance 1) after PRD-GEN preceded by NO-PRDs.
        let mut s = State::initial(6).unwrap();
        s = s.apply(&step(ActionKind::NoPrd), CF).unwrap();
        s = s.apply(&step(ActionKind::NoPrd), CF).unwrap();
        s = s.apply(&step(ActionKind::PrdGen), CF).unwrap();
        assert_eq!(s.schedule(CF), Some(Side::Left));
        assert_eq!(
            s.legal_actions(CF).unwrap(),
            vec![ActionKind::LeftArc, ActionKind::NoArc, ActionKind::Shift]
        );
        // Popping the left top makes the right top strictly nearer.
        s = s.apply(&step(ActionKind::NoArc), CF).unwrap();
        assert_eq!(s.schedule(CF), Some(Side::Right));
        assert_eq!(
            s.legal_actions(CF).unwrap(),
            vec![ActionKind::RightArc, ActionKind::NoArc, ActionKind::Shift]
        );
    }

    #[test]
    fn exhausted_stacks_leave_only_shift() {
        let mut s = State::initial(1).unwrap();
        s = s.apply(&step(ActionKind::PrdGen), CF).unwrap();
        assert_eq!(s.schedule(CF), None);
        assert_eq!(s.legal_actions(CF).unwrap(), vec![ActionKind::Shift]);
        s = s.apply(&step(ActionKind::Shift), CF).unwrap();
        assert!(s.is_terminal());
        assert_eq!(s.graph.num_predicates(), 1);
    }

    #[test]
    fn worked_three_token_example() {
        // Predicate at token 1 with arguments 0:A0 and 2:A1.
        let mut s = State::initial(3).unwrap();
        s = s.apply(&step(ActionKind::NoPrd), CF).unwrap();
        assert_eq!((s.sigma_l.clone(), s.sigma_r.clone()), (vec![0], vec![2]));
        s = s.apply(&step(ActionKind::PrdGen), CF).unwrap();
        assert_eq!(s.lambda_p, Some(1));
        assert_eq!(s.candidate(), Some(1));
        s = s.apply(&ActionStep::arc(ActionKind::LeftArc, "A0"), CF).unwrap();
        assert_eq!(s.alpha_l, vec![0]);
        s = s.apply(&ActionStep::arc(ActionKind::RightArc, "A1"), CF).unwrap();
        assert_eq!(s.alpha_r, vec![2]);
        assert_eq!(s.legal_actions(CF).unwrap(), vec![ActionKind::Shift]);
        s = s.apply(&step(ActionKind::Shift), CF).unwrap();
        assert_eq!(s.sigma_l, vec![0, 1]);
        assert_eq!(s.sigma_r, Vec::<usize>::new());
        assert_eq!(s.lambda_p, None);
        s.check_invariants().unwrap();
        s = s.apply(&step(ActionKind::NoPrd), CF).unwrap();
        assert!(s.is_terminal());

        let mut want = SrlGraph::new();
        want.insert(1, 0, "A0").unwrap();
        want.insert(1, 2, "A1").unwrap();
        assert_eq!(s.graph, want);
        assert_eq!(s.history.len(), 6);
    }

    #[test]
    fn shift_restores_stacks_to_prd_gen_snapshot() {
        let mut s = State::initial(5).unwrap();
        s = s.apply(&step(ActionKind::NoPrd), CF).unwrap();
        s = s.apply(&step(ActionKind::NoPrd), CF).unwrap();
        s = s.apply(&step(ActionKind::PrdGen), CF).unwrap();
        let sl_before = s.sigma_l.clone();
        let sr_before = s.sigma_r.clone();
        s = s.apply(&step(ActionKind::NoArc), CF).unwrap();
        s = s.apply(&step(ActionKind::NoArc), CF).unwrap();
        s = s.apply(&step(ActionKind::NoArc), CF).unwrap();
        s = s.apply(&step(ActionKind::Shift), CF).unwrap();
        let mut want_sl = sl_before;
        want_sl.push(2);
        let mut want_sr = sr_before;
        want_sr.pop();
        assert_eq!(s.sigma_l, want_sl);
        assert_eq!(s.sigma_r, want_sr);
        s.check_invariants().unwrap();
    }

    #[test]
    fn illegal_actions_name_the_constraint() {
        let s = State::initial(2).unwrap();
        let err = s.apply(&step(ActionKind::Shift), CF).unwrap_err();
        assert!(err.to_string().contains("SHIFT requires an active predicate"));

        let err = s.apply(&step(ActionKind::NoArc), CF).unwrap_err();
        assert!(err.to_string().contains("active predicate"));

        let s = s.apply(&step(ActionKind::PrdGen), CF).unwrap();
        let err = s.apply(&step(ActionKind::PrdGen), CF).unwrap_err();
        assert!(err.to_string().contains("no active predicate"));

        // Scheduled side is right (sigma_l empty): LEFT-ARC must fail.
        let err = s
            .apply(&ActionStep::arc(ActionKind::LeftArc, "A0"), CF)
            .unwrap_err();
        assert!(err.to_string().contains("scheduled side"));

        let err = s.apply(&step(ActionKind::LeftArc), CF).unwrap_err();
        assert!(err.to_string().is_empty() == false);
    }

    #[test]
    fn terminal_state_rejects_legal_actions_query() {
        let mut s = State::initial(1).unwrap();
        s = s.apply(&step(ActionKind::NoPrd), CF).unwrap();
        assert!(s.legal_actions(CF).is_err());
    }

    #[test]
    fn left_to_right_order_exhausts_left_stack_first() {
        let mut s = State::initial(4).unwrap();
        s = s.apply(&step(ActionKind::NoPrd), CF).unwrap();
        s = s.apply(&step(ActionKind::NoPrd), CF).unwrap();
        s = s.apply(&step(ActionKind::PrdGen), CF).unwrap();
        let l2r = ParsingOrder::LeftToRight;
        assert_eq!(s.schedule(l2r), Some(Side::Left));
        s = s.apply(&step(ActionKind::NoArc), l2r).unwrap();
        assert_eq!(s.schedule(l2r), Some(Side::Left));
        s = s.apply(&step(ActionKind::NoArc), l2r).unwrap();
        assert_eq!(s.schedule(l2r), Some(Side::Right));

        let r2l = ParsingOrder::RightToLeft;
        let mut s = State::initial(4).unwrap();
        s = s.apply(&step(ActionKind::NoPrd), r2l).unwrap();
        s = s.apply(&step(ActionKind::NoPrd), r2l).unwrap();
        s = s.apply(&step(ActionKind::PrdGen), r2l).unwrap();
        assert_eq!(s.schedule(r2l), Some(Side::Right));
        s = s.apply(&step(ActionKind::NoArc), r2l).unwrap();
        assert_eq!(s.schedule(r2l), Some(Side::Left));
    }

    #[test]
    fn apply_is_pure() {
        let s = State::initial(3).unwrap();
        let a = s.apply(&step(ActionKind::NoPrd), CF).unwrap();
        let b = s.apply(&step(ActionKind::NoPrd), CF).unwrap();
        assert_eq!(a, b);
        assert_eq!(s.candidate(), Some(0));
    }
}
