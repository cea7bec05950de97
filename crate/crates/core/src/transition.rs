//! Linear-time planner: a transition system over random truncated DFS
//! traversals.
//!
//! Planning repeatedly chooses a start node with remaining edges and walks a
//! depth-first traversal over the remaining edges, where the driver may pop at
//! any node before all of its edges are used. Each finished traversal becomes
//! one sentence plan and its edges are removed. Every terminal derivation is
//! faithful to the input graph by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{EdgeId, EntityId, FactGraph};
use crate::plan::{
    check_faithful, plan_from_traversal, traversal_from_plan, Direction, PlanError, PlanToken,
    SentencePlan, TextPlan, TokenKind, TraversalStep,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Choose(EntityId),
    Traverse { edge: EdgeId, to: EntityId },
    Pop,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Choose(n) => write!(f, "choose {n}"),
            Action::Traverse { edge, to } => write!(f, "go {edge} {to}"),
            Action::Pop => f.write_str("pop"),
        }
    }
}

impl std::str::FromStr for Action {
    type Err = TransitionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TransitionError::Parse(s.to_string());
        let num = |t: &str, prefix: char| -> Result<usize, TransitionError> {
            t.strip_prefix(prefix)
                .and_then(|d| d.parse().ok())
                .ok_or_else(bad)
        };
        let parts: Vec<&str> = s.split_whitespace().collect();
        match parts.as_slice() {
            ["pop"] => Ok(Action::Pop),
            ["choose", n] => Ok(Action::Choose(EntityId(num(n, 'n')?))),
            ["go", e, n] => Ok(Action::Traverse {
                edge: EdgeId(num(e, 'e')?),
                to: EntityId(num(n, 'n')?),
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    ChooseStart,
    Traversing,
}

#[derive(Debug, Error, PartialEq)]
pub enum TransitionError {
    #[error("illegal action `{0}`")]
    Illegal(Action),
    #[error("derivation ended before all edges were planned")]
    Incomplete,
    #[error("gold plan is not faithful to its graph")]
    Unfaithful,
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("cannot parse action `{0}`")]
    Parse(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Planner state. Every edge is in exactly one of: the remaining set, the
/// current traversal, or a finished sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannerState {
    remaining: Vec<bool>,
    remaining_count: usize,
    remaining_degree: Vec<usize>,
    stack: Vec<(EntityId, Option<EdgeId>)>,
    current: Vec<TraversalStep>,
    finished: Vec<SentencePlan>,
}

impl PlannerState {
    pub fn phase(&self) -> Phase {
        if self.stack.is_empty() {
            Phase::ChooseStart
        } else {
            Phase::Traversing
        }
    }

    pub fn is_remaining(&self, e: EdgeId) -> bool {
        self.remaining[e.0]
    }

    pub fn remaining_edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.remaining
            .iter()
            .enumerate()
            .filter(|(_, r)| **r)
            .map(|(i, _)| EdgeId(i))
    }

    pub fn remaining_count(&self) -> usize {
        self.remaining_count
    }

    pub fn stack(&self) -> &[(EntityId, Option<EdgeId>)] {
        &self.stack
    }

    pub fn top(&self) -> Option<EntityId> {
        self.stack.last().map(|(n, _)| *n)
    }

    /// Node a pop would return to; the start node itself when popping it.
    pub fn pop_target(&self) -> Option<EntityId> {
        match self.stack.len() {
            0 => None,
            1 => Some(self.stack[0].0),
            n => Some(self.stack[n - 2].0),
        }
    }

    pub fn current_traversal(&self) -> &[TraversalStep] {
        &self.current
    }

    pub fn finished(&self) -> &[SentencePlan] {
        &self.finished
    }

    pub fn is_terminal(&self) -> bool {
        self.stack.is_empty() && self.remaining_count == 0
    }

    pub fn into_plan(self) -> Result<TextPlan, TransitionError> {
        if !self.is_terminal() {
            return Err(TransitionError::Incomplete);
        }
        Ok(TextPlan::new(self.finished))
    }
}

/// The transition system for one graph.
#[derive(Debug, Clone)]
pub struct TransitionSystem<'g> {
    graph: &'g FactGraph,
    incidence: Vec<Vec<EdgeId>>,
}

impl<'g> TransitionSystem<'g> {
    pub fn new(graph: &'g FactGraph) -> Self {
        TransitionSystem {
            graph,
            incidence: graph.incidence(),
        }
    }

    pub fn graph(&self) -> &'g FactGraph {
        self.graph
    }

    pub fn incident(&self, n: EntityId) -> &[EdgeId] {
        &self.incidence[n.0]
    }

    pub fn initial_state(&self) -> PlannerState {
        PlannerState {
            remaining: vec![true; self.graph.num_edges()],
            remaining_count: self.graph.num_edges(),
            remaining_degree: self.incidence.iter().map(Vec::len).collect(),
            stack: Vec::new(),
            current: Vec::new(),
            finished: Vec::new(),
        }
    }

    /// Legal moves, in a fixed order: start nodes by id; or remaining incident
    /// edges of the stack top by edge id, followed by pop. Popping the start
    /// node is only allowed once the traversal has crossed an edge. Empty iff
    /// the state is terminal.
    pub fn legal_actions(&self, s: &PlannerState) -> Vec<Action> {
        let mut out = Vec::new();
        match s.top() {
            None => {
                out.extend(
                    s.remaining_degree
                        .iter()
                        .enumerate()
                        .filter(|(_, d)| **d > 0)
                        .map(|(n, _)| Action::Choose(EntityId(n))),
                );
            }
            Some(top) => {
                for &e in &self.incidence[top.0] {
                    if s.remaining[e.0] {
                        let to = self.graph.edges()[e.0].other(top).expect("incident");
                        out.push(Action::Traverse { edge: e, to });
                    }
                }
                if s.stack.len() > 1 || s.current.len() > 1 {
                    out.push(Action::Pop);
                }
            }
        }
        out
    }

    pub fn is_legal(&self, s: &PlannerState, a: &Action) -> bool {
        match *a {
            Action::Choose(n) => {
                s.stack.is_empty() && s.remaining_degree.get(n.0).is_some_and(|d| *d > 0)
            }
            Action::Traverse { edge, to } => match (s.top(), self.graph.edge(edge)) {
                (Some(top), Some(e)) => s.remaining[edge.0] && e.other(top) == Some(to),
                _ => false,
            },
            Action::Pop => !s.stack.is_empty() && (s.stack.len() > 1 || s.current.len() > 1),
        }
    }

    /// Apply in place.
    pub fn step(&self, s: &mut PlannerState, a: Action) -> Result<(), TransitionError> {
        if !self.is_legal(s, &a) {
            return Err(TransitionError::Illegal(a));
        }
        match a {
            Action::Choose(n) => {
                s.stack.push((n, None));
                s.current.push(TraversalStep::Start(n));
            }
            Action::Traverse { edge, to } => {
                let e = &self.graph.edges()[edge.0];
                s.remaining[edge.0] = false;
                s.remaining_count -= 1;
                s.remaining_degree[e.source.0] -= 1;
                s.remaining_degree[e.target.0] -= 1;
                s.stack.push((to, Some(edge)));
                s.current.push(TraversalStep::Visit { edge, entity: to });
            }
            Action::Pop => {
                s.stack.pop();
                s.current.push(TraversalStep::Pop);
                if s.stack.is_empty() {
                    let steps = std::mem::take(&mut s.current);
                    s.finished.push(plan_from_traversal(self.graph, &steps)?);
                }
            }
        }
        Ok(())
    }

    /// Pure transition: state in, state out.
    pub fn apply(&self, s: &PlannerState, a: Action) -> Result<PlannerState, TransitionError> {
        let mut next = s.clone();
        self.step(&mut next, a)?;
        Ok(next)
    }

    /// Plan symbols appended to the linearized plan when `a` is taken in `s`.
    pub fn emitted_tokens(&self, s: &PlannerState, a: &Action, with_types: bool) -> Vec<PlanToken> {
        let tok = |k| PlanToken::new(k, with_types);
        match *a {
            Action::Choose(n) => vec![tok(TokenKind::Open), tok(TokenKind::Entity(n))],
            Action::Traverse { edge, to } => {
                let e = &self.graph.edges()[edge.0];
                let dir = if Some(e.source) == s.top() {
                    Direction::Forward
                } else {
                    Direction::Backward
                };
                vec![
                    tok(TokenKind::Relation(e.relation, dir)),
                    tok(TokenKind::Open),
                    tok(TokenKind::Entity(to)),
                ]
            }
            Action::Pop => vec![tok(TokenKind::Close)],
        }
    }

    pub fn replay(&self, actions: &[Action]) -> Result<TextPlan, TransitionError> {
        let mut s = self.initial_state();
        for a in actions {
            self.step(&mut s, *a)?;
        }
        s.into_plan()
    }
}

/// A finished action sequence and the plan it builds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Derivation {
    pub actions: Vec<Action>,
    pub plan: TextPlan,
}

/// Gold action sequence for a faithful plan: per sentence, choose the root and
/// replay its traversal.
pub fn oracle_actions(g: &FactGraph, gold: &TextPlan) -> Result<Vec<Action>, TransitionError> {
    if !check_faithful(gold, g).faithful {
        return Err(TransitionError::Unfaithful);
    }
    let mut actions = Vec::new();
    for s in &gold.sentences {
        for step in traversal_from_plan(s) {
            actions.push(match step {
                TraversalStep::Start(n) => Action::Choose(n),
                TraversalStep::Visit { edge, entity } => Action::Traverse { edge, to: entity },
                TraversalStep::Pop => Action::Pop,
            });
        }
    }
    let replayed = TransitionSystem::new(g).replay(&actions)?;
    if &replayed != gold {
        return Err(TransitionError::Unfaithful);
    }
    Ok(actions)
}

/// Scores legal actions given the plan prefix generated so far.
pub trait Policy {
    /// Per-derivation memory (e.g. a recurrent state over emitted symbols).
    type Memory;

    fn begin(&self, g: &FactGraph) -> Self::Memory;

    fn logits(
        &self,
        memory: &Self::Memory,
        sys: &TransitionSystem<'_>,
        state: &PlannerState,
        legal: &[Action],
    ) -> Vec<f64>;

    fn observe(&self, memory: &mut Self::Memory, sys: &TransitionSystem<'_>, token: &PlanToken);

    /// Whether emitted tokens carry S/E/R tags.
    fn typed_tokens(&self) -> bool {
        false
    }
}

/// All actions score zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    type Memory = ();

    fn begin(&self, _g: &FactGraph) -> Self::Memory {}

    fn logits(
        &self,
        _memory: &(),
        _sys: &TransitionSystem<'_>,
        _state: &PlannerState,
        legal: &[Action],
    ) -> Vec<f64> {
        vec![0.0; legal.len()]
    }

    fn observe(&self, _memory: &mut (), _sys: &TransitionSystem<'_>, _token: &PlanToken) {}
}

fn run<P: Policy>(
    g: &FactGraph,
    policy: &P,
    mut choose: impl FnMut(&[f64]) -> usize,
) -> Result<Derivation, TransitionError> {
    let sys = TransitionSystem::new(g);
    let mut state = sys.initial_state();
    let mut memory = policy.begin(g);
    let mut actions = Vec::new();
    loop {
        let legal = sys.legal_actions(&state);
        if legal.is_empty() {
            break;
        }
        let logits = policy.logits(&memory, &sys, &state, &legal);
        let a = legal[choose(&logits)];
        for t in sys.emitted_tokens(&state, &a, policy.typed_tokens()) {
            policy.observe(&mut memory, &sys, &t);
        }
        sys.step(&mut state, a)?;
        actions.push(a);
    }
    Ok(Derivation {
        actions,
        plan: state.into_plan()?,
    })
}

/// Index of the first maximal score.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Take the highest-scoring legal action until terminal; ties go to the
/// earliest action in legal order.
pub fn plan_greedy<P: Policy>(g: &FactGraph, policy: &P) -> Result<Derivation, TransitionError> {
    run(g, policy, argmax)
}

/// Sample actions from softmax(logits / temperature).
pub fn plan_sample<P: Policy>(
    g: &FactGraph,
    policy: &P,
    temperature: f64,
    seed: u64,
) -> Result<Derivation, TransitionError> {
    if !(temperature > 0.0) {
        return Err(TransitionError::Temperature(temperature));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run(g, policy, |logits| {
        let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
        let probs = softmax(&scaled);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding slack above the last cumulative sum
        probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{parse_instance, random_graph, GraphBuilder};
    use crate::plan::entity_sequence;

    fn n(i: usize) -> EntityId {
        EntityId(i)
    }

    #[test]
    fn initial_actions_single_edge() {
        let g = parse_instance("a | r | b").unwrap();
        let sys = TransitionSystem::new(&g);
        let s = sys.initial_state();
        assert_eq!(s.phase(), Phase::ChooseStart);
        assert_eq!(sys.legal_actions(&s), vec![Action::Choose(n(0)), Action::Choose(n(1))]);
    }

    #[test]
    fn isolated_entity_never_offered() {
        let mut b = GraphBuilder::new();
        b.triple("a", "r", "b");
        b.entity("lonely");
        let g = b.build().unwrap();
        let sys = TransitionSystem::new(&g);
        let legal = sys.legal_actions(&sys.initial_state());
        assert!(!legal.contains(&Action::Choose(n(2))));
        assert_eq!(legal.len(), 2);
    }

    #[test]
    fn single_edge_derivation() {
        let g = parse_instance("a | r | b").unwrap();
        let sys = TransitionSystem::new(&g);
        let actions = [
            Action::Choose(n(0)),
            Action::Traverse { edge: EdgeId(0), to: n(1) },
            Action::Pop,
            Action::Pop,
        ];
        let mut s = sys.initial_state();
        for a in actions {
            s = sys.apply(&s, a).unwrap();
        }
        assert!(s.is_terminal());
        assert!(sys.legal_actions(&s).is_empty());
        let plan = s.into_plan().unwrap();
        assert_eq!(plan.render(&g, false), "[ a >r [ b ] ]");
        assert_eq!(oracle_actions(&g, &plan).unwrap(), actions);
    }

    #[test]
    fn truncation_leaves_edges_for_later() {
        let g = parse_instance("a | r | b\nb | s | c").unwrap();
        let sys = TransitionSystem::new(&g);
        let mut s = sys.initial_state();
        sys.step(&mut s, Action::Choose(n(0))).unwrap();
        sys.step(&mut s, Action::Traverse { edge: EdgeId(0), to: n(1) }).unwrap();
        assert_eq!(
            sys.legal_actions(&s),
            vec![Action::Traverse { edge: EdgeId(1), to: n(2) }, Action::Pop]
        );
        sys.step(&mut s, Action::Pop).unwrap();
        assert_eq!(sys.legal_actions(&s), vec![Action::Pop]);
        sys.step(&mut s, Action::Pop).unwrap();
        assert_eq!(s.phase(), Phase::ChooseStart);
        assert_eq!(s.finished().len(), 1);
        assert_eq!(s.remaining_edges().collect::<Vec<_>>(), vec![EdgeId(1)]);
        assert_eq!(sys.legal_actions(&s), vec![Action::Choose(n(1)), Action::Choose(n(2))]);
        assert!(!s.is_terminal());
        assert_eq!(s.clone().into_plan(), Err(TransitionError::Incomplete));
    }

    #[test]
    fn illegal_actions_rejected() {
        let g = parse_instance("a | r | b\nb | s | c").unwrap();
        let sys = TransitionSystem::new(&g);
        let s = sys.initial_state();
        assert_eq!(sys.apply(&s, Action::Pop), Err(TransitionError::Illegal(Action::Pop)));
        let s = sys.apply(&s, Action::Choose(n(0))).unwrap();
        // cannot finish a sentence without crossing an edge
        assert_eq!(sys.apply(&s, Action::Pop), Err(TransitionError::Illegal(Action::Pop)));
        let bad = Action::Traverse { edge: EdgeId(1), to: n(2) };
        assert_eq!(sys.apply(&s, bad), Err(TransitionError::Illegal(bad)));
        assert!(sys.apply(&s, Action::Choose(n(1))).is_err());
    }

    #[test]
    fn two_sentence_oracle() {
        let g = parse_instance("a | r | b\nb | s | c").unwrap();
        let sys = TransitionSystem::new(&g);
        let actions = vec![
            Action::Choose(n(2)),
            Action::Traverse { edge: EdgeId(1), to: n(1) },
            Action::Pop,
            Action::Pop,
            Action::Choose(n(0)),
            Action::Traverse { edge: EdgeId(0), to: n(1) },
            Action::Pop,
            Action::Pop,
        ];
        let plan = sys.replay(&actions).unwrap();
        let oracle = oracle_actions(&g, &plan).unwrap();
        assert_eq!(oracle.iter().filter(|a| matches!(a, Action::Choose(_))).count(), 2);
        assert_eq!(oracle, actions);
    }

    #[test]
    fn oracle_rejects_unfaithful() {
        let g = parse_instance("a | r | b\nb | s | c").unwrap();
        let partial = TransitionSystem::new(&g);
        let mut s = partial.initial_state();
        for a in [Action::Choose(n(0)), Action::Traverse { edge: EdgeId(0), to: n(1) }, Action::Pop, Action::Pop] {
            partial.step(&mut s, a).unwrap();
        }
        let plan = TextPlan::new(s.finished().to_vec());
        assert_eq!(oracle_actions(&g, &plan), Err(TransitionError::Unfaithful));
    }

    #[test]
    fn greedy_uniform_is_deterministic_and_linear() {
        // star with 7 leaves; uniform greedy keeps traversing (first legal action)
        let text: String = (0..7).map(|i| format!("hub | r | leaf{i}\n")).collect();
        let g = parse_instance(&text).unwrap();
        let d = plan_greedy(&g, &UniformPolicy).unwrap();
        assert_eq!(d.plan.sentences.len(), 1);
        assert_eq!(d.actions.len(), 1 + 7 + 8);
        assert_eq!(d, plan_greedy(&g, &UniformPolicy).unwrap());
        assert!(check_faithful(&d.plan, &g).faithful);
        assert_eq!(entity_sequence(&d.plan).len(), 8);
    }

    #[test]
    fn sampling_rules() {
        let g = random_graph(6, 5, 2, 3).unwrap();
        assert!(plan_sample(&g, &UniformPolicy, 0.0, 1).is_err());
        let a = plan_sample(&g, &UniformPolicy, 1.0, 17).unwrap();
        let b = plan_sample(&g, &UniformPolicy, 1.0, 17).unwrap();
        assert_eq!(a, b);
        assert!(check_faithful(&a.plan, &g).faithful);
    }

    #[test]
    fn uniform_start_frequencies() {
        let g = parse_instance("a | r | b").unwrap();
        let trials = 10_000;
        let from_a = (0..trials)
            .filter(|seed| {
                let d = plan_sample(&g, &UniformPolicy, 1.0, *seed).unwrap();
                d.actions[0] == Action::Choose(n(0))
            })
            .count();
        let freq = from_a as f64 / trials as f64;
        assert!((freq - 0.5).abs() <= 0.02, "freq {freq}");
    }

    #[test]
    fn action_text_round_trip() {
        for a in [Action::Pop, Action::Choose(n(3)), Action::Traverse { edge: EdgeId(5), to: n(1) }] {
            assert_eq!(a.to_string().parse::<Action>().unwrap(), a);
        }
        assert_eq!(Action::Traverse { edge: EdgeId(5), to: n(1) }.to_string(), "go e5 n1");
        assert!("go 5 1".parse::<Action>().is_err());
    }

    #[test]
    fn random_choices_always_faithful() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..300 {
            let m = 1 + (seed as usize % 8);
            let g = random_graph(m, 2 + (seed as usize % m.max(1)), 3, seed).unwrap();
            let sys = TransitionSystem::new(&g);
            let mut s = sys.initial_state();
            let mut count = 0;
            loop {
                let legal = sys.legal_actions(&s);
                if legal.is_empty() {
                    break;
                }
                let a = legal[rng.gen_range(0..legal.len())];
                sys.step(&mut s, a).unwrap();
                count += 1;
            }
            let sentences = s.finished().len();
            assert!(count <= 2 * m + 2 * sentences);
            let plan = s.into_plan().unwrap();
            assert!(check_faithful(&plan, &g).faithful);
        }
    }
}
