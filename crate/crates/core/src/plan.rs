//! Text plans: an ordered list of sentence trees over the input facts.
//!
//! A sentence plan is the tree induced by a (possibly truncated) depth-first
//! traversal over graph edges. Traversals and trees convert into each other
//! losslessly, and plans linearize into a bracketed token string:
//!
//! ```text
//! sent  := "[" entity child* "]"
//! child := rel "[" entity child* "]"      rel is ">name" (forward) or "<name" (backward)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{fact_counts, EdgeId, EntityId, FactGraph, RelationId};

/// Whether a plan edge is read source→target (forward) or against the fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn marker(self) -> char {
        match self {
            Direction::Forward => '>',
            Direction::Backward => '<',
        }
    }
}

/// One step of a depth-first traversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraversalStep {
    /// Visit the starting node.
    Start(EntityId),
    /// Cross `edge` from the current node and visit `entity`.
    Visit { edge: EdgeId, entity: EntityId },
    /// Return to the parent (or finish, at the start node).
    Pop,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlanChild {
    pub edge: EdgeId,
    pub relation: RelationId,
    pub direction: Direction,
    pub node: PlanNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlanNode {
    pub entity: EntityId,
    pub children: Vec<PlanChild>,
}

impl PlanNode {
    pub fn leaf(entity: EntityId) -> Self {
        PlanNode {
            entity,
            children: Vec::new(),
        }
    }

    fn collect_edges(&self, out: &mut Vec<EdgeId>) {
        for c in &self.children {
            out.push(c.edge);
            c.node.collect_edges(out);
        }
    }

    fn preorder(&self, out: &mut Vec<EntityId>) {
        out.push(self.entity);
        for c in &self.children {
            c.node.preorder(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePlan {
    root: PlanNode,
    covered: BTreeSet<EdgeId>,
}

impl SentencePlan {
    /// Wrap a tree, rejecting trees without edges or with a repeated edge.
    pub fn new(root: PlanNode) -> Result<Self, PlanError> {
        let mut edges = Vec::new();
        root.collect_edges(&mut edges);
        if edges.is_empty() {
            return Err(PlanError::Empty);
        }
        let mut covered = BTreeSet::new();
        for e in edges {
            if !covered.insert(e) {
                return Err(PlanError::RepeatedEdge(e));
            }
        }
        Ok(SentencePlan { root, covered })
    }

    pub fn root(&self) -> &PlanNode {
        &self.root
    }

    pub fn covered_edges(&self) -> &BTreeSet<EdgeId> {
        &self.covered
    }

    pub fn entity_sequence(&self) -> Vec<EntityId> {
        let mut out = Vec::new();
        self.root.preorder(&mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TextPlan {
    pub sentences: Vec<SentencePlan>,
}

impl TextPlan {
    pub fn new(sentences: Vec<SentencePlan>) -> Self {
        TextPlan { sentences }
    }

    pub fn num_edges(&self) -> usize {
        self.sentences.iter().map(|s| s.covered.len()).sum()
    }

    /// Linearized string form (see module docs).
    pub fn render(&self, g: &FactGraph, with_types: bool) -> String {
        render_tokens(g, &linearize(self, with_types))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("traversal is empty")]
    EmptyTraversal,
    #[error("traversal must begin with a start step")]
    MissingStart,
    #[error("step {0}: start step inside a traversal")]
    UnexpectedStart(usize),
    #[error("step {0}: pop with empty stack")]
    UnbalancedPop(usize),
    #[error("traversal ends with {0} unpopped node(s)")]
    Unterminated(usize),
    #[error("step {0}: steps after the traversal finished")]
    TrailingSteps(usize),
    #[error("step {step}: edge {edge} is not incident to the current node")]
    NotIncident { step: usize, edge: EdgeId },
    #[error("step {step}: edge {edge} does not lead to {entity}")]
    WrongEndpoint {
        step: usize,
        edge: EdgeId,
        entity: EntityId,
    },
    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("sentence plan covers no edges")]
    Empty,
    #[error("edge {0} appears twice in one sentence plan")]
    RepeatedEdge(EdgeId),
    #[error("linearized plan: {0}")]
    Syntax(String),
}

/// Build the sentence tree for a traversal; pre-order of the tree equals the
/// traversal's visit order.
pub fn plan_from_traversal(
    g: &FactGraph,
    steps: &[TraversalStep],
) -> Result<SentencePlan, PlanError> {
    let Some(first) = steps.first() else {
        return Err(PlanError::EmptyTraversal);
    };
    let TraversalStep::Start(root) = *first else {
        return Err(PlanError::MissingStart);
    };
    if g.entity(root).is_none() {
        return Err(PlanError::UnknownEntity(root));
    }
    // Nodes under construction, with the edge that led to them.
    let mut stack: Vec<(PlanNode, Option<(EdgeId, RelationId, Direction)>)> =
        vec![(PlanNode::leaf(root), None)];
    let mut finished = None;
    for (i, step) in steps.iter().enumerate().skip(1) {
        if finished.is_some() {
            return Err(PlanError::TrailingSteps(i));
        }
        match *step {
            TraversalStep::Start(_) => return Err(PlanError::UnexpectedStart(i)),
            TraversalStep::Visit { edge, entity } => {
                let e = g.edge(edge).ok_or(PlanError::UnknownEdge(edge))?;
                let here = stack.last().expect("non-empty stack").0.entity;
                let far = e
                    .other(here)
                    .ok_or(PlanError::NotIncident { step: i, edge })?;
                if far != entity {
                    return Err(PlanError::WrongEndpoint {
                        step: i,
                        edge,
                        entity,
                    });
                }
                let dir = if e.source == here {
                    Direction::Forward
                } else {
                    Direction::Backward
                };
                stack.push((PlanNode::leaf(entity), Some((edge, e.relation, dir))));
            }
            TraversalStep::Pop => {
                let (node, via) = stack.pop().ok_or(PlanError::UnbalancedPop(i))?;
                match (stack.last_mut(), via) {
                    (Some((parent, _)), Some((edge, relation, direction))) => {
                        parent.children.push(PlanChild {
                            edge,
                            relation,
                            direction,
                            node,
                        })
                    }
                    (None, _) => finished = Some(node),
                    (Some(_), None) => unreachable!("only the root lacks an incoming edge"),
                }
            }
        }
    }
    match finished {
        Some(root) => SentencePlan::new(root),
        None => Err(PlanError::Unterminated(stack.len())),
    }
}

/// Inverse of [`plan_from_traversal`].
pub fn traversal_from_plan(plan: &SentencePlan) -> Vec<TraversalStep> {
    fn walk(node: &PlanNode, out: &mut Vec<TraversalStep>) {
        for c in &node.children {
            out.push(TraversalStep::Visit {
                edge: c.edge,
                entity: c.node.entity,
            });
            walk(&c.node, out);
            out.push(TraversalStep::Pop);
        }
    }
    let mut out = vec![TraversalStep::Start(plan.root.entity)];
    walk(&plan.root, &mut out);
    out.push(TraversalStep::Pop);
    out
}

/// Structural role of a plan symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TypeTag {
    S,
    E,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Open,
    Close,
    Entity(EntityId),
    Relation(RelationId, Direction),
}

impl TokenKind {
    pub fn tag(self) -> TypeTag {
        match self {
            TokenKind::Open | TokenKind::Close => TypeTag::S,
            TokenKind::Entity(_) => TypeTag::E,
            TokenKind::Relation(..) => TypeTag::R,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PlanToken {
    pub kind: TokenKind,
    pub tag: Option<TypeTag>,
}

impl PlanToken {
    pub fn new(kind: TokenKind, with_types: bool) -> Self {
        PlanToken {
            kind,
            tag: with_types.then(|| kind.tag()),
        }
    }
}

/// Bracketed pre-order serialization of the whole plan.
pub fn linearize(plan: &TextPlan, with_types: bool) -> Vec<PlanToken> {
    fn node(n: &PlanNode, with_types: bool, out: &mut Vec<PlanToken>) {
        out.push(PlanToken::new(TokenKind::Open, with_types));
        out.push(PlanToken::new(TokenKind::Entity(n.entity), with_types));
        for c in &n.children {
            out.push(PlanToken::new(
                TokenKind::Relation(c.relation, c.direction),
                with_types,
            ));
            node(&c.node, with_types, out);
        }
        out.push(PlanToken::new(TokenKind::Close, with_types));
    }
    let mut out = Vec::new();
    for s in &plan.sentences {
        node(&s.root, with_types, &mut out);
    }
    out
}

fn symbol(s: &str) -> String {
    s.replace(' ', "_")
}

pub fn render_token(g: &FactGraph, t: &PlanToken) -> String {
    let mut s = match t.kind {
        TokenKind::Open => "[".to_string(),
        TokenKind::Close => "]".to_string(),
        TokenKind::Entity(e) => symbol(&g.entities()[e.0].surface),
        TokenKind::Relation(r, d) => format!("{}{}", d.marker(), symbol(&g.relations()[r.0])),
    };
    if let Some(tag) = t.tag {
        s.push_str(match tag {
            TypeTag::S => "|S",
            TypeTag::E => "|E",
            TypeTag::R => "|R",
        });
    }
    s
}

/// Whitespace-separated rendering of plan tokens.
pub fn render_tokens(g: &FactGraph, tokens: &[PlanToken]) -> String {
    tokens
        .iter()
        .map(|t| render_token(g, t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parse a rendered plan back against its graph. Type tags are optional.
/// Each relation token is bound to the lowest-id matching fact not yet used.
pub fn parse_linearized(g: &FactGraph, text: &str) -> Result<TextPlan, PlanError> {
    let toks: Vec<&str> = text
        .split_whitespace()
        .map(|t| {
            ["|S", "|E", "|R"]
                .iter()
                .find_map(|sfx| t.strip_suffix(sfx))
                .unwrap_or(t)
        })
        .collect();
    let facts = fact_counts(g);
    let mut used = BTreeSet::new();
    let mut pos = 0;
    let mut sentences = Vec::new();
    while pos < toks.len() {
        let root = parse_node(g, &facts, &toks, &mut pos, &mut used)?;
        sentences.push(SentencePlan::new(root)?);
    }
    if sentences.is_empty() {
        return Err(PlanError::Syntax("empty plan".into()));
    }
    Ok(TextPlan::new(sentences))
}

type FactIndex = BTreeMap<(EntityId, RelationId, EntityId), Vec<EdgeId>>;

fn parse_node(
    g: &FactGraph,
    facts: &FactIndex,
    toks: &[&str],
    pos: &mut usize,
    used: &mut BTreeSet<EdgeId>,
) -> Result<PlanNode, PlanError> {
    let syntax = |m: String| PlanError::Syntax(m);
    let expect = |pos: usize, want: &str| -> Result<(), PlanError> {
        match toks.get(pos) {
            Some(t) if *t == want => Ok(()),
            Some(t) => Err(syntax(format!("expected `{want}` at token {pos}, found `{t}`"))),
            None => Err(syntax(format!("expected `{want}` at end of input"))),
        }
    };
    expect(*pos, "[")?;
    *pos += 1;
    let name = toks
        .get(*pos)
        .ok_or_else(|| syntax("missing entity".into()))?;
    let entity = g
        .entity_by_surface(&name.replace('_', " "))
        .ok_or_else(|| syntax(format!("unknown entity `{name}`")))?;
    *pos += 1;
    let mut node = PlanNode::leaf(entity);
    loop {
        let tok = toks
            .get(*pos)
            .ok_or_else(|| syntax("unclosed bracket".into()))?;
        if *tok == "]" {
            *pos += 1;
            return Ok(node);
        }
        let (direction, rel_name) = if let Some(r) = tok.strip_prefix('>') {
            (Direction::Forward, r)
        } else if let Some(r) = tok.strip_prefix('<') {
            (Direction::Backward, r)
        } else {
            return Err(syntax(format!("expected relation or `]`, found `{tok}`")));
        };
        let relation = g
            .relation_by_name(&rel_name.replace('_', " "))
            .ok_or_else(|| syntax(format!("unknown relation `{rel_name}`")))?;
        *pos += 1;
        let child = parse_node(g, facts, toks, pos, used)?;
        let key = match direction {
            Direction::Forward => (entity, relation, child.entity),
            Direction::Backward => (child.entity, relation, entity),
        };
        let edge = facts
            .get(&key)
            .and_then(|ids| ids.iter().find(|id| !used.contains(id)).copied())
            .ok_or_else(|| syntax(format!("no unused fact for `{tok}`")))?;
        used.insert(edge);
        node.children.push(PlanChild {
            edge,
            relation,
            direction,
            node: child,
        });
    }
}

/// Entities in pre-order per sentence, sentences in order, repeats kept.
pub fn entity_sequence(plan: &TextPlan) -> Vec<EntityId> {
    plan.sentences
        .iter()
        .flat_map(|s| s.entity_sequence())
        .collect()
}

/// A (source, relation, target) triple as realized by a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub source: EntityId,
    pub relation: RelationId,
    pub target: EntityId,
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, r{}, {})", self.source, self.relation.0, self.target)
    }
}

/// Facts expressed by every parent→child link of the plan trees.
pub fn realized_facts(plan: &TextPlan) -> Vec<Fact> {
    fn walk(n: &PlanNode, out: &mut Vec<Fact>) {
        for c in &n.children {
            let (source, target) = match c.direction {
                Direction::Forward => (n.entity, c.node.entity),
                Direction::Backward => (c.node.entity, n.entity),
            };
            out.push(Fact {
                source,
                relation: c.relation,
                target,
            });
            walk(&c.node, out);
        }
    }
    let mut out = Vec::new();
    for s in &plan.sentences {
        walk(&s.root, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub faithful: bool,
    /// Input edges the plan does not express.
    pub missing: Vec<EdgeId>,
    /// Input edges whose fact the plan expresses more than once.
    pub duplicated: Vec<EdgeId>,
    /// Expressed facts absent from the input.
    pub extra: Vec<Fact>,
}

/// Whether the plan expresses the graph's fact multiset exactly.
pub fn check_faithful(plan: &TextPlan, g: &FactGraph) -> FaithfulnessReport {
    let expected = fact_counts(g);
    let mut realized: BTreeMap<(EntityId, RelationId, EntityId), usize> = BTreeMap::new();
    for f in realized_facts(plan) {
        *realized.entry((f.source, f.relation, f.target)).or_default() += 1;
    }
    let mut report = FaithfulnessReport::default();
    for (key, ids) in &expected {
        let have = realized.get(key).copied().unwrap_or(0);
        if have < ids.len() {
            report.missing.extend_from_slice(&ids[have..]);
        } else if have > ids.len() {
            report.duplicated.extend_from_slice(ids);
        }
    }
    for (&(source, relation, target), _) in realized.iter().filter(|(k, _)| !expected.contains_key(k)) {
        report.extra.push(Fact {
            source,
            relation,
            target,
        });
    }
    report.missing.sort();
    report.duplicated.sort();
    report.faithful =
        report.missing.is_empty() && report.duplicated.is_empty() && report.extra.is_empty();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_instance;
    use TraversalStep::*;

    fn e(i: usize) -> EntityId {
        EntityId(i)
    }

    fn path() -> FactGraph {
        // a=0, b=1, c=2; e0 = a→b, e1 = b→c
        parse_instance("a | r | b\nb | s | c").unwrap()
    }

    #[test]
    fn single_edge_forward_and_backward() {
        let g = parse_instance("a | r | b").unwrap();
        let fwd = [Start(e(0)), Visit { edge: EdgeId(0), entity: e(1) }, Pop, Pop];
        let p = plan_from_traversal(&g, &fwd).unwrap();
        assert_eq!(p.root().entity, e(0));
        assert_eq!(p.root().children[0].direction, Direction::Forward);
        assert_eq!(traversal_from_plan(&p), fwd);

        let bwd = [Start(e(1)), Visit { edge: EdgeId(0), entity: e(0) }, Pop, Pop];
        let p = plan_from_traversal(&g, &bwd).unwrap();
        assert_eq!(p.root().entity, e(1));
        assert_eq!(p.root().children[0].direction, Direction::Backward);
        assert_eq!(traversal_from_plan(&p), bwd);
    }

    #[test]
    fn middle_start_has_two_children() {
        let g = path();
        let steps = [
            Start(e(1)),
            Visit { edge: EdgeId(0), entity: e(0) },
            Pop,
            Visit { edge: EdgeId(1), entity: e(2) },
            Pop,
            Pop,
        ];
        let p = plan_from_traversal(&g, &steps).unwrap();
        let kids: Vec<_> = p.root().children.iter().map(|c| (c.node.entity, c.direction)).collect();
        assert_eq!(kids, vec![(e(0), Direction::Backward), (e(2), Direction::Forward)]);
        assert_eq!(p.entity_sequence(), vec![e(1), e(0), e(2)]);
        assert_eq!(traversal_from_plan(&p), steps);
    }

    #[test]
    fn malformed_traversals() {
        let g = path();
        assert_eq!(plan_from_traversal(&g, &[]), Err(PlanError::EmptyTraversal));
        assert_eq!(plan_from_traversal(&g, &[Pop]), Err(PlanError::MissingStart));
        assert_eq!(
            plan_from_traversal(&g, &[Start(e(0)), Pop, Pop]),
            Err(PlanError::TrailingSteps(2))
        );
        assert_eq!(
            plan_from_traversal(&g, &[Start(e(0)), Pop]),
            Err(PlanError::Empty)
        );
        assert_eq!(
            plan_from_traversal(&g, &[Start(e(0)), Visit { edge: EdgeId(1), entity: e(2) }, Pop, Pop]),
            Err(PlanError::NotIncident { step: 1, edge: EdgeId(1) })
        );
        assert_eq!(
            plan_from_traversal(&g, &[Start(e(0)), Visit { edge: EdgeId(0), entity: e(1) }, Pop]),
            Err(PlanError::Unterminated(1))
        );
    }

    #[test]
    fn linearize_single_edge() {
        let g = parse_instance("a | r | b").unwrap();
        let sp = plan_from_traversal(&g, &[Start(e(0)), Visit { edge: EdgeId(0), entity: e(1) }, Pop, Pop]).unwrap();
        let plan = TextPlan::new(vec![sp]);
        let toks = linearize(&plan, true);
        let tags: Vec<_> = toks.iter().map(|t| t.tag.unwrap()).collect();
        use TypeTag::*;
        assert_eq!(tags, vec![S, E, R, S, E, S, S]);
        assert_eq!(render_tokens(&g, &toks), "[|S a|E >r|R [|S b|E ]|S ]|S");
        let untyped = linearize(&plan, false);
        assert!(untyped.iter().all(|t| t.tag.is_none()));
        assert_eq!(
            untyped.iter().map(|t| t.kind).collect::<Vec<_>>(),
            toks.iter().map(|t| t.kind).collect::<Vec<_>>()
        );
        assert_eq!(plan.render(&g, false), "[ a >r [ b ] ]");
    }

    #[test]
    fn two_sentence_plan() {
        let g = parse_instance("a | r | b\nc | s | a").unwrap();
        let s1 = plan_from_traversal(&g, &[Start(e(0)), Visit { edge: EdgeId(0), entity: e(1) }, Pop, Pop]).unwrap();
        let s2 = plan_from_traversal(&g, &[Start(e(2)), Visit { edge: EdgeId(1), entity: e(0) }, Pop, Pop]).unwrap();
        let plan = TextPlan::new(vec![s1, s2]);
        assert_eq!(plan.render(&g, false), "[ a >r [ b ] ] [ c >s [ a ] ]");
        assert_eq!(entity_sequence(&plan), vec![e(0), e(1), e(2), e(0)]);
        assert!(check_faithful(&plan, &g).faithful);
        assert_eq!(parse_linearized(&g, &plan.render(&g, true)).unwrap(), plan);
    }

    #[test]
    fn faithfulness_reports() {
        let g = path();
        let s_ab = plan_from_traversal(&g, &[Start(e(0)), Visit { edge: EdgeId(0), entity: e(1) }, Pop, Pop]).unwrap();
        let s_bc = plan_from_traversal(&g, &[Start(e(1)), Visit { edge: EdgeId(1), entity: e(2) }, Pop, Pop]).unwrap();
        let missing = check_faithful(&TextPlan::new(vec![s_ab.clone()]), &g);
        assert!(!missing.faithful);
        assert_eq!(missing.missing, vec![EdgeId(1)]);

        let dup = check_faithful(&TextPlan::new(vec![s_ab.clone(), s_bc.clone(), s_ab.clone()]), &g);
        assert!(!dup.faithful);
        assert_eq!(dup.duplicated, vec![EdgeId(0)]);
        assert!(dup.missing.is_empty());

        assert!(check_faithful(&TextPlan::new(vec![s_bc, s_ab]), &g).faithful);
    }

    #[test]
    fn parse_linearized_errors() {
        let g = path();
        assert!(parse_linearized(&g, "").is_err());
        assert!(parse_linearized(&g, "[ a >r [ b ]").is_err());
        assert!(parse_linearized(&g, "[ a >s [ b ] ]").is_err());
        assert!(parse_linearized(&g, "[ a >r [ b ] ] [ a >r [ b ] ]").is_err());
        assert!(parse_linearized(&g, "[ zz ]").is_err());
        assert_eq!(parse_linearized(&g, "[ a ]"), Err(PlanError::Empty));
    }
}
