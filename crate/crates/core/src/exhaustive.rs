//! Baseline planner: enumerate every sentence split and every traversal,
//! score each plan, keep the best.
//!
//! A text plan is an ordered partition of the edges into connected parts with
//! one traversal tree per part. The per-part traversals are edge-based
//! depth-first walks that may pop early, as long as the finished tree uses
//! every edge of its part. On acyclic parts this coincides with complete DFS.
//! The number of plans grows exponentially with the edge count, hence the cap.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use thiserror::Error;

use crate::graph::{EdgeId, EntityId, FactGraph};
use crate::plan::{
    plan_from_traversal, Direction, PlanNode, SentencePlan, TextPlan,
    TraversalStep,
};

pub const DEFAULT_EDGE_CAP: usize = 10;

#[derive(Debug, Error)]
pub enum ExhaustiveError {
    #[error("{edges} edges exceed the exhaustive planner cap of {cap}; use the transition planner")]
    CapExceeded { edges: usize, cap: usize },
    #[error("edge subset is empty or not connected")]
    Disconnected,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("unknown scorer feature `{0}`")]
    UnknownFeature(String),
    #[error("scorer file line {line}: {msg}")]
    ScorerSyntax { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Every covering traversal of a connected edge subset, from every start node,
/// converted to sentence plans. Children are tried in edge id order.
pub fn enumerate_sentence_plans(
    g: &FactGraph,
    part: &[EdgeId],
) -> Result<Vec<SentencePlan>, ExhaustiveError> {
    if !g.edges_connected(part) {
        return Err(ExhaustiveError::Disconnected);
    }
    let mut part = part.to_vec();
    part.sort();
    part.dedup();
    let mut starts: Vec<EntityId> = part
        .iter()
        .flat_map(|e| {
            let e = &g.edges()[e.0];
            [e.source, e.target]
        })
        .collect();
    starts.sort();
    starts.dedup();

    let mut walker = Walker {
        g,
        part: &part,
        used: vec![false; part.len()],
        n_used: 0,
        stack: Vec::new(),
        steps: Vec::new(),
        out: Vec::new(),
    };
    for s in starts {
        walker.stack.push(s);
        walker.steps.push(TraversalStep::Start(s));
        walker.extend();
        walker.steps.pop();
        walker.stack.pop();
    }
    Ok(walker.out)
}

struct Walker<'a> {
    g: &'a FactGraph,
    part: &'a [EdgeId],
    used: Vec<bool>,
    n_used: usize,
    stack: Vec<EntityId>,
    steps: Vec<TraversalStep>,
    out: Vec<SentencePlan>,
}

impl Walker<'_> {
    fn extend(&mut self) {
        let Some(&top) = self.stack.last() else {
            if self.n_used == self.part.len() {
                let plan = plan_from_traversal(self.g, &self.steps)
                    .expect("walker only produces well-formed traversals");
                self.out.push(plan);
            }
            return;
        };
        for i in 0..self.part.len() {
            if self.used[i] {
                continue;
            }
            let e = &self.g.edges()[self.part[i].0];
            let Some(far) = e.other(top) else { continue };
            self.used[i] = true;
            self.n_used += 1;
            self.stack.push(far);
            self.steps.push(TraversalStep::Visit {
                edge: e.id,
                entity: far,
            });
            self.extend();
            self.steps.pop();
            self.stack.pop();
            self.n_used -= 1;
            self.used[i] = false;
        }
        // popping the start node before crossing an edge would give an empty tree
        if self.stack.len() == 1 && self.n_used == 0 {
            return;
        }
        let popped = self.stack.pop().expect("non-empty");
        if self.unused_reachable() {
            self.steps.push(TraversalStep::Pop);
            self.extend();
            self.steps.pop();
        }
        self.stack.push(popped);
    }

    /// Every unused edge can still be reached from the stack through unused edges.
    fn unused_reachable(&self) -> bool {
        if self.n_used == self.part.len() {
            return true;
        }
        let mut nodes: Vec<EntityId> = self.stack.clone();
        let mut reached = self.used.clone();
        let mut changed = true;
        while changed {
            changed = false;
            for (i, id) in self.part.iter().enumerate() {
                if reached[i] {
                    continue;
                }
                let e = &self.g.edges()[id.0];
                if nodes.contains(&e.source) || nodes.contains(&e.target) {
                    reached[i] = true;
                    nodes.push(e.source);
                    nodes.push(e.target);
                    changed = true;
                }
            }
        }
        reached.into_iter().all(|r| r)
    }
}

/// Lazy stream over every text plan of a graph.
///
/// Iterates set partitions of the edges into connected blocks (restricted
/// growth strings), every ordering of the blocks, and every combination of
/// per-block sentence plans. Each distinct plan is yielded exactly once.
pub struct PlanStream<'g> {
    g: &'g FactGraph,
    rgs: Vec<usize>,
    blocks: Vec<Vec<SentencePlan>>,
    perm: Vec<usize>,
    odometer: Vec<usize>,
    state: StreamState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StreamState {
    Fresh,
    Running,
    Done,
}

impl<'g> PlanStream<'g> {
    fn new(g: &'g FactGraph) -> Self {
        PlanStream {
            g,
            rgs: vec![0; g.num_edges()],
            blocks: Vec::new(),
            perm: Vec::new(),
            odometer: Vec::new(),
            state: StreamState::Fresh,
        }
    }

    fn next_rgs(&mut self) -> bool {
        let n = self.rgs.len();
        for i in (1..n).rev() {
            let max_prefix = self.rgs[..i].iter().copied().max().unwrap_or(0);
            if self.rgs[i] <= max_prefix {
                self.rgs[i] += 1;
                for x in &mut self.rgs[i + 1..] {
                    *x = 0;
                }
                return true;
            }
        }
        false
    }

    /// Load per-block plans for the current partition; false if some block is
    /// disconnected.
    fn load_partition(&mut self) -> bool {
        let n_blocks = self.rgs.iter().copied().max().map_or(0, |m| m + 1);
        let mut parts = vec![Vec::new(); n_blocks];
        for (i, b) in self.rgs.iter().enumerate() {
            parts[*b].push(EdgeId(i));
        }
        let mut blocks = Vec::with_capacity(n_blocks);
        for p in &parts {
            match enumerate_sentence_plans(self.g, p) {
                Ok(plans) if !plans.is_empty() => blocks.push(plans),
                _ => return false,
            }
        }
        self.blocks = blocks;
        self.perm = (0..n_blocks).collect();
        self.odometer = vec![0; n_blocks];
        true
    }

    fn advance_partition(&mut self, first: bool) -> bool {
        if first && self.load_partition() {
            return true;
        }
        while self.next_rgs() {
            if self.load_partition() {
                return true;
            }
        }
        false
    }

    fn next_permutation(&mut self) -> bool {
        let p = &mut self.perm;
        if p.len() < 2 {
            return false;
        }
        let Some(i) = (0..p.len() - 1).rev().find(|&i| p[i] < p[i + 1]) else {
            return false;
        };
        let j = (i + 1..p.len()).rev().find(|&j| p[j] > p[i]).expect("exists");
        p.swap(i, j);
        p[i + 1..].reverse();
        true
    }

    fn advance(&mut self) -> bool {
        // odometer over sentence choices, in sentence order, last fastest
        for pos in (0..self.perm.len()).rev() {
            let block = self.perm[pos];
            self.odometer[pos] += 1;
            if self.odometer[pos] < self.blocks[block].len() {
                return true;
            }
            self.odometer[pos] = 0;
        }
        if self.next_permutation() {
            return true;
        }
        self.advance_partition(false)
    }

    fn current(&self) -> TextPlan {
        TextPlan::new(
            self.perm
                .iter()
                .zip(&self.odometer)
                .map(|(&b, &i)| self.blocks[b][i].clone())
                .collect(),
        )
    }
}

impl Iterator for PlanStream<'_> {
    type Item = TextPlan;

    fn next(&mut self) -> Option<TextPlan> {
        let ok = match self.state {
            StreamState::Fresh => self.advance_partition(true),
            StreamState::Running => self.advance(),
            StreamState::Done => false,
        };
        if ok {
            self.state = StreamState::Running;
            Some(self.current())
        } else {
            self.state = StreamState::Done;
            None
        }
    }
}

pub fn enumerate_plans(g: &FactGraph, edge_cap: usize) -> Result<PlanStream<'_>, ExhaustiveError> {
    if g.num_edges() > edge_cap {
        return Err(ExhaustiveError::CapExceeded {
            edges: g.num_edges(),
            cap: edge_cap,
        });
    }
    Ok(PlanStream::new(g))
}

pub const FEATURE_RELDIR: &str = "reldir_logfreq";
pub const FEATURE_SENTENCES: &str = "sentence_count";

/// Linear plan scorer over a small feature set.
///
/// * `reldir_logfreq`: sum over plan edges of log P(direction | relation),
///   add-one smoothed over the two directions.
/// * `sentence_count`: number of sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanScorer {
    weights: BTreeMap<String, f64>,
    direction_counts: HashMap<String, [u64; 2]>,
}

impl Default for PlanScorer {
    fn default() -> Self {
        let weights = BTreeMap::from([
            (FEATURE_RELDIR.to_string(), 1.0),
            (FEATURE_SENTENCES.to_string(), -0.3),
        ]);
        PlanScorer {
            weights,
            direction_counts: HashMap::new(),
        }
    }
}

impl PlanScorer {
    /// Scores every plan as zero.
    pub fn uniform() -> Self {
        PlanScorer {
            weights: BTreeMap::new(),
            direction_counts: HashMap::new(),
        }
    }

    pub fn with_weights(weights: BTreeMap<String, f64>) -> Result<Self, ExhaustiveError> {
        for k in weights.keys() {
            if k != FEATURE_RELDIR && k != FEATURE_SENTENCES {
                return Err(ExhaustiveError::UnknownFeature(k.clone()));
            }
        }
        Ok(PlanScorer {
            weights,
            direction_counts: HashMap::new(),
        })
    }

    /// Parse `feature<TAB>weight` lines.
    pub fn parse_weights(text: &str) -> Result<Self, ExhaustiveError> {
        let mut weights = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |msg: &str| ExhaustiveError::ScorerSyntax {
                line: i + 1,
                msg: msg.to_string(),
            };
            let (name, w) = line
                .split_once('\t')
                .ok_or_else(|| syntax("expected feature<TAB>weight"))?;
            let w: f64 = w.trim().parse().map_err(|_| syntax("bad weight"))?;
            if !w.is_finite() {
                return Err(syntax("non-finite weight"));
            }
            weights.insert(name.trim().to_string(), w);
        }
        Self::with_weights(weights)
    }

    pub fn load_weights(path: &Path) -> Result<Self, ExhaustiveError> {
        Self::parse_weights(&std::fs::read_to_string(path)?)
    }

    pub fn weights_text(&self) -> String {
        self.weights
            .iter()
            .map(|(k, v)| format!("{k}\t{v}\n"))
            .collect()
    }

    /// Count relation directions in a corpus of gold plans.
    pub fn observe(&mut self, g: &FactGraph, plan: &TextPlan) {
        for s in &plan.sentences {
            count_directions(g, s.root(), &mut self.direction_counts);
        }
    }

    pub fn direction_logprob(&self, relation: &str, dir: Direction) -> f64 {
        let c = self.direction_counts.get(relation).copied().unwrap_or([0, 0]);
        let idx = dir_index(dir);
        ((c[idx] + 1) as f64 / (c[0] + c[1] + 2) as f64).ln()
    }

    pub fn features(&self, g: &FactGraph, plan: &TextPlan) -> BTreeMap<&'static str, f64> {
        let mut reldir = 0.0;
        for s in &plan.sentences {
            reldir += self.node_reldir(g, s.root());
        }
        BTreeMap::from([
            (FEATURE_RELDIR, reldir),
            (FEATURE_SENTENCES, plan.sentences.len() as f64),
        ])
    }

    fn node_reldir(&self, g: &FactGraph, n: &PlanNode) -> f64 {
        n.children
            .iter()
            .map(|c| {
                let name = g.relation_name(c.relation).unwrap_or_default();
                self.direction_logprob(name, c.direction) + self.node_reldir(g, &c.node)
            })
            .sum()
    }

    pub fn score(&self, g: &FactGraph, plan: &TextPlan) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        let f = self.features(g, plan);
        self.weights
            .iter()
            .map(|(k, w)| w * f.get(k.as_str()).copied().unwrap_or(0.0))
            .sum()
    }
}

fn dir_index(d: Direction) -> usize {
    match d {
        Direction::Forward => 0,
        Direction::Backward => 1,
    }
}

fn count_directions(g: &FactGraph, n: &PlanNode, counts: &mut HashMap<String, [u64; 2]>) {
    for c in &n.children {
        let name = g.relation_name(c.relation).unwrap_or_default().to_string();
        counts.entry(name).or_default()[dir_index(c.direction)] += 1;
        count_directions(g, &c.node, counts);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPlan {
    pub plan: TextPlan,
    pub score: f64,
    /// Position in enumeration order.
    pub index: usize,
}

/// Top-k plans by descending score; equal scores keep enumeration order.
pub fn best_plans(
    g: &FactGraph,
    k: usize,
    scorer: &PlanScorer,
    edge_cap: usize,
) -> Result<Vec<ScoredPlan>, ExhaustiveError> {
    if k == 0 {
        return Err(ExhaustiveError::ZeroK);
    }
    let mut top: Vec<ScoredPlan> = Vec::with_capacity(k + 1);
    for (index, plan) in enumerate_plans(g, edge_cap)?.enumerate() {
        let score = scorer.score(g, &plan);
        if top.len() == k && score <= top[k - 1].score {
            continue;
        }
        let pos = top.partition_point(|p| p.score >= score);
        top.insert(pos, ScoredPlan { plan, score, index });
        top.truncate(k);
    }
    Ok(top)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{parse_instance, random_graph};
    use crate::plan::check_faithful;
    use std::collections::HashSet;

    fn all_edges(g: &FactGraph) -> Vec<EdgeId> {
        g.edges().iter().map(|e| e.id).collect()
    }

    #[test]
    fn sentence_plan_counts() {
        let g = parse_instance("a | r | b").unwrap();
        assert_eq!(enumerate_sentence_plans(&g, &all_edges(&g)).unwrap().len(), 2);

        let g = parse_instance("a | r | b\nb | s | c").unwrap();
        let plans = enumerate_sentence_plans(&g, &all_edges(&g)).unwrap();
        assert_eq!(plans.len(), 4);
        let per_root = |i| plans.iter().filter(|p| p.root().entity == EntityId(i)).count();
        assert_eq!((per_root(0), per_root(1), per_root(2)), (1, 2, 1));

        let g = parse_instance("a | r | b\nc | r | d").unwrap();
        assert!(matches!(
            enumerate_sentence_plans(&g, &all_edges(&g)),
            Err(ExhaustiveError::Disconnected)
        ));
    }

    #[test]
    fn plan_counts() {
        let g = parse_instance("a | r | b").unwrap();
        assert_eq!(enumerate_plans(&g, DEFAULT_EDGE_CAP).unwrap().count(), 2);
        let g = parse_instance("a | r | b\nb | s | c").unwrap();
        let plans: Vec<_> = enumerate_plans(&g, DEFAULT_EDGE_CAP).unwrap().collect();
        assert_eq!(plans.len(), 12);
        assert_eq!(plans.iter().filter(|p| p.sentences.len() == 1).count(), 4);
        let distinct: HashSet<_> = plans.iter().collect();
        assert_eq!(distinct.len(), 12);
    }

    #[test]
    fn cap_is_enforced() {
        let g = random_graph(11, 6, 2, 1).unwrap();
        assert!(matches!(
            enumerate_plans(&g, DEFAULT_EDGE_CAP),
            Err(ExhaustiveError::CapExceeded { edges: 11, cap: 10 })
        ));
    }

    #[test]
    fn yielded_plans_are_faithful() {
        for seed in 0..1000u64 {
            let m = 1 + (seed % 4) as usize;
            let g = random_graph(m, 2 + (seed % 2) as usize * (m - 1), 2, seed).unwrap();
            for p in enumerate_plans(&g, DEFAULT_EDGE_CAP).unwrap() {
                assert!(check_faithful(&p, &g).faithful);
            }
        }
        // one larger graph, where blocks are heavier
        let g = random_graph(5, 4, 2, 7).unwrap();
        let mut seen = HashSet::new();
        for p in enumerate_plans(&g, DEFAULT_EDGE_CAP).unwrap() {
            assert!(check_faithful(&p, &g).faithful);
            assert!(seen.insert(p));
        }
    }

    #[test]
    fn best_plan_follows_direction_statistics() {
        let g = parse_instance("a | r | b").unwrap();
        let forward = enumerate_plans(&g, 10)
            .unwrap()
            .find(|p| p.sentences[0].root().entity == EntityId(0))
            .unwrap();
        let mut scorer = PlanScorer::default();
        scorer.observe(&g, &forward);
        let fwd_score = scorer.score(&g, &forward);
        assert!((fwd_score - ((2.0f64 / 3.0).ln() - 0.3)).abs() < 1e-12);
        let best = best_plans(&g, 1, &scorer, 10).unwrap();
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].plan, forward);
    }

    #[test]
    fn uniform_scorer_keeps_enumeration_order() {
        let g = parse_instance("a | r | b\nb | s | c").unwrap();
        let all: Vec<_> = enumerate_plans(&g, 10).unwrap().collect();
        let best = best_plans(&g, 5, &PlanScorer::uniform(), 10).unwrap();
        let got: Vec<_> = best.iter().map(|p| p.plan.clone()).collect();
        assert_eq!(got, all[..5].to_vec());
        assert_eq!(best_plans(&g, 100, &PlanScorer::uniform(), 10).unwrap().len(), 12);
        assert!(matches!(best_plans(&g, 0, &PlanScorer::uniform(), 10), Err(ExhaustiveError::ZeroK)));
    }

    #[test]
    fn scores_are_descending() {
        let g = random_graph(4, 4, 2, 5).unwrap();
        let gold = enumerate_plans(&g, 10).unwrap().nth(3).unwrap();
        let mut scorer = PlanScorer::default();
        scorer.observe(&g, &gold);
        let best = best_plans(&g, 10, &scorer, 10).unwrap();
        for w in best.windows(2) {
            assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].index < w[1].index));
        }
    }

    #[test]
    fn weights_file() {
        let s = PlanScorer::parse_weights("reldir_logfreq\t2.5\nsentence_count\t-1\n").unwrap();
        assert_eq!(
            PlanScorer::parse_weights(&s.weights_text()).unwrap(),
            s
        );
        assert!(matches!(
            PlanScorer::parse_weights("bogus\t1"),
            Err(ExhaustiveError::UnknownFeature(_))
        ));
        assert!(matches!(
            PlanScorer::parse_weights("reldir_logfreq 1"),
            Err(ExhaustiveError::ScorerSyntax { line: 1, .. })
        ));
    }
}
