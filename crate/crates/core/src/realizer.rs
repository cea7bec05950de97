//! Surface realization of text plans into k-best candidates.
//!
//! Entities stay as symbols until referring-expression generation. Each plan
//! edge becomes one clause from a template such as `the leader of SUBJ is
//! OBJ`; clauses of a sentence are joined with "and". The entity introduced
//! by a clause is an [`Token::Entity`] symbol, while the parent it hangs off
//! is repeated as an [`Token::Ref`] (an anaphoric re-mention) whenever it was
//! already introduced, so the entity symbols of a template realization are
//! exactly the plan's entity sequence.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityId, FactGraph};
use crate::plan::{Direction, PlanNode, TextPlan};

pub const SUBJ: &str = "SUBJ";
pub const OBJ: &str = "OBJ";

#[derive(Debug, Error, PartialEq)]
pub enum RealizeError {
    #[error("no template for relation `{relation}` ({direction})")]
    MissingTemplate { relation: String, direction: String },
    #[error("template line {line}: {reason}")]
    TemplateSyntax { line: usize, reason: String },
    #[error("candidate line {line}: {reason}")]
    CandidateSyntax { line: usize, reason: String },
    #[error("candidate line {line}: unresolvable entity markup `{markup}`")]
    UnknownEntity { line: usize, markup: String },
    #[error("candidate line {line}: ambiguous overlapping entity matches at token {position}")]
    Ambiguous { line: usize, position: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("i/o: {0}")]
    Io(String),
}

/// One output position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    Word(String),
    /// Copied entity symbol; verified against the plan.
    Entity(EntityId),
    /// Re-mention of the clause's parent entity; not a plan position.
    Ref(EntityId),
    /// End of a sentence.
    Boundary,
}

impl Token {
    pub fn word(w: &str) -> Self {
        Token::Word(w.to_string())
    }

    /// Entity mentioned at this position, whether copied or re-mentioned.
    pub fn mentioned(&self) -> Option<EntityId> {
        match self {
            Token::Entity(e) | Token::Ref(e) => Some(*e),
            _ => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Word(w) => f.write_str(w),
            Token::Entity(e) => write!(f, "⟨E:{}⟩", e.0),
            Token::Ref(e) => write!(f, "⟨R:{}⟩", e.0),
            Token::Boundary => f.write_str("</s>"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateSource {
    Template,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tokens: Vec<Token>,
    pub model_score: f64,
    pub source: CandidateSource,
}

impl Candidate {
    /// Copied entity symbols in token order.
    pub fn entity_sequence(&self) -> Vec<EntityId> {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                Token::Entity(e) => Some(*e),
                _ => None,
            })
            .collect()
    }

    /// Copied entity symbols per sentence; a trailing sentence without a
    /// boundary still counts.
    pub fn sentence_entity_sequences(&self) -> Vec<Vec<EntityId>> {
        let mut out = vec![Vec::new()];
        for (i, t) in self.tokens.iter().enumerate() {
            match t {
                Token::Entity(e) => out.last_mut().unwrap().push(*e),
                Token::Boundary if i + 1 < self.tokens.len() => out.push(Vec::new()),
                _ => {}
            }
        }
        out
    }

    pub fn has_boundaries(&self) -> bool {
        self.tokens.contains(&Token::Boundary)
    }

    /// Markup form, as accepted by [`parse_candidates`].
    pub fn to_markup(&self) -> String {
        let toks: Vec<String> = self.tokens.iter().map(|t| t.to_string()).collect();
        format!("{}\t{}", self.model_score, toks.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub relation: String,
    pub direction: Direction,
    pub weight: f64,
    pub pattern: Vec<String>,
}

impl Template {
    /// Validates that each slot occurs once and that the slot of the plan
    /// parent (SUBJ when forward, OBJ when backward) comes first.
    pub fn new(
        relation: &str,
        direction: Direction,
        weight: f64,
        pattern: &str,
    ) -> Result<Self, String> {
        let pattern: Vec<String> = pattern.split_whitespace().map(str::to_string).collect();
        let pos = |slot: &str| -> Result<usize, String> {
            let hits: Vec<usize> = (0..pattern.len()).filter(|&i| pattern[i] == slot).collect();
            match hits.as_slice() {
                [i] => Ok(*i),
                _ => Err(format!("pattern must contain {slot} exactly once")),
            }
        };
        let (s, o) = (pos(SUBJ)?, pos(OBJ)?);
        let parent_first = match direction {
            Direction::Forward => s < o,
            Direction::Backward => o < s,
        };
        if !parent_first {
            return Err("the parent's slot must precede the child's slot".into());
        }
        if !weight.is_finite() {
            return Err("weight must be finite".into());
        }
        Ok(Template {
            relation: relation.to_string(),
            direction,
            weight,
            pattern,
        })
    }
}

fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::Forward => "forward",
        Direction::Backward => "backward",
    }
}

fn parse_direction(s: &str) -> Option<Direction> {
    match s {
        "forward" | ">" => Some(Direction::Forward),
        "backward" | "<" => Some(Direction::Backward),
        _ => None,
    }
}

/// Templates per (relation, direction), best weight first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemplateStore {
    by_key: BTreeMap<(String, Direction), Vec<Template>>,
}

impl TemplateStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, t: Template) {
        let list = self.by_key.entry((t.relation.clone(), t.direction)).or_default();
        // stable: equal weights keep insertion order
        let at = list.iter().position(|x| x.weight < t.weight).unwrap_or(list.len());
        list.insert(at, t);
    }

    pub fn get(&self, relation: &str, direction: Direction) -> &[Template] {
        self.by_key
            .get(&(relation.to_string(), direction))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.by_key.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    /// `relation<TAB>direction<TAB>weight<TAB>pattern` per line; `#` comments.
    pub fn parse(text: &str) -> Result<Self, RealizeError> {
        let mut store = TemplateStore::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let syntax = |reason: &str| RealizeError::TemplateSyntax {
                line,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = raw.split('\t').collect();
            let [rel, dir, weight, pattern] = fields.as_slice() else {
                return Err(syntax("expected 4 tab-separated fields"));
            };
            let dir = parse_direction(dir.trim()).ok_or_else(|| syntax("bad direction"))?;
            let weight: f64 = weight.trim().parse().map_err(|_| syntax("bad weight"))?;
            let t = Template::new(rel.trim(), dir, weight, pattern).map_err(|r| syntax(&r))?;
            store.add(t);
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, RealizeError> {
        let text = std::fs::read_to_string(path).map_err(|e| RealizeError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for list in self.by_key.values() {
            for t in list {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    t.relation,
                    direction_name(t.direction),
                    t.weight,
                    t.pattern.join(" ")
                ));
            }
        }
        out
    }

    /// One plain template per direction for every relation of the graphs:
    /// `the <rel> of SUBJ is OBJ` and `OBJ is the <rel> of SUBJ`.
    pub fn generic<'a>(graphs: impl IntoIterator<Item = &'a FactGraph>) -> Self {
        let mut names = BTreeSet::new();
        for g in graphs {
            names.extend(g.relations().iter().cloned());
        }
        let mut store = TemplateStore::new();
        for r in names {
            let words = relation_words(&r);
            let fwd = format!("the {words} of SUBJ is OBJ");
            let bwd = format!("OBJ is the {words} of SUBJ");
            store.add(Template::new(&r, Direction::Forward, 0.0, &fwd).expect("valid pattern"));
            store.add(Template::new(&r, Direction::Backward, 0.0, &bwd).expect("valid pattern"));
        }
        store
    }
}

/// `birthPlace` / `birth_place` → `birth place`.
pub fn relation_words(name: &str) -> String {
    let mut out = String::new();
    let mut prev_lower = false;
    for ch in name.chars() {
        if ch == '_' || ch == '-' || ch.is_whitespace() {
            if !out.ends_with(' ') && !out.is_empty() {
                out.push(' ');
            }
            prev_lower = false;
            continue;
        }
        if ch.is_uppercase() && prev_lower {
            out.push(' ');
        }
        out.extend(ch.to_lowercase());
        prev_lower = ch.is_lowercase() || ch.is_ascii_digit();
    }
    out.trim().to_string()
}

/// Plan edge in clause order, with whether its parent was already introduced.
struct Clause {
    sentence: usize,
    parent: EntityId,
    parent_is_new: bool,
    child: EntityId,
    relation: String,
    direction: Direction,
}

fn clauses(plan: &TextPlan, g: &FactGraph) -> Vec<Clause> {
    fn walk(n: &PlanNode, sentence: usize, root: bool, g: &FactGraph, out: &mut Vec<Clause>) {
        for (i, c) in n.children.iter().enumerate() {
            out.push(Clause {
                sentence,
                parent: n.entity,
                parent_is_new: root && i == 0,
                child: c.node.entity,
                relation: g.relation_name(c.relation).unwrap_or_default().to_string(),
                direction: c.direction,
            });
            walk(&c.node, sentence, false, g, out);
        }
    }
    let mut out = Vec::new();
    for (s, sp) in plan.sentences.iter().enumerate() {
        walk(sp.root(), s, true, g, &mut out);
    }
    out
}

fn render(clauses: &[Clause], chosen: &[&Template]) -> Vec<Token> {
    let mut out = Vec::new();
    for (i, (cl, t)) in clauses.iter().zip(chosen).enumerate() {
        if i > 0 && clauses[i - 1].sentence == cl.sentence {
            out.push(Token::word("and"));
        }
        let parent = if cl.parent_is_new {
            Token::Entity(cl.parent)
        } else {
            Token::Ref(cl.parent)
        };
        let (subj, obj) = match cl.direction {
            Direction::Forward => (parent, Token::Entity(cl.child)),
            Direction::Backward => (Token::Entity(cl.child), parent),
        };
        for w in &t.pattern {
            out.push(match w.as_str() {
                SUBJ => subj.clone(),
                OBJ => obj.clone(),
                _ => Token::Word(w.clone()),
            });
        }
        let last = clauses.get(i + 1).is_none_or(|n| n.sentence != cl.sentence);
        if last {
            out.push(Token::word("."));
            out.push(Token::Boundary);
        }
    }
    out
}

#[derive(PartialEq)]
struct Frontier {
    score: f64,
    choice: Vec<usize>,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on score, then lexicographically smaller choice first
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.choice.cmp(&self.choice))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Top-k template combinations by summed weight, best first; ties broken by
/// preferring earlier templates at earlier clauses.
pub fn realize_kbest(
    plan: &TextPlan,
    g: &FactGraph,
    store: &TemplateStore,
    k: usize,
) -> Result<Vec<Candidate>, RealizeError> {
    if k == 0 {
        return Err(RealizeError::ZeroK);
    }
    let clauses = clauses(plan, g);
    let mut options: Vec<&[Template]> = Vec::with_capacity(clauses.len());
    for cl in &clauses {
        let ts = store.get(&cl.relation, cl.direction);
        if ts.is_empty() {
            return Err(RealizeError::MissingTemplate {
                relation: cl.relation.clone(),
                direction: direction_name(cl.direction).to_string(),
            });
        }
        options.push(ts);
    }
    let score_of = |choice: &[usize]| -> f64 {
        choice.iter().zip(&options).map(|(&i, ts)| ts[i].weight).sum()
    };
    let start = vec![0; clauses.len()];
    let mut heap = BinaryHeap::new();
    let mut seen = BTreeSet::new();
    heap.push(Frontier {
        score: score_of(&start),
        choice: start.clone(),
    });
    seen.insert(start);
    let mut out = Vec::new();
    while let Some(Frontier { score, choice }) = heap.pop() {
        let chosen: Vec<&Template> = choice.iter().zip(&options).map(|(&i, ts)| &ts[i]).collect();
        out.push(Candidate {
            tokens: render(&clauses, &chosen),
            model_score: score,
            source: CandidateSource::Template,
        });
        if out.len() == k {
            break;
        }
        for j in 0..choice.len() {
            if choice[j] + 1 < options[j].len() {
                let mut next = choice.clone();
                next[j] += 1;
                if seen.insert(next.clone()) {
                    heap.push(Frontier {
                        score: score_of(&next),
                        choice: next,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// How plain-text candidates are mapped to entity symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportMode {
    /// `⟨E:id⟩` / `⟨R:id⟩` / `</s>` markup; ids may also be surfaces with `_`.
    Markup,
    /// Leftmost-longest match of entity surfaces; overlaps are resolved.
    PlainLenient,
    /// Like `PlainLenient`, but a competing match that crosses the chosen one
    /// is an error.
    PlainStrict,
}

fn resolve_markup(g: &FactGraph, body: &str) -> Option<EntityId> {
    if let Ok(i) = body.parse::<usize>() {
        return (i < g.num_entities()).then_some(EntityId(i));
    }
    g.entity_by_surface(&crate::graph::normalize_surface(body))
}

fn parse_markup_tokens(g: &FactGraph, text: &str, line: usize) -> Result<Vec<Token>, RealizeError> {
    let mut out = Vec::new();
    for w in text.split_whitespace() {
        let tok = if w == "</s>" {
            Token::Boundary
        } else if let Some(body) = w.strip_prefix("⟨E:").and_then(|r| r.strip_suffix('⟩')) {
            Token::Entity(resolve_markup(g, body).ok_or_else(|| RealizeError::UnknownEntity {
                line,
                markup: w.to_string(),
            })?)
        } else if let Some(body) = w.strip_prefix("⟨R:").and_then(|r| r.strip_suffix('⟩')) {
            Token::Ref(resolve_markup(g, body).ok_or_else(|| RealizeError::UnknownEntity {
                line,
                markup: w.to_string(),
            })?)
        } else if w.starts_with('⟨') {
            return Err(RealizeError::UnknownEntity {
                line,
                markup: w.to_string(),
            });
        } else {
            Token::Word(w.to_string())
        };
        out.push(tok);
    }
    Ok(out)
}

/// Leftmost-longest matching of entity surfaces over whitespace tokens.
/// A `.` token ends a sentence.
pub fn match_entities(
    g: &FactGraph,
    text: &str,
    strict: bool,
    line: usize,
) -> Result<Vec<Token>, RealizeError> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let surfaces: Vec<(EntityId, Vec<&str>)> = g
        .entities()
        .iter()
        .map(|e| (e.id, e.surface.split_whitespace().collect()))
        .collect();
    let longest_at = |i: usize| -> Option<(EntityId, usize)> {
        let mut best: Option<(EntityId, usize)> = None;
        for (id, s) in &surfaces {
            let n = s.len();
            if n > 0 && i + n <= words.len() && words[i..i + n] == s[..] && best.is_none_or(|b| n > b.1) {
                best = Some((*id, n));
            }
        }
        best
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        if let Some((id, n)) = longest_at(i) {
            if strict {
                for j in i + 1..i + n {
                    if let Some((_, m)) = longest_at(j) {
                        if j + m > i + n {
                            return Err(RealizeError::Ambiguous { line, position: j });
                        }
                    }
                }
            }
            out.push(Token::Entity(id));
            i += n;
        } else {
            out.push(Token::Word(words[i].to_string()));
            if words[i] == "." {
                out.push(Token::Boundary);
            }
            i += 1;
        }
    }
    Ok(out)
}

/// One candidate per line, `score<TAB>tokens`; blank lines and `#` comments
/// are skipped.
pub fn parse_candidates(
    g: &FactGraph,
    text: &str,
    mode: ImportMode,
) -> Result<Vec<Candidate>, RealizeError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let (score, body) = raw.split_once('\t').ok_or(RealizeError::CandidateSyntax {
            line,
            reason: "expected `score<TAB>tokens`".into(),
        })?;
        let model_score: f64 = score.trim().parse().map_err(|_| RealizeError::CandidateSyntax {
            line,
            reason: format!("bad score `{}`", score.trim()),
        })?;
        if !model_score.is_finite() {
            return Err(RealizeError::CandidateSyntax {
                line,
                reason: "score is not finite".into(),
            });
        }
        let tokens = match mode {
            ImportMode::Markup => parse_markup_tokens(g, body, line)?,
            ImportMode::PlainLenient => match_entities(g, body, false, line)?,
            ImportMode::PlainStrict => match_entities(g, body, true, line)?,
        };
        out.push(Candidate {
            tokens,
            model_score,
            source: CandidateSource::External,
        });
    }
    Ok(out)
}

pub fn import_candidates(
    path: &Path,
    g: &FactGraph,
    mode: ImportMode,
) -> Result<Vec<Candidate>, RealizeError> {
    let text = std::fs::read_to_string(path).map_err(|e| RealizeError::Io(e.to_string()))?;
    parse_candidates(g, &text, mode)
}

/// Entity-symbol defects injected by the corruption harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    /// Remove the i-th entity symbol.
    Drop(usize),
    /// Repeat the i-th entity symbol right after itself.
    Duplicate(usize),
    /// Exchange the i-th and j-th entity symbols.
    Swap(usize, usize),
}

fn entity_positions(c: &Candidate) -> Vec<usize> {
    (0..c.tokens.len())
        .filter(|&i| matches!(c.tokens[i], Token::Entity(_)))
        .collect()
}

/// Apply a corruption; indices count entity symbols only. Out-of-range
/// indices leave the candidate unchanged.
pub fn corrupt(c: &Candidate, how: Corruption) -> Candidate {
    let pos = entity_positions(c);
    let mut out = c.clone();
    match how {
        Corruption::Drop(i) if i < pos.len() => {
            out.tokens.remove(pos[i]);
        }
        Corruption::Duplicate(i) if i < pos.len() => {
            let t = out.tokens[pos[i]].clone();
            out.tokens.insert(pos[i] + 1, t);
        }
        Corruption::Swap(i, j) if i < pos.len() && j < pos.len() => {
            out.tokens.swap(pos[i], pos[j]);
        }
        _ => {}
    }
    out
}

/// A random corruption that is guaranteed to change the entity sequence of
/// a candidate with at least one entity symbol.
pub fn random_corruption<R: Rng>(c: &Candidate, rng: &mut R) -> Corruption {
    let seq = c.entity_sequence();
    let n = seq.len();
    if n == 0 {
        return Corruption::Drop(0);
    }
    match rng.gen_range(0..3) {
        0 => Corruption::Drop(rng.gen_range(0..n)),
        1 => Corruption::Duplicate(rng.gen_range(0..n)),
        _ => {
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| seq[i] != seq[j])
                .collect();
            if pairs.is_empty() {
                Corruption::Duplicate(rng.gen_range(0..n))
            } else {
                let (i, j) = pairs[rng.gen_range(0..pairs.len())];
                Corruption::Swap(i, j)
            }
        }
    }
}

/// Join tokens into text, rendering entity symbols with `name`.
pub fn render_text(tokens: &[Token], mut name: impl FnMut(EntityId) -> String) -> String {
    let mut parts: Vec<String> = Vec::new();
    for t in tokens {
        match t {
            Token::Word(w) => parts.push(w.clone()),
            Token::Entity(e) | Token::Ref(e) => parts.push(name(*e)),
            Token::Boundary => {}
        }
    }
    parts.join(" ")
}
