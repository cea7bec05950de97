//! Fact graphs: entities connected by directed, labeled relation edges.
//!
//! Instances are read from a flat triple format, one fact per line:
//!
//! ```text
//! Azerbaijan | leader | Artur_Rasizade
//! @type Artur_Rasizade male
//! ```
//!
//! Entity surfaces are normalized (underscores become spaces, whitespace is
//! collapsed) and identical normalized strings share one [`EntityId`].

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// Referential type of an entity, used to restrict pronoun choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum RefType {
    Male,
    Female,
    PluralAnimate,
    UnknownAnimate,
    Inanimate,
    #[default]
    Unknown,
}

impl RefType {
    pub const ALL: [RefType; 6] = [
        RefType::Male,
        RefType::Female,
        RefType::PluralAnimate,
        RefType::UnknownAnimate,
        RefType::Inanimate,
        RefType::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RefType::Male => "male",
            RefType::Female => "female",
            RefType::PluralAnimate => "plural-animate",
            RefType::UnknownAnimate => "unknown-animate",
            RefType::Inanimate => "inanimate",
            RefType::Unknown => "unknown",
        }
    }
}

impl FromStr for RefType {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RefType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| GraphError::UnknownRefType(s.to_string()))
    }
}

impl fmt::Display for RefType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub surface: String,
    pub ref_type: RefType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub source: EntityId,
    pub relation: RelationId,
    pub target: EntityId,
}

impl Edge {
    /// The endpoint opposite to `n`, if `n` is an endpoint of this edge.
    pub fn other(&self, n: EntityId) -> Option<EntityId> {
        if n == self.source {
            Some(self.target)
        } else if n == self.target {
            Some(self.source)
        } else {
            None
        }
    }

    pub fn touches(&self, n: EntityId) -> bool {
        self.source == n || self.target == n
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("line {line}: expected `subject | relation | object`, got {fields} field(s)")]
    Arity { line: usize, fields: usize },
    #[error("line {line}: empty field")]
    EmptyField { line: usize },
    #[error("line {line}: self-loop on `{entity}`")]
    SelfLoop { line: usize, entity: String },
    #[error("line {line}: malformed @type line")]
    MalformedType { line: usize },
    #[error("line {line}: @type for unknown entity `{entity}`")]
    TypeForUnknownEntity { line: usize, entity: String },
    #[error("unknown referential type `{0}`")]
    UnknownRefType(String),
    #[error("instance has no edges")]
    NoEdges,
    #[error("invalid entity id {0}")]
    InvalidEntity(usize),
    #[error("invalid relation id {0}")]
    InvalidRelation(usize),
    #[error("edge ids must be dense and ordered: found {found} at position {position}")]
    EdgeOrder { position: usize, found: usize },
    #[error("edge {0} is a self-loop")]
    EdgeSelfLoop(usize),
    #[error("entity {0} has an empty surface")]
    EmptySurface(usize),
    #[error("duplicate entity surface `{0}`")]
    DuplicateSurface(String),
    #[error("infeasible random graph: {0}")]
    Infeasible(String),
}

/// Collapse whitespace and turn underscores into spaces.
pub fn normalize_surface(raw: &str) -> String {
    raw.replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn normalize_relation(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// An input instance: a directed labeled multigraph over entities.
///
/// Immutable once built; [`FactGraph::new`] validates every structural
/// invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactGraph {
    entities: Vec<Entity>,
    relations: Vec<String>,
    edges: Vec<Edge>,
}

impl FactGraph {
    pub fn new(
        entities: Vec<Entity>,
        relations: Vec<String>,
        edges: Vec<Edge>,
    ) -> Result<Self, GraphError> {
        let g = FactGraph {
            entities,
            relations,
            edges,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.edges.is_empty() {
            return Err(GraphError::NoEdges);
        }
        let mut seen = HashMap::new();
        for (i, e) in self.entities.iter().enumerate() {
            if e.id.0 != i {
                return Err(GraphError::InvalidEntity(e.id.0));
            }
            if e.surface.is_empty() {
                return Err(GraphError::EmptySurface(i));
            }
            if seen.insert(e.surface.as_str(), i).is_some() {
                return Err(GraphError::DuplicateSurface(e.surface.clone()));
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.id.0 != i {
                return Err(GraphError::EdgeOrder {
                    position: i,
                    found: e.id.0,
                });
            }
            for n in [e.source, e.target] {
                if n.0 >= self.entities.len() {
                    return Err(GraphError::InvalidEntity(n.0));
                }
            }
            if e.relation.0 >= self.relations.len() {
                return Err(GraphError::InvalidRelation(e.relation.0));
            }
            if e.source == e.target {
                return Err(GraphError::EdgeSelfLoop(i));
            }
        }
        Ok(())
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(id.0)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(id.0)
    }

    pub fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relations.get(id.0).map(String::as_str)
    }

    pub fn entity_by_surface(&self, surface: &str) -> Option<EntityId> {
        self.entities
            .iter()
            .find(|e| e.surface == surface)
            .map(|e| e.id)
    }

    pub fn relation_by_name(&self, name: &str) -> Option<RelationId> {
        self.relations
            .iter()
            .position(|r| r == name)
            .map(RelationId)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Incoming (target = `n`) and outgoing (source = `n`) edges, in edge id order.
    pub fn adjacency(&self, n: EntityId) -> Result<(Vec<&Edge>, Vec<&Edge>), GraphError> {
        if n.0 >= self.entities.len() {
            return Err(GraphError::InvalidEntity(n.0));
        }
        let incoming = self.edges.iter().filter(|e| e.target == n).collect();
        let outgoing = self.edges.iter().filter(|e| e.source == n).collect();
        Ok((incoming, outgoing))
    }

    /// Incident edge ids per entity, each list in edge id order.
    pub fn incidence(&self) -> Vec<Vec<EdgeId>> {
        let mut inc = vec![Vec::new(); self.entities.len()];
        for e in &self.edges {
            inc[e.source.0].push(e.id);
            inc[e.target.0].push(e.id);
        }
        inc
    }

    /// Whether the given edge subset is connected when edges are viewed undirected.
    pub fn edges_connected(&self, subset: &[EdgeId]) -> bool {
        if subset.is_empty() {
            return false;
        }
        let mut reached = vec![false; subset.len()];
        let mut nodes = vec![false; self.entities.len()];
        let first = &self.edges[subset[0].0];
        nodes[first.source.0] = true;
        nodes[first.target.0] = true;
        reached[0] = true;
        let mut changed = true;
        while changed {
            changed = false;
            for (i, id) in subset.iter().enumerate() {
                if reached[i] {
                    continue;
                }
                let e = &self.edges[id.0];
                if nodes[e.source.0] || nodes[e.target.0] {
                    reached[i] = true;
                    nodes[e.source.0] = true;
                    nodes[e.target.0] = true;
                    changed = true;
                }
            }
        }
        reached.into_iter().all(|r| r)
    }

    /// Undirected connectivity over all entities (isolated entities count as
    /// disconnected).
    pub fn is_connected(&self) -> bool {
        if self.entities.is_empty() {
            return false;
        }
        let inc = self.incidence();
        let mut seen = vec![false; self.entities.len()];
        let mut queue = VecDeque::from([EntityId(0)]);
        seen[0] = true;
        while let Some(n) = queue.pop_front() {
            for id in &inc[n.0] {
                let m = self.edges[id.0].other(n).expect("incident edge");
                if !seen[m.0] {
                    seen[m.0] = true;
                    queue.push_back(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Serialize back to the triple format; [`parse_instance`] inverts this.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(&format!(
                "{} | {} | {}\n",
                self.entities[e.source.0].surface,
                self.relations[e.relation.0],
                self.entities[e.target.0].surface
            ));
        }
        for ent in &self.entities {
            if ent.ref_type != RefType::Unknown {
                out.push_str(&format!("@type {} {}\n", ent.surface, ent.ref_type));
            }
        }
        out
    }
}

/// Interns entity surfaces and relation names in first-appearance order.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entities: Vec<Entity>,
    entity_index: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    edges: Vec<Edge>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, surface: &str) -> EntityId {
        let surface = normalize_surface(surface);
        if let Some(id) = self.entity_index.get(&surface) {
            return *id;
        }
        let id = EntityId(self.entities.len());
        self.entities.push(Entity {
            id,
            surface: surface.clone(),
            ref_type: RefType::Unknown,
        });
        self.entity_index.insert(surface, id);
        id
    }

    pub fn lookup(&self, surface: &str) -> Option<EntityId> {
        self.entity_index.get(&normalize_surface(surface)).copied()
    }

    pub fn relation(&mut self, name: &str) -> RelationId {
        let name = normalize_relation(name);
        if let Some(id) = self.relation_index.get(&name) {
            return *id;
        }
        let id = RelationId(self.relations.len());
        self.relations.push(name.clone());
        self.relation_index.insert(name, id);
        id
    }

    pub fn set_type(&mut self, id: EntityId, ref_type: RefType) {
        self.entities[id.0].ref_type = ref_type;
    }

    pub fn edge(&mut self, source: EntityId, relation: RelationId, target: EntityId) -> EdgeId {
        let id = EdgeId(self.edges.len());
        self.edges.push(Edge {
            id,
            source,
            relation,
            target,
        });
        id
    }

    pub fn triple(&mut self, subject: &str, relation: &str, object: &str) -> EdgeId {
        let s = self.entity(subject);
        let r = self.relation(relation);
        let o = self.entity(object);
        self.edge(s, r, o)
    }

    pub fn build(self) -> Result<FactGraph, GraphError> {
        FactGraph::new(self.entities, self.relations, self.edges)
    }
}

/// Parse one instance in the triple format.
pub fn parse_instance(text: &str) -> Result<FactGraph, GraphError> {
    parse_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn parse_lines<'a>(lines: impl Iterator<Item = (usize, &'a str)>) -> Result<FactGraph, GraphError> {
    let mut b = GraphBuilder::new();
    let mut types = Vec::new();
    for (line_no, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("@type") {
            let rest = rest.trim();
            let (surface, ty) = rest
                .rsplit_once(char::is_whitespace)
                .ok_or(GraphError::MalformedType { line: line_no })?;
            let surface = normalize_surface(surface);
            if surface.is_empty() || !raw.trim_start()["@type".len()..].starts_with(char::is_whitespace) {
                return Err(GraphError::MalformedType { line: line_no });
            }
            types.push((line_no, surface, ty.parse::<RefType>()?));
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 3 {
            return Err(GraphError::Arity {
                line: line_no,
                fields: fields.len(),
            });
        }
        let subject = normalize_surface(fields[0]);
        let relation = normalize_relation(fields[1]);
        let object = normalize_surface(fields[2]);
        if subject.is_empty() || relation.is_empty() || object.is_empty() {
            return Err(GraphError::EmptyField { line: line_no });
        }
        if subject == object {
            return Err(GraphError::SelfLoop {
                line: line_no,
                entity: subject,
            });
        }
        b.triple(&subject, &relation, &object);
    }
    for (line, surface, ty) in types {
        let id = b
            .lookup(&surface)
            .ok_or(GraphError::TypeForUnknownEntity {
                line,
                entity: surface.clone(),
            })?;
        b.set_type(id, ty);
    }
    b.build()
}

/// Parse a multi-instance file; instances are separated by blank lines.
pub fn parse_instances(text: &str) -> Result<Vec<FactGraph>, GraphError> {
    let mut out = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                out.push(parse_lines(block.drain(..))?);
            }
        } else {
            block.push((i + 1, line));
        }
    }
    if !block.is_empty() {
        out.push(parse_lines(block.into_iter())?);
    }
    Ok(out)
}

/// Seeded random graph that is connected when viewed undirected.
///
/// A random spanning tree over all entities is laid down first, then the
/// remaining edges join random distinct pairs (parallel edges allowed).
/// Entities are named `E0`, `E1`, ... and relations `r0`, `r1`, ...
pub fn random_graph(
    n_edges: usize,
    n_entities: usize,
    n_relations: usize,
    seed: u64,
) -> Result<FactGraph, GraphError> {
    if n_edges == 0 {
        return Err(GraphError::Infeasible("need at least one edge".into()));
    }
    if n_entities < 2 {
        return Err(GraphError::Infeasible("need at least two entities".into()));
    }
    if n_relations == 0 {
        return Err(GraphError::Infeasible("need at least one relation".into()));
    }
    if n_edges + 1 < n_entities {
        return Err(GraphError::Infeasible(format!(
            "{n_edges} edges cannot connect {n_entities} entities"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n_entities).collect();
    order.shuffle(&mut rng);
    let mut raw = Vec::with_capacity(n_edges);
    for i in 1..n_entities {
        let j = rng.gen_range(0..i);
        let (a, b) = (order[i], order[j]);
        raw.push(if rng.gen_bool(0.5) { (a, b) } else { (b, a) });
    }
    while raw.len() < n_edges {
        let a = rng.gen_range(0..n_entities);
        let mut b = rng.gen_range(0..n_entities - 1);
        if b >= a {
            b += 1;
        }
        raw.push((a, b));
    }
    raw.shuffle(&mut rng);
    let mut b = GraphBuilder::new();
    for (s, t) in raw {
        let rel = rng.gen_range(0..n_relations);
        b.triple(&format!("E{s}"), &format!("r{rel}"), &format!("E{t}"));
    }
    b.build()
}

/// Fact multiset of a graph, keyed by (source, relation, target).
pub fn fact_counts(g: &FactGraph) -> BTreeMap<(EntityId, RelationId, EntityId), Vec<EdgeId>> {
    let mut m: BTreeMap<_, Vec<EdgeId>> = BTreeMap::new();
    for e in g.edges() {
        m.entry((e.source, e.relation, e.target)).or_default().push(e.id);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_triple() {
        let g = parse_instance("Azerbaijan | leader | Artur_Rasizade").unwrap();
        assert_eq!(g.num_entities(), 2);
        assert_eq!(g.relations().len(), 1);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.entities()[0].surface, "Azerbaijan");
        assert_eq!(g.entities()[1].surface, "Artur Rasizade");
        assert_eq!(g.entities()[1].ref_type, RefType::Unknown);
    }

    #[test]
    fn shared_subject_dedups() {
        let g = parse_instance("A | r | B\nA | s | C\n").unwrap();
        assert_eq!(g.num_entities(), 3);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.edges()[0].source, g.edges()[1].source);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert_eq!(
            parse_instance("A | r"),
            Err(GraphError::Arity { line: 1, fields: 2 })
        );
        assert_eq!(
            parse_instance("A | | B"),
            Err(GraphError::EmptyField { line: 1 })
        );
        assert!(matches!(
            parse_instance("A | r | A"),
            Err(GraphError::SelfLoop { .. })
        ));
        assert!(matches!(
            parse_instance("A_B | r | A  B"),
            Err(GraphError::SelfLoop { .. })
        ));
        assert_eq!(parse_instance("\n\n"), Err(GraphError::NoEdges));
    }

    #[test]
    fn type_lines() {
        let g = parse_instance("@type Artur_Rasizade male\nAzerbaijan | leader | Artur_Rasizade\n@type Azerbaijan inanimate")
            .unwrap();
        assert_eq!(g.entities()[1].ref_type, RefType::Male);
        assert_eq!(g.entities()[0].ref_type, RefType::Inanimate);
        assert!(matches!(
            parse_instance("A | r | B\n@type C male"),
            Err(GraphError::TypeForUnknownEntity { .. })
        ));
        assert!(matches!(
            parse_instance("A | r | B\n@type A robot"),
            Err(GraphError::UnknownRefType(_))
        ));
        assert!(matches!(
            parse_instance("A | r | B\n@type male"),
            Err(GraphError::MalformedType { .. })
        ));
    }

    #[test]
    fn multi_instance_file() {
        let gs = parse_instances("A | r | B\n\n\nC | s | D\nD | s | E\n").unwrap();
        assert_eq!(gs.len(), 2);
        assert_eq!(gs[1].num_edges(), 2);
    }

    #[test]
    fn adjacency_examples() {
        let g = parse_instance("a | r | b").unwrap();
        let (i, o) = g.adjacency(EntityId(1)).unwrap();
        assert_eq!(i.len(), 1);
        assert!(o.is_empty());

        let g = parse_instance("a | r | b\nb | r | c").unwrap();
        let (i, o) = g.adjacency(EntityId(1)).unwrap();
        assert_eq!(i[0].id, EdgeId(0));
        assert_eq!(o[0].id, EdgeId(1));

        let g = parse_instance("a | r | b\na | r | b").unwrap();
        let (_, o) = g.adjacency(EntityId(0)).unwrap();
        let by_filter = g.edges().iter().filter(|e| e.source == EntityId(0)).count();
        assert_eq!(o.len(), by_filter);
        assert_eq!(o.len(), 2);

        assert_eq!(
            g.adjacency(EntityId(7)).unwrap_err(),
            GraphError::InvalidEntity(7)
        );
    }

    #[test]
    fn random_graph_forced_and_deterministic() {
        let g = random_graph(1, 2, 1, 9).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.num_entities(), 2);
        assert_eq!(random_graph(7, 5, 3, 42).unwrap(), random_graph(7, 5, 3, 42).unwrap());
        assert!(matches!(random_graph(2, 4, 1, 0), Err(GraphError::Infeasible(_))));
        assert!(matches!(random_graph(0, 2, 1, 0), Err(GraphError::Infeasible(_))));
    }

    fn bfs_connected(g: &FactGraph) -> bool {
        let n = g.num_entities();
        let mut adj = vec![Vec::new(); n];
        for e in g.edges() {
            adj[e.source.0].push(e.target.0);
            adj[e.target.0].push(e.source.0);
        }
        let mut seen = vec![false; n];
        let mut q = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    #[test]
    fn random_graph_connected_over_many_seeds() {
        for seed in 0..1000 {
            let g = random_graph(6, 4, 2, seed).unwrap();
            assert!(bfs_connected(&g), "seed {seed}");
            assert!(g.edges().iter().all(|e| e.source != e.target));
            assert!(g.validate().is_ok());
        }
    }

    proptest::proptest! {
        #[test]
        fn text_round_trip(n_edges in 1usize..10, extra in 0usize..3, rels in 1usize..4, seed in 0u64..1000) {
            let n_entities = (n_edges + 1).saturating_sub(extra).max(2);
            let g = random_graph(n_edges, n_entities, rels, seed).unwrap();
            let back = parse_instance(&g.to_text()).unwrap();
            proptest::prop_assert_eq!(&back, &g);
        }

        #[test]
        fn adjacency_partitions_edges(n_edges in 1usize..12, seed in 0u64..1000) {
            let g = random_graph(n_edges, 2 + n_edges / 2, 3, seed).unwrap();
            let (mut ins, mut outs) = (0, 0);
            for e in g.entities() {
                let (i, o) = g.adjacency(e.id).unwrap();
                ins += i.len();
                outs += o.len();
            }
            proptest::prop_assert_eq!(ins, g.num_edges());
            proptest::prop_assert_eq!(outs, g.num_edges());
        }
    }
}
