//! Forward computations and hand-derived gradients.
//!
//! Scoring at each decision is `softmax_a(h · rep(a))`, where `h` is the LSTM
//! state over the plan symbols emitted so far and
//!
//! * traverse via edge k: `e_k = E [x_src; r; x_tgt]`
//! * choose node n: `n_n = V [x_n; Σ_in e; Σ_out e]` over remaining edges
//! * pop back to node n: `n_n + p`

use super::params::{Params, SYM_BACKWARD, SYM_BOS, SYM_CLOSE, SYM_FORWARD, SYM_OPEN};
use super::tensor::{axpy, dot, sigmoid};
use crate::graph::{EdgeId, EntityId, FactGraph};
use crate::plan::{Direction, PlanToken, TokenKind, TypeTag};
use crate::transition::{softmax, Action, PlannerState, TransitionError, TransitionSystem};

/// Graph-specific lookups and the (state-independent) edge vectors.
#[derive(Debug, Clone)]
pub struct GraphFeatures {
    pub ent_rows: Vec<usize>,
    pub rel_rows: Vec<usize>,
    edge_in: Vec<Vec<f64>>,
    edge_vecs: Vec<Vec<f64>>,
}

impl GraphFeatures {
    pub fn new(p: &Params, g: &FactGraph) -> Self {
        let ent_rows: Vec<usize> = g.entities().iter().map(|e| p.entity_row(&e.surface)).collect();
        let rel_rows: Vec<usize> = g.relations().iter().map(|r| p.relation_row(r)).collect();
        let mut edge_in = Vec::with_capacity(g.num_edges());
        let mut edge_vecs = Vec::with_capacity(g.num_edges());
        for e in g.edges() {
            let mut z = Vec::with_capacity(p.dims.d_edge_in());
            z.extend_from_slice(p.ent.row(ent_rows[e.source.0]));
            z.extend_from_slice(p.rel.row(rel_rows[e.relation.0]));
            z.extend_from_slice(p.ent.row(ent_rows[e.target.0]));
            edge_vecs.push(p.e_proj.matvec(&z));
            edge_in.push(z);
        }
        GraphFeatures {
            ent_rows,
            rel_rows,
            edge_in,
            edge_vecs,
        }
    }

    pub fn edge_vec(&self, e: EdgeId) -> &[f64] {
        &self.edge_vecs[e.0]
    }
}

/// `E [x_src; r; x_tgt]` for one edge.
pub fn edge_vec(p: &Params, g: &FactGraph, e: EdgeId) -> Vec<f64> {
    GraphFeatures::new(p, g).edge_vecs[e.0].clone()
}

/// Input to the node projection and the edges summed into it.
#[derive(Debug, Clone)]
pub(crate) struct NodeInput {
    row: usize,
    incoming: Vec<EdgeId>,
    outgoing: Vec<EdgeId>,
    u: Vec<f64>,
}

pub(crate) fn node_input(
    p: &Params,
    feats: &GraphFeatures,
    sys: &TransitionSystem<'_>,
    remaining: impl Fn(EdgeId) -> bool,
    n: EntityId,
) -> NodeInput {
    let d = p.dims;
    let row = feats.ent_rows[n.0];
    let mut u = vec![0.0; d.d_node_in()];
    u[..d.d_e].copy_from_slice(p.ent.row(row));
    let mut incoming = Vec::new();
    let mut outgoing = Vec::new();
    let edges = sys.graph().edges();
    // incidence lists are in edge id order, so the sums have a fixed order
    for &k in sys.incident(n) {
        if !remaining(k) {
            continue;
        }
        if edges[k.0].target == n {
            axpy(&mut u[d.d_e..d.d_e + d.d_h], 1.0, &feats.edge_vecs[k.0]);
            incoming.push(k);
        } else {
            axpy(&mut u[d.d_e + d.d_h..], 1.0, &feats.edge_vecs[k.0]);
            outgoing.push(k);
        }
    }
    NodeInput {
        row,
        incoming,
        outgoing,
        u,
    }
}

/// `V [x_n; Σ_in e; Σ_out e]`, summing only edges for which `remaining` holds.
pub fn node_vec(
    p: &Params,
    feats: &GraphFeatures,
    sys: &TransitionSystem<'_>,
    remaining: impl Fn(EdgeId) -> bool,
    n: EntityId,
) -> Vec<f64> {
    p.v_proj.matvec(&node_input(p, feats, sys, remaining, n).u)
}

pub(crate) enum RepSource {
    Edge(EdgeId),
    Node(NodeInput),
    Pop(NodeInput),
}

pub(crate) fn action_rep_with_source(
    p: &Params,
    feats: &GraphFeatures,
    sys: &TransitionSystem<'_>,
    state: &PlannerState,
    a: &Action,
) -> (Vec<f64>, RepSource) {
    let remaining = |e: EdgeId| state.is_remaining(e);
    match *a {
        Action::Traverse { edge, .. } => (feats.edge_vecs[edge.0].clone(), RepSource::Edge(edge)),
        Action::Choose(n) => {
            let ni = node_input(p, feats, sys, remaining, n);
            (p.v_proj.matvec(&ni.u), RepSource::Node(ni))
        }
        Action::Pop => {
            let target = state.pop_target().expect("pop is only legal while traversing");
            let ni = node_input(p, feats, sys, remaining, target);
            let mut v = p.v_proj.matvec(&ni.u);
            axpy(&mut v, 1.0, p.pop.row(0));
            (v, RepSource::Pop(ni))
        }
    }
}

/// Representation of an action in the history space.
pub fn action_rep(
    p: &Params,
    feats: &GraphFeatures,
    sys: &TransitionSystem<'_>,
    state: &PlannerState,
    a: &Action,
) -> Vec<f64> {
    action_rep_with_source(p, feats, sys, state, a).0
}

/// Recurrent state over the plan symbols generated so far.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl HistoryState {
    pub fn zero(d_h: usize) -> Self {
        HistoryState {
            h: vec![0.0; d_h],
            c: vec![0.0; d_h],
        }
    }
}

/// Which parameter rows produced an LSTM input vector.
#[derive(Debug, Clone, Copy)]
pub(crate) enum InputSource {
    Sym(usize),
    Entity(usize),
    Relation { row: usize, sym: usize },
}

fn tag_row(tag: TypeTag) -> usize {
    match tag {
        TypeTag::S => 0,
        TypeTag::E => 1,
        TypeTag::R => 2,
    }
}

fn token_source(feats: &GraphFeatures, kind: TokenKind) -> InputSource {
    match kind {
        TokenKind::Open => InputSource::Sym(SYM_OPEN),
        TokenKind::Close => InputSource::Sym(SYM_CLOSE),
        TokenKind::Entity(n) => InputSource::Entity(feats.ent_rows[n.0]),
        TokenKind::Relation(r, d) => InputSource::Relation {
            row: feats.rel_rows[r.0],
            sym: match d {
                Direction::Forward => SYM_FORWARD,
                Direction::Backward => SYM_BACKWARD,
            },
        },
    }
}

pub(crate) fn lstm_input(p: &Params, src: InputSource, tag: TypeTag) -> Vec<f64> {
    let d = p.dims;
    let mut x = vec![0.0; d.d_lstm_in(p.with_types)];
    match src {
        InputSource::Sym(s) => x[..d.d_sym()].copy_from_slice(p.sym.row(s)),
        InputSource::Entity(row) => x[..d.d_e].copy_from_slice(p.ent.row(row)),
        InputSource::Relation { row, sym } => {
            x[d.d_e..d.d_sym()].copy_from_slice(p.rel.row(row));
            axpy(&mut x[..d.d_sym()], 1.0, p.sym.row(sym));
        }
    }
    if p.with_types {
        x[d.d_sym()..].copy_from_slice(p.types.row(tag_row(tag)));
    }
    x
}

#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    src: InputSource,
    tag: TypeTag,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

pub(crate) fn lstm_step(p: &Params, prev: &HistoryState, x: &[f64]) -> (HistoryState, LstmCache) {
    let dh = p.dims.d_h;
    let mut z = p.lstm_w.matvec(x);
    let uz = p.lstm_u.matvec(&prev.h);
    for (k, zk) in z.iter_mut().enumerate() {
        *zk += uz[k] + p.lstm_b.data[k];
    }
    let i: Vec<f64> = z[..dh].iter().map(|v| sigmoid(*v)).collect();
    let f: Vec<f64> = z[dh..2 * dh].iter().map(|v| sigmoid(*v)).collect();
    let o: Vec<f64> = z[2 * dh..3 * dh].iter().map(|v| sigmoid(*v)).collect();
    let g: Vec<f64> = z[3 * dh..].iter().map(|v| v.tanh()).collect();
    let c: Vec<f64> = (0..dh).map(|k| f[k] * prev.c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..dh).map(|k| o[k] * tanh_c[k]).collect();
    let cache = LstmCache {
        src: InputSource::Sym(SYM_BOS),
        tag: TypeTag::S,
        x: x.to_vec(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        i,
        f,
        o,
        g,
        tanh_c,
    };
    (HistoryState { h, c }, cache)
}

fn step_source(
    p: &Params,
    prev: &HistoryState,
    src: InputSource,
    tag: TypeTag,
) -> (HistoryState, LstmCache) {
    let x = lstm_input(p, src, tag);
    let (next, mut cache) = lstm_step(p, prev, &x);
    cache.src = src;
    cache.tag = tag;
    (next, cache)
}

/// History after consuming the begin-of-plan symbol.
pub fn start_history(p: &Params) -> HistoryState {
    step_source(p, &HistoryState::zero(p.dims.d_h), InputSource::Sym(SYM_BOS), TypeTag::S).0
}

/// One LSTM step on the token's embedding; the S/E/R type vector is
/// appended when the parameters were built with types.
pub fn advance_history(
    p: &Params,
    feats: &GraphFeatures,
    history: &HistoryState,
    token: &PlanToken,
) -> HistoryState {
    step_source(p, history, token_source(feats, token.kind), token.kind.tag()).0
}

/// Probability of each legal action: softmax of `h · rep(a)`.
pub fn score_actions(
    p: &Params,
    feats: &GraphFeatures,
    sys: &TransitionSystem<'_>,
    state: &PlannerState,
    history: &HistoryState,
    legal: &[Action],
) -> Vec<f64> {
    softmax(&action_logits(p, feats, sys, state, history, legal))
}

pub(crate) fn action_logits(
    p: &Params,
    feats: &GraphFeatures,
    sys: &TransitionSystem<'_>,
    state: &PlannerState,
    history: &HistoryState,
    legal: &[Action],
) -> Vec<f64> {
    legal
        .iter()
        .map(|a| dot(&history.h, &action_rep(p, feats, sys, state, a)))
        .collect()
}

struct Decision {
    step: usize,
    sources: Vec<RepSource>,
    reps: Vec<Vec<f64>>,
    probs: Vec<f64>,
    gold: usize,
}

/// Teacher-forced statistics for one derivation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleStats {
    pub loss: f64,
    pub decisions: usize,
    pub correct: usize,
}

/// Cross-entropy of the gold actions; when `grad` is given, adds the
/// gradient of that loss into it.
pub fn loss_and_grad(
    p: &Params,
    g: &FactGraph,
    gold: &[Action],
    grad: Option<&mut Params>,
) -> Result<ExampleStats, TransitionError> {
    let sys = TransitionSystem::new(g);
    let feats = GraphFeatures::new(p, g);
    let mut state = sys.initial_state();
    let (mut hist, bos) = step_source(
        p,
        &HistoryState::zero(p.dims.d_h),
        InputSource::Sym(SYM_BOS),
        TypeTag::S,
    );
    let mut caches = vec![bos];
    let mut hs = vec![hist.h.clone()];
    let mut decisions = Vec::with_capacity(gold.len());
    let mut stats = ExampleStats {
        loss: 0.0,
        decisions: 0,
        correct: 0,
    };
    for a in gold {
        let legal = sys.legal_actions(&state);
        let gi = legal
            .iter()
            .position(|x| x == a)
            .ok_or(TransitionError::Illegal(*a))?;
        let mut reps = Vec::with_capacity(legal.len());
        let mut sources = Vec::with_capacity(legal.len());
        for l in &legal {
            let (r, s) = action_rep_with_source(p, &feats, &sys, &state, l);
            reps.push(r);
            sources.push(s);
        }
        let logits: Vec<f64> = reps.iter().map(|r| dot(&hist.h, r)).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        stats.loss += lse - logits[gi];
        stats.decisions += 1;
        if crate::transition::argmax(&logits) == gi {
            stats.correct += 1;
        }
        if grad.is_some() {
            decisions.push(Decision {
                step: hs.len() - 1,
                sources,
                reps,
                probs: softmax(&logits),
                gold: gi,
            });
        }
        for t in sys.emitted_tokens(&state, a, p.with_types) {
            let (next, cache) = step_source(p, &hist, token_source(&feats, t.kind), t.kind.tag());
            hist = next;
            if grad.is_some() {
                caches.push(cache);
                hs.push(hist.h.clone());
            }
        }
        sys.step(&mut state, *a)?;
    }
    if let Some(grad) = grad {
        backward(p, g, &feats, &caches, &hs, &decisions, grad);
    }
    Ok(stats)
}

fn node_backward(
    p: &Params,
    ni: &NodeInput,
    drep: &[f64],
    d_edge: &mut [Vec<f64>],
    grad: &mut Params,
) {
    let d = p.dims;
    grad.v_proj.add_outer(drep, &ni.u);
    let du = p.v_proj.t_matvec(drep);
    axpy(grad.ent.row_mut(ni.row), 1.0, &du[..d.d_e]);
    for k in &ni.incoming {
        axpy(&mut d_edge[k.0], 1.0, &du[d.d_e..d.d_e + d.d_h]);
    }
    for k in &ni.outgoing {
        axpy(&mut d_edge[k.0], 1.0, &du[d.d_e + d.d_h..]);
    }
}

fn backward(
    p: &Params,
    g: &FactGraph,
    feats: &GraphFeatures,
    caches: &[LstmCache],
    hs: &[Vec<f64>],
    decisions: &[Decision],
    grad: &mut Params,
) {
    let d = p.dims;
    let dh = d.d_h;
    let mut d_edge = vec![vec![0.0; dh]; g.num_edges()];
    let mut dh_ext = vec![vec![0.0; dh]; hs.len()];

    for dec in decisions {
        let h = &hs[dec.step];
        for (j, (rep, src)) in dec.reps.iter().zip(&dec.sources).enumerate() {
            let dl = dec.probs[j] - if j == dec.gold { 1.0 } else { 0.0 };
            if dl == 0.0 {
                continue;
            }
            axpy(&mut dh_ext[dec.step], dl, rep);
            let drep: Vec<f64> = h.iter().map(|x| dl * x).collect();
            match src {
                RepSource::Edge(k) => axpy(&mut d_edge[k.0], 1.0, &drep),
                RepSource::Node(ni) => node_backward(p, ni, &drep, &mut d_edge, grad),
                RepSource::Pop(ni) => {
                    node_backward(p, ni, &drep, &mut d_edge, grad);
                    axpy(grad.pop.row_mut(0), 1.0, &drep);
                }
            }
        }
    }

    for (k, de) in d_edge.iter().enumerate() {
        if de.iter().all(|x| *x == 0.0) {
            continue;
        }
        grad.e_proj.add_outer(de, &feats.edge_in[k]);
        let dz = p.e_proj.t_matvec(de);
        let e = &g.edges()[k];
        axpy(grad.ent.row_mut(feats.ent_rows[e.source.0]), 1.0, &dz[..d.d_e]);
        axpy(
            grad.rel.row_mut(feats.rel_rows[e.relation.0]),
            1.0,
            &dz[d.d_e..d.d_e + d.d_r],
        );
        axpy(grad.ent.row_mut(feats.ent_rows[e.target.0]), 1.0, &dz[d.d_e + d.d_r..]);
    }

    // backpropagation through time
    let mut dh_next = vec![0.0; dh];
    let mut dc_next = vec![0.0; dh];
    let mut dz = vec![0.0; 4 * dh];
    for t in (0..caches.len()).rev() {
        let c = &caches[t];
        for k in 0..dh {
            let dhk = dh_ext[t][k] + dh_next[k];
            let d_o = dhk * c.tanh_c[k];
            let dc = dc_next[k] + dhk * c.o[k] * (1.0 - c.tanh_c[k] * c.tanh_c[k]);
            let di = dc * c.g[k];
            let dg = dc * c.i[k];
            let df = dc * c.c_prev[k];
            dc_next[k] = dc * c.f[k];
            dz[k] = di * c.i[k] * (1.0 - c.i[k]);
            dz[dh + k] = df * c.f[k] * (1.0 - c.f[k]);
            dz[2 * dh + k] = d_o * c.o[k] * (1.0 - c.o[k]);
            dz[3 * dh + k] = dg * (1.0 - c.g[k] * c.g[k]);
        }
        grad.lstm_w.add_outer(&dz, &c.x);
        grad.lstm_u.add_outer(&dz, &c.h_prev);
        axpy(&mut grad.lstm_b.data, 1.0, &dz);
        dh_next = p.lstm_u.t_matvec(&dz);
        let dx = p.lstm_w.t_matvec(&dz);
        match c.src {
            InputSource::Sym(s) => axpy(grad.sym.row_mut(s), 1.0, &dx[..d.d_sym()]),
            InputSource::Entity(row) => axpy(grad.ent.row_mut(row), 1.0, &dx[..d.d_e]),
            InputSource::Relation { row, sym } => {
                axpy(grad.rel.row_mut(row), 1.0, &dx[d.d_e..d.d_sym()]);
                axpy(grad.sym.row_mut(sym), 1.0, &dx[..d.d_sym()]);
            }
        }
        if p.with_types {
            axpy(grad.types.row_mut(tag_row(c.tag)), 1.0, &dx[d.d_sym()..]);
        }
    }
}
