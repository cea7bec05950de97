//! Neural controller for the transition planner.
//!
//! An LSTM reads the plan symbols emitted so far; every legal action is
//! scored by the dot product of the LSTM state with an action vector built
//! from the graph (see [`model`]).

mod model;
mod params;
mod tensor;
mod train;

use thiserror::Error;

use crate::graph::FactGraph;
use crate::plan::PlanToken;
use crate::transition::{Action, PlannerState, Policy, TransitionError, TransitionSystem};

pub use model::{
    action_rep, advance_history, edge_vec, loss_and_grad, node_vec, score_actions, start_history,
    ExampleStats, GraphFeatures, HistoryState,
};
pub use params::{Dims, Params, BLOCK_NAMES, FORMAT_VERSION};
pub use tensor::Mat;
pub use train::{
    action_accuracy, exact_match_rate, grad_check, grad_check_with, prepare_examples, randomize, train,
    train_from, Hyper, Optimizer, TrainLog,
};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a parameter file")]
    BadMagic,
    #[error("unsupported parameter file version {0}")]
    Version(u32),
    #[error("parameter file is truncated")]
    Truncated,
    #[error("corrupt parameter file: {0}")]
    Corrupt(&'static str),
    #[error("non-finite loss or parameters at epoch {epoch}, example {example}")]
    NonFinite { epoch: usize, example: usize },
    #[error("example {example}: {source}")]
    Transition {
        example: usize,
        #[source]
        source: TransitionError,
    },
    #[error("training corpus is empty")]
    EmptyCorpus,
}

/// A trained planner policy.
#[derive(Debug, Clone)]
pub struct Controller {
    pub params: Params,
}

/// Per-graph memory of a running derivation.
#[derive(Debug, Clone)]
pub struct ControllerMemory {
    pub features: GraphFeatures,
    pub history: HistoryState,
}

impl Controller {
    pub fn new(params: Params) -> Self {
        Controller { params }
    }
}

impl Policy for Controller {
    type Memory = ControllerMemory;

    fn begin(&self, g: &FactGraph) -> ControllerMemory {
        ControllerMemory {
            features: GraphFeatures::new(&self.params, g),
            history: start_history(&self.params),
        }
    }

    fn logits(
        &self,
        memory: &ControllerMemory,
        sys: &TransitionSystem<'_>,
        state: &PlannerState,
        legal: &[Action],
    ) -> Vec<f64> {
        model::action_logits(&self.params, &memory.features, sys, state, &memory.history, legal)
    }

    fn observe(&self, memory: &mut ControllerMemory, _sys: &TransitionSystem<'_>, token: &PlanToken) {
        memory.history = advance_history(&self.params, &memory.features, &memory.history, token);
    }

    fn typed_tokens(&self) -> bool {
        self.params.with_types
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_instance;
    use crate::plan::check_faithful;
    use crate::transition::{plan_greedy, plan_sample};

    fn small() -> Dims {
        Dims {
            d_e: 4,
            d_r: 3,
            d_h: 5,
            d_t: 2,
        }
    }

    fn controller(g: &FactGraph, with_types: bool) -> Controller {
        let (ev, rv) = Params::vocab_from([g]);
        Controller::new(Params::init(small(), with_types, ev, rv, 7))
    }

    #[test]
    fn scores_are_a_distribution() {
        let g = parse_instance("a | r | b\nb | s | c\nc | r | a").unwrap();
        let c = controller(&g, false);
        let sys = TransitionSystem::new(&g);
        let mem = c.begin(&g);
        let state = sys.initial_state();
        let legal = sys.legal_actions(&state);
        let probs = score_actions(&c.params, &mem.features, &sys, &state, &mem.history, &legal);
        assert_eq!(probs.len(), 3);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|p| *p > 0.0));
    }

    #[test]
    fn history_is_nonzero_after_start() {
        let g = parse_instance("a | r | b").unwrap();
        let c = controller(&g, false);
        assert!(start_history(&c.params).h.iter().any(|x| *x != 0.0));
    }

    #[test]
    fn node_vec_ignores_consumed_edges() {
        let g = parse_instance("a | r | b\nb | s | c").unwrap();
        let c = controller(&g, false);
        let sys = TransitionSystem::new(&g);
        let f = GraphFeatures::new(&c.params, &g);
        let b = g.entity_by_surface("b").unwrap();
        let all = node_vec(&c.params, &f, &sys, |_| true, b);
        let none = node_vec(&c.params, &f, &sys, |_| false, b);
        assert_ne!(all, none);
        // with no edges left, only the entity embedding contributes
        let mut u = vec![0.0; c.params.dims.d_node_in()];
        u[..4].copy_from_slice(c.params.ent.row(f.ent_rows[b.0]));
        assert_eq!(none, c.params.v_proj.matvec(&u));
        // e_k is the projection of [x_src; r; x_tgt]
        let e0 = edge_vec(&c.params, &g, crate::graph::EdgeId(0));
        let mut z = Vec::new();
        z.extend_from_slice(c.params.ent.row(f.ent_rows[0]));
        z.extend_from_slice(c.params.rel.row(f.rel_rows[0]));
        z.extend_from_slice(c.params.ent.row(f.ent_rows[1]));
        assert_eq!(e0, c.params.e_proj.matvec(&z));
    }

    #[test]
    fn untrained_controller_plans_are_faithful() {
        let g = parse_instance("a | r | b\nb | s | c\nc | r | a\nc | t | d").unwrap();
        for with_types in [false, true] {
            let c = controller(&g, with_types);
            let d = plan_greedy(&g, &c).unwrap();
            assert!(check_faithful(&d.plan, &g).faithful);
            for seed in 0..20 {
                let d = plan_sample(&g, &c, 1.0, seed).unwrap();
                assert!(check_faithful(&d.plan, &g).faithful);
            }
        }
    }

    #[test]
    fn unknown_vocabulary_uses_row_zero() {
        let g = parse_instance("a | r | b").unwrap();
        let other = parse_instance("x | q | y").unwrap();
        let c = controller(&g, false);
        let f = GraphFeatures::new(&c.params, &other);
        assert_eq!(f.ent_rows, vec![0, 0]);
        assert_eq!(f.rel_rows, vec![0]);
        assert!(plan_greedy(&other, &c).is_ok());
    }
}
