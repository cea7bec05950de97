//! Supervised training on oracle derivations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::loss_and_grad;
use super::params::{Dims, Params};
use super::{Controller, ControllerError};
use crate::graph::FactGraph;
use crate::plan::TextPlan;
use crate::transition::{oracle_actions, plan_greedy, Action};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
pub struct Hyper {
    pub dims: Dims,
    pub with_types: bool,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            dims: Dims::default(),
            with_types: false,
            lr: 1e-3,
            epochs: 30,
            seed: 0,
            optimizer: Optimizer::Adam,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean per-decision loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Teacher-forced action accuracy of each epoch (measured during the pass).
    pub epoch_accuracy: Vec<f64>,
}

/// Oracle derivations of gold plans.
pub fn prepare_examples(
    corpus: &[(FactGraph, TextPlan)],
) -> Result<Vec<Vec<Action>>, ControllerError> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, (g, p))| {
            oracle_actions(g, p).map_err(|source| ControllerError::Transition { example: i, source })
        })
        .collect()
}

/// Initialize parameters over the corpus vocabulary and train.
pub fn train(
    corpus: &[(FactGraph, TextPlan)],
    hyper: &Hyper,
) -> Result<(Params, TrainLog), ControllerError> {
    let (ev, rv) = Params::vocab_from(corpus.iter().map(|(g, _)| g));
    let mut params = Params::init(hyper.dims, hyper.with_types, ev, rv, hyper.seed);
    let log = train_from(&mut params, corpus, hyper)?;
    Ok((params, log))
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn update(&mut self, p: &mut Params, g: &Params, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let ps = p.blocks_mut();
        let gs = g.blocks();
        let ms = self.m.blocks_mut();
        let vs = self.v.blocks_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            for k in 0..p.data.len() {
                let gk = g.data[k];
                if gk == 0.0 && m.data[k] == 0.0 {
                    continue;
                }
                m.data[k] = BETA1 * m.data[k] + (1.0 - BETA1) * gk;
                v.data[k] = BETA2 * v.data[k] + (1.0 - BETA2) * gk * gk;
                let mh = m.data[k] / c1;
                let vh = v.data[k] / c2;
                p.data[k] -= lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn sgd(p: &mut Params, g: &Params, lr: f64) {
    for (p, g) in p.blocks_mut().into_iter().zip(g.blocks()) {
        for (x, d) in p.data.iter_mut().zip(&g.data) {
            *x -= lr * d;
        }
    }
}

/// Online training: one update per example, examples shuffled each epoch.
pub fn train_from(
    params: &mut Params,
    corpus: &[(FactGraph, TextPlan)],
    hyper: &Hyper,
) -> Result<TrainLog, ControllerError> {
    if corpus.is_empty() {
        return Err(ControllerError::EmptyCorpus);
    }
    let examples = prepare_examples(corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut adam = Adam {
        m: params.zeros_like(),
        v: params.zeros_like(),
        t: 0,
    };
    let mut grad = params.zeros_like();
    let mut log = TrainLog::default();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut decisions, mut correct) = (0.0, 0usize, 0usize);
        for &i in &order {
            for b in grad.blocks_mut() {
                b.fill(0.0);
            }
            let stats = loss_and_grad(params, &corpus[i].0, &examples[i], Some(&mut grad))
                .map_err(|source| ControllerError::Transition { example: i, source })?;
            if !stats.loss.is_finite() || !grad.is_finite() {
                return Err(ControllerError::NonFinite { epoch, example: i });
            }
            match hyper.optimizer {
                Optimizer::Adam => adam.update(params, &grad, hyper.lr),
                Optimizer::Sgd => sgd(params, &grad, hyper.lr),
            }
            if !params.is_finite() {
                return Err(ControllerError::NonFinite { epoch, example: i });
            }
            loss += stats.loss;
            decisions += stats.decisions;
            correct += stats.correct;
        }
        let denom = decisions.max(1) as f64;
        log.epoch_loss.push(loss / denom);
        log.epoch_accuracy.push(correct as f64 / denom);
        log::info!(
            "epoch {}: loss {:.4} accuracy {:.4}",
            epoch + 1,
            loss / denom,
            correct as f64 / denom
        );
    }
    Ok(log)
}

/// Fraction of gold decisions the controller ranks first under teacher forcing.
pub fn action_accuracy(
    params: &Params,
    corpus: &[(FactGraph, TextPlan)],
) -> Result<f64, ControllerError> {
    let examples = prepare_examples(corpus)?;
    let (mut decisions, mut correct) = (0usize, 0usize);
    for (i, ((g, _), actions)) in corpus.iter().zip(&examples).enumerate() {
        let s = loss_and_grad(params, g, actions, None)
            .map_err(|source| ControllerError::Transition { example: i, source })?;
        decisions += s.decisions;
        correct += s.correct;
    }
    Ok(correct as f64 / decisions.max(1) as f64)
}

/// Fraction of instances whose greedy plan equals the gold plan.
pub fn exact_match_rate(
    params: &Params,
    corpus: &[(FactGraph, TextPlan)],
) -> Result<f64, ControllerError> {
    let examples = prepare_examples(corpus)?;
    let controller = Controller::new(params.clone());
    let mut hits = 0usize;
    for (i, ((g, _), gold)) in corpus.iter().zip(&examples).enumerate() {
        let d = plan_greedy(g, &controller)
            .map_err(|source| ControllerError::Transition { example: i, source })?;
        if &d.actions == gold {
            hits += 1;
        }
    }
    Ok(hits as f64 / corpus.len().max(1) as f64)
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter. Entries where both are below `1e-7` are compared
/// absolutely.
pub fn grad_check(
    params: &Params,
    g: &FactGraph,
    actions: &[Action],
    eps: f64,
) -> Result<f64, ControllerError> {
    grad_check_with(params, g, actions, eps, |_| {})
}

/// [`grad_check`] with a hook applied to the analytic gradient before
/// comparison.
pub fn grad_check_with(
    params: &Params,
    g: &FactGraph,
    actions: &[Action],
    eps: f64,
    tamper: impl FnOnce(&mut Params),
) -> Result<f64, ControllerError> {
    let wrap = |source| ControllerError::Transition { example: 0, source };
    let mut analytic = params.zeros_like();
    loss_and_grad(params, g, actions, Some(&mut analytic)).map_err(wrap)?;
    tamper(&mut analytic);
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for b in 0..analytic.blocks().len() {
        let n = analytic.blocks()[b].data.len();
        for k in 0..n {
            let orig = probe.blocks()[b].data[k];
            probe.blocks_mut()[b].data[k] = orig + eps;
            let up = loss_and_grad(&probe, g, actions, None).map_err(wrap)?.loss;
            probe.blocks_mut()[b].data[k] = orig - eps;
            let down = loss_and_grad(&probe, g, actions, None).map_err(wrap)?.loss;
            probe.blocks_mut()[b].data[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.blocks()[b].data[k];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-7 {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / scale
            };
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Random point for gradient checks: every table resampled in `[-scale, scale]`.
pub fn randomize(params: &mut Params, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in params.blocks_mut() {
        for x in b.data.iter_mut() {
            *x = rng.gen_range(-scale..=scale);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_instance;
    use crate::transition::oracle_actions;

    fn tiny() -> Dims {
        Dims {
            d_e: 3,
            d_r: 2,
            d_h: 4,
            d_t: 2,
        }
    }

    fn example() -> (FactGraph, TextPlan) {
        let g = parse_instance("a | r | b\nb | s | c\nc | r | a\nc | t | d").unwrap();
        let plan = crate::transition::plan_greedy(&g, &crate::transition::UniformPolicy)
            .unwrap()
            .plan;
        (g, plan)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (g, plan) = example();
        let actions = oracle_actions(&g, &plan).unwrap();
        let (ev, rv) = Params::vocab_from([&g]);
        for with_types in [false, true] {
            let mut p = Params::init(tiny(), with_types, ev.clone(), rv.clone(), 3);
            randomize(&mut p, 0.5, 11);
            let err = grad_check(&p, &g, &actions, 1e-5).unwrap();
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn tampered_gradient_is_detected() {
        let (g, plan) = example();
        let actions = oracle_actions(&g, &plan).unwrap();
        let (ev, rv) = Params::vocab_from([&g]);
        let p = Params::init(tiny(), false, ev, rv, 3);
        let err = grad_check_with(&p, &g, &actions, 1e-5, |a| a.lstm_u.data[0] += 0.01).unwrap();
        assert!(err > 1e-4);
    }

    #[test]
    fn zero_parameters_give_finite_gradients() {
        let (g, plan) = example();
        let actions = oracle_actions(&g, &plan).unwrap();
        let (ev, rv) = Params::vocab_from([&g]);
        let p = Params::init(tiny(), false, ev, rv, 3).zeros_like();
        let mut grad = p.zeros_like();
        let s = loss_and_grad(&p, &g, &actions, Some(&mut grad)).unwrap();
        assert!(s.loss.is_finite() && grad.is_finite());
    }

    #[test]
    fn loss_decreases_on_one_example() {
        let corpus = vec![example()];
        let hyper = Hyper {
            dims: tiny(),
            epochs: 200,
            lr: 1e-2,
            ..Hyper::default()
        };
        let (p, log) = train(&corpus, &hyper).unwrap();
        assert!(log.epoch_loss.last().unwrap() < &log.epoch_loss[0]);
        assert_eq!(exact_match_rate(&p, &corpus).unwrap(), 1.0);
        assert_eq!(action_accuracy(&p, &corpus).unwrap(), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = vec![example()];
        let hyper = Hyper {
            dims: tiny(),
            epochs: 3,
            ..Hyper::default()
        };
        let a = train(&corpus, &hyper).unwrap().0;
        let b = train(&corpus, &hyper).unwrap().0;
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn rejects_unfaithful_gold() {
        let (g, _) = example();
        let bad = TextPlan::new(vec![]);
        let err = train(&[(g, bad)], &Hyper::default()).unwrap_err();
        assert!(matches!(err, ControllerError::Transition { example: 0, .. }));
    }

    #[test]
    fn sgd_also_learns() {
        let corpus = vec![example()];
        let hyper = Hyper {
            dims: tiny(),
            epochs: 100,
            lr: 0.1,
            optimizer: Optimizer::Sgd,
            ..Hyper::default()
        };
        let (_, log) = train(&corpus, &hyper).unwrap();
        assert!(log.epoch_loss.last().unwrap() < &log.epoch_loss[0]);
    }
}
