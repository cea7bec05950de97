//! Evaluation metrics and the planner timing benchmark.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::controller::{Controller, Dims, Params};
use crate::exhaustive::{best_plans, ExhaustiveError, PlanScorer};
use crate::graph::{random_graph, FactGraph, GraphError};
use crate::plan::{entity_sequence, TextPlan};
use crate::realizer::Candidate;
use crate::transition::{plan_greedy, TransitionError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{refs} references but {hyps} hypotheses")]
    LengthMismatch { refs: usize, hyps: usize },
    #[error("no hypotheses")]
    Empty,
    #[error("max n-gram order must be positive")]
    ZeroOrder,
    #[error("benchmark size {0} exceeds the exhaustive planner's edge cap")]
    CapExceeded(usize),
    #[error("benchmark needs at least one size and one trial")]
    EmptyBench,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Exhaustive(#[from] ExhaustiveError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    #[default]
    None,
    /// Add one to the matches and totals of orders 2 and up.
    AddOne,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Clipped matches and hypothesis n-gram totals per order, plus the
/// hypothesis and reference lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

pub fn bleu_stats(
    refs: &[Vec<String>],
    hyps: &[Vec<String>],
    max_n: usize,
) -> Result<BleuStats, EvalError> {
    if refs.len() != hyps.len() {
        return Err(EvalError::LengthMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    if hyps.is_empty() {
        return Err(EvalError::Empty);
    }
    if max_n == 0 {
        return Err(EvalError::ZeroOrder);
    }
    let mut s = BleuStats {
        matches: vec![0; max_n],
        totals: vec![0; max_n],
        hyp_len: 0,
        ref_len: 0,
    };
    for (r, h) in refs.iter().zip(hyps) {
        s.hyp_len += h.len();
        s.ref_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                s.matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            s.totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    Ok(s)
}

impl BleuStats {
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        let mut log_sum = 0.0;
        for (i, (&m, &t)) in self.matches.iter().zip(&self.totals).enumerate() {
            let (m, t) = match smoothing {
                Smoothing::AddOne if i > 0 => (m as f64 + 1.0, t as f64 + 1.0),
                _ => (m as f64, t as f64),
            };
            if m == 0.0 || t == 0.0 {
                return 0.0;
            }
            log_sum += (m / t).ln();
        }
        let n = self.matches.len() as f64;
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        100.0 * bp * (log_sum / n).exp()
    }
}

/// Corpus-level BLEU in [0, 100] with one reference per hypothesis.
pub fn bleu(
    refs: &[Vec<String>],
    hyps: &[Vec<String>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64, EvalError> {
    Ok(bleu_stats(refs, hyps, max_n)?.score(smoothing))
}

/// Whitespace tokenization, for scoring plain-text files.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CoverageReport {
    pub n_texts: usize,
    /// Texts mentioning every entity of their plan.
    pub n_all_entities_present: usize,
    /// Of those, texts whose entity sequence equals the plan's.
    pub n_order_exact: usize,
}

impl CoverageReport {
    pub fn add(&mut self, c: &Candidate, plan: &TextPlan) {
        self.n_texts += 1;
        let want = entity_sequence(plan);
        let got = c.entity_sequence();
        let have: BTreeSet<_> = got.iter().collect();
        if want.iter().all(|e| have.contains(e)) {
            self.n_all_entities_present += 1;
            if got == want {
                self.n_order_exact += 1;
            }
        }
    }
}

pub fn coverage<'a>(outputs: impl IntoIterator<Item = (&'a Candidate, &'a TextPlan)>) -> CoverageReport {
    let mut r = CoverageReport::default();
    for (c, p) in outputs {
        r.add(c, p);
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Exhaustive,
    Transition,
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlannerKind::Exhaustive => "exhaustive",
            PlannerKind::Transition => "transition",
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub edge_cap: usize,
    /// Greedy runs per transition-planner timing (their mean is recorded).
    pub transition_reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: (1..=7).collect(),
            trials: 20,
            seed: 0,
            edge_cap: crate::exhaustive::DEFAULT_EDGE_CAP,
            transition_reps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSample {
    pub n_edges: usize,
    pub planner: PlannerKind,
    pub trial: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n_edges: usize,
    pub planner: PlannerKind,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub median_seconds: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendVerdict {
    /// R² of a least-squares line through the transition means.
    pub transition_r_squared: f64,
    /// Exhaustive mean over transition mean at the largest size.
    pub ratio_at_max: f64,
    pub linear_ok: bool,
    pub ratio_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub samples: Vec<BenchSample>,
    pub rows: Vec<BenchRow>,
    pub verdict: TrendVerdict,
}

impl BenchReport {
    /// `n_edges,planner,trial,seconds`
    pub fn csv(&self) -> String {
        let mut out = String::from("n_edges,planner,trial,seconds\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{:.9}\n", s.n_edges, s.planner, s.trial, s.seconds));
        }
        out
    }
}

/// Least-squares fit `y = a + b x`; returns `(a, b, r²)`. A constant `y`
/// is fit perfectly (r² = 1).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (a, b, r2)
}

fn summarize(n_edges: usize, planner: PlannerKind, xs: &[f64]) -> BenchRow {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    BenchRow {
        n_edges,
        planner,
        mean_seconds: mean,
        std_seconds: var.sqrt(),
        median_seconds: median,
        trials: xs.len(),
    }
}

/// Graph used for a size and trial: `n` edges over `n + 1` entities.
pub fn bench_graph(n_edges: usize, trial: usize, seed: u64) -> Result<FactGraph, GraphError> {
    let s = seed
        .wrapping_mul(1_000_003)
        .wrapping_add((n_edges as u64) << 20)
        .wrapping_add(trial as u64);
    random_graph(n_edges, n_edges + 1, 4, s)
}

/// Time best-plan search (exhaustive, k = 1) against greedy transition
/// planning with a fixed, randomly initialized controller.
pub fn bench_planners(cfg: &BenchConfig) -> Result<BenchReport, EvalError> {
    if cfg.sizes.is_empty() || cfg.trials == 0 {
        return Err(EvalError::EmptyBench);
    }
    if let Some(&n) = cfg.sizes.iter().find(|&&n| n > cfg.edge_cap) {
        return Err(EvalError::CapExceeded(n));
    }
    let reps = cfg.transition_reps.max(1);
    let mut graphs = Vec::new();
    for &n in &cfg.sizes {
        for t in 0..cfg.trials {
            graphs.push((n, t, bench_graph(n, t, cfg.seed)?));
        }
    }
    let (ev, rv) = Params::vocab_from(graphs.iter().map(|(_, _, g)| g));
    let controller = Controller::new(Params::init(Dims::default(), false, ev, rv, cfg.seed));
    let scorer = PlanScorer::default();

    let mut samples = Vec::new();
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let mine: Vec<&FactGraph> = graphs.iter().filter(|x| x.0 == n).map(|x| &x.2).collect();
        // warm-up, discarded
        best_plans(mine[0], 1, &scorer, cfg.edge_cap)?;
        plan_greedy(mine[0], &controller)?;

        let mut ex = Vec::new();
        let mut tr = Vec::new();
        for (t, g) in mine.iter().enumerate() {
            let start = Instant::now();
            let best = best_plans(g, 1, &scorer, cfg.edge_cap)?;
            let secs = start.elapsed().as_secs_f64();
            std::hint::black_box(best);
            ex.push(secs);
            samples.push(BenchSample {
                n_edges: n,
                planner: PlannerKind::Exhaustive,
                trial: t,
                seconds: secs,
            });

            let start = Instant::now();
            for _ in 0..reps {
                std::hint::black_box(plan_greedy(g, &controller)?);
            }
            let secs = start.elapsed().as_secs_f64() / reps as f64;
            tr.push(secs);
            samples.push(BenchSample {
                n_edges: n,
                planner: PlannerKind::Transition,
                trial: t,
                seconds: secs,
            });
        }
        log::info!("size {n}: exhaustive {:.3e}s, transition {:.3e}s", mean(&ex), mean(&tr));
        rows.push(summarize(n, PlannerKind::Exhaustive, &ex));
        rows.push(summarize(n, PlannerKind::Transition, &tr));
    }

    let tr_rows: Vec<&BenchRow> = rows.iter().filter(|r| r.planner == PlannerKind::Transition).collect();
    let xs: Vec<f64> = tr_rows.iter().map(|r| r.n_edges as f64).collect();
    let ys: Vec<f64> = tr_rows.iter().map(|r| r.mean_seconds).collect();
    let (_, _, r2) = linear_fit(&xs, &ys);
    let max_n = *cfg.sizes.iter().max().unwrap();
    let mean_at = |k: PlannerKind| {
        rows.iter()
            .find(|r| r.n_edges == max_n && r.planner == k)
            .map(|r| r.mean_seconds)
            .unwrap()
    };
    let ratio = mean_at(PlannerKind::Exhaustive) / mean_at(PlannerKind::Transition);
    Ok(BenchReport {
        samples,
        rows,
        verdict: TrendVerdict {
            transition_r_squared: r2,
            ratio_at_max: ratio,
            linear_ok: r2 >= 0.9,
            ratio_ok: ratio >= 100.0,
        },
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}
