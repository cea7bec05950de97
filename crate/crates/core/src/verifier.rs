//! Output verification: compare each candidate's entity symbols with the
//! plan's entity sequence, rerank, and fall back to other plans when no
//! candidate matches exactly.

use std::cmp::Ordering;

use serde::Serialize;

use crate::graph::EntityId;
use crate::plan::{entity_sequence, TextPlan};
use crate::realizer::Candidate;

/// Unit-cost edit distance (insert, delete, substitute).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Entity symbols of a candidate in token order; re-mentions are skipped.
pub fn extract_entity_sequence(c: &Candidate) -> Vec<EntityId> {
    c.entity_sequence()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateReport {
    pub entities: Vec<usize>,
    /// Distance between the whole candidate and whole plan sequences.
    pub distance: usize,
    /// Per-sentence distances (plan sentence i against candidate sentence i).
    pub sentence_distances: Vec<usize>,
    /// Selection key: the per-sentence sum, or `distance` for candidates
    /// without sentence boundaries.
    pub selection_distance: usize,
    pub model_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub candidates: Vec<CandidateReport>,
    pub chosen: usize,
    pub plans_tried: usize,
    pub exact_match: bool,
}

impl VerificationReport {
    pub fn chosen_distance(&self) -> usize {
        self.candidates[self.chosen].selection_distance
    }
}

/// Distances of one candidate against a plan.
pub fn score_candidate(c: &Candidate, plan: &TextPlan) -> CandidateReport {
    let whole_plan = entity_sequence(plan);
    let seq = c.entity_sequence();
    let distance = levenshtein(&seq, &whole_plan);
    let (sentence_distances, selection_distance) = if c.has_boundaries() {
        let plan_sents: Vec<Vec<EntityId>> =
            plan.sentences.iter().map(|s| s.entity_sequence()).collect();
        let cand_sents = c.sentence_entity_sequences();
        let n = plan_sents.len().max(cand_sents.len());
        let empty = Vec::new();
        let ds: Vec<usize> = (0..n)
            .map(|i| {
                levenshtein(
                    cand_sents.get(i).unwrap_or(&empty),
                    plan_sents.get(i).unwrap_or(&empty),
                )
            })
            .collect();
        let sum = ds.iter().sum();
        (ds, sum)
    } else {
        (Vec::new(), distance)
    };
    CandidateReport {
        entities: seq.iter().map(|e| e.0).collect(),
        distance,
        sentence_distances,
        selection_distance,
        model_score: c.model_score,
    }
}

fn better(a: &CandidateReport, b: &CandidateReport) -> bool {
    match a.selection_distance.cmp(&b.selection_distance) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.model_score > b.model_score,
    }
}

/// Lowest distance wins, then highest model score, then input order.
/// Returns `None` for an empty candidate list.
pub fn rerank(cands: &[Candidate], plan: &TextPlan) -> Option<VerificationReport> {
    if cands.is_empty() {
        return None;
    }
    let reports: Vec<CandidateReport> = cands.iter().map(|c| score_candidate(c, plan)).collect();
    let mut chosen = 0;
    for i in 1..reports.len() {
        if better(&reports[i], &reports[chosen]) {
            chosen = i;
        }
    }
    let exact_match = reports[chosen].selection_distance == 0;
    Some(VerificationReport {
        candidates: reports,
        chosen,
        plans_tried: 1,
        exact_match,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyPolicy {
    pub max_plans: usize,
    pub k: usize,
}

impl Default for VerifyPolicy {
    fn default() -> Self {
        VerifyPolicy { max_plans: 5, k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifiedOutput {
    pub plan: TextPlan,
    pub candidate: Candidate,
    /// Report of the plan the candidate came from; `plans_tried` counts all.
    pub report: VerificationReport,
    /// 0-based index of the plan the candidate came from.
    pub plan_index: usize,
}

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum VerifyError<E> {
    #[error("max_plans must be at least 1")]
    ZeroPlans,
    #[error("the planner produced no plan")]
    NoPlan,
    #[error("plan {attempt}: no candidates were realized")]
    NoCandidates { attempt: usize },
    #[error(transparent)]
    Stage(E),
}

/// Try plans in order until one yields a distance-0 candidate. `plans` is
/// called with the attempt index and returns `None` when the planner has no
/// more plans; `realize` receives the plan and the attempt index. Without
/// an exact match, the candidate with the lowest distance over all attempts
/// is returned (ties: higher model score, then earlier plan).
pub fn verify_pipeline<E>(
    policy: VerifyPolicy,
    mut plans: impl FnMut(usize) -> Option<Result<TextPlan, E>>,
    mut realize: impl FnMut(&TextPlan, usize) -> Result<Vec<Candidate>, E>,
) -> Result<VerifiedOutput, VerifyError<E>> {
    if policy.max_plans == 0 {
        return Err(VerifyError::ZeroPlans);
    }
    let mut best: Option<VerifiedOutput> = None;
    let mut tried = 0;
    for attempt in 0..policy.max_plans {
        let plan = match plans(attempt) {
            None => break,
            Some(p) => p.map_err(VerifyError::Stage)?,
        };
        tried += 1;
        let cands = realize(&plan, attempt).map_err(VerifyError::Stage)?;
        let report = rerank(&cands, &plan).ok_or(VerifyError::NoCandidates { attempt })?;
        let exact = report.exact_match;
        let replace = match &best {
            None => true,
            Some(b) => better(&report.candidates[report.chosen], &b.report.candidates[b.report.chosen]),
        };
        if replace {
            best = Some(VerifiedOutput {
                candidate: cands[report.chosen].clone(),
                plan,
                report,
                plan_index: attempt,
            });
        }
        if exact {
            break;
        }
    }
    let mut out = best.ok_or(VerifyError::NoPlan)?;
    out.report.plans_tried = tried;
    Ok(out)
}
