//! End-to-end generation: plan, realize k-best, verify with plan fallback,
//! then referring-expression generation on the verified candidate.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::controller::Controller;
use crate::eval::CoverageReport;
use crate::exhaustive::{best_plans, PlanScorer, ScoredPlan};
use crate::graph::FactGraph;
use crate::plan::TextPlan;
use crate::realizer::{realize_kbest, Candidate, TemplateStore};
use crate::reg::{rewrite, Breakdown, LanguageModel, RegOptions, RegOutput};
use crate::transition::{plan_greedy, plan_sample, Derivation, Policy, TransitionError, UniformPolicy};
use crate::verifier::{verify_pipeline, VerificationReport, VerifyError, VerifyPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Plan,
    Realize,
    Verify,
    Reg,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Plan => "plan",
            Stage::Realize => "realize",
            Stage::Verify => "verify",
            Stage::Reg => "reg",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("instance {instance}, stage={stage}: {message}")]
pub struct PipelineError {
    pub instance: usize,
    pub stage: Stage,
    pub message: String,
}

/// Where plans come from.
#[derive(Debug, Clone)]
pub enum Planner {
    /// Best plans by score, tried in order.
    Exhaustive { scorer: PlanScorer, edge_cap: usize },
    /// Greedy first, then samples with seed `seed + attempt`. Without a
    /// controller every legal action scores the same.
    Transition {
        controller: Option<Controller>,
        temperature: f64,
    },
}

impl Planner {
    fn transition_plan(
        &self,
        g: &FactGraph,
        attempt: usize,
        seed: u64,
    ) -> Result<Derivation, TransitionError> {
        let Planner::Transition {
            controller,
            temperature,
        } = self
        else {
            unreachable!("only called for the transition planner")
        };
        fn run<P: Policy>(
            g: &FactGraph,
            p: &P,
            attempt: usize,
            seed: u64,
            t: f64,
        ) -> Result<Derivation, TransitionError> {
            if attempt == 0 {
                plan_greedy(g, p)
            } else {
                plan_sample(g, p, t, seed.wrapping_add(attempt as u64))
            }
        }
        match controller {
            Some(c) => run(g, c, attempt, seed, *temperature),
            None => run(g, &UniformPolicy, attempt, seed, *temperature),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub verify: VerifyPolicy,
    pub seed: u64,
    pub reg: RegOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub plan: TextPlan,
    pub candidate: Candidate,
    pub report: VerificationReport,
    pub reg: RegOutput,
}

impl InstanceResult {
    pub fn text(&self) -> String {
        self.reg.text()
    }
}

/// One instance through every stage.
pub fn run_instance(
    instance: usize,
    g: &FactGraph,
    planner: &Planner,
    templates: &TemplateStore,
    lm: &dyn LanguageModel,
    opts: &PipelineOptions,
) -> Result<InstanceResult, PipelineError> {
    let fail = |stage: Stage, message: String| PipelineError {
        instance,
        stage,
        message,
    };
    let ranked: Vec<ScoredPlan> = match planner {
        Planner::Exhaustive { scorer, edge_cap } => {
            best_plans(g, opts.verify.max_plans, scorer, *edge_cap)
                .map_err(|e| fail(Stage::Plan, e.to_string()))?
        }
        Planner::Transition { .. } => Vec::new(),
    };

    #[derive(Debug)]
    enum Failure {
        Plan(String),
        Realize(String),
    }

    impl fmt::Display for Failure {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match self {
                Failure::Plan(m) | Failure::Realize(m) => f.write_str(m),
            }
        }
    }

    let verified = verify_pipeline(
        opts.verify,
        |attempt| match planner {
            Planner::Exhaustive { .. } => ranked.get(attempt).map(|s| Ok(s.plan.clone())),
            Planner::Transition { .. } => Some(
                planner
                    .transition_plan(g, attempt, opts.seed)
                    .map(|d| d.plan)
                    .map_err(|e| Failure::Plan(e.to_string())),
            ),
        },
        |plan, _| {
            realize_kbest(plan, g, templates, opts.verify.k).map_err(|e| Failure::Realize(e.to_string()))
        },
    )
    .map_err(|e| match e {
        VerifyError::Stage(Failure::Plan(m)) => fail(Stage::Plan, m),
        VerifyError::Stage(Failure::Realize(m)) => fail(Stage::Realize, m),
        other => fail(Stage::Verify, other.to_string()),
    })?;

    let reg = rewrite(&verified.candidate.tokens, g, lm, &opts.reg)
        .map_err(|e| fail(Stage::Reg, e.to_string()))?;
    Ok(InstanceResult {
        plan: verified.plan,
        candidate: verified.candidate,
        report: verified.report,
        reg,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub results: Vec<InstanceResult>,
    pub coverage: CoverageReport,
    pub breakdown: Breakdown,
}

impl PipelineRun {
    pub fn all_exact(&self) -> bool {
        self.results.iter().all(|r| r.report.exact_match)
    }

    /// Final texts, one line per instance.
    pub fn texts(&self) -> String {
        self.results.iter().map(|r| r.text() + "\n").collect()
    }

    /// One JSON object per instance.
    pub fn verification_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            instance: usize,
            #[serde(flatten)]
            report: &'a VerificationReport,
        }
        self.results
            .iter()
            .enumerate()
            .map(|(instance, r)| {
                serde_json::to_string(&Line {
                    instance,
                    report: &r.report,
                })
                .expect("report serializes")
                    + "\n"
            })
            .collect()
    }
}

/// Every instance in order; the first failure aborts the run.
pub fn run_pipeline(
    graphs: &[FactGraph],
    planner: &Planner,
    templates: &TemplateStore,
    lm: &dyn LanguageModel,
    opts: &PipelineOptions,
) -> Result<PipelineRun, PipelineError> {
    let mut run = PipelineRun {
        results: Vec::with_capacity(graphs.len()),
        coverage: CoverageReport::default(),
        breakdown: Breakdown::default(),
    };
    for (i, g) in graphs.iter().enumerate() {
        let r = run_instance(i, g, planner, templates, lm, opts)?;
        run.coverage.add(&r.candidate, &r.plan);
        run.breakdown.add(&r.reg);
        run.results.push(r);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exhaustive::DEFAULT_EDGE_CAP;
    use crate::graph::parse_instances;
    use crate::plan::check_faithful;
    use crate::reg::NgramLm;

    const CORPUS: &str = "Azerbaijan | leader | Artur_Rasizade\n@type Artur_Rasizade male\n\n\
        Alan_Bean | birthPlace | Wheeler_Texas\nAlan_Bean | occupation | Test_pilot\n@type Alan_Bean male\n\n\
        Boston_University | city | Boston\nBoston_University | rector | Robert_Brown\nRobert_Brown | birthPlace | Boston\n";

    fn lm() -> NgramLm {
        NgramLm::trigram("he was born in texas .\nit is in boston .\nthe leader of it is him .\n").unwrap()
    }

    #[test]
    fn both_planners_verify_exactly() {
        let graphs = parse_instances(CORPUS).unwrap();
        let store = TemplateStore::generic(&graphs);
        let lm = lm();
        for planner in [
            Planner::Exhaustive {
                scorer: PlanScorer::default(),
                edge_cap: DEFAULT_EDGE_CAP,
            },
            Planner::Transition {
                controller: None,
                temperature: 1.0,
            },
        ] {
            let run = run_pipeline(&graphs, &planner, &store, &lm, &PipelineOptions::default()).unwrap();
            assert!(run.all_exact());
            assert_eq!(run.coverage.n_order_exact, 3);
            for (r, g) in run.results.iter().zip(&graphs) {
                assert!(check_faithful(&r.plan, g).faithful);
                assert_eq!(r.report.plans_tried, 1);
            }
            assert_eq!(run.texts().lines().count(), 3);
            assert_eq!(run.verification_jsonl().lines().count(), 3);
            let again = run_pipeline(&graphs, &planner, &store, &lm, &PipelineOptions::default()).unwrap();
            assert_eq!(run, again);
        }
    }

    #[test]
    fn missing_template_reports_realize_stage() {
        let graphs = parse_instances(CORPUS).unwrap();
        let store = TemplateStore::generic(&graphs[..1]);
        let planner = Planner::Transition {
            controller: None,
            temperature: 1.0,
        };
        let err = run_pipeline(&graphs, &planner, &store, &lm(), &PipelineOptions::default()).unwrap_err();
        assert_eq!(err.instance, 1);
        assert_eq!(err.stage, Stage::Realize);
        assert!(err.to_string().contains("stage=realize"));
    }

    #[test]
    fn oversized_graph_reports_plan_stage() {
        let graphs = parse_instances(CORPUS).unwrap();
        let store = TemplateStore::generic(&graphs);
        let planner = Planner::Exhaustive {
            scorer: PlanScorer::default(),
            edge_cap: 1,
        };
        let err = run_pipeline(&graphs, &planner, &store, &lm(), &PipelineOptions::default()).unwrap_err();
        assert_eq!((err.instance, err.stage), (1, Stage::Plan));
    }
}
