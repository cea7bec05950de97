mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stepgen::controller::{self, Controller, Dims, Hyper, Optimizer, Params};
use stepgen::eval::{self, BenchConfig, Smoothing};
use stepgen::exhaustive::{best_plans, PlanScorer, DEFAULT_EDGE_CAP};
use stepgen::graph::{parse_instances, FactGraph};
use stepgen::pipeline::{run_pipeline, PipelineOptions, Planner};
use stepgen::plan::{parse_linearized, TextPlan};
use stepgen::realizer::{parse_candidates, realize_kbest, Candidate, ImportMode, TemplateStore};
use stepgen::reg::{self, Breakdown, FormPreferenceLm, LanguageModel, LmPolicy, NgramLm, RefForm, RegOptions, RemoteLm};
use stepgen::transition::{plan_greedy, plan_sample, UniformPolicy};
use stepgen::verifier::rerank;

use config::Config;

#[derive(Parser)]
#[command(name = "stepgen", version, about = "Plan-based data-to-text generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize instances.
    Ingest(IngestArgs),
    /// Train a planner controller on gold plans.
    Train(TrainArgs),
    /// Print linearized plans.
    Plan(PlanArgs),
    /// Realize plans into k-best candidates.
    Realize(RealizeArgs),
    /// Rerank candidates against plans.
    Verify(VerifyArgs),
    /// Lexicalize entity symbols of the best candidates.
    Reg(RegArgs),
    /// Plan, realize, verify and lexicalize every instance.
    Pipeline(PipelineArgs),
    /// Corpus BLEU of hypotheses against references.
    Eval(EvalArgs),
    /// Time the exhaustive and transition planners.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlannerArg {
    Exhaustive,
    Neural,
    Uniform,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GoldArg {
    Canonical,
    Exhaustive,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ImportArg {
    Markup,
    Plain,
    PlainStrict,
}

impl From<ImportArg> for ImportMode {
    fn from(a: ImportArg) -> Self {
        match a {
            ImportArg::Markup => ImportMode::Markup,
            ImportArg::Plain => ImportMode::PlainLenient,
            ImportArg::PlainStrict => ImportMode::PlainStrict,
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    /// Instances file (`-` for stdin).
    #[arg(default_value = "-")]
    input: String,
    /// Write generic templates for every relation here.
    #[arg(long)]
    templates_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Gold plans (blocks aligned with instances; the first plan is used).
    #[arg(long)]
    plans: Option<PathBuf>,
    /// Gold plans from a policy when no plans file is given.
    #[arg(long, value_enum, default_value = "canonical")]
    gold: GoldArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    sgd: bool,
    #[arg(long)]
    with_types: bool,
    #[arg(long, default_value_t = 32)]
    d_entity: usize,
    #[arg(long, default_value_t = 32)]
    d_relation: usize,
    #[arg(long, default_value_t = 64)]
    d_hidden: usize,
    #[arg(long, default_value_t = 8)]
    d_type: usize,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, default_value = "-")]
    data: String,
    #[arg(long, value_enum, default_value = "exhaustive")]
    planner: PlannerArg,
    /// Plans per instance.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EDGE_CAP)]
    edge_cap: usize,
    /// Sample instead of greedy decoding for the first plan.
    #[arg(long)]
    sample: bool,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tag plan symbols with S/E/R.
    #[arg(long)]
    typed: bool,
}

#[derive(Args)]
struct RealizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    plans: PathBuf,
    /// Template file; generic templates when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    plans: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, value_enum, default_value = "markup")]
    import: ImportArg,
    /// Write the chosen candidates here, one block per instance.
    #[arg(long)]
    chosen_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LmArgs {
    /// Train a trigram model on this corpus.
    #[arg(long)]
    lm_corpus: Option<PathBuf>,
    /// Remote scorer base URL.
    #[arg(long)]
    lm_endpoint: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    lm_timeout_ms: u64,
    /// Keep the full string when the model fails.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct RegArgs {
    #[arg(long)]
    data: PathBuf,
    /// Candidates in markup; the first of each block is lexicalized.
    #[arg(long)]
    candidates: PathBuf,
    #[command(flatten)]
    lm: LmArgs,
    /// Extra lexicalizations: `surface<TAB>expression` per line.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    breakdown_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PipelineArgs {
    /// Flat key=value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    templates: Option<String>,
    #[arg(long)]
    params: Option<String>,
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    lm_corpus: Option<String>,
    #[arg(long)]
    lm_endpoint: Option<String>,
    #[arg(long)]
    lm_timeout_ms: Option<String>,
    #[arg(long)]
    lenient: Option<String>,
    #[arg(long)]
    planner: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    max_plans: Option<String>,
    #[arg(long)]
    with_types: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    temperature: Option<String>,
    #[arg(long)]
    edge_cap: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference texts, one per line.
    #[arg(long)]
    refs: PathBuf,
    /// Hypothesis texts, one per line.
    #[arg(long)]
    hyps: PathBuf,
    #[arg(long, default_value_t = 4)]
    max_n: usize,
    /// Add-one smoothing for orders above 1.
    #[arg(long)]
    smooth: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Sizes as `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "1..7")]
    sizes: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_EDGE_CAP)]
    edge_cap: usize,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Also write the trend verdict as JSON here.
    #[arg(long)]
    verdict_out: Option<PathBuf>,
}

fn read_input(source: &str) -> Result<String> {
    if source == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(source).with_context(|| format!("reading {source}"))
    }
}

fn load_graphs(source: &str) -> Result<Vec<FactGraph>> {
    let graphs = parse_instances(&read_input(source)?).context("parsing instances")?;
    if graphs.is_empty() {
        bail!("no instances in {source}");
    }
    Ok(graphs)
}

/// Non-empty line groups separated by blank lines.
fn blocks(text: &str) -> Vec<Vec<&str>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(line);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn aligned<'a>(text: &'a str, graphs: &[FactGraph], what: &str) -> Result<Vec<Vec<&'a str>>> {
    let b = blocks(text);
    if b.len() != graphs.len() {
        bail!("{what}: {} blocks for {} instances", b.len(), graphs.len());
    }
    Ok(b)
}

fn load_plans(path: &Path, graphs: &[FactGraph]) -> Result<Vec<Vec<TextPlan>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    aligned(&text, graphs, "plans")?
        .into_iter()
        .zip(graphs)
        .enumerate()
        .map(|(i, (lines, g))| {
            lines
                .iter()
                .map(|l| parse_linearized(g, l).with_context(|| format!("instance {i}: plan `{l}`")))
                .collect()
        })
        .collect()
}

fn load_candidates(path: &Path, graphs: &[FactGraph], mode: ImportMode) -> Result<Vec<Vec<Candidate>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    aligned(&text, graphs, "candidates")?
        .into_iter()
        .zip(graphs)
        .enumerate()
        .map(|(i, (lines, g))| {
            parse_candidates(g, &lines.join("\n"), mode).with_context(|| format!("instance {i}"))
        })
        .collect()
}

fn load_templates(path: Option<&Path>, graphs: &[FactGraph]) -> Result<TemplateStore> {
    match path {
        Some(p) => TemplateStore::load(p).with_context(|| format!("templates {}", p.display())),
        None => Ok(TemplateStore::generic(graphs)),
    }
}

fn load_scorer(path: Option<&Path>) -> Result<PlanScorer> {
    match path {
        Some(p) => PlanScorer::load_weights(p).with_context(|| format!("weights {}", p.display())),
        None => Ok(PlanScorer::default()),
    }
}

fn load_lexicon(path: &Path) -> Result<BTreeMap<String, Vec<Vec<String>>>> {
    let text = fs::read_to_string(path)?;
    let mut m: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (s, e) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("lexicon line {}: expected surface<TAB>expression", i + 1))?;
        m.entry(stepgen::graph::normalize_surface(s))
            .or_default()
            .push(e.split_whitespace().map(str::to_string).collect());
    }
    Ok(m)
}

fn make_lm(corpus: Option<&Path>, endpoint: Option<&str>, timeout_ms: u64) -> Result<Box<dyn LanguageModel>> {
    match (corpus, endpoint) {
        (Some(_), Some(_)) => bail!("give either an LM corpus or an LM endpoint, not both"),
        (Some(p), None) => Ok(Box::new(NgramLm::load_corpus(p).context("training LM")?)),
        (None, Some(url)) => Ok(Box::new(RemoteLm::new(url, Duration::from_millis(timeout_ms)))),
        (None, None) => {
            log::warn!("no language model configured; later mentions keep their full strings");
            Ok(Box::new(FormPreferenceLm {
                order: vec![RefForm::FullString],
            }))
        }
    }
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let graphs = load_graphs(&a.input)?;
    let mut out = io::stdout().lock();
    for (i, g) in graphs.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        write!(out, "{}", g.to_text())?;
    }
    let edges: usize = graphs.iter().map(FactGraph::num_edges).sum();
    let entities: usize = graphs.iter().map(FactGraph::num_entities).sum();
    eprintln!(
        "{}",
        serde_json::json!({ "instances": graphs.len(), "entities": entities, "edges": edges })
    );
    if let Some(p) = a.templates_out {
        fs::write(&p, TemplateStore::generic(&graphs).to_text())?;
    }
    Ok(())
}

fn gold_plans(graphs: &[FactGraph], plans: Option<&Path>, gold: GoldArg) -> Result<Vec<TextPlan>> {
    if let Some(p) = plans {
        return Ok(load_plans(p, graphs)?.into_iter().map(|mut v| v.remove(0)).collect());
    }
    graphs
        .iter()
        .enumerate()
        .map(|(i, g)| match gold {
            GoldArg::Canonical => Ok(plan_greedy(g, &UniformPolicy)?.plan),
            GoldArg::Exhaustive => {
                let mut best = best_plans(g, 1, &PlanScorer::default(), DEFAULT_EDGE_CAP)
                    .with_context(|| format!("instance {i}"))?;
                Ok(best.remove(0).plan)
            }
        })
        .collect()
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let graphs = load_graphs(&a.data.to_string_lossy())?;
    let gold = gold_plans(&graphs, a.plans.as_deref(), a.gold)?;
    let corpus: Vec<(FactGraph, TextPlan)> = graphs.into_iter().zip(gold).collect();
    let hyper = Hyper {
        dims: Dims {
            d_e: a.d_entity,
            d_r: a.d_relation,
            d_h: a.d_hidden,
            d_t: a.d_type,
        },
        with_types: a.with_types,
        lr: a.lr,
        epochs: a.epochs,
        seed: a.seed,
        optimizer: if a.sgd { Optimizer::Sgd } else { Optimizer::Adam },
    };
    let (params, log) = controller::train(&corpus, &hyper)?;
    params.save(&a.out)?;
    let acc = controller::action_accuracy(&params, &corpus)?;
    let em = controller::exact_match_rate(&params, &corpus)?;
    println!(
        "{}",
        serde_json::json!({
            "epochs": log.epoch_loss.len(),
            "final_loss": log.epoch_loss.last(),
            "action_accuracy": acc,
            "exact_match": em,
            "parameters": params.num_parameters(),
        })
    );
    Ok(())
}

fn load_controller(params: Option<&Path>) -> Result<Controller> {
    let p = params.ok_or_else(|| anyhow!("the neural planner needs --params"))?;
    Ok(Controller::new(Params::load(p).with_context(|| format!("loading {}", p.display()))?))
}

fn cmd_plan(a: PlanArgs) -> Result<()> {
    if a.k == 0 {
        bail!("k must be at least 1");
    }
    let graphs = load_graphs(&a.data)?;
    let controller = match a.planner {
        PlannerArg::Neural => Some(load_controller(a.params.as_deref())?),
        _ => None,
    };
    let scorer = load_scorer(a.weights.as_deref())?;
    let mut out = io::stdout().lock();
    for (i, g) in graphs.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        let plans: Vec<TextPlan> = match a.planner {
            PlannerArg::Exhaustive => best_plans(g, a.k, &scorer, a.edge_cap)
                .with_context(|| format!("instance {i}"))?
                .into_iter()
                .map(|s| s.plan)
                .collect(),
            PlannerArg::Neural | PlannerArg::Uniform => {
                let mut v = Vec::with_capacity(a.k);
                for attempt in 0..a.k {
                    let seed = a.seed.wrapping_add(attempt as u64);
                    let d = match (&controller, a.sample || attempt > 0) {
                        (Some(c), false) => plan_greedy(g, c),
                        (Some(c), true) => plan_sample(g, c, a.temperature, seed),
                        (None, false) => plan_greedy(g, &UniformPolicy),
                        (None, true) => plan_sample(g, &UniformPolicy, a.temperature, seed),
                    }
                    .with_context(|| format!("instance {i}"))?;
                    v.push(d.plan);
                }
                v
            }
        };
        for p in plans {
            writeln!(out, "{}", p.render(g, a.typed))?;
        }
    }
    Ok(())
}

fn cmd_realize(a: RealizeArgs) -> Result<()> {
    let graphs = load_graphs(&a.data.to_string_lossy())?;
    let plans = load_plans(&a.plans, &graphs)?;
    let store = load_templates(a.templates.as_deref(), &graphs)?;
    let mut out = io::stdout().lock();
    for (i, (g, ps)) in graphs.iter().zip(&plans).enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        let cands = realize_kbest(&ps[0], g, &store, a.k).with_context(|| format!("instance {i}"))?;
        for c in cands {
            writeln!(out, "{}", c.to_markup())?;
        }
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<bool> {
    let graphs = load_graphs(&a.data.to_string_lossy())?;
    let plans = load_plans(&a.plans, &graphs)?;
    let cands = load_candidates(&a.candidates, &graphs, a.import.into())?;
    let mut out = io::stdout().lock();
    let mut chosen = String::new();
    let mut all_exact = true;
    for (i, (ps, cs)) in plans.iter().zip(&cands).enumerate() {
        let report = rerank(cs, &ps[0]).ok_or_else(|| anyhow!("instance {i}: no candidates"))?;
        all_exact &= report.exact_match;
        let mut line = serde_json::to_value(&report)?;
        line["instance"] = i.into();
        writeln!(out, "{line}")?;
        if i > 0 {
            chosen.push('\n');
        }
        chosen.push_str(&cs[report.chosen].to_markup());
        chosen.push('\n');
    }
    if let Some(p) = a.chosen_out {
        fs::write(p, chosen)?;
    }
    Ok(all_exact)
}

fn cmd_reg(a: RegArgs) -> Result<()> {
    let graphs = load_graphs(&a.data.to_string_lossy())?;
    let cands = load_candidates(&a.candidates, &graphs, ImportMode::Markup)?;
    let lm = make_lm(a.lm.lm_corpus.as_deref(), a.lm.lm_endpoint.as_deref(), a.lm.lm_timeout_ms)?;
    let opts = RegOptions {
        policy: if a.lm.lenient { LmPolicy::Lenient } else { LmPolicy::Strict },
        extra: match &a.lexicon {
            Some(p) => load_lexicon(p)?,
            None => BTreeMap::new(),
        },
    };
    let mut breakdown = Breakdown::default();
    let mut out = io::stdout().lock();
    for (i, (g, cs)) in graphs.iter().zip(&cands).enumerate() {
        let r = reg::rewrite(&cs[0].tokens, g, lm.as_ref(), &opts).with_context(|| format!("instance {i}"))?;
        breakdown.add(&r);
        writeln!(out, "{}", r.text())?;
    }
    let summary = serde_json::json!({ "breakdown": breakdown, "fractions": breakdown.fractions() });
    match a.breakdown_out {
        Some(p) => fs::write(p, serde_json::to_string_pretty(&summary)? + "\n")?,
        None => eprintln!("{summary}"),
    }
    Ok(())
}

/// Merged configuration for the pipeline command.
fn pipeline_config(a: &PipelineArgs) -> Result<Config> {
    let mut c = match &a.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let flags = [
        ("data", &a.data),
        ("templates", &a.templates),
        ("params", &a.params),
        ("weights", &a.weights),
        ("lm_corpus", &a.lm_corpus),
        ("lm_endpoint", &a.lm_endpoint),
        ("lm_timeout_ms", &a.lm_timeout_ms),
        ("lenient", &a.lenient),
        ("planner", &a.planner),
        ("k", &a.k),
        ("max_plans", &a.max_plans),
        ("with_types", &a.with_types),
        ("seed", &a.seed),
        ("temperature", &a.temperature),
        ("edge_cap", &a.edge_cap),
        ("out", &a.out),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            c.set(k, v)?;
        }
    }
    Ok(c)
}

fn cmd_pipeline(a: PipelineArgs) -> Result<bool> {
    let c = pipeline_config(&a)?;
    let data = c.path("data")?.ok_or_else(|| anyhow!("no data configured"))?;
    let out_dir = c.path("out")?.ok_or_else(|| anyhow!("no output directory configured"))?;
    let graphs = load_graphs(&data.to_string_lossy())?;
    let templates = load_templates(c.path("templates")?.as_deref(), &graphs)?;
    let k: usize = c.parsed("k", 5)?;
    let max_plans: usize = c.parsed("max_plans", 5)?;
    if k == 0 || max_plans == 0 {
        bail!("k and max_plans must be at least 1");
    }
    let seed: u64 = c.parsed("seed", 0)?;
    let with_types: bool = c.parsed("with_types", false)?;
    let planner = match c.get("planner").unwrap_or("exhaustive") {
        "exhaustive" => Planner::Exhaustive {
            scorer: load_scorer(c.path("weights")?.as_deref())?,
            edge_cap: c.parsed("edge_cap", DEFAULT_EDGE_CAP)?,
        },
        "neural" => {
            let ctl = load_controller(c.path("params")?.as_deref())?;
            if ctl.params.with_types != with_types {
                log::warn!("with_types={with_types} differs from the parameter file; using the file's setting");
            }
            Planner::Transition {
                controller: Some(ctl),
                temperature: c.parsed("temperature", 1.0)?,
            }
        }
        "uniform" => Planner::Transition {
            controller: None,
            temperature: c.parsed("temperature", 1.0)?,
        },
        other => bail!("unknown planner `{other}`"),
    };
    let endpoint = c.get("lm_endpoint");
    let lm = make_lm(c.path("lm_corpus")?.as_deref(), endpoint, c.parsed("lm_timeout_ms", 10_000)?)?;
    let opts = PipelineOptions {
        verify: stepgen::verifier::VerifyPolicy { max_plans, k },
        seed,
        reg: RegOptions {
            policy: if c.parsed("lenient", false)? { LmPolicy::Lenient } else { LmPolicy::Strict },
            extra: BTreeMap::new(),
        },
    };
    let run = match run_pipeline(&graphs, &planner, &templates, lm.as_ref(), &opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "instance": e.instance, "stage": e.stage, "error": e.message }));
            return Err(e.into());
        }
    };
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("texts.txt"), run.texts())?;
    fs::write(out_dir.join("verification.jsonl"), run.verification_jsonl())?;
    let plans: String = run
        .results
        .iter()
        .zip(&graphs)
        .map(|(r, g)| r.plan.render(g, with_types) + "\n")
        .collect();
    fs::write(out_dir.join("plans.txt"), plans)?;
    let reg_summary = serde_json::json!({
        "breakdown": run.breakdown,
        "fractions": run.breakdown.fractions(),
        "choices": run.results.iter().map(|r| &r.reg.choices).collect::<Vec<_>>(),
    });
    fs::write(out_dir.join("reg.json"), serde_json::to_string_pretty(&reg_summary)? + "\n")?;
    fs::write(out_dir.join("coverage.json"), serde_json::to_string_pretty(&run.coverage)? + "\n")?;
    let exact = run.results.iter().filter(|r| r.report.exact_match).count();
    eprintln!("{exact}/{} instances verified exactly", run.results.len());
    Ok(run.all_exact())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let read = |p: &Path| -> Result<Vec<Vec<String>>> {
        Ok(fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .map(eval::tokenize)
            .collect())
    };
    let refs = read(&a.refs)?;
    let hyps = read(&a.hyps)?;
    let smoothing = if a.smooth { Smoothing::AddOne } else { Smoothing::None };
    let stats = eval::bleu_stats(&refs, &hyps, a.max_n)?;
    println!(
        "{}",
        serde_json::json!({
            "bleu": stats.score(smoothing),
            "matches": stats.matches,
            "totals": stats.totals,
            "hyp_len": stats.hyp_len,
            "ref_len": stats.ref_len,
        })
    );
    Ok(())
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty size range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| Ok(x.trim().parse()?)).collect()
}

fn cmd_bench(a: BenchArgs) -> Result<bool> {
    let cfg = BenchConfig {
        sizes: parse_sizes(&a.sizes)?,
        trials: a.trials,
        seed: a.seed,
        edge_cap: a.edge_cap,
        transition_reps: a.reps,
    };
    let report = eval::bench_planners(&cfg)?;
    print!("{}", report.csv());
    let verdict = serde_json::json!({ "rows": report.rows, "verdict": report.verdict });
    match a.verdict_out {
        Some(p) => fs::write(p, serde_json::to_string_pretty(&verdict)? + "\n")?,
        None => eprintln!("{verdict}"),
    }
    Ok(report.verdict.linear_ok && report.verdict.ratio_ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Plan(a) => cmd_plan(a).map(|_| true),
        Command::Realize(a) => cmd_realize(a).map(|_| true),
        Command::Verify(a) => cmd_verify(a),
        Command::Reg(a) => cmd_reg(a).map(|_| true),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
