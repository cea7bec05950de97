//! Referring-expression generation.
//!
//! The first mention of every entity is its full surface string. Each later
//! mention is replaced, independently, by the candidate with the best
//! language-model score in its sentence: a pronoun allowed by the entity's
//! type, a single word of the surface (bare or with "the"), the full string,
//! or a user-supplied lexicalization.

mod ngram;
mod remote;

use std::collections::{BTreeMap, HashSet};
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{Entity, EntityId, FactGraph, RefType};
use crate::realizer::Token;

pub use ngram::NgramLm;
pub use remote::RemoteLm;

#[derive(Debug, Error, PartialEq)]
pub enum RegError {
    #[error("language model failed at token {position}: {message}")]
    Lm { position: usize, message: String },
    #[error("language model: {0}")]
    Model(String),
    #[error("empty language-model corpus")]
    EmptyCorpus,
    #[error("entity {0} is not in the graph")]
    UnknownEntity(usize),
    #[error("i/o: {0}")]
    Io(String),
}

/// Every pronoun a mention may be rewritten to.
pub const PRONOUNS: [&str; 14] = [
    "he", "his", "him", "himself", "she", "her", "hers", "herself", "they", "them", "theirs", "it",
    "its", "itself",
];

/// Pronouns that agree with a referent type; none for unknown types.
pub fn allowed_pronouns(t: RefType) -> &'static [&'static str] {
    match t {
        RefType::Male => &["he", "his", "him", "himself"],
        RefType::Female => &["she", "her", "hers", "herself"],
        RefType::PluralAnimate | RefType::UnknownAnimate => &["they", "them", "theirs"],
        RefType::Inanimate => &["it", "its", "itself"],
        RefType::Unknown => &[],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefForm {
    FullString,
    Pronoun,
    BareWord,
    TheWord,
    Supplied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RefExpr {
    pub form: RefForm,
    pub tokens: Vec<String>,
}

impl RefExpr {
    fn new(form: RefForm, tokens: Vec<String>) -> Self {
        RefExpr { form, tokens }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mention {
    /// Index into the token list.
    pub position: usize,
    pub entity: EntityId,
    pub is_first: bool,
}

/// Entity mentions (copied or re-mentioned) in token order; `is_first` is
/// scoped over the whole text.
pub fn mentions(tokens: &[Token]) -> Vec<Mention> {
    let mut seen = HashSet::new();
    tokens
        .iter()
        .enumerate()
        .filter_map(|(position, t)| {
            t.mentioned().map(|entity| Mention {
                position,
                entity,
                is_first: seen.insert(entity),
            })
        })
        .collect()
}

fn surface_tokens(e: &Entity) -> Vec<String> {
    e.surface.split_whitespace().map(str::to_string).collect()
}

/// Candidates for a non-first mention: the full string, the pronouns
/// allowed by the type, then `X` and `the X` for every alphabetic word X of
/// the surface, then `extra` lexicalizations. Duplicates are dropped,
/// keeping the first occurrence.
pub fn candidates_for(e: &Entity, extra: &[Vec<String>]) -> Vec<RefExpr> {
    let full = surface_tokens(e);
    let mut out = vec![RefExpr::new(RefForm::FullString, full.clone())];
    for p in allowed_pronouns(e.ref_type) {
        out.push(RefExpr::new(RefForm::Pronoun, vec![p.to_string()]));
    }
    for w in &full {
        if w.chars().all(char::is_alphabetic) {
            out.push(RefExpr::new(RefForm::BareWord, vec![w.clone()]));
            out.push(RefExpr::new(RefForm::TheWord, vec!["the".into(), w.clone()]));
        }
    }
    for x in extra.iter().filter(|x| !x.is_empty()) {
        out.push(RefExpr::new(RefForm::Supplied, x.clone()));
    }
    let mut seen = HashSet::new();
    out.retain(|r| seen.insert(r.tokens.clone()));
    out
}

/// Scores candidate fillers of `span` in `context`; larger is better.
pub trait LanguageModel {
    fn score_candidates(
        &self,
        context: &[String],
        span: Range<usize>,
        candidates: &[Vec<String>],
    ) -> Result<Vec<f64>, RegError>;
}

/// What to do when the language model fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LmPolicy {
    #[default]
    Strict,
    /// Keep the full string and carry on.
    Lenient,
}

/// Error-analysis bucket of a non-first mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Pronoun,
    /// The whole surface is one word and it was repeated.
    OneTokenRepeat,
    /// A single word of a longer surface.
    Shortening,
    /// A multi-word surface repeated in full.
    KeptIntact,
    Supplied,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Choice {
    pub position: usize,
    pub entity: usize,
    pub is_first: bool,
    pub form: RefForm,
    pub text: String,
    pub category: Option<Category>,
    /// The LM failed and the full string was kept.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegOutput {
    pub sentences: Vec<Vec<String>>,
    pub choices: Vec<Choice>,
}

impl RegOutput {
    pub fn text(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.join(" "))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn tokens(&self) -> Vec<String> {
        self.sentences.iter().flatten().cloned().collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RegOptions {
    pub policy: LmPolicy,
    /// Extra lexicalizations keyed by entity surface.
    pub extra: BTreeMap<String, Vec<Vec<String>>>,
}

fn categorize(form: RefForm, surface_len: usize) -> Category {
    match form {
        RefForm::Pronoun => Category::Pronoun,
        RefForm::Supplied => Category::Supplied,
        _ if surface_len == 1 => Category::OneTokenRepeat,
        RefForm::FullString => Category::KeptIntact,
        RefForm::BareWord | RefForm::TheWord => Category::Shortening,
    }
}

enum Slot {
    Word(String),
    Mention(Mention),
}

fn capitalize(s: &mut [String]) {
    if let Some(first) = s.first_mut() {
        let mut cs = first.chars();
        if let Some(c) = cs.next() {
            *first = c.to_uppercase().chain(cs).collect();
        }
    }
}

/// Lexicalize entity symbols; sentences are split at boundaries.
pub fn rewrite(
    tokens: &[Token],
    g: &FactGraph,
    lm: &dyn LanguageModel,
    opts: &RegOptions,
) -> Result<RegOutput, RegError> {
    let entity = |id: EntityId| g.entity(id).ok_or(RegError::UnknownEntity(id.0));
    let mut sentences: Vec<Vec<Slot>> = vec![Vec::new()];
    let ms = mentions(tokens);
    for m in &ms {
        entity(m.entity)?;
    }
    let mut next_mention = 0;
    for (i, t) in tokens.iter().enumerate() {
        match t {
            Token::Word(w) => sentences.last_mut().unwrap().push(Slot::Word(w.clone())),
            Token::Entity(_) | Token::Ref(_) => {
                sentences.last_mut().unwrap().push(Slot::Mention(ms[next_mention]));
                next_mention += 1;
            }
            Token::Boundary if i + 1 < tokens.len() => sentences.push(Vec::new()),
            Token::Boundary => {}
        }
    }

    let no_extra = Vec::new();
    let mut choices = Vec::new();
    let mut out_sentences = Vec::new();
    for sent in &sentences {
        // chosen rendering per slot; later mentions show their full string
        let mut rendered: Vec<Vec<String>> = sent
            .iter()
            .map(|s| match s {
                Slot::Word(w) => vec![w.clone()],
                Slot::Mention(m) => surface_tokens(entity(m.entity).unwrap()),
            })
            .collect();
        for (si, slot) in sent.iter().enumerate() {
            let Slot::Mention(m) = slot else { continue };
            let e = entity(m.entity)?;
            let n_words = surface_tokens(e).len();
            if m.is_first {
                choices.push(Choice {
                    position: m.position,
                    entity: m.entity.0,
                    is_first: true,
                    form: RefForm::FullString,
                    text: e.surface.clone(),
                    category: None,
                    fallback: false,
                });
                continue;
            }
            let cands = candidates_for(e, opts.extra.get(&e.surface).unwrap_or(&no_extra));
            let start: usize = rendered[..si].iter().map(Vec::len).sum();
            let span = start..start + rendered[si].len();
            let context: Vec<String> = rendered.iter().flatten().cloned().collect();
            let cand_tokens: Vec<Vec<String>> = cands.iter().map(|c| c.tokens.clone()).collect();
            let (pick, fallback) = match lm.score_candidates(&context, span, &cand_tokens) {
                Ok(scores) => {
                    if scores.len() != cands.len() || scores.iter().any(|s| !s.is_finite()) {
                        let err = RegError::Lm {
                            position: m.position,
                            message: "bad score vector".into(),
                        };
                        if opts.policy == LmPolicy::Strict {
                            return Err(err);
                        }
                        (0, true)
                    } else {
                        (crate::transition::argmax(&scores), false)
                    }
                }
                Err(err) => {
                    if opts.policy == LmPolicy::Strict {
                        return Err(RegError::Lm {
                            position: m.position,
                            message: err.to_string(),
                        });
                    }
                    log::warn!("keeping full string at token {}: {err}", m.position);
                    (0, true)
                }
            };
            let c = &cands[pick];
            rendered[si] = c.tokens.clone();
            choices.push(Choice {
                position: m.position,
                entity: m.entity.0,
                is_first: false,
                form: c.form,
                text: c.text(),
                category: Some(categorize(c.form, n_words)),
                fallback,
            });
        }
        let mut flat: Vec<String> = rendered.into_iter().flatten().collect();
        capitalize(&mut flat);
        if !flat.is_empty() {
            out_sentences.push(flat);
        }
    }
    Ok(RegOutput {
        sentences: out_sentences,
        choices,
    })
}

/// Counts of non-first mentions per category.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Breakdown {
    pub first_mentions: usize,
    pub later_mentions: usize,
    pub categories: BTreeMap<Category, usize>,
    pub fallbacks: usize,
}

impl Breakdown {
    pub fn add(&mut self, out: &RegOutput) {
        for c in &out.choices {
            if c.is_first {
                self.first_mentions += 1;
                continue;
            }
            self.later_mentions += 1;
            if let Some(cat) = c.category {
                *self.categories.entry(cat).or_default() += 1;
            }
            if c.fallback {
                self.fallbacks += 1;
            }
        }
    }

    /// Share of later mentions per category.
    pub fn fractions(&self) -> BTreeMap<Category, f64> {
        let n = self.later_mentions.max(1) as f64;
        self.categories.iter().map(|(k, v)| (*k, *v as f64 / n)).collect()
    }
}

/// Fixed scores by form, for tests and as a deterministic baseline.
#[derive(Debug, Clone)]
pub struct FormPreferenceLm {
    pub order: Vec<RefForm>,
}

impl LanguageModel for FormPreferenceLm {
    fn score_candidates(
        &self,
        _context: &[String],
        _span: Range<usize>,
        candidates: &[Vec<String>],
    ) -> Result<Vec<f64>, RegError> {
        Ok(candidates
            .iter()
            .map(|c| {
                let form = if c.len() == 1 && PRONOUNS.contains(&c[0].as_str()) {
                    RefForm::Pronoun
                } else if c.len() == 2 && c[0] == "the" {
                    RefForm::TheWord
                } else if c.len() == 1 {
                    RefForm::BareWord
                } else {
                    RefForm::FullString
                };
                let rank = self.order.iter().position(|f| *f == form).unwrap_or(self.order.len());
                -(rank as f64)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{parse_instance, EntityId};

    fn e(i: usize) -> Token {
        Token::Entity(EntityId(i))
    }

    fn w(s: &str) -> Token {
        Token::word(s)
    }

    #[test]
    fn mention_scopes() {
        let toks = vec![e(0), w("works"), w("for"), e(1), w("."), Token::Boundary, e(0), w("lives")];
        let ms = mentions(&toks);
        assert_eq!(ms.iter().map(|m| m.is_first).collect::<Vec<_>>(), vec![true, true, false]);
        assert_eq!(ms[2].position, 6);
        let distinct = vec![e(0), w("x"), e(1), e(2)];
        assert!(mentions(&distinct).iter().all(|m| m.is_first));
        let with_ref = vec![e(0), w("x"), e(1), w("and"), Token::Ref(EntityId(1))];
        assert!(!mentions(&with_ref)[2].is_first);
    }

    #[test]
    fn candidate_sets() {
        let g = parse_instance(
            "11th_Mississippi_Infantry_Monument | location | Azerbaijan\n\
             @type 11th_Mississippi_Infantry_Monument inanimate",
        )
        .unwrap();
        let mon = g.entity(EntityId(0)).unwrap();
        let texts: Vec<String> = candidates_for(mon, &[]).iter().map(RefExpr::text).collect();
        for want in ["it", "its", "itself", "Monument", "the Monument", "11th Mississippi Infantry Monument"] {
            assert!(texts.contains(&want.to_string()), "{want}");
        }
        assert!(!texts.contains(&"11th".to_string()));
        let az = g.entity(EntityId(1)).unwrap();
        let cs = candidates_for(az, &[]);
        assert_eq!(
            cs.iter().map(RefExpr::text).collect::<Vec<_>>(),
            vec!["Azerbaijan", "the Azerbaijan"]
        );
        assert!(cs.iter().all(|c| c.form != RefForm::Pronoun));
    }

    #[test]
    fn pronoun_table() {
        for t in [
            RefType::Male,
            RefType::Female,
            RefType::PluralAnimate,
            RefType::UnknownAnimate,
            RefType::Inanimate,
        ] {
            assert!(allowed_pronouns(t).iter().all(|p| PRONOUNS.contains(p)));
        }
        assert!(allowed_pronouns(RefType::Unknown).is_empty());
    }

    #[test]
    fn rigged_lm_prefers_pronouns_within_constraints() {
        let g = parse_instance(
            "Alice | owns | The_Box\nThe_Box | near | Alice\n@type Alice female\n@type The_Box inanimate",
        )
        .unwrap();
        let toks = vec![
            e(0), w("owns"), e(1), w("."), Token::Boundary,
            e(1), w("is"), w("near"), e(0), w("."), Token::Boundary,
        ];
        let lm = FormPreferenceLm {
            order: vec![RefForm::Pronoun, RefForm::TheWord, RefForm::BareWord, RefForm::FullString],
        };
        let out = rewrite(&toks, &g, &lm, &RegOptions::default()).unwrap();
        assert_eq!(out.text(), "Alice owns The Box . It is near she .");
        assert_eq!(out.choices[2].text, "it");
        assert_eq!(out.choices[3].text, "she");
    }

    #[test]
    fn no_repeats_is_identity_up_to_case() {
        let g = parse_instance("a | r | b").unwrap();
        let toks = vec![e(0), w("likes"), e(1), w("."), Token::Boundary];
        let lm = FormPreferenceLm { order: vec![] };
        let out = rewrite(&toks, &g, &lm, &RegOptions::default()).unwrap();
        assert_eq!(out.text(), "A likes b .");
        assert!(out.choices.iter().all(|c| c.is_first));
    }

    struct Failing;
    impl LanguageModel for Failing {
        fn score_candidates(&self, _: &[String], _: Range<usize>, _: &[Vec<String>]) -> Result<Vec<f64>, RegError> {
            Err(RegError::Model("down".into()))
        }
    }

    #[test]
    fn lm_failure_policy() {
        let g = parse_instance("Boston_University | r | b\n@type Boston_University inanimate").unwrap();
        let toks = vec![e(0), w("and"), e(0)];
        let err = rewrite(&toks, &g, &Failing, &RegOptions::default()).unwrap_err();
        assert!(matches!(err, RegError::Lm { position: 2, .. }));
        let opts = RegOptions {
            policy: LmPolicy::Lenient,
            ..RegOptions::default()
        };
        let out = rewrite(&toks, &g, &Failing, &opts).unwrap();
        assert_eq!(out.text(), "Boston University and Boston University");
        assert!(out.choices[1].fallback);
    }

    #[test]
    fn shortening_is_permitted() {
        let g = parse_instance("Boston_University | r | b").unwrap();
        let toks = vec![e(0), w("and"), e(0)];
        let lm = FormPreferenceLm {
            order: vec![RefForm::BareWord],
        };
        let out = rewrite(&toks, &g, &lm, &RegOptions::default()).unwrap();
        assert_eq!(out.text(), "Boston University and Boston");
        let mut b = Breakdown::default();
        b.add(&out);
        assert_eq!(b.categories.get(&Category::Shortening), Some(&1));
        assert_eq!(b.first_mentions, 1);
    }

    #[test]
    fn supplied_lexicalizations() {
        let g = parse_instance("Boston_University | r | b").unwrap();
        let mut extra = BTreeMap::new();
        extra.insert("Boston University".to_string(), vec![vec!["BU".to_string()]]);
        let cands = candidates_for(g.entity(EntityId(0)).unwrap(), &extra["Boston University"]);
        assert_eq!(cands.last().unwrap().form, RefForm::Supplied);
    }
}
