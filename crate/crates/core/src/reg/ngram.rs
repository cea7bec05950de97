//! Add-k smoothed n-gram language model.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::path::Path;

use super::{LanguageModel, RegError};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Lowercased word n-gram model. The predicted vocabulary is every training
/// word plus `<unk>` and `</s>`; histories are padded with `<s>`.
#[derive(Debug, Clone)]
pub struct NgramLm {
    order: usize,
    k: f64,
    vocab: BTreeMap<String, u32>,
    bos: u32,
    eos: u32,
    unk: u32,
    /// Counts of full n-grams (history + word).
    ngrams: HashMap<Vec<u32>, u64>,
    /// Counts of histories as contexts of a prediction.
    histories: HashMap<Vec<u32>, u64>,
}

impl NgramLm {
    /// Train on whitespace-tokenized sentences, one per line.
    pub fn train(text: &str, order: usize, k: f64) -> Result<Self, RegError> {
        assert!(order >= 1, "order must be positive");
        assert!(k > 0.0, "add-k constant must be positive");
        let lines: Vec<Vec<String>> = text
            .lines()
            .map(|l| l.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(RegError::EmptyCorpus);
        }
        let mut vocab = BTreeMap::new();
        for w in [UNK, EOS, BOS] {
            let id = vocab.len() as u32;
            vocab.insert(w.to_string(), id);
        }
        for l in &lines {
            for w in l {
                if !vocab.contains_key(w) {
                    let id = vocab.len() as u32;
                    vocab.insert(w.clone(), id);
                }
            }
        }
        let mut lm = NgramLm {
            order,
            k,
            bos: vocab[BOS],
            eos: vocab[EOS],
            unk: vocab[UNK],
            vocab,
            ngrams: HashMap::new(),
            histories: HashMap::new(),
        };
        for l in &lines {
            let ids = lm.padded(l);
            for i in order - 1..ids.len() {
                let gram = &ids[i + 1 - order..=i];
                *lm.ngrams.entry(gram.to_vec()).or_default() += 1;
                *lm.histories.entry(gram[..order - 1].to_vec()).or_default() += 1;
            }
        }
        Ok(lm)
    }

    /// Trigram model with k = 0.1.
    pub fn trigram(text: &str) -> Result<Self, RegError> {
        Self::train(text, 3, 0.1)
    }

    pub fn load_corpus(path: &Path) -> Result<Self, RegError> {
        let text = std::fs::read_to_string(path).map_err(|e| RegError::Io(e.to_string()))?;
        Self::trigram(&text)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Size of the predicted vocabulary (`<s>` is never predicted).
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() - 1
    }

    fn id(&self, w: &str) -> u32 {
        self.vocab.get(&w.to_lowercase()).copied().unwrap_or(self.unk)
    }

    fn padded(&self, words: &[String]) -> Vec<u32> {
        let mut ids = vec![self.bos; self.order - 1];
        ids.extend(words.iter().map(|w| self.id(w)));
        ids.push(self.eos);
        ids
    }

    /// ln P(word | history); `history` holds the previous `order - 1` ids.
    fn log_prob_ids(&self, history: &[u32], word: u32) -> f64 {
        let mut gram = history.to_vec();
        gram.push(word);
        let c = self.ngrams.get(&gram).copied().unwrap_or(0) as f64;
        let h = self.histories.get(history).copied().unwrap_or(0) as f64;
        ((c + self.k) / (h + self.k * self.vocab_size() as f64)).ln()
    }

    /// ln P(word | history) over words; the history is padded on the left.
    pub fn log_prob(&self, history: &[&str], word: &str) -> f64 {
        let n = self.order - 1;
        let mut ids: Vec<u32> = vec![self.bos; n.saturating_sub(history.len())];
        ids.extend(history[history.len().saturating_sub(n)..].iter().map(|w| self.id(w)));
        let word = if word == EOS { self.eos } else { self.id(word) };
        self.log_prob_ids(&ids, word)
    }

    /// Predicted vocabulary, for checking normalization.
    pub fn vocabulary(&self) -> Vec<&str> {
        self.vocab.keys().map(String::as_str).filter(|w| *w != BOS).collect()
    }

    /// Sum of log-probabilities of positions `span.start .. span.end +
    /// order - 1` of the sentence (position `len` is `</s>`): every
    /// prediction whose n-gram touches the span.
    pub fn score(&self, tokens: &[String], span: Range<usize>) -> f64 {
        let ids = self.padded(tokens);
        let pad = self.order - 1;
        let last = (span.end + self.order - 1).min(tokens.len() + 1);
        (span.start..last)
            .map(|i| {
                let j = i + pad;
                self.log_prob_ids(&ids[j - pad..j], ids[j])
            })
            .sum()
    }

    /// Log-probability of a whole sentence including `</s>`.
    pub fn sentence_logprob(&self, tokens: &[String]) -> f64 {
        self.score(tokens, 0..tokens.len())
    }
}

impl LanguageModel for NgramLm {
    fn score_candidates(
        &self,
        context: &[String],
        span: Range<usize>,
        candidates: &[Vec<String>],
    ) -> Result<Vec<f64>, RegError> {
        Ok(candidates
            .iter()
            .map(|c| {
                let mut toks = context[..span.start].to_vec();
                toks.extend(c.iter().cloned());
                toks.extend_from_slice(&context[span.end..]);
                self.score(&toks, span.start..span.start + c.len())
            })
            .collect())
    }
}
