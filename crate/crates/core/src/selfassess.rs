//! Unsupervised practice questions: remove short spans from a few sentences
//! of a document, ask for the removed text, and build distractors by swapping
//! spans for random spans of the same document.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, MrcInstance};
use crate::error::{Error, Result};
use crate::text::{split_sentences, tokenize};

pub const NUM_OPTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Question attempts per document.
    pub n_q: usize,
    /// Upper bound on sentences per question.
    pub n_s: usize,
    /// Upper bound on removed spans per question.
    pub n_c: usize,
    /// Upper bound on tokens per span.
    pub n_t: usize,
    pub seed: u64,
    pub max_attempts_per_question: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_q: 10,
            n_s: 3,
            n_c: 4,
            n_t: 4,
            seed: 0,
            max_attempts_per_question: 10,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_q", self.n_q),
            ("n_s", self.n_s),
            ("n_c", self.n_c),
            ("n_t", self.n_t),
            ("max_attempts_per_question", self.max_attempts_per_question),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Span `[start, end)` in the concatenation of the selected sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanPick {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedInstance {
    pub document: String,
    pub question: String,
    pub options: Vec<String>,
    pub gold: usize,
}

impl GeneratedInstance {
    pub fn into_instance(self, id: String) -> MrcInstance {
        MrcInstance {
            id,
            document: self.document,
            question: self.question,
            options: self.options,
            gold: vec![self.gold],
            tags: None,
            option_documents: None,
        }
    }
}

/// Picks non-overlapping spans inside the given sentences. Returns `None`
/// when some drawn span length fits nowhere.
fn pick_spans<R: Rng>(sentences: &[(usize, usize)], count: usize, cfg: &GenConfig, rng: &mut R) -> Option<Vec<SpanPick>> {
    let mut picks: Vec<SpanPick> = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.random_range(1..=cfg.n_t);
        let mut candidates = Vec::new();
        for (si, &(s_start, s_end)) in sentences.iter().enumerate() {
            for start in s_start..s_end.saturating_sub(len - 1) {
                let end = start + len;
                if picks.iter().all(|p| end <= p.start || p.end <= start) {
                    candidates.push(SpanPick { sentence: si, start, end });
                }
            }
        }
        if candidates.is_empty() {
            return None;
        }
        picks.push(candidates[rng.random_range(0..candidates.len())]);
    }
    picks.sort_by_key(|p| p.start);
    Some(picks)
}

/// Builds `count` distinct wrong options from the correct option's spans by
/// replacing a non-empty random subset of them with random document spans.
/// `None` means some distractor kept colliding for `max_attempts_per_question`
/// draws.
pub fn make_distractors<R: Rng>(
    correct_spans: &[Vec<String>],
    doc_tokens: &[String],
    count: usize,
    cfg: &GenConfig,
    rng: &mut R,
) -> Option<Vec<String>> {
    if doc_tokens.is_empty() || correct_spans.is_empty() {
        return None;
    }
    let correct = correct_spans.iter().flatten().cloned().collect::<Vec<_>>().join(" ");
    let max_len = cfg.n_t.min(doc_tokens.len());
    let mut out: Vec<String> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut accepted = None;
        for _ in 0..cfg.max_attempts_per_question {
            let chosen = loop {
                let bits: Vec<bool> = correct_spans.iter().map(|_| rng.random_bool(0.5)).collect();
                if bits.iter().any(|&b| b) {
                    break bits;
                }
            };
            let mut words: Vec<&str> = Vec::new();
            for (span, replace) in correct_spans.iter().zip(&chosen) {
                if *replace {
                    let len = rng.random_range(1..=max_len);
                    let start = rng.random_range(0..=doc_tokens.len() - len);
                    words.extend(doc_tokens[start..start + len].iter().map(String::as_str));
                } else {
                    words.extend(span.iter().map(String::as_str));
                }
            }
            let candidate = words.join(" ");
            if candidate != correct && !out.contains(&candidate) {
                accepted = Some(candidate);
                break;
            }
        }
        out.push(accepted?);
    }
    Some(out)
}

fn try_question<R: Rng>(
    document: &str,
    tokens: &[String],
    sentences: &[crate::text::SentenceSpan],
    cfg: &GenConfig,
    rng: &mut R,
) -> Option<GeneratedInstance> {
    let s = rng.random_range(1..=cfg.n_s.min(sentences.len()));
    let mut chosen = index::sample(rng, sentences.len(), s).into_vec();
    chosen.sort_unstable();

    let mut concat: Vec<&String> = Vec::new();
    let mut bounds = Vec::with_capacity(s);
    for &si in &chosen {
        let span = sentences[si];
        let start = concat.len();
        concat.extend(&tokens[span.start..span.end]);
        bounds.push((start, concat.len()));
    }

    let c = rng.random_range(1..=cfg.n_c);
    let picks = pick_spans(&bounds, c, cfg, rng)?;

    let mut removed = vec![false; concat.len()];
    let mut spans: Vec<Vec<String>> = Vec::with_capacity(picks.len());
    for p in &picks {
        removed[p.start..p.end].iter_mut().for_each(|r| *r = true);
        spans.push(concat[p.start..p.end].iter().map(|s| s.to_string()).collect());
    }
    let question = concat
        .iter()
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .map(|(t, _)| t.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let correct = spans.iter().flatten().map(String::as_str).collect::<Vec<_>>().join(" ");

    let mut options = make_distractors(&spans, tokens, NUM_OPTIONS - 1, cfg, rng)?;
    let gold = rng.random_range(0..NUM_OPTIONS);
    options.insert(gold, correct);
    Some(GeneratedInstance {
        document: document.to_string(),
        question,
        options,
        gold,
    })
}

/// Attempts `n_q` questions for one document; a question that fails
/// `max_attempts_per_question` times in a row is dropped.
pub fn generate_for_document<R: Rng>(document: &str, cfg: &GenConfig, rng: &mut R) -> Vec<GeneratedInstance> {
    let tokens = tokenize(document);
    let sentences = split_sentences(&tokens);
    if tokens.is_empty() {
        return Vec::new();
    }
    (0..cfg.n_q)
        .filter_map(|_| (0..cfg.max_attempts_per_question).find_map(|_| try_question(document, &tokens, &sentences, cfg, rng)))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GenStats {
    pub documents: usize,
    pub attempted: usize,
    pub emitted: usize,
    pub discarded: usize,
    pub discard_rate: f64,
}

/// Generates practice questions for every document. Document `i` draws from
/// its own stream seeded with `seed ^ i`, so output does not depend on
/// scheduling.
pub fn generate_corpus<S: AsRef<str> + Sync>(documents: &[S], cfg: &GenConfig) -> Result<(Dataset, GenStats)> {
    cfg.validate()?;
    let per_doc: Vec<Vec<GeneratedInstance>> = crate::parallel::install(|| {
        documents
            .par_iter()
            .enumerate()
            .map(|(i, doc)| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ i as u64);
                generate_for_document(doc.as_ref(), cfg, &mut rng)
            })
            .collect()
    });
    let attempted = documents.iter().filter(|d| !tokenize(d.as_ref()).is_empty()).count() * cfg.n_q;
    let mut instances = Vec::new();
    for (i, generated) in per_doc.into_iter().enumerate() {
        for (j, g) in generated.into_iter().enumerate() {
            instances.push(g.into_instance(format!("gen-{i}-{j}")));
        }
    }
    let emitted = instances.len();
    let stats = GenStats {
        documents: documents.len(),
        attempted,
        emitted,
        discarded: attempted - emitted,
        discard_rate: if attempted == 0 {
            0.0
        } else {
            (attempted - emitted) as f64 / attempted as f64
        },
    };
    Ok((Dataset::new(instances, false)?, stats))
}
