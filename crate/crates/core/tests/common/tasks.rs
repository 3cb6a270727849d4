//! Synthetic multiple-choice tasks.

use mrc::corpus::{Dataset, MrcInstance};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::rng;

/// Pseudo-words the bundled tagger reads as common nouns.
pub fn noun(k: usize) -> String {
    format!("zq{k}")
}

/// Each document mentions several nouns; exactly one option is one of them.
/// The question never overlaps the document, so the correct option is the
/// only one whose sequence has highlighted document tokens.
pub fn highlight_task(n: usize, nouns: usize, doc_len: usize, seed: u64, prefix: &str) -> Dataset {
    let mut r = rng(seed);
    let pool: Vec<usize> = (0..nouns).collect();
    let instances = (0..n)
        .map(|i| {
            let picked: Vec<usize> = pool.choose_multiple(&mut r, doc_len + 3).copied().collect();
            let (doc_nouns, distractors) = picked.split_at(doc_len);
            let mut words: Vec<String> = doc_nouns.iter().map(|&k| noun(k)).collect();
            words.insert(doc_len / 2, ".".into());
            words.push(".".into());
            let answer = noun(doc_nouns[r.random_range(0..doc_len)]);
            let mut options: Vec<String> = distractors.iter().map(|&k| noun(k)).collect();
            let gold = r.random_range(0..4);
            options.insert(gold, answer);
            MrcInstance {
                id: format!("{prefix}-{i}"),
                document: words.join(" "),
                question: "which of these appears ?".into(),
                options,
                gold: vec![gold],
                tags: None,
                option_documents: None,
            }
        })
        .collect();
    Dataset::new(instances, false).unwrap()
}

/// Random documents with random labels: only memorization can fit them.
pub fn random_label_task(n: usize, nouns: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let instances = (0..n)
        .map(|i| {
            let mut w = |len: usize| (0..len).map(|_| noun(r.random_range(0..nouns))).collect::<Vec<_>>().join(" ");
            let document = w(8) + " .";
            let question = w(2) + " ?";
            let options = (0..4).map(|_| w(2)).collect();
            MrcInstance {
                id: format!("r-{i}"),
                document,
                question,
                options,
                gold: vec![r.random_range(0..4)],
                tags: None,
                option_documents: None,
            }
        })
        .collect();
    Dataset::new(instances, false).unwrap()
}

/// Plain-text documents of several short sentences, for practice-question generation.
pub fn documents(n: usize, nouns: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let sentences = r.random_range(3..6);
            let mut out = Vec::new();
            for _ in 0..sentences {
                let len = r.random_range(4..9);
                let mut s: Vec<String> = (0..len).map(|_| noun(r.random_range(0..nouns))).collect();
                s.shuffle(&mut r);
                out.push(s.join(" ") + " .");
            }
            out.join(" ")
        })
        .collect()
}
