//! Reference implementations written without reuse of the library's logic.
#![allow(clippy::needless_range_loop)]

use std::collections::HashMap;

const CONTENT_TAGS: [&str; 18] = [
    "NN", "NNP", "NNPS", "NNS", "VB", "VBD", "VBG", "VBN", "VBP", "VBZ", "JJ", "JJR", "JJS", "RB", "RBR", "RBS", "CD", "FW",
];

/// Bit `j` is set iff token `j` has a content tag and equals some question
/// or option token.
pub fn highlight_brute_force(doc: &[String], tags: &[&str], question: &[String], option: &[String]) -> Vec<bool> {
    let mut out = vec![false; doc.len()];
    for j in 0..doc.len() {
        if !CONTENT_TAGS.contains(&tags[j]) {
            continue;
        }
        for w in question.iter().chain(option) {
            if *w == doc[j] {
                out[j] = true;
            }
        }
    }
    out
}

/// Lowercased word runs and single punctuation characters.
pub fn simple_tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut word = String::new();
    for c in lower.chars() {
        if c.is_alphanumeric() {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Sentences as token vectors; a sentence ends after `.`, `!` or `?`.
pub fn simple_sentences(tokens: &[String]) -> Vec<Vec<String>> {
    let mut out = vec![];
    let mut cur = vec![];
    for t in tokens {
        cur.push(t.clone());
        if t == "." || t == "!" || t == "?" {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub struct GenLimits {
    pub n_s: usize,
    pub n_c: usize,
    pub n_t: usize,
}

/// Whether `question` and `answer` arise from some choice of at most `n_s`
/// sentences of `document` (kept in document order) by removing between 1
/// and `n_c` non-overlapping spans of 1 to `n_t` tokens, each inside one
/// sentence: the answer is the spans in order and the question is what
/// remains.
pub fn explains_generation(document: &str, question: &str, answer: &str, lim: &GenLimits) -> bool {
    let sentences = simple_sentences(&simple_tokenize(document));
    let q = simple_tokenize(question);
    let a = simple_tokenize(answer);
    let n = sentences.len();
    for mask in 1u64..(1u64 << n.min(20)) {
        if mask.count_ones() as usize > lim.n_s {
            continue;
        }
        let mut tokens = Vec::new();
        let mut sent_id = Vec::new();
        for (i, s) in sentences.iter().enumerate() {
            if mask >> i & 1 == 1 {
                tokens.extend(s.iter().cloned());
                sent_id.extend(std::iter::repeat_n(i, s.len()));
            }
        }
        if tokens.len() == q.len() + a.len() && interleaves(&tokens, &sent_id, &q, &a, lim) {
            return true;
        }
    }
    false
}

fn interleaves(t: &[String], sent: &[usize], q: &[String], a: &[String], lim: &GenLimits) -> bool {
    // state after consuming t[..i]: (answer tokens used, spans used, current span length)
    use std::collections::HashSet;
    let mut states: HashSet<(usize, usize, usize)> = HashSet::from([(0, 0, 0)]);
    for i in 0..t.len() {
        let mut next = HashSet::new();
        for &(j, k, run) in &states {
            let qi = i - j;
            if qi < q.len() && q[qi] == t[i] {
                next.insert((j, k, 0));
            }
            if j < a.len() && a[j] == t[i] {
                let continues = run > 0 && run < lim.n_t && sent[i] == sent[i - 1];
                if continues {
                    next.insert((j + 1, k, run + 1));
                }
                if k < lim.n_c {
                    next.insert((j + 1, k + 1, 1));
                }
            }
        }
        states = next;
        if states.is_empty() {
            return false;
        }
    }
    states.iter().any(|&(j, k, _)| j == a.len() && k >= 1)
}

/// Exhaustive TF-IDF scoring, then a full sort; returns the top-`k` indices.
pub fn retrieval_top_k(sentences: &[String], question: &str, option: &str, stop: &[&str], k: usize) -> Vec<usize> {
    let toks: Vec<Vec<String>> = sentences.iter().map(|s| simple_tokenize(s)).collect();
    let mut terms: Vec<String> = simple_tokenize(question)
        .into_iter()
        .chain(simple_tokenize(option))
        .filter(|t| t.chars().any(char::is_alphanumeric) && !stop.contains(&t.as_str()))
        .collect();
    terms.sort();
    terms.dedup();
    let n = sentences.len() as f64;
    let mut df: HashMap<&str, f64> = HashMap::new();
    for s in &toks {
        let mut seen: Vec<&str> = s.iter().map(String::as_str).collect();
        seen.sort();
        seen.dedup();
        for w in seen {
            *df.entry(w).or_default() += 1.0;
        }
    }
    let mut scored: Vec<(f64, usize)> = toks
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut total = 0.0;
            for t in &terms {
                let tf = s.iter().filter(|w| *w == t).count() as f64;
                if tf > 0.0 {
                    let idf = ((n + 1.0) / (df.get(t.as_str()).copied().unwrap_or(0.0) + 1.0)).ln() + 1.0;
                    total += tf * idf;
                }
            }
            (total, i)
        })
        .collect();
    for a in 0..scored.len() {
        for b in a + 1..scored.len() {
            let swap = scored[b].0 > scored[a].0 || (scored[b].0 == scored[a].0 && scored[b].1 < scored[a].1);
            if swap {
                scored.swap(a, b);
            }
        }
    }
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

pub struct CountedMetrics {
    pub accuracy: f64,
    pub f1_m: f64,
    pub f1_a: f64,
    pub em0: f64,
}

/// Counts decisions one question at a time with score >= 0 meaning "chosen".
pub fn count_metrics(scores: &[Vec<f64>], gold: &[Vec<usize>]) -> CountedMetrics {
    let mut hits = 0.0;
    let mut f1_total = 0.0;
    let mut exact = 0.0;
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for (s, g) in scores.iter().zip(gold) {
        let mut best = 0;
        for i in 0..s.len() {
            if s[i] > s[best] {
                best = i;
            }
        }
        if g.contains(&best) {
            hits += 1.0;
        }
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for i in 0..s.len() {
            let chosen = s[i] >= 0.0;
            let correct = g.contains(&i);
            if chosen && correct {
                a += 1.0;
            }
            if chosen && !correct {
                b += 1.0;
            }
            if !chosen && correct {
                c += 1.0;
            }
        }
        f1_total += if a + b + c == 0.0 { 1.0 } else { 2.0 * a / (2.0 * a + b + c) };
        if b == 0.0 && c == 0.0 {
            exact += 1.0;
        }
        tp += a;
        fp += b;
        fneg += c;
    }
    let n = scores.len() as f64;
    CountedMetrics {
        accuracy: hits / n,
        f1_m: f1_total / n,
        f1_a: if tp + fp + fneg == 0.0 {
            1.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fneg)
        },
        em0: exact / n,
    }
}

/// Checks one generated practice question: four distinct options, a single
/// gold index, and a correct option explained by span removal.
pub fn validate_generated(inst: &mrc::corpus::MrcInstance, lim: &GenLimits) -> Result<(), String> {
    if inst.options.len() != 4 {
        return Err(format!("{}: {} options", inst.id, inst.options.len()));
    }
    for a in 0..4 {
        for b in a + 1..4 {
            if simple_tokenize(&inst.options[a]) == simple_tokenize(&inst.options[b]) {
                return Err(format!("{}: options {a} and {b} coincide", inst.id));
            }
        }
    }
    if inst.gold.len() != 1 || inst.gold[0] >= 4 {
        return Err(format!("{}: gold {:?}", inst.id, inst.gold));
    }
    let answer = &inst.options[inst.gold[0]];
    if !explains_generation(&inst.document, &inst.question, answer, lim) {
        return Err(format!("{}: question/answer not derivable from the document", inst.id));
    }
    Ok(())
}
