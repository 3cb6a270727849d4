//! Multiple-choice instances, JSONL ingestion, and sentence retrieval for
//! tasks that ship a reference corpus instead of per-question documents.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{tokenize, PosTag};

/// Bumped whenever `data/stopwords.txt` changes.
pub const STOPWORDS_VERSION: u32 = 1;
pub const DEFAULT_RETRIEVAL_K: usize = 50;

const STOPWORDS: &str = include_str!("../data/stopwords.txt");

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrcInstance {
    pub id: String,
    pub document: String,
    pub question: String,
    pub options: Vec<String>,
    /// Indices of the correct options; empty for unlabeled instances.
    pub gold: Vec<usize>,
    /// Pre-computed POS tags for the document tokens, grouped by sentence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<Vec<PosTag>>>,
    /// One retrieved document per option; overrides `document` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_documents: Option<Vec<String>>,
}

impl MrcInstance {
    pub fn is_labeled(&self) -> bool {
        !self.gold.is_empty()
    }

    pub fn document_for(&self, option: usize) -> &str {
        match &self.option_documents {
            Some(docs) => &docs[option],
            None => &self.document,
        }
    }

    /// Flattened document tags, if supplied and applicable to `option`.
    pub fn document_tags(&self) -> Option<Vec<PosTag>> {
        if self.option_documents.is_some() {
            return None;
        }
        self.tags.as_ref().map(|t| t.iter().flatten().copied().collect())
    }

    pub fn validate(&self, multi_answer: bool) -> Result<()> {
        let m = self.options.len();
        if m < 2 {
            return Err(Error::invalid(format!("instance has {m} options, need at least 2")));
        }
        let mut seen = HashSet::new();
        for &g in &self.gold {
            if g >= m {
                return Err(Error::invalid(format!("gold index {g} out of range for {m} options")));
            }
            if !seen.insert(g) {
                return Err(Error::invalid(format!("gold index {g} listed twice")));
            }
        }
        if !multi_answer && self.gold.len() > 1 {
            return Err(Error::invalid(format!(
                "{} gold options in a single-answer dataset",
                self.gold.len()
            )));
        }
        if let Some(tags) = &self.tags {
            let n_tags: usize = tags.iter().map(Vec::len).sum();
            let n_tokens = tokenize(&self.document).len();
            if n_tags != n_tokens {
                return Err(Error::TagMismatch {
                    tokens: n_tokens,
                    tags: n_tags,
                });
            }
        }
        if let Some(docs) = &self.option_documents {
            if docs.len() != m {
                return Err(Error::invalid(format!("{} option documents for {m} options", docs.len())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub instances: Vec<MrcInstance>,
    pub multi_answer: bool,
    pub corpus_only: bool,
}

impl Dataset {
    pub fn new(instances: Vec<MrcInstance>, multi_answer: bool) -> Result<Self> {
        let mut ids = HashSet::new();
        for inst in &instances {
            inst.validate(multi_answer)?;
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::invalid(format!("duplicate instance id {:?}", inst.id)));
            }
        }
        let corpus_only = !instances.is_empty() && instances.iter().all(|i| i.option_documents.is_some());
        Ok(Dataset {
            instances,
            multi_answer,
            corpus_only,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn load_jsonl(path: &Path, multi_answer: bool) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(file), path, multi_answer)
    }

    /// Parses JSONL from `reader`; `path` only labels error messages.
    pub fn read_jsonl<R: BufRead>(reader: R, path: &Path, multi_answer: bool) -> Result<Self> {
        let record = |line: usize, msg: String| Error::Record {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut instances = Vec::new();
        let mut ids = HashSet::new();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let inst: MrcInstance = serde_json::from_str(&line).map_err(|e| record(line_no, e.to_string()))?;
            inst.validate(multi_answer).map_err(|e| record(line_no, e.to_string()))?;
            if !ids.insert(inst.id.clone()) {
                return Err(record(line_no, format!("duplicate instance id {:?}", inst.id)));
            }
            instances.push(inst);
        }
        let corpus_only = !instances.is_empty() && instances.iter().all(|i| i.option_documents.is_some());
        Ok(Dataset {
            instances,
            multi_answer,
            corpus_only,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for inst in &self.instances {
            serde_json::to_writer(&mut out, inst)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    /// Every text field, for vocabulary construction.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.instances.iter().flat_map(|i| {
            std::iter::once(i.document.as_str())
                .chain(std::iter::once(i.question.as_str()))
                .chain(i.options.iter().map(String::as_str))
                .chain(i.option_documents.iter().flatten().map(String::as_str))
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub instances: usize,
    pub labeled: usize,
    pub multi_answer_questions: usize,
    pub option_histogram: BTreeMap<usize, usize>,
    pub mean_document_tokens: f64,
    pub mean_question_tokens: f64,
}

pub fn dataset_stats(dataset: &Dataset) -> DatasetStats {
    let mut stats = DatasetStats::default();
    let mut doc_tokens = 0usize;
    let mut q_tokens = 0usize;
    for inst in &dataset.instances {
        stats.instances += 1;
        stats.labeled += inst.is_labeled() as usize;
        stats.multi_answer_questions += (inst.gold.len() > 1) as usize;
        *stats.option_histogram.entry(inst.options.len()).or_default() += 1;
        doc_tokens += tokenize(&inst.document).len();
        q_tokens += tokenize(&inst.question).len();
    }
    if stats.instances > 0 {
        stats.mean_document_tokens = doc_tokens as f64 / stats.instances as f64;
        stats.mean_question_tokens = q_tokens as f64 / stats.instances as f64;
    }
    stats
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEntry {
    pub text: String,
    pub tokens: Vec<String>,
    pub counts: HashMap<String, u32>,
}

impl SentenceEntry {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        let mut counts = HashMap::new();
        for t in &tokens {
            *counts.entry(t.clone()).or_default() += 1;
        }
        SentenceEntry { text, tokens, counts }
    }
}

/// Query terms: distinct non-stopword word tokens of question and option.
pub fn query_terms(question: &str, option: &str) -> BTreeSet<String> {
    let stop = stopwords();
    tokenize(question)
        .into_iter()
        .chain(tokenize(option))
        .filter(|t| t.chars().any(char::is_alphanumeric) && !stop.contains(t.as_str()))
        .collect()
}

/// TF-IDF index over a sentence corpus.
#[derive(Debug, Clone)]
pub struct SentenceIndex {
    entries: Vec<SentenceEntry>,
    doc_freq: HashMap<String, u32>,
}

impl SentenceIndex {
    pub fn new(entries: Vec<SentenceEntry>) -> Self {
        let mut doc_freq: HashMap<String, u32> = HashMap::new();
        for e in &entries {
            for term in e.counts.keys() {
                *doc_freq.entry(term.clone()).or_default() += 1;
            }
        }
        SentenceIndex { entries, doc_freq }
    }

    pub fn from_lines<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            lines
                .into_iter()
                .map(Into::into)
                .filter(|l: &String| !l.trim().is_empty())
                .map(SentenceEntry::new)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let index = Self::from_lines(text.lines().map(str::to_string));
        if index.is_empty() {
            return Err(Error::invalid(format!("{}: corpus has no sentences", path.display())));
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SentenceEntry] {
        &self.entries
    }

    /// `ln((N + 1) / (df + 1)) + 1`
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.entries.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n + 1.0) / (df + 1.0)).ln() + 1.0
    }

    pub fn score(&self, sentence: usize, terms: &BTreeSet<String>) -> f64 {
        let counts = &self.entries[sentence].counts;
        terms.iter().map(|t| counts.get(t).map_or(0.0, |&c| c as f64 * self.idf(t))).sum()
    }

    /// Indices of the top-`k` sentences, best first; ties go to the earlier sentence.
    pub fn top_k(&self, terms: &BTreeSet<String>, k: usize) -> Vec<usize> {
        let idf: Vec<(&String, f64)> = terms.iter().map(|t| (t, self.idf(t))).collect();
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let s = idf.iter().map(|(t, w)| e.counts.get(*t).map_or(0.0, |&c| c as f64 * w)).sum();
                (s, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(k);
        scored.into_iter().map(|(_, i)| i).collect()
    }

    pub fn retrieve(&self, question: &str, option: &str, k: usize) -> String {
        let terms = query_terms(question, option);
        self.top_k(&terms, k)
            .into_iter()
            .map(|i| self.entries[i].text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Fills `option_documents` for every instance of `dataset`.
    pub fn attach_documents(&self, dataset: &mut Dataset, k: usize) {
        for inst in &mut dataset.instances {
            let docs = inst.options.iter().map(|o| self.retrieve(&inst.question, o, k)).collect();
            inst.option_documents = Some(docs);
            inst.tags = None;
        }
        dataset.corpus_only = !dataset.is_empty();
    }
}

pub fn retrieve_sentences(corpus: &[SentenceEntry], question: &str, option: &str, k: usize) -> String {
    SentenceIndex::new(corpus.to_vec()).retrieve(question, option, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str) -> Result<Dataset> {
        Dataset::read_jsonl(Cursor::new(text), Path::new("mem.jsonl"), false)
    }

    #[test]
    fn stopword_list_is_closed() {
        assert_eq!(stopwords().len(), 120);
        assert!(stopwords().contains("the"));
    }

    #[test]
    fn loads_one_instance() {
        let ds = parse(r#"{"id":"a","document":"d .","question":"q ?","options":["w","x","y","z"],"gold":[2]}"#).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.instances[0].gold, vec![2]);
        assert!(!ds.corpus_only);
    }

    #[test]
    fn rejects_bad_lines_with_line_numbers() {
        let good = r#"{"id":"a","document":"","question":"","options":["w","x"],"gold":[0]}"#;
        let cases = [
            (
                r#"{"id":"b","document":"","question":"","options":["w","x","y","z"],"gold":[4]}"#,
                "out of range",
            ),
            (r#"{"id":"b","document":"","question":"","options":["w","x"]}"#, "missing field"),
            ("{not json", "key must be a string"),
            (good, "duplicate"),
            (
                r#"{"id":"b","document":"","question":"","options":["w","x"],"gold":[0,1]}"#,
                "single-answer",
            ),
            (r#"{"id":"b","document":"","question":"","options":["w"],"gold":[0]}"#, "at least 2"),
        ];
        for (bad, needle) in cases {
            let text = format!("{good}\n\n{bad}\n");
            let err = parse(&text).unwrap_err().to_string();
            assert!(err.starts_with("mem.jsonl:3:"), "{err}");
            assert!(err.contains(needle), "{err}");
        }
    }

    #[test]
    fn multi_answer_and_tags() {
        let line = r#"{"id":"a","document":"the cat .","question":"","options":["w","x","y"],"gold":[0,2],"tags":[["DT","NN","NONE"]]}"#;
        let ds = Dataset::read_jsonl(Cursor::new(line), Path::new("m"), true).unwrap();
        assert_eq!(ds.instances[0].document_tags().unwrap(), vec![PosTag::Dt, PosTag::Nn, PosTag::None]);
        let short = line.replace(r#","NONE""#, "");
        let err = Dataset::read_jsonl(Cursor::new(short), Path::new("m"), true).unwrap_err();
        assert!(err.to_string().contains("2 entries but document has 3"), "{err}");
    }

    #[test]
    fn round_trip_synthetic_file() {
        let mut instances = Vec::new();
        for i in 0..1000 {
            let m = 2 + i % 4;
            instances.push(MrcInstance {
                id: format!("inst-{i}"),
                document: format!("document {i} has \"quotes\" and unicode é{i} ."),
                question: if i % 5 == 0 { String::new() } else { format!("what about {i} ?") },
                options: (0..m).map(|j| format!("option {j} of {i}")).collect(),
                gold: vec![i % m],
                tags: None,
                option_documents: None,
            });
        }
        let ds = Dataset::new(instances, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        ds.save_jsonl(&path).unwrap();
        let back = Dataset::load_jsonl(&path, false).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn missing_file_is_io() {
        let err = Dataset::load_jsonl(Path::new("/nonexistent/x.jsonl"), false).unwrap_err();
        assert!(err.is_io());
    }

    #[test]
    fn stats() {
        let empty = dataset_stats(&Dataset::default());
        assert_eq!(empty, DatasetStats::default());

        let inst = |id: &str, doc: &str, m: usize, gold: Vec<usize>| MrcInstance {
            id: id.into(),
            document: doc.into(),
            question: "q".into(),
            options: vec!["o".into(); m],
            gold,
            tags: None,
            option_documents: None,
        };
        let ds = Dataset::new(
            vec![inst("a", "x y", 4, vec![0]), inst("b", "x", 4, vec![]), inst("c", "", 4, vec![1])],
            false,
        )
        .unwrap();
        let s = dataset_stats(&ds);
        assert_eq!(s.option_histogram, BTreeMap::from([(4, 3)]));
        assert_eq!(s.labeled, 2);
        assert_eq!(s.mean_document_tokens, 1.0);

        // mixed file against a recount
        let ds = Dataset::new(
            (0..30)
                .map(|i| {
                    inst(
                        &i.to_string(),
                        &"w ".repeat(i),
                        2 + i % 3,
                        if i % 4 == 0 { vec![] } else { vec![0] },
                    )
                })
                .collect(),
            false,
        )
        .unwrap();
        let s = dataset_stats(&ds);
        let mut hist = BTreeMap::new();
        let (mut labeled, mut toks) = (0, 0);
        for i in 0..30usize {
            *hist.entry(2 + i % 3).or_insert(0) += 1;
            labeled += (i % 4 != 0) as usize;
            toks += i;
        }
        assert_eq!(s.option_histogram, hist);
        assert_eq!(s.labeled, labeled);
        assert_eq!(s.mean_document_tokens, toks as f64 / 30.0);
    }

    #[test]
    fn retrieval_examples() {
        let corpus = vec![SentenceEntry::new("a b"), SentenceEntry::new("c d")];
        assert_eq!(retrieve_sentences(&corpus, "", "c", 1), "c d");
        // no overlap: positional order
        assert_eq!(retrieve_sentences(&corpus, "zzz", "", 1), "a b");
        assert_eq!(retrieve_sentences(&corpus, "zzz", "", 5), "a b c d");
        // stopwords are not query terms
        assert_eq!(retrieve_sentences(&corpus, "the", "d", 2), "c d a b");
    }

    #[test]
    fn query_terms_drop_stopwords_and_punctuation() {
        let t = query_terms("What is the boiling point of water?", "100 degrees");
        let got: Vec<&str> = t.iter().map(String::as_str).collect();
        assert_eq!(got, ["100", "boiling", "degrees", "point", "water"]);
    }
}
