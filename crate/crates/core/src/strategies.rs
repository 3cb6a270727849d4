//! Input construction: segment order schemes, highlight masks and the
//! per-option token sequences fed to the model.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::MrcInstance;
use crate::error::{Error, Result};
use crate::text::{tokenize, PosTag, Tagger, Token, Vocab, DELIM, END, START};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Segment {
    Document,
    Question,
    Option,
}

impl Segment {
    fn letter(self) -> char {
        match self {
            Segment::Document => 'd',
            Segment::Question => 'q',
            Segment::Option => 'o',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_lowercase() {
            'd' => Some(Segment::Document),
            'q' => Some(Segment::Question),
            'o' => Some(Segment::Option),
            _ => None,
        }
    }
}

/// Which segments precede and which follow the delimiter token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OrderScheme {
    pre: Vec<Segment>,
    post: Vec<Segment>,
}

impl OrderScheme {
    pub fn new(pre: Vec<Segment>, post: Vec<Segment>) -> Result<Self> {
        let mut seen = HashSet::new();
        let all_unique = pre.iter().chain(&post).all(|s| seen.insert(*s));
        if pre.is_empty() || post.is_empty() || !all_unique || seen.len() != 3 {
            return Err(Error::invalid(format!(
                "order scheme must split document, question and option once each around the delimiter (got {}:{})",
                pre.iter().map(|s| s.letter()).collect::<String>(),
                post.iter().map(|s| s.letter()).collect::<String>()
            )));
        }
        Ok(OrderScheme { pre, post })
    }

    /// `[d q $ o]`, the conventional layout.
    pub fn dq_o() -> Self {
        use Segment::*;
        OrderScheme {
            pre: vec![Document, Question],
            post: vec![Option],
        }
    }

    /// `[o $ q d]`, the reverse of [`OrderScheme::dq_o`].
    pub fn o_qd() -> Self {
        Self::dq_o().reversed()
    }

    pub fn qd_o() -> Self {
        use Segment::*;
        OrderScheme {
            pre: vec![Question, Document],
            post: vec![Option],
        }
    }

    pub fn o_dq() -> Self {
        Self::qd_o().reversed()
    }

    /// All 12 valid schemes.
    pub fn all() -> Vec<OrderScheme> {
        use Segment::*;
        let perms = [
            [Document, Question, Option],
            [Document, Option, Question],
            [Question, Document, Option],
            [Question, Option, Document],
            [Option, Document, Question],
            [Option, Question, Document],
        ];
        let mut out = Vec::with_capacity(12);
        for p in perms {
            for split in 1..3 {
                out.push(OrderScheme {
                    pre: p[..split].to_vec(),
                    post: p[split..].to_vec(),
                });
            }
        }
        out
    }

    pub fn pre(&self) -> &[Segment] {
        &self.pre
    }

    pub fn post(&self) -> &[Segment] {
        &self.post
    }

    /// The scheme whose segment sequence is this one read backwards.
    pub fn reversed(&self) -> Self {
        OrderScheme {
            pre: self.post.iter().rev().copied().collect(),
            post: self.pre.iter().rev().copied().collect(),
        }
    }
}

pub fn reverse_scheme(scheme: &OrderScheme) -> OrderScheme {
    scheme.reversed()
}

impl fmt::Display for OrderScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.pre {
            write!(f, "{}", s.letter())?;
        }
        f.write_str("_")?;
        for s in &self.post {
            write!(f, "{}", s.letter())?;
        }
        Ok(())
    }
}

impl FromStr for OrderScheme {
    type Err = Error;

    /// Accepts `dq_o` style names and the `PRE:POST` form (`qd:o`).
    fn from_str(s: &str) -> Result<Self> {
        let (pre, post) = s
            .split_once(['_', ':'])
            .ok_or_else(|| Error::invalid(format!("unrecognized scheme {s:?}; expected e.g. dq_o or qd:o")))?;
        let parse = |part: &str| -> Result<Vec<Segment>> {
            part.chars()
                .map(|c| Segment::from_letter(c).ok_or_else(|| Error::invalid(format!("unknown segment {c:?} in scheme {s:?}"))))
                .collect()
        };
        OrderScheme::new(parse(pre)?, parse(post)?)
    }
}

impl Serialize for OrderScheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OrderScheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One bit per (truncated) document token: set when the token is a content
/// word that also occurs in the question or the option.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HighlightMask(pub Vec<bool>);

impl HighlightMask {
    pub fn zeros(len: usize) -> Self {
        HighlightMask(vec![false; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn truncate(&mut self, len: usize) {
        self.0.truncate(len);
    }
}

pub fn compute_highlight_mask<S: AsRef<str>>(doc: &[S], tags: &[PosTag], question: &[S], option: &[S]) -> Result<HighlightMask> {
    if doc.len() != tags.len() {
        return Err(Error::TagMismatch {
            tokens: doc.len(),
            tags: tags.len(),
        });
    }
    let context: HashSet<&str> = question.iter().chain(option).map(AsRef::as_ref).collect();
    Ok(HighlightMask(
        doc.iter()
            .zip(tags)
            .map(|(tok, tag)| tag.is_content() && context.contains(tok.as_ref()))
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Start,
    Document,
    Question,
    Delim,
    Option,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltSequence {
    pub ids: Vec<u32>,
    pub labels: Vec<Label>,
    /// For each position, the index of the document token placed there.
    pub doc_index: Vec<Option<usize>>,
    /// Number of document tokens kept after truncation.
    pub doc_len: usize,
}

impl BuiltSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Position of the END token.
    pub fn end_position(&self) -> usize {
        self.ids.len() - 1
    }
}

/// Lays out `[START pre.. DELIM post.. END]`. The document loses tokens from
/// its tail until the whole sequence fits; question and option are never cut.
pub fn build_sequence(doc: &[Token], question: &[Token], option: &[Token], scheme: &OrderScheme, max_len: usize) -> Result<BuiltSequence> {
    let needed = 4 + question.len() + option.len();
    if needed > max_len {
        return Err(Error::TooLong { needed, max_len });
    }
    let doc_len = doc.len().min(max_len - needed);
    let cap = 3 + doc_len + question.len() + option.len();
    let mut seq = BuiltSequence {
        ids: Vec::with_capacity(cap),
        labels: Vec::with_capacity(cap),
        doc_index: Vec::with_capacity(cap),
        doc_len,
    };
    let push = |seq: &mut BuiltSequence, id: u32, label: Label, di: Option<usize>| {
        seq.ids.push(id);
        seq.labels.push(label);
        seq.doc_index.push(di);
    };
    let emit = |seq: &mut BuiltSequence, segment: Segment| match segment {
        Segment::Document => {
            for (j, t) in doc[..doc_len].iter().enumerate() {
                push(seq, t.id, Label::Document, Some(j));
            }
        }
        Segment::Question => {
            for t in question {
                push(seq, t.id, Label::Question, None);
            }
        }
        Segment::Option => {
            for t in option {
                push(seq, t.id, Label::Option, None);
            }
        }
    };
    push(&mut seq, START, Label::Start, None);
    for &s in scheme.pre() {
        emit(&mut seq, s);
    }
    push(&mut seq, DELIM, Label::Delim, None);
    for &s in scheme.post() {
        emit(&mut seq, s);
    }
    push(&mut seq, END, Label::End, None);
    Ok(seq)
}

/// Model input for one answer option.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptionInput {
    pub seq: BuiltSequence,
    pub mask: HighlightMask,
}

/// Turns instances into per-option model inputs.
#[derive(Debug, Clone)]
pub struct Encoder<'a> {
    pub vocab: &'a Vocab,
    pub tagger: &'a Tagger,
    pub scheme: OrderScheme,
    pub max_len: usize,
}

impl<'a> Encoder<'a> {
    pub fn new(vocab: &'a Vocab, tagger: &'a Tagger, scheme: OrderScheme, max_len: usize) -> Self {
        Encoder {
            vocab,
            tagger,
            scheme,
            max_len,
        }
    }

    pub fn encode_option(&self, inst: &MrcInstance, option: usize) -> Result<OptionInput> {
        let doc_words = tokenize(inst.document_for(option));
        let q_words = tokenize(&inst.question);
        let o_words = tokenize(&inst.options[option]);
        let tags = match inst.document_tags() {
            Some(tags) => tags,
            None => self.tagger.tag(&doc_words),
        };
        let mut mask = compute_highlight_mask(&doc_words, &tags, &q_words, &o_words)?;
        let seq = build_sequence(
            &self.vocab.encode(&doc_words),
            &self.vocab.encode(&q_words),
            &self.vocab.encode(&o_words),
            &self.scheme,
            self.max_len,
        )?;
        mask.truncate(seq.doc_len);
        Ok(OptionInput { seq, mask })
    }

    pub fn encode(&self, inst: &MrcInstance) -> Result<Vec<OptionInput>> {
        (0..inst.options.len())
            .map(|i| self.encode_option(inst, i))
            .collect::<Result<_>>()
            .map_err(|e| Error::invalid(format!("instance {:?}: {e}", inst.id)))
    }
}
