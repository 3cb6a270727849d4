//! Word-level tokenization, sentence splitting, vocabulary construction and
//! a lexicon/suffix part-of-speech tagger.
//!
//! All text is lowercased on the way in, so every downstream comparison
//! (highlight matching, retrieval, question generation) is case-insensitive.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const START: u32 = 1;
pub const DELIM: u32 = 2;
pub const END: u32 = 3;
pub const UNK: u32 = 4;
/// Number of ids reserved for special tokens.
pub const RESERVED: usize = 5;

const RESERVED_SURFACES: [&str; RESERVED] = ["<pad>", "[", "$", "]", "<unk>"];

const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    pub id: u32,
}

/// Splits `text` into lowercased word surfaces.
///
/// After lowercasing, a token is either a maximal run of alphanumeric
/// characters or a single non-alphanumeric, non-whitespace character.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Half-open token range `[start, end)` of one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
}

impl SentenceSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }
}

pub fn is_terminator(surface: &str) -> bool {
    matches!(surface, "." | "!" | "?")
}

/// Splits a token sequence after every terminal punctuation token. A trailing
/// fragment without a terminator forms its own sentence.
pub fn split_sentences<S: AsRef<str>>(tokens: &[S]) -> Vec<SentenceSpan> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if is_terminator(tok.as_ref()) {
            spans.push(SentenceSpan { start, end: i + 1 });
            start = i + 1;
        }
    }
    if start < tokens.len() {
        spans.push(SentenceSpan { start, end: tokens.len() });
    }
    spans
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    surfaces: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from non-reserved surfaces listed in id order.
    pub fn from_surfaces<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut surfaces: Vec<String> = RESERVED_SURFACES.iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::new();
        for word in words {
            let word = word.into();
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid vocabulary entry {word:?}")));
            }
            let id = surfaces.len() as u32;
            if index.insert(word.clone(), id).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary entry {word:?}")));
            }
            surfaces.push(word);
        }
        Ok(Vocab { surfaces, index })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, surface: &str) -> u32 {
        self.index.get(surface).copied().unwrap_or(UNK)
    }

    pub fn get(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    /// Non-reserved surfaces in id order.
    pub fn words(&self) -> &[String] {
        &self.surfaces[RESERVED..]
    }

    pub fn encode<S: AsRef<str>>(&self, surfaces: &[S]) -> Vec<Token> {
        surfaces
            .iter()
            .map(|s| Token {
                surface: s.as_ref().to_string(),
                id: self.id(s.as_ref()),
            })
            .collect()
    }

    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        self.encode(&tokenize(text))
    }
}

/// Keeps the `max_size - RESERVED` most frequent surfaces of `corpus`,
/// breaking frequency ties lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Vocab> {
    if max_size <= RESERVED {
        return Err(Error::invalid(format!(
            "vocabulary max_size must exceed {RESERVED}, got {max_size}"
        )));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for text in corpus {
        for word in tokenize(text.as_ref()) {
            *counts.entry(word).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - RESERVED);
    Vocab::from_surfaces(ranked.into_iter().map(|(w, _)| w))
}

macro_rules! pos_tags {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// Penn Treebank part-of-speech tags plus `None` for punctuation.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum PosTag {
            $($variant),+
        }

        impl PosTag {
            pub const ALL: &'static [PosTag] = &[$(PosTag::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(PosTag::$variant => $name),+
                }
            }
        }

        impl FromStr for PosTag {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(PosTag::$variant),)+
                    other => Err(Error::invalid(format!("unknown POS tag {other:?}"))),
                }
            }
        }
    };
}

pos_tags! {
    Cc => "CC", Cd => "CD", Dt => "DT", Ex => "EX", Fw => "FW", In => "IN",
    Jj => "JJ", Jjr => "JJR", Jjs => "JJS", Ls => "LS", Md => "MD", Nn => "NN",
    Nns => "NNS", Nnp => "NNP", Nnps => "NNPS", Pdt => "PDT", Pos => "POS",
    Prp => "PRP", PrpS => "PRP$", Rb => "RB", Rbr => "RBR", Rbs => "RBS",
    Rp => "RP", Sym => "SYM", To => "TO", Uh => "UH", Vb => "VB", Vbd => "VBD",
    Vbg => "VBG", Vbn => "VBN", Vbp => "VBP", Vbz => "VBZ", Wdt => "WDT",
    Wp => "WP", WpS => "WP$", Wrb => "WRB", None => "NONE",
}

impl PosTag {
    /// Content-word tags: nouns, verbs, adjectives, adverbs, numerals and
    /// foreign words.
    pub fn is_content(self) -> bool {
        use PosTag::*;
        matches!(
            self,
            Nn | Nnp | Nnps | Nns | Vb | Vbd | Vbg | Vbn | Vbp | Vbz | Jj | Jjr | Jjs | Rb | Rbr | Rbs | Cd | Fw
        )
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl serde::Serialize for PosTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for PosTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Closed-lexicon tagger with suffix fallbacks.
///
/// Lookup order: punctuation, lexicon, numerals, `-ing`/`-ly`/`-ed`
/// suffixes, then `NN`.
#[derive(Debug, Clone)]
pub struct Tagger {
    lexicon: HashMap<String, PosTag>,
}

impl Tagger {
    pub fn bundled() -> &'static Tagger {
        static BUNDLED: OnceLock<Tagger> = OnceLock::new();
        BUNDLED.get_or_init(|| Tagger::from_tsv(BUNDLED_LEXICON).expect("bundled lexicon is well-formed"))
    }

    /// Parses `surface<TAB>TAG` lines. Blank lines and `#` comments are skipped.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lexicon = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line
                .split_once('\t')
                .ok_or_else(|| Error::invalid(format!("lexicon line {}: expected surface<TAB>TAG", n + 1)))?;
            let tag: PosTag = tag
                .trim()
                .parse()
                .map_err(|e| Error::invalid(format!("lexicon line {}: {e}", n + 1)))?;
            lexicon.insert(word.trim().to_lowercase(), tag);
        }
        Ok(Tagger { lexicon })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Tagger::from_tsv(&text).map_err(|e| match e {
            Error::Invalid(msg) => Error::Record {
                path: path.to_path_buf(),
                line: 0,
                msg,
            },
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.lexicon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lexicon.is_empty()
    }

    pub fn tag_word(&self, word: &str) -> PosTag {
        if !word.chars().any(char::is_alphanumeric) {
            return PosTag::None;
        }
        if let Some(&tag) = self.lexicon.get(word) {
            return tag;
        }
        if word.chars().all(|c| c.is_ascii_digit()) {
            return PosTag::Cd;
        }
        let len = word.chars().count();
        if len > 4 && word.ends_with("ing") {
            PosTag::Vbg
        } else if len > 3 && word.ends_with("ly") {
            PosTag::Rb
        } else if len > 3 && word.ends_with("ed") {
            PosTag::Vbd
        } else {
            PosTag::Nn
        }
    }

    pub fn tag<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<PosTag> {
        tokens.iter().map(|t| self.tag_word(t.as_ref())).collect()
    }
}

/// Tags with the bundled lexicon.
pub fn pos_tag<S: AsRef<str>>(tokens: &[S]) -> Vec<PosTag> {
    Tagger::bundled().tag(tokens)
}
