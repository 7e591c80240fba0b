//! WordPiece tokenization over a fixed vocabulary.
//!
//! Vocabulary files are plain text with one token per line; the line number
//! (0-based) is the token id. Files must contain `[PAD]`, `[UNK]`, `[CLS]`,
//! `[SEP]` and `[MASK]`. The anonymization placeholders `[PERSON]` and
//! `[LOC]` may be present verbatim; otherwise they take over the slots of
//! `[unused0]` and `[unused1]`, which every BERT-style 30522-token file has.
//! `[SEP]` doubles as the end-of-caption token.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const PERSON: &str = "[PERSON]";
pub const LOC: &str = "[LOC]";

/// Vocabulary size of the standard uncased WordPiece inventory.
pub const BERT_VOCAB_SIZE: usize = 30522;

const MAX_WORD_CHARS: usize = 100;
const CONTINUATION: &str = "##";

/// Small vocabulary bundled for tests and examples.
pub const TEST_VOCAB: &str = include_str!("../data/test_vocab.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
    pub person: u32,
    pub loc: u32,
}

impl SpecialIds {
    pub fn all(&self) -> [u32; 7] {
        [
            self.pad,
            self.unk,
            self.cls,
            self.sep,
            self.mask,
            self.person,
            self.loc,
        ]
    }

    /// End-of-caption marker.
    pub fn eos(&self) -> u32 {
        self.sep
    }
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    special: SpecialIds,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        for (placeholder, slot) in [(PERSON, "[unused0]"), (LOC, "[unused1]")] {
            if !tokens.iter().any(|t| t == placeholder) {
                match tokens.iter().position(|t| t == slot) {
                    Some(i) => tokens[i] = placeholder.to_string(),
                    None => {
                        return Err(invalid(format!(
                            "vocabulary has neither {placeholder} nor {slot}"
                        )))
                    }
                }
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(invalid(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        let id = |t: &str| {
            index
                .get(t)
                .copied()
                .ok_or_else(|| invalid(format!("vocabulary lacks special token {t}")))
        };
        let special = SpecialIds {
            pad: id(PAD)?,
            unk: id(UNK)?,
            cls: id(CLS)?,
            sep: id(SEP)?,
            mask: id(MASK)?,
            person: id(PERSON)?,
            loc: id(LOC)?,
        };
        Ok(Self {
            tokens,
            index,
            special,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r')).filter(|l| !l.is_empty()))
    }

    /// Loads a vocabulary file, optionally checking its size.
    pub fn load(path: impl AsRef<Path>, expected_size: Option<usize>) -> Result<Self> {
        let v = Self::parse(&fs::read_to_string(path)?)?;
        if let Some(n) = expected_size {
            if v.len() != n {
                return Err(invalid(format!(
                    "vocabulary has {} tokens, expected {n}",
                    v.len()
                )));
            }
        }
        Ok(v)
    }

    pub fn bundled_test() -> Self {
        Self::parse(TEST_VOCAB).expect("bundled vocabulary is valid")
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange {
                id,
                size: self.tokens.len(),
            })
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special.all().contains(&id)
    }

    /// Control tokens that carry no surface text.
    fn is_control(&self, id: u32) -> bool {
        let s = self.special;
        [s.pad, s.cls, s.sep, s.mask].contains(&id)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Token ids with parallel special-token flags.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub is_special: Vec<bool>,
}

impl TokenSeq {
    pub fn from_ids(ids: Vec<u32>, vocab: &Vocabulary) -> Result<Self> {
        for &id in &ids {
            vocab.token(id)?;
        }
        let is_special = ids.iter().map(|&i| vocab.is_special(i)).collect();
        Ok(Self { ids, is_special })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn truncate(&mut self, n: usize) {
        self.ids.truncate(n);
        self.is_special.truncate(n);
    }

    pub fn push(&mut self, id: u32, special: bool) {
        self.ids.push(id);
        self.is_special.push(special);
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_ascii() && !c.is_alphanumeric() && !c.is_whitespace())
}

/// Lowercases and splits on whitespace and punctuation, keeping the
/// placeholder tokens intact.
fn pre_split(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let keep = [
        PERSON.to_lowercase(),
        LOC.to_lowercase(),
        MASK.to_lowercase(),
        UNK.to_lowercase(),
    ];
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut rest = lower.as_str();
    'outer: while let Some(c) = rest.chars().next() {
        if c == '[' {
            for k in &keep {
                if rest.starts_with(k.as_str()) {
                    if !cur.is_empty() {
                        words.push(std::mem::take(&mut cur));
                    }
                    words.push(k.to_uppercase());
                    rest = &rest[k.len()..];
                    continue 'outer;
                }
            }
        }
        if c.is_whitespace() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
        } else if is_punct(c) {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            words.push(c.to_string());
        } else {
            cur.push(c);
        }
        rest = &rest[c.len_utf8()..];
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// Greedy longest-match-first segmentation of one word.
fn wordpiece(word: &str, vocab: &Vocabulary) -> Vec<u32> {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > MAX_WORD_CHARS {
        return vec![vocab.special.unk];
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while start < end {
            let mut piece: String = chars[start..end].iter().collect();
            if start > 0 {
                piece.insert_str(0, CONTINUATION);
            }
            if let Some(id) = vocab.id(&piece) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        match found {
            Some(id) => {
                out.push(id);
                start = end;
            }
            None => return vec![vocab.special.unk],
        }
    }
    out
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSeq {
    let mut seq = TokenSeq::default();
    for word in pre_split(text) {
        if let Some(id) = vocab.id(&word).filter(|&id| vocab.is_special(id)) {
            seq.push(id, true);
            continue;
        }
        for id in wordpiece(&word, vocab) {
            seq.push(id, vocab.is_special(id));
        }
    }
    seq
}

/// Joins word pieces back into text, dropping control tokens.
pub fn detokenize(seq: &TokenSeq, vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for &id in &seq.ids {
        let tok = vocab.token(id)?;
        if vocab.is_control(id) {
            continue;
        }
        match tok.strip_prefix(CONTINUATION) {
            Some(rest) if !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    Ok(out)
}
