//! WordPiece tokenization with a fixed vocabulary.
//!
//! Text is lowercased, split on whitespace and punctuation, and each word is
//! broken into the longest vocabulary pieces from the left, with non-initial
//! pieces carrying the `##` prefix. A word that cannot be fully covered
//! becomes a single `[UNK]`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const CONTINUATION: &str = "##";
/// Words longer than this many characters map straight to `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    unk: u32,
}

impl Vocab {
    /// Builds a vocabulary where token `i` gets id `i`. `[PAD]` must come
    /// first and `[UNK]` must be present.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.first().map(String::as_str) != Some(PAD) {
            return Err(Error::Config(format!("vocabulary must start with {PAD}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token `{t}`")));
            }
        }
        let unk = *index
            .get(UNK)
            .ok_or_else(|| Error::Config(format!("vocabulary lacks {UNK}")))?;
        Ok(Self { tokens, index, unk })
    }

    /// One token per line; the line number is the id.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).context(|| format!("reading vocabulary {}", path.display()))?;
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r')))
    }

    pub fn to_file_contents(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whole-word vocabulary: `[PAD]`, `[UNK]`, then every word seen at least
    /// `min_freq` times, most frequent first (ties alphabetical).
    pub fn build_word_vocab<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in basic_split(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq && w != PAD && w != UNK)
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [PAD.to_string(), UNK.to_string()]
            .into_iter()
            .chain(words.into_iter().map(|(w, _)| w));
        Self::from_tokens(tokens).expect("specials are first and words are unique")
    }

    /// Whole-word lookup with `[UNK]` for anything not in the vocabulary.
    pub fn lookup_words(&self, text: &str) -> TokenSequence {
        TokenSequence::new(
            basic_split(text)
                .iter()
                .map(|w| self.id(w).unwrap_or(self.unk))
                .collect(),
        )
    }
}

/// Token ids of one note, possibly followed by `[PAD]`s.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Number of real tokens before any padding.
    pub len: usize,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        let len = ids.len();
        Self { ids, len }
    }

    pub fn real(&self) -> &[u32] {
        &self.ids[..self.len]
    }

    /// Keeps at most `max_len` real tokens and drops any padding.
    pub fn truncated(&self, max_len: usize) -> Self {
        let len = self.len.min(max_len);
        Self {
            ids: self.ids[..len].to_vec(),
            len,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    vocab: Vocab,
    /// Surround the whole note with `[CLS]` … `[SEP]`.
    pub wrap_special: bool,
}

impl Tokenizer {
    pub fn new(vocab: Vocab) -> Self {
        Self {
            vocab,
            wrap_special: false,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        if self.wrap_special {
            ids.extend(self.vocab.id(CLS));
        }
        for word in basic_split(text) {
            self.wordpiece(&word, &mut ids);
        }
        if self.wrap_special {
            ids.extend(self.vocab.id(SEP));
        }
        TokenSequence::new(ids)
    }

    /// Pieces for a single word, as strings.
    pub fn pieces(&self, word: &str) -> Vec<&str> {
        let mut ids = Vec::new();
        self.wordpiece(word, &mut ids);
        ids.iter().filter_map(|&i| self.vocab.token(i)).collect()
    }

    fn wordpiece(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(self.vocab.unk);
            return;
        }
        let mark = out.len();
        let mut start = 0;
        let mut candidate = String::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.extend(&chars[start..end]);
                if let Some(id) = self.vocab.id(&candidate) {
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
                None => {
                    out.truncate(mark);
                    out.push(self.vocab.unk);
                    return;
                }
            }
        }
    }

    /// Joins pieces back into space-separated words, merging `##` pieces.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let Some(tok) = self.vocab.token(id) else { continue };
            if tok == PAD {
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
        out
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own word.
pub fn basic_split(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() || c.is_control() {
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
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// Number of `seg_len` windows needed for `len` real tokens (at least one).
pub fn num_segments(len: usize, seg_len: usize) -> usize {
    len.div_ceil(seg_len).max(1)
}

/// Pads with `[PAD]` up to the next multiple of `seg_len`.
pub fn pad_to_multiple(seq: &TokenSequence, seg_len: usize) -> Result<TokenSequence> {
    if seg_len == 0 {
        return Err(Error::Config("segment length must be at least 1".into()));
    }
    let target = num_segments(seq.len, seg_len) * seg_len;
    let mut ids = seq.real().to_vec();
    ids.resize(target, 0);
    Ok(TokenSequence { ids, len: seq.len })
}
