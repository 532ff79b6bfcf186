//! Corpus interchange: line-delimited JSON notes, code lists, label sets and
//! token-length statistics.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::tokenizer::Tokenizer;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: String,
    pub text: String,
    pub codes: Vec<String>,
}

/// Positive label indices of one note, sorted and unique.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct SparseLabels(Vec<usize>);

impl SparseLabels {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Dense 0/1 vector of length `k`.
    pub fn dense<T: num_traits::Float>(&self, k: usize) -> Vec<T> {
        let mut out = vec![T::zero(); k];
        for &i in &self.0 {
            if i < k {
                out[i] = T::one();
            }
        }
        out
    }
}

/// Ordered code vocabulary. Index order is lexicographic over code strings.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelSet {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn from_codes<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = codes.into_iter().map(Into::into).collect();
        let codes: Vec<String> = sorted.into_iter().collect();
        let index = codes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Self { codes, index }
    }

    /// Union of every code in `notes`.
    pub fn from_notes(notes: &[Note]) -> Self {
        Self::from_codes(notes.iter().flat_map(|n| n.codes.iter().cloned()))
    }

    /// One code per line; blank lines ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).context(|| format!("reading code list {}", path.display()))?;
        Ok(Self::from_codes(
            text.lines().map(str::trim).filter(|l| !l.is_empty()),
        ))
    }

    pub fn to_file_contents(&self) -> String {
        self.codes.iter().map(|c| format!("{c}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn code(&self, index: usize) -> Option<&str> {
        self.codes.get(index).map(String::as_str)
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    /// Label vector for `codes`; codes outside the set are counted, not fatal.
    pub fn encode(&self, codes: &[String]) -> (SparseLabels, usize) {
        let mut unknown = 0;
        let mut idx = Vec::with_capacity(codes.len());
        for c in codes {
            match self.index_of(c) {
                Some(i) => idx.push(i),
                None => unknown += 1,
            }
        }
        (SparseLabels::new(idx), unknown)
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<Note>> {
    let file = fs::File::open(path).context(|| format!("opening corpus {}", path.display()))?;
    let mut notes = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let note: Note = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(note.note_id.clone()) {
            return Err(parse_err(format!("duplicate note_id `{}`", note.note_id)));
        }
        notes.push(note);
    }
    Ok(notes)
}

pub fn write_corpus(path: &Path, notes: &[Note]) -> Result<()> {
    let mut out = Vec::new();
    for n in notes {
        serde_json::to_writer(&mut out, n).expect("notes serialize");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).context(|| format!("creating {}", path.display()))?;
    f.write_all(&out).context(|| format!("writing {}", path.display()))
}

/// Empirical CDF of per-note token counts: one `(length, fraction ≤ length)`
/// pair per distinct length, ascending.
pub fn length_cdf(lengths: &[usize]) -> Result<Vec<(usize, f64)>> {
    if lengths.is_empty() {
        return Err(Error::Empty("length CDF of an empty corpus".into()));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (i, &len) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == len => last.1 = frac,
            _ => out.push((len, frac)),
        }
    }
    Ok(out)
}

pub fn token_length_cdf(notes: &[Note], tokenizer: &Tokenizer) -> Result<Vec<(usize, f64)>> {
    let lengths: Vec<usize> = notes.iter().map(|n| tokenizer.tokenize(&n.text).len).collect();
    length_cdf(&lengths)
}

/// Two tab-separated columns, one row per CDF point.
pub fn format_cdf(cdf: &[(usize, f64)]) -> String {
    let mut out = String::from("tokens\tcdf\n");
    for (len, frac) in cdf {
        out.push_str(&format!("{len}\t{frac:.6}\n"));
    }
    out
}
