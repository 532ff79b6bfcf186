//! Planted-evidence corpora: filler pseudo-words with per-code evidence
//! phrases inserted at controlled token positions.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, LabelSet, Note};
use crate::error::{Error, IoContext, Result};
use crate::tokenizer::{Vocab, CLS, CONTINUATION, PAD, SEP, UNK};

const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z', 'h'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];
const WORD_SYLLABLES: u32 = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_codes: usize,
    /// Number of distinct filler words.
    pub vocab_size: usize,
    /// Inclusive range of note lengths, in words (one word is one token).
    pub doc_len: (usize, usize),
    pub phrases_per_code: usize,
    pub phrase_len: usize,
    /// Inclusive range for the first token of each inserted phrase.
    pub placement: (usize, usize),
    pub codes_per_note: (usize, usize),
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_codes: 20,
            vocab_size: 2000,
            doc_len: (256, 256),
            phrases_per_code: 2,
            phrase_len: 2,
            placement: (0, 254),
            codes_per_note: (1, 3),
            train: 2000,
            val: 200,
            test: 200,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_codes == 0 || self.vocab_size == 0 || self.phrases_per_code == 0 || self.phrase_len == 0 {
            return bad("num_codes, vocab_size, phrases_per_code and phrase_len must be positive".into());
        }
        let (dmin, dmax) = self.doc_len;
        let (lo, hi) = self.placement;
        let (cmin, cmax) = self.codes_per_note;
        if dmin == 0 || dmin > dmax {
            return bad(format!("invalid doc length range [{dmin}, {dmax}]"));
        }
        if lo > hi || hi > dmax {
            return bad(format!("placement range [{lo}, {hi}] must lie within doc length {dmax}"));
        }
        if cmin > cmax || cmax > self.num_codes {
            return bad(format!("codes per note [{cmin}, {cmax}] invalid for {} codes", self.num_codes));
        }
        if lo + cmax * self.phrase_len > dmin {
            return bad(format!(
                "{cmax} phrases of {} words starting at {lo} do not fit in {dmin} words",
                self.phrase_len
            ));
        }
        let needed = self.vocab_size + self.num_codes * self.phrases_per_code * self.phrase_len;
        if needed as u64 > word_space() {
            return bad(format!("cannot create {needed} distinct pseudo-words"));
        }
        Ok(())
    }
}

fn word_space() -> u64 {
    ((CONSONANTS.len() * VOWELS.len()) as u64).pow(WORD_SYLLABLES)
}

fn syllable(i: usize) -> String {
    let c = CONSONANTS[i / VOWELS.len()];
    let v = VOWELS[i % VOWELS.len()];
    format!("{c}{v}")
}

fn pseudo_word(mut index: u64) -> String {
    let base = (CONSONANTS.len() * VOWELS.len()) as u64;
    let mut w = String::new();
    for _ in 0..WORD_SYLLABLES {
        w.push_str(&syllable((index % base) as usize));
        index /= base;
    }
    w
}

/// `C00`, `C01`, … zero-padded so lexicographic order is numeric order.
pub fn code_name(i: usize, num_codes: usize) -> String {
    let width = num_codes.saturating_sub(1).to_string().len();
    format!("C{i:0width$}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub train: Vec<Note>,
    pub val: Vec<Note>,
    pub test: Vec<Note>,
    pub labels: LabelSet,
    pub vocab: Vocab,
    pub filler: Vec<String>,
    /// `phrases[c][j]` is the j-th evidence phrase of code `c`.
    pub phrases: Vec<Vec<Vec<String>>>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_evidence = spec.num_codes * spec.phrases_per_code * spec.phrase_len;
    let picks = sample(&mut rng, word_space() as usize, spec.vocab_size + n_evidence);
    let mut words = picks.into_iter().map(|i| pseudo_word(i as u64));
    let phrases: Vec<Vec<Vec<String>>> = (0..spec.num_codes)
        .map(|_| {
            (0..spec.phrases_per_code)
                .map(|_| words.by_ref().take(spec.phrase_len).collect())
                .collect()
        })
        .collect();
    let filler: Vec<String> = words.collect();
    let codes: Vec<String> = (0..spec.num_codes).map(|c| code_name(c, spec.num_codes)).collect();

    let make = |split: &str, n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Note>> {
        (0..n).map(|i| make_note(spec, &format!("{split}-{i:05}"), &filler, &phrases, &codes, rng)).collect()
    };
    let train = make("train", spec.train, &mut rng)?;
    let val = make("val", spec.val, &mut rng)?;
    let test = make("test", spec.test, &mut rng)?;

    let vocab = synthetic_vocab(&filler, &phrases)?;
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        train,
        val,
        test,
        labels: LabelSet::from_codes(codes),
        vocab,
        filler,
        phrases,
    })
}

fn make_note(
    spec: &SyntheticSpec,
    id: &str,
    filler: &[String],
    phrases: &[Vec<Vec<String>>],
    codes: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<Note> {
    let len = rng.gen_range(spec.doc_len.0..=spec.doc_len.1);
    let mut words: Vec<&str> = (0..len).map(|_| filler[rng.gen_range(0..filler.len())].as_str()).collect();
    let n_codes = rng.gen_range(spec.codes_per_note.0..=spec.codes_per_note.1);
    let mut chosen: Vec<usize> = sample(rng, spec.num_codes, n_codes).into_vec();
    chosen.sort_unstable();

    let plen = spec.phrase_len;
    let hi = spec.placement.1.min(len - plen);
    let lo = spec.placement.0.min(hi);
    let mut starts: Vec<(usize, usize, usize)> = chosen
        .iter()
        .map(|&c| (rng.gen_range(lo..=hi), c, rng.gen_range(0..spec.phrases_per_code)))
        .collect();
    starts.sort_unstable();
    // Overlapping phrases are pushed right, then back left if they ran
    // past the end.
    let mut next_free = 0;
    for (start, _, _) in starts.iter_mut() {
        *start = (*start).max(next_free);
        next_free = *start + plen;
    }
    let mut limit = len;
    for (start, _, _) in starts.iter_mut().rev() {
        if *start + plen > limit {
            *start = limit.checked_sub(plen).ok_or_else(|| {
                Error::Config(format!("note {id}: evidence phrases overflow {len} words"))
            })?;
        }
        limit = *start;
    }
    for &(start, c, j) in &starts {
        for (k, w) in phrases[c][j].iter().enumerate() {
            words[start + k] = w;
        }
    }
    Ok(Note {
        note_id: id.to_string(),
        text: words.join(" "),
        codes: chosen.iter().map(|&c| codes[c].clone()).collect(),
    })
}

/// Specials, every whole word, then bare and `##` syllables so unseen
/// pseudo-words still tokenize.
fn synthetic_vocab(filler: &[String], phrases: &[Vec<Vec<String>>]) -> Result<Vocab> {
    let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
    tokens.extend(filler.iter().cloned());
    tokens.extend(phrases.iter().flatten().flatten().cloned());
    let syllables: Vec<String> = (0..CONSONANTS.len() * VOWELS.len()).map(syllable).collect();
    tokens.extend(syllables.iter().cloned());
    tokens.extend(syllables.iter().map(|s| format!("{CONTINUATION}{s}")));
    Vocab::from_tokens(tokens)
}

impl SyntheticCorpus {
    /// Writes `train.jsonl`, `val.jsonl`, `test.jsonl`, `codes.txt`,
    /// `vocab.txt` and `evidence.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
        write_corpus(&dir.join("train.jsonl"), &self.train)?;
        write_corpus(&dir.join("val.jsonl"), &self.val)?;
        write_corpus(&dir.join("test.jsonl"), &self.test)?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).context(|| format!("writing {}", p.display()))
        };
        put("codes.txt", self.labels.to_file_contents())?;
        put("vocab.txt", self.vocab.to_file_contents())?;
        let mut evidence = String::from("code\tphrase\n");
        for (c, list) in self.phrases.iter().enumerate() {
            for p in list {
                evidence.push_str(&format!("{}\t{}\n", code_name(c, self.spec.num_codes), p.join(" ")));
            }
        }
        put("evidence.tsv", evidence)
    }
}

/// Exact string-search classifier: a code is present iff one of its
/// evidence phrases occurs as consecutive words.
#[derive(Clone, Debug)]
pub struct OracleClassifier {
    phrase_len: usize,
    num_codes: usize,
    lookup: HashMap<Vec<String>, usize>,
}

impl OracleClassifier {
    pub fn new(corpus: &SyntheticCorpus) -> Self {
        let mut lookup = HashMap::new();
        for (c, list) in corpus.phrases.iter().enumerate() {
            for p in list {
                lookup.insert(p.clone(), c);
            }
        }
        Self {
            phrase_len: corpus.spec.phrase_len,
            num_codes: corpus.phrases.len(),
            lookup,
        }
    }

    /// 0/1 score per code, in label index order.
    pub fn scores(&self, text: &str) -> Vec<f64> {
        let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        let mut out = vec![0.0; self.num_codes];
        for w in words.windows(self.phrase_len) {
            if let Some(&c) = self.lookup.get(w) {
                out[c] = 1.0;
            }
        }
        out
    }
}
