//! Training runs shared by the training tests and the acceptance suite.

use std::fs;
use std::path::Path;

use longdoc::corpus::{Note, SparseLabels};
use longdoc::encoder::{CnnConfig, EncoderConfig};
use longdoc::metrics::{evaluate, EvalReport};
use longdoc::model::{EncoderSpec, Model, ModelConfig, TextPipeline};
use longdoc::optim::AdamState;
use longdoc::synthetic::{generate_synthetic, SyntheticCorpus, SyntheticSpec};
use longdoc::tokenizer::{Tokenizer, Vocab};
use longdoc::training::{example_loss, format_log, predict_all, train_loop, train_step, Example, TrainConfig};

pub const SEG_LEN: usize = 64;
pub const DOC_LEN: usize = 4 * SEG_LEN;
/// Learning rate for the toy runs; 2e-4 needs far more steps than a test
/// budget allows at this width.
pub const TOY_LR: f32 = 1e-3;
/// The CNN has no normalization between its embeddings and the head, so it
/// needs a larger step to leave the near-zero initialization.
pub const CNN_LR: f32 = 1e-2;
/// Learning rate for fitting a single example.
pub const OVERFIT_LR: f32 = 1e-2;

/// Train, validation and test splits with every length in the same units.
pub fn long_corpus_spec(placement: (usize, usize)) -> SyntheticSpec {
    SyntheticSpec {
        num_codes: 20,
        vocab_size: 2000,
        doc_len: (DOC_LEN, DOC_LEN),
        phrases_per_code: 2,
        phrase_len: 2,
        placement,
        codes_per_note: (1, 3),
        train: 2000,
        val: 200,
        test: 200,
        seed: 7,
    }
}

pub fn examples(notes: &[Note], pipeline: &TextPipeline, corpus: &SyntheticCorpus) -> Vec<Example> {
    notes
        .iter()
        .map(|n| Example {
            ids: pipeline.encode(&n.text).ids,
            labels: corpus.labels.encode(&n.codes).0,
        })
        .collect()
}

pub fn toy_transformer(num_labels: usize, vocab: usize, max_seq_len: usize) -> ModelConfig {
    ModelConfig {
        num_labels,
        seg_stride: 0,
        max_seq_len,
        encoder: EncoderSpec::Transformer(EncoderConfig {
            num_blocks: 1,
            hidden: 32,
            heads: 2,
            intermediate: 128,
            vocab_size: vocab,
            max_positions: SEG_LEN,
            type_vocab: 2,
            seg_len: SEG_LEN,
            include_pooler: false,
        }),
    }
}

pub fn toy_cnn(num_labels: usize, vocab: usize, max_seq_len: usize) -> ModelConfig {
    ModelConfig {
        num_labels,
        seg_stride: 0,
        max_seq_len,
        encoder: EncoderSpec::Cnn(CnnConfig {
            embed_dim: 32,
            filters: 32,
            kernel: 9,
            max_words: max_seq_len,
            vocab_size: vocab,
        }),
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub label: String,
    pub seq_len: usize,
    pub best_step: usize,
    pub val_f1: f64,
    pub test: EvalReport,
    pub seconds: f64,
}

/// Trains on the corpus splits and reports test metrics of the best
/// validation checkpoint at its selected threshold.
pub fn train_and_test(
    label: &str,
    corpus: &SyntheticCorpus,
    pipeline: &TextPipeline,
    config: ModelConfig,
    steps: usize,
    lr: f32,
) -> RunResult {
    let started = std::time::Instant::now();
    let seq_len = config.max_seq_len;
    let train = examples(&corpus.train, pipeline, corpus);
    let val = examples(&corpus.val, pipeline, corpus);
    let test = examples(&corpus.test, pipeline, corpus);
    let mut model = Model::new(config, 1).unwrap();
    let cfg = TrainConfig {
        lr,
        batch_size: 4,
        max_steps: steps,
        eval_every: 250,
        seed: 1,
        ..TrainConfig::default()
    };
    let outcome = train_loop(&mut model, &train, &val, &cfg, &mut ()).unwrap();
    model.params = outcome.best.params.clone();
    let preds = predict_all(&model, &test).unwrap();
    RunResult {
        label: label.to_string(),
        seq_len,
        best_step: outcome.best.step,
        val_f1: outcome.best.f1,
        test: evaluate(&preds, outcome.best.threshold),
        seconds: started.elapsed().as_secs_f64(),
    }
}

pub fn wordpiece(corpus: &SyntheticCorpus) -> TextPipeline {
    TextPipeline::WordPiece(Tokenizer::new(corpus.vocab.clone()))
}

pub fn words(corpus: &SyntheticCorpus) -> TextPipeline {
    TextPipeline::Words(Vocab::build_word_vocab(corpus.train.iter().map(|n| n.text.as_str()), 3))
}

/// One model per truncation length on the corpus with evidence spread over
/// the whole note.
pub fn long_context_runs(lengths: &[usize], steps: usize) -> Vec<RunResult> {
    let corpus = generate_synthetic(&long_corpus_spec((0, DOC_LEN - 2))).unwrap();
    let pipeline = wordpiece(&corpus);
    lengths
        .iter()
        .map(|&s| {
            let cfg = toy_transformer(corpus.labels.len(), corpus.vocab.len(), s);
            train_and_test("segmented transformer", &corpus, &pipeline, cfg, steps, TOY_LR)
        })
        .collect()
}

/// Both encoders on the corpus whose evidence sits in the first window.
pub fn encoder_comparison(transformer_steps: usize, cnn_steps: usize) -> Vec<RunResult> {
    let corpus = generate_synthetic(&long_corpus_spec((0, SEG_LEN))).unwrap();
    let wp = wordpiece(&corpus);
    let wd = words(&corpus);
    let k = corpus.labels.len();
    vec![
        train_and_test(
            "segmented transformer",
            &corpus,
            &wp,
            toy_transformer(k, corpus.vocab.len(), DOC_LEN),
            transformer_steps,
            TOY_LR,
        ),
        train_and_test(
            "cnn",
            &corpus,
            &wd,
            toy_cnn(k, wd.vocab().len(), DOC_LEN),
            cnn_steps,
            CNN_LR,
        ),
    ]
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |x| format!("{x:.3}"))
}

/// Rows of model, sequence length, micro F1, precision, recall, PR-AUC and
/// ROC-AUC.
pub fn comparison_table(runs: &[RunResult]) -> String {
    let mut s = format!(
        "{:<24} {:>8} {:>9} {:>9} {:>9} {:>8} {:>8}\n",
        "model", "seq_len", "micro_f1", "precision", "recall", "pr_auc", "roc_auc"
    );
    for r in runs {
        s.push_str(&format!(
            "{:<24} {:>8} {:>9.3} {:>9.3} {:>9.3} {:>8} {:>8}\n",
            r.label,
            r.seq_len,
            r.test.micro_f1,
            r.test.micro_precision,
            r.test.micro_recall,
            fmt_opt(r.test.pr_auc),
            fmt_opt(r.test.roc_auc)
        ));
    }
    s
}

/// Steps until one example's loss drops below `target` (None if it never
/// does within `max_steps`), and the last loss seen.
pub fn overfit_single_example(max_steps: usize, target: f64, lr: f32) -> (Option<usize>, f64) {
    let config = ModelConfig {
        num_labels: 4,
        seg_stride: 0,
        max_seq_len: 24,
        encoder: EncoderSpec::Transformer(EncoderConfig {
            num_blocks: 1,
            hidden: 16,
            heads: 2,
            intermediate: 64,
            vocab_size: 30,
            max_positions: 8,
            type_vocab: 2,
            seg_len: 8,
            include_pooler: false,
        }),
    };
    let mut model = Model::new(config, 3).unwrap();
    let ex = Example {
        ids: vec![3, 17, 5, 9, 22, 4, 4, 11, 28, 1, 6, 13, 2, 19, 8, 7, 25, 14, 10],
        labels: SparseLabels::new(vec![1, 3]),
    };
    let mut state = AdamState::new(&model.params, lr);
    let mut last = f64::INFINITY;
    for step in 0..=max_steps {
        last = example_loss(&model.predict(&ex.ids).unwrap(), &ex.labels);
        if last < target {
            return (Some(step), last);
        }
        if step < max_steps {
            train_step(&mut model, &[&ex], &mut state).unwrap();
        }
    }
    (None, last)
}

/// Metrics log of a 50-step run on a small synthetic corpus.
pub fn fifty_step_log(seed: u64) -> String {
    let spec = SyntheticSpec {
        num_codes: 5,
        vocab_size: 100,
        doc_len: (20, 40),
        placement: (0, 30),
        train: 40,
        val: 10,
        test: 0,
        seed: 3,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic(&spec).unwrap();
    let pipeline = wordpiece(&corpus);
    let train = examples(&corpus.train, &pipeline, &corpus);
    let val = examples(&corpus.val, &pipeline, &corpus);
    let config = ModelConfig {
        num_labels: 5,
        seg_stride: 0,
        max_seq_len: 32,
        encoder: EncoderSpec::Transformer(EncoderConfig {
            num_blocks: 1,
            hidden: 16,
            heads: 2,
            intermediate: 32,
            vocab_size: corpus.vocab.len(),
            max_positions: 16,
            type_vocab: 2,
            seg_len: 16,
            include_pooler: false,
        }),
    };
    let mut model = Model::new(config, seed).unwrap();
    let cfg = TrainConfig {
        lr: TOY_LR,
        max_steps: 50,
        eval_every: 10,
        seed,
        ..TrainConfig::default()
    };
    let outcome = train_loop(&mut model, &train, &val, &cfg, &mut ()).unwrap();
    format_log(&outcome.log)
}

/// Writes the corpus for `seed` into `dir` and returns every file's bytes.
pub fn corpus_bytes(seed: u64, dir: &Path) -> Vec<(String, Vec<u8>)> {
    let spec = SyntheticSpec {
        train: 200,
        val: 20,
        test: 20,
        seed,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec).unwrap().write(dir).unwrap();
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let bytes = fs::read(dir.join(&n)).unwrap();
            (n, bytes)
        })
        .collect()
}

