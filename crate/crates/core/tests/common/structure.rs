//! Oracles for the windowed encoding: single-window equivalence, locality
//! and ownership of overlapping windows.

use super::rng;
use longdoc::autograd::{ParamStore, Tape};
use longdoc::encoder::{EncoderConfig, SegmentEncoder, TransformerEncoder};
use longdoc::init::allocate;
use longdoc::long_context::{encode_long, padded_len, plan_segments};
use longdoc::tokenizer::TokenSequence;
use rand::Rng;

pub const VOCAB: u32 = 50;

pub struct Fixture {
    pub enc: TransformerEncoder,
    pub params: ParamStore<f32>,
}

pub fn fixture(seg_len: usize, seed: u64) -> Fixture {
    let cfg = EncoderConfig {
        num_blocks: 2,
        hidden: 16,
        heads: 2,
        intermediate: 32,
        vocab_size: VOCAB as usize,
        max_positions: seg_len,
        type_vocab: 2,
        seg_len,
        include_pooler: false,
    };
    let enc = TransformerEncoder::new(cfg, "encoder.").unwrap();
    let mut params = ParamStore::new();
    allocate(&enc.param_specs(), &mut rng(seed), &mut params).unwrap();
    // Wider weights so attention is far from uniform.
    for (name, t) in params.iter_mut() {
        if !name.contains("ln.") && !name.contains("_ln.") {
            t.data_mut().iter_mut().for_each(|x| *x *= 10.0);
        }
    }
    Fixture { enc, params }
}

fn rows(t: &longdoc::Tensor<f32>) -> Vec<Vec<f32>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn long_rows(fx: &Fixture, ids: &[u32], stride: usize) -> Vec<Vec<f32>> {
    let seg_len = fx.enc.seg_len();
    let seq = TokenSequence::new(ids.to_vec());
    let plan = plan_segments(padded_len(seq.len, seg_len, stride).unwrap(), seg_len, stride).unwrap();
    let mut tape = Tape::inference(&fx.params);
    let v = encode_long(&mut tape, &fx.enc, &seq, &plan).unwrap();
    rows(tape.value(v))
}

/// One window holding `ids` (which must fit), padded and masked.
pub fn window_rows(fx: &Fixture, ids: &[u32]) -> Vec<Vec<f32>> {
    let seg_len = fx.enc.seg_len();
    let mut padded = ids.to_vec();
    padded.resize(seg_len, 0);
    let mask: Vec<bool> = (0..seg_len).map(|i| i >= ids.len()).collect();
    let mut tape = Tape::inference(&fx.params);
    let v = fx.enc.encode_segment(&mut tape, &padded, &mask).unwrap();
    rows(tape.value(v))
}

fn ids(r: &mut impl Rng, n: usize) -> Vec<u32> {
    (0..n).map(|_| r.gen_range(1..VOCAB)).collect()
}

/// Largest deviation between windowed encoding and a single window for
/// every `s ≤ seg_len`, with disjoint and overlapping plans.
pub fn single_window_equivalence() -> f32 {
    let seg_len = 8;
    let fx = fixture(seg_len, 1);
    let mut r = rng(2);
    let mut worst = 0.0f32;
    for s in 1..=seg_len {
        for stride in [0, 3] {
            let x = ids(&mut r, s);
            let long = long_rows(&fx, &x, stride);
            let single = window_rows(&fx, &x);
            assert_eq!(long.len(), s);
            for (a, b) in long.iter().zip(&single) {
                for (u, v) in a.iter().zip(b) {
                    worst = worst.max((u - v).abs());
                }
            }
        }
    }
    worst
}

/// Perturbs one token and counts rows outside its window that changed
/// (must be zero) and trials where its own window did not change at all.
pub fn locality_violations(trials: usize) -> (usize, usize) {
    let seg_len = 8;
    let fx = fixture(seg_len, 3);
    let mut r = rng(4);
    let (mut leaked, mut inert) = (0, 0);
    for _ in 0..trials {
        let s = r.gen_range(seg_len + 1..=4 * seg_len);
        let x = ids(&mut r, s);
        let base = long_rows(&fx, &x, 0);
        let p = r.gen_range(0..s);
        let mut y = x.clone();
        y[p] = if x[p] == 1 { 2 } else { 1 };
        let moved = long_rows(&fx, &y, 0);
        let mut own_changed = false;
        for i in 0..s {
            let same = base[i] == moved[i];
            if i / seg_len == p / seg_len {
                own_changed |= !same;
            } else if !same {
                leaked += 1;
            }
        }
        if !own_changed {
            inert += 1;
        }
    }
    (leaked, inert)
}

/// With overlapping windows every output row must equal the row computed by
/// the window whose centre is nearest (earlier window on ties). Returns the
/// number of rows that differ.
pub fn overlap_ownership_mismatches() -> usize {
    let seg_len = 8;
    let fx = fixture(seg_len, 5);
    let mut r = rng(6);
    let mut bad = 0;
    for (s, stride) in [(21, 4), (30, 2), (9, 6), (40, 5)] {
        let x = ids(&mut r, s);
        let out = long_rows(&fx, &x, stride);
        let step = seg_len - stride;
        let mut starts = vec![0];
        while starts.last().unwrap() + seg_len < s {
            starts.push(starts.last().unwrap() + step);
        }
        let windows: Vec<Vec<Vec<f32>>> = starts
            .iter()
            .map(|&st| window_rows(&fx, &x[st..(st + seg_len).min(s)]))
            .collect();
        for pos in 0..s {
            let centre = |st: usize| ((2 * st + seg_len) as i64 - (2 * pos) as i64).abs();
            let w = (0..starts.len())
                .filter(|&w| starts[w] <= pos && pos < starts[w] + seg_len)
                .min_by_key(|&w| (centre(starts[w]), w))
                .unwrap();
            if out[pos] != windows[w][pos - starts[w]] {
                bad += 1;
            }
        }
    }
    bad
}
