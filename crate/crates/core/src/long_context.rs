//! Splitting long token sequences into windows, encoding each window
//! independently and stitching per-token vectors back together.
//!
//! With `stride == 0` the windows tile the padded sequence. With
//! `0 < stride < seg_len` consecutive windows share `stride` tokens and every
//! position takes its vector from the window where it sits closest to the
//! centre (earlier window on ties).

use crate::autograd::{Tape, Var};
use crate::encoder::SegmentEncoder;
use crate::error::{Error, Result};
use crate::tensor::Real;
use crate::tokenizer::TokenSequence;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentPlan {
    pub seg_len: usize,
    pub stride: usize,
    /// Half-open `(start, end)` token ranges.
    pub segments: Vec<(usize, usize)>,
    /// For each padded position, the index of the window it is read from.
    pub owner: Vec<usize>,
}

impl SegmentPlan {
    pub fn padded_len(&self) -> usize {
        self.owner.len()
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }
}

fn step(seg_len: usize, stride: usize) -> Result<usize> {
    if seg_len == 0 {
        return Err(Error::Config("seg_len must be at least 1".into()));
    }
    if stride >= seg_len {
        return Err(Error::Config(format!(
            "seg_stride {stride} must be smaller than seg_len {seg_len}"
        )));
    }
    Ok(seg_len - stride)
}

/// Smallest padded length that holds `len` tokens in whole windows.
pub fn padded_len(len: usize, seg_len: usize, stride: usize) -> Result<usize> {
    let step = step(seg_len, stride)?;
    let extra = len.saturating_sub(seg_len);
    Ok(seg_len + extra.div_ceil(step) * step)
}

pub fn plan_segments(padded_len: usize, seg_len: usize, stride: usize) -> Result<SegmentPlan> {
    let step = step(seg_len, stride)?;
    if padded_len < seg_len || (padded_len - seg_len) % step != 0 {
        return Err(Error::Config(format!(
            "padded length {padded_len} is not covered by windows of {seg_len} advancing by {step}"
        )));
    }
    let count = (padded_len - seg_len) / step + 1;
    let segments: Vec<(usize, usize)> = (0..count).map(|w| (w * step, w * step + seg_len)).collect();

    let mut owner = vec![0; padded_len];
    for (pos, slot) in owner.iter_mut().enumerate() {
        // twice the distance to the window centre (start + seg_len/2), kept integral
        let mut best = (usize::MAX, 0);
        for (w, &(start, end)) in segments.iter().enumerate() {
            if pos < start || pos >= end {
                continue;
            }
            let dist = (2 * pos).abs_diff(2 * start + seg_len);
            if dist < best.0 {
                best = (dist, w);
            }
        }
        *slot = best.1;
    }
    Ok(SegmentPlan {
        seg_len,
        stride,
        segments,
        owner,
    })
}

/// Row indices into the concatenation of all window outputs that pick each
/// real token's vector from its owner window.
pub fn owner_rows(plan: &SegmentPlan, len: usize) -> Vec<usize> {
    (0..len)
        .map(|pos| {
            let w = plan.owner[pos];
            w * plan.seg_len + (pos - plan.segments[w].0)
        })
        .collect()
}

/// Encodes every window of `seq` in order and returns an `s×d` matrix with
/// one row per real token.
pub fn encode_long<T: Real, E: SegmentEncoder>(
    tape: &mut Tape<T>,
    encoder: &E,
    seq: &TokenSequence,
    plan: &SegmentPlan,
) -> Result<Var> {
    if plan.seg_len != encoder.seg_len() {
        return Err(Error::Config(format!(
            "plan windows are {} tokens, encoder expects {}",
            plan.seg_len,
            encoder.seg_len()
        )));
    }
    let len = seq.len;
    if len == 0 {
        return Err(Error::Empty("document has no tokens".into()));
    }
    if plan.padded_len() < len {
        return Err(Error::Config(format!(
            "plan covers {} positions but the sequence has {len} tokens",
            plan.padded_len()
        )));
    }
    let real = seq.real();
    let mut outputs = Vec::with_capacity(plan.num_segments());
    let mut ids = vec![0u32; plan.seg_len];
    let mut mask = vec![true; plan.seg_len];
    for &(start, end) in &plan.segments {
        for (k, pos) in (start..end).enumerate() {
            let is_real = pos < len;
            ids[k] = if is_real { real[pos] } else { 0 };
            mask[k] = !is_real;
        }
        outputs.push(encoder.encode_segment(tape, &ids, &mask)?);
    }
    let all = if outputs.len() == 1 {
        outputs[0]
    } else {
        tape.concat_rows(&outputs)?
    };
    tape.select_rows(all, &owner_rows(plan, len))
}
