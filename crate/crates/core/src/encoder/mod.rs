//! Token encoders: the segment transformer and the convolutional baseline.

pub mod cnn;
pub mod transformer;

pub use cnn::{CnnConfig, CnnEncoder};
pub use transformer::{count_parameters, EncoderConfig, TransformerEncoder};

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::Real;

/// An encoder that maps one fixed-length window of token ids to per-token
/// vectors. Pad positions are excluded as attention keys.
pub trait SegmentEncoder {
    fn seg_len(&self) -> usize;
    fn hidden(&self) -> usize;
    fn encode_segment<T: Real>(&self, tape: &mut Tape<T>, ids: &[u32], pad_mask: &[bool]) -> Result<Var>;
}
