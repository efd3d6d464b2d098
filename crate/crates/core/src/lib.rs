// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod ctc_align;
pub mod decode;
pub mod dfsmn;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod punc;
pub mod text;
pub mod vad_post;
