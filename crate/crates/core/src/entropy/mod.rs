//! Quantization, the learned factorized prior, rate estimation and the
//! integer range coder.

mod model;
mod quantize;
mod range_coder;
mod tables;

pub use model::{likelihood, rate_bits, rate_bits_with_grad, EntropyModel, FILTERS, LIKELIHOOD_FLOOR};
pub use quantize::{hard_quantize, noisy_quantize, uniform_noise};
pub use range_coder::{range_decode, range_encode, RangeDecoder, RangeEncoder, STREAM_OVERHEAD_BYTES};
pub use tables::{build_coding_tables, ChannelTable, CodingTables, MARGIN, MAX_SYMBOLS, PRECISION, TOTAL};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EntropyError {
    #[error("empty symbol range")]
    EmptyRange,
    #[error("symbol range of {0} values exceeds the table limit")]
    RangeTooWide(usize),
    #[error("expected {expected} channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("{symbols} symbols but {channels} channel indices")]
    LengthMismatch { symbols: usize, channels: usize },
    #[error("invalid coding tables: {0}")]
    BadTables(String),
    #[error("corrupt range-coded data: {0}")]
    Corrupt(String),
    #[error("range-coded data is truncated")]
    Truncated,
    #[error("{0} unexpected trailing bytes after range-coded data")]
    TrailingBytes(usize),
    #[error("symbol checksum mismatch (wrong tables or corrupt data)")]
    ChecksumMismatch,
}

pub type Result<T> = std::result::Result<T, EntropyError>;
