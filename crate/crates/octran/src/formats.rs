//! Shared error type for the binary/text container formats
//! (`TNSR`, `OCGR`, PFM, PLY, dataset shards, checkpoints).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{format}: bad magic {found:?}")]
    BadMagic { format: &'static str, found: String },
    #[error("{format}: unsupported version {version}")]
    UnsupportedVersion { format: &'static str, version: u32 },
    #[error("pfm: unsupported channel layout (expected grayscale `Pf`)")]
    UnsupportedChannels,
    #[error("{format}: bad header: {detail}")]
    BadHeader { format: &'static str, detail: String },
    #[error("{format}: truncated payload")]
    Truncated { format: &'static str },
    #[error("{format}: trailing data after payload")]
    TrailingData { format: &'static str },
    #[error("{format}: {detail}")]
    Invalid { format: &'static str, detail: String },
}
