//! On-disk embedding format, the clip manifest, dataset loading, and
//! synthetic data generation.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod emb;
pub mod load;
pub mod manifest;
pub mod synth;

pub use emb::{read_embedding, write_embedding, Tensor};
pub use load::{load_stream, Stream};
pub use manifest::{load_manifest, validate_manifest, DatasetManifest, ManifestRow, Source};
pub use synth::{generate_synthetic, SynthConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("bad magic {0:?}, expected \"EMB1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported EMB1 version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported EMB1 dtype {0}")]
    UnsupportedDtype(u8),
    #[error("payload is {actual} bytes, header implies {expected}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },
    #[error("tensor must have at least one row and one column")]
    EmptyTensor,
    #[error("tensor data has {actual} values, shape implies {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("tensor dimensions exceed the u32 header fields")]
    TooLarge,
    #[error("manifest header must be exactly clip_id,podcast_id,label,source,layer,path")]
    MissingHeader,
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: invalid {field} {value:?}")]
    InvalidField {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("duplicate key (clip_id={clip_id}, source={src}, layer={layer})")]
    DuplicateKey {
        clip_id: String,
        src: Source,
        layer: u8,
    },
    #[error("embedding file not found: {0}")]
    UnresolvablePath(PathBuf),
    #[error("{path}: {rows}x{cols} tensor does not fit source {src}")]
    HeaderMismatch {
        path: PathBuf,
        src: Source,
        rows: usize,
        cols: usize,
    },
    #[error("manifest has no rows for {src} layer {layer}")]
    MissingStream { src: Source, layer: u8 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, err: csv::Error) -> Self {
        DataError::Csv {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }
}
