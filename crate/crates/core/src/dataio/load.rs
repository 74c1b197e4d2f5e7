use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::manifest::{DatasetManifest, Source};
use super::{read_embedding, DataError};
use crate::features::{statistical_pool, FeatureMatrix};

/// One embedding stream of the manifest: ECAPA vectors or one w2v2 layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    Ecapa,
    W2v2(u8),
}

impl Stream {
    pub fn source(self) -> Source {
        match self {
            Stream::Ecapa => Source::Ecapa,
            Stream::W2v2(_) => Source::W2v2,
        }
    }

    pub fn layer(self) -> u8 {
        match self {
            Stream::Ecapa => 0,
            Stream::W2v2(l) => l,
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stream::Ecapa => f.write_str("ecapa"),
            Stream::W2v2(l) => write!(f, "w2v2_L{l}"),
        }
    }
}

impl FromStr for Stream {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ecapa" {
            return Ok(Stream::Ecapa);
        }
        s.strip_prefix("w2v2_L")
            .and_then(|l| l.parse().ok())
            .map(Stream::W2v2)
            .ok_or_else(|| format!("unknown stream {s:?}"))
    }
}

/// Loads one stream as a feature matrix in manifest order. w2v2 tensors are
/// mean+std pooled over frames (2 x 768 columns); ECAPA vectors are used raw
/// (192 columns).
pub fn load_stream(manifest: &DatasetManifest, stream: Stream) -> Result<FeatureMatrix, DataError> {
    let rows: Vec<_> = manifest.stream(stream.source(), stream.layer()).collect();
    if rows.is_empty() {
        return Err(DataError::MissingStream {
            src: stream.source(),
            layer: stream.layer(),
        });
    }
    let vectors: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|row| {
            let path = manifest.resolve(row);
            let tensor = read_embedding(&path)?;
            if tensor.cols() != row.source.dim() || (row.source == Source::Ecapa && tensor.rows() != 1) {
                return Err(DataError::HeaderMismatch {
                    path,
                    src: row.source,
                    rows: tensor.rows(),
                    cols: tensor.cols(),
                });
            }
            match row.source {
                Source::Ecapa => Ok(tensor.data().iter().map(|&v| f64::from(v)).collect()),
                Source::W2v2 => {
                    statistical_pool(&tensor).map_err(|e| DataError::InvalidArgument(e.to_string()))
                }
            }
        })
        .collect::<Result<_, _>>()?;

    let k = vectors[0].len();
    let values = DMatrix::from_fn(vectors.len(), k, |i, j| vectors[i][j]);
    FeatureMatrix::new(
        values,
        rows.iter().map(|r| r.label).collect(),
        rows.iter().map(|r| r.podcast_id.clone()).collect(),
        rows.iter().map(|r| r.clip_id.clone()).collect(),
    )
    .map_err(|e| DataError::InvalidArgument(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{generate_synthetic, SynthConfig};

    #[test]
    fn stream_names_round_trip() {
        for s in [Stream::Ecapa, Stream::W2v2(1), Stream::W2v2(13)] {
            assert_eq!(s.to_string().parse::<Stream>().unwrap(), s);
        }
        assert!("w2v2".parse::<Stream>().is_err());
    }

    #[test]
    fn loads_pooled_and_raw_streams() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SynthConfig::new(10, 2, 1.0, 4).with_layers(&[7]);
        cfg.frames = (3, 5);
        let m = generate_synthetic(&cfg, dir.path()).unwrap();
        let e = load_stream(&m, Stream::Ecapa).unwrap();
        assert_eq!((e.nrows(), e.ncols()), (20, 192));
        let w = load_stream(&m, Stream::W2v2(7)).unwrap();
        assert_eq!((w.nrows(), w.ncols()), (20, 1536));
        assert_eq!(e.clip_ids(), w.clip_ids());
        assert!(matches!(
            load_stream(&m, Stream::W2v2(8)),
            Err(DataError::MissingStream { layer: 8, .. })
        ));
    }
}
