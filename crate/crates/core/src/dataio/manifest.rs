use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::emb;
use super::DataError;
use crate::label::ClassLabel;

pub const MANIFEST_HEADER: [&str; 6] = ["clip_id", "podcast_id", "label", "source", "layer", "path"];

pub const ECAPA_DIM: usize = 192;
pub const W2V2_DIM: usize = 768;
pub const W2V2_LAYERS: u8 = 13;

/// Which upstream extractor produced an embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Ecapa,
    W2v2,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Ecapa => "ecapa",
            Source::W2v2 => "w2v2",
        }
    }

    /// Feature width every tensor of this source must have.
    pub fn dim(self) -> usize {
        match self {
            Source::Ecapa => ECAPA_DIM,
            Source::W2v2 => W2V2_DIM,
        }
    }

    pub fn layer_is_valid(self, layer: u8) -> bool {
        match self {
            Source::Ecapa => layer == 0,
            Source::W2v2 => (1..=W2V2_LAYERS).contains(&layer),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ecapa" => Ok(Source::Ecapa),
            "w2v2" => Ok(Source::W2v2),
            other => Err(format!("unknown source {other:?} (expected ecapa or w2v2)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub clip_id: String,
    pub podcast_id: String,
    pub label: ClassLabel,
    pub source: Source,
    pub layer: u8,
    /// Path exactly as written in the CSV.
    pub path: String,
}

/// Validated clip inventory. Rows keep file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    rows: Vec<ManifestRow>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    /// Builds a manifest from rows, checking key uniqueness and per-source
    /// layer ranges. Paths are not touched.
    pub fn from_rows(rows: Vec<ManifestRow>, base_dir: impl Into<PathBuf>) -> Result<Self, DataError> {
        let mut seen = HashSet::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if !row.source.layer_is_valid(row.layer) {
                return Err(DataError::InvalidField {
                    line: i + 2,
                    field: "layer",
                    value: row.layer.to_string(),
                });
            }
            if !seen.insert((row.clip_id.as_str(), row.source, row.layer)) {
                return Err(DataError::DuplicateKey {
                    clip_id: row.clip_id.clone(),
                    src: row.source,
                    layer: row.layer,
                });
            }
        }
        Ok(Self {
            rows,
            base_dir: base_dir.into(),
        })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Resolves a row's path; relative paths are taken from the manifest's directory.
    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Rows of one embedding stream, in manifest order.
    pub fn stream(&self, source: Source, layer: u8) -> impl Iterator<Item = &ManifestRow> {
        self.rows
            .iter()
            .filter(move |r| r.source == source && r.layer == layer)
    }

    pub fn w2v2_layers(&self) -> Vec<u8> {
        let mut layers: Vec<u8> = self
            .rows
            .iter()
            .filter(|r| r.source == Source::W2v2)
            .map(|r| r.layer)
            .collect();
        layers.sort_unstable();
        layers.dedup();
        layers
    }

    /// Writes the manifest as CSV to `path`.
    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| DataError::csv(path, e))?;
        w.write_record(MANIFEST_HEADER).map_err(|e| DataError::csv(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.clip_id.as_str(),
                r.podcast_id.as_str(),
                r.label.name(),
                r.source.name(),
                &r.layer.to_string(),
                r.path.as_str(),
            ])
            .map_err(|e| DataError::csv(path, e))?;
        }
        w.flush().map_err(|e| DataError::io(path, e))
    }
}

/// Loads and validates a manifest CSV. Every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| DataError::csv(path, e))?;
    let mut records = reader.records();

    match records.next() {
        Some(Ok(header)) if header.iter().eq(MANIFEST_HEADER.iter().copied()) => {}
        Some(Err(e)) => return Err(DataError::csv(path, e)),
        _ => return Err(DataError::MissingHeader),
    }

    let mut rows = Vec::new();
    for (i, record) in records.enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| DataError::csv(path, e))?;
        if record.len() != MANIFEST_HEADER.len() {
            return Err(DataError::InvalidField {
                line,
                field: "row",
                value: record.iter().collect::<Vec<_>>().join(","),
            });
        }
        let label = record[2]
            .parse::<ClassLabel>()
            .map_err(|_| DataError::UnknownLabel {
                line,
                label: record[2].to_string(),
            })?;
        let source = record[3].parse::<Source>().map_err(|_| DataError::InvalidField {
            line,
            field: "source",
            value: record[3].to_string(),
        })?;
        let layer = record[4].parse::<u8>().map_err(|_| DataError::InvalidField {
            line,
            field: "layer",
            value: record[4].to_string(),
        })?;
        rows.push(ManifestRow {
            clip_id: record[0].to_string(),
            podcast_id: record[1].to_string(),
            label,
            source,
            layer,
            path: record[5].to_string(),
        });
    }

    let manifest = DatasetManifest::from_rows(rows, base_dir)?;
    for row in manifest.rows() {
        let resolved = manifest.resolve(row);
        if !resolved.is_file() {
            return Err(DataError::UnresolvablePath(resolved));
        }
    }
    Ok(manifest)
}

/// Summary returned by a successful deep validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationSummary {
    pub rows: usize,
    pub clips: usize,
    pub podcasts: usize,
    pub ecapa_rows: usize,
    pub w2v2_layers: Vec<u8>,
}

/// Reads every embedding referenced by the manifest and checks shape and
/// finiteness against its source. Reads only; writes nothing.
pub fn validate_manifest(manifest: &DatasetManifest) -> Result<ValidationSummary, DataError> {
    for row in manifest.rows() {
        let path = manifest.resolve(row);
        let tensor = emb::read_embedding(&path)?;
        let rows_ok = match row.source {
            Source::Ecapa => tensor.rows() == 1,
            Source::W2v2 => tensor.rows() >= 1,
        };
        if !rows_ok || tensor.cols() != row.source.dim() {
            return Err(DataError::HeaderMismatch {
                path,
                src: row.source,
                rows: tensor.rows(),
                cols: tensor.cols(),
            });
        }
    }
    let clips: HashSet<&str> = manifest.rows().iter().map(|r| r.clip_id.as_str()).collect();
    let podcasts: HashSet<&str> = manifest.rows().iter().map(|r| r.podcast_id.as_str()).collect();
    Ok(ValidationSummary {
        rows: manifest.len(),
        clips: clips.len(),
        podcasts: podcasts.len(),
        ecapa_rows: manifest.stream(Source::Ecapa, 0).count(),
        w2v2_layers: manifest.w2v2_layers(),
    })
}
