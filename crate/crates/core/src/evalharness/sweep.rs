use std::path::Path;

use super::experiment::{run_experiment, write_atomic, ExperimentConfig, MetricsTable};
use super::metrics::COLUMNS;
use super::HarnessError;
use crate::dataio::manifest::W2V2_LAYERS;
use crate::dataio::{DatasetManifest, Stream};
use crate::fusion::{build_pipeline, FusionMode, PipelineSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub layer: u8,
    pub table: MetricsTable,
}

/// Runs `template` once per w2v2 layer 1..=13 as a single-stream pipeline;
/// the template's streams and fusion mode are ignored.
pub fn layer_sweep(
    manifest: &DatasetManifest,
    template: &PipelineSpec,
    config: &ExperimentConfig,
) -> Result<Vec<SweepPoint>, HarnessError> {
    let available = manifest.w2v2_layers();
    if let Some(missing) = (1..=W2V2_LAYERS).find(|l| !available.contains(l)) {
        return Err(HarnessError::MissingLayer(missing));
    }
    (1..=W2V2_LAYERS)
        .map(|layer| {
            let spec = PipelineSpec {
                streams: vec![Stream::W2v2(layer)],
                fusion: FusionMode::None,
                ..template.clone()
            };
            let pipeline = build_pipeline(spec)?;
            let result = run_experiment(manifest, &pipeline, config)?;
            Ok(SweepPoint {
                layer,
                table: result.table,
            })
        })
        .collect()
}

/// Writes `layersweep.csv` (`layer,R,P,B,I,F,TA`, mean values).
pub fn write_sweep(dir: &Path, points: &[SweepPoint]) -> Result<(), HarnessError> {
    let mut out = format!("layer,{}\n", COLUMNS.join(","));
    for p in points {
        out.push_str(&format!("{},{}\n", p.layer, p.table.mean.csv_cells().join(",")));
    }
    write_atomic(&dir.join("layersweep.csv"), &out)?;
    Ok(())
}
