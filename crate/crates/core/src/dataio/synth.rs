//! Synthetic embedding datasets with controllable class separation.
//!
//! Each emitted stream (the ECAPA-like vectors and every requested w2v2-like
//! layer) gets five class centres `mu_c` placed on orthonormal directions
//! scaled so that `|mu_c - mu_c'| = class_sep` for every pair. A clip draws a
//! centre `mu_c + N(0, clip_noise^2 I)`; w2v2 frames then add
//! `N(0, frame_noise^2 I)` per frame. Streams listed outside `signal_layers`
//! use all-zero centres and carry no class information.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use super::emb::{write_embedding, Tensor};
use super::manifest::{DatasetManifest, ManifestRow, Source, ECAPA_DIM, W2V2_DIM, W2V2_LAYERS};
use super::DataError;
use crate::label::{ClassLabel, NUM_CLASSES};
use crate::seed;

/// Label frequencies in code order (R, P, B, I, F).
pub const DEFAULT_CLASS_PROFILE: [f64; NUM_CLASSES] = [0.10, 0.08, 0.09, 0.15, 0.58];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_podcasts: usize,
    pub clips_per_podcast: usize,
    pub class_sep: f64,
    pub seed: u64,
    /// w2v2 layers to emit.
    pub layers: Vec<u8>,
    /// w2v2 layers whose centres depend on the class.
    pub signal_layers: Vec<u8>,
    pub ecapa: bool,
    pub ecapa_signal: bool,
    /// Inclusive range of frame counts for w2v2 tensors.
    pub frames: (usize, usize),
    pub class_profile: [f64; NUM_CLASSES],
    pub clip_noise: f64,
    pub frame_noise: f64,
}

impl SynthConfig {
    pub fn new(num_podcasts: usize, clips_per_podcast: usize, class_sep: f64, seed: u64) -> Self {
        let all: Vec<u8> = (1..=W2V2_LAYERS).collect();
        Self {
            num_podcasts,
            clips_per_podcast,
            class_sep,
            seed,
            layers: all.clone(),
            signal_layers: all,
            ecapa: true,
            ecapa_signal: true,
            frames: (140, 160),
            class_profile: DEFAULT_CLASS_PROFILE,
            clip_noise: 1.0,
            frame_noise: 1.0,
        }
    }

    /// Emits only the given w2v2 layers (signal in all of them).
    pub fn with_layers(mut self, layers: &[u8]) -> Self {
        self.layers = layers.to_vec();
        self.signal_layers = layers.to_vec();
        self
    }

    fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidArgument(msg));
        if self.num_podcasts < 10 {
            return bad(format!("num_podcasts must be >= 10, got {}", self.num_podcasts));
        }
        if self.clips_per_podcast == 0 {
            return bad("clips_per_podcast must be >= 1".into());
        }
        if !(self.class_sep.is_finite() && self.class_sep >= 0.0) {
            return bad(format!("class_sep must be finite and >= 0, got {}", self.class_sep));
        }
        if self.frames.0 == 0 || self.frames.0 > self.frames.1 {
            return bad(format!("invalid frame range {:?}", self.frames));
        }
        if let Some(l) = self
            .layers
            .iter()
            .chain(&self.signal_layers)
            .find(|l| !Source::W2v2.layer_is_valid(**l))
        {
            return bad(format!("w2v2 layer {l} outside 1..={W2V2_LAYERS}"));
        }
        if !self.ecapa && self.layers.is_empty() {
            return bad("no streams requested".into());
        }
        if self.class_profile.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || self.class_profile.iter().sum::<f64>() <= 0.0
        {
            return bad(format!("invalid class profile {:?}", self.class_profile));
        }
        if !(self.clip_noise >= 0.0 && self.frame_noise >= 0.0) {
            return bad("noise scales must be >= 0".into());
        }
        Ok(())
    }
}

/// Orthonormal class directions scaled to pairwise distance `sep`.
fn class_centres(sep: f64, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let scale = sep / std::f64::consts::SQRT_2;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(NUM_CLASSES);
    while basis.len() < NUM_CLASSES {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
        .into_iter()
        .map(|b| b.into_iter().map(|x| x * scale).collect())
        .collect()
}

const STREAM_ECAPA: u64 = 0;
const TAG_CENTRES: u64 = 1;
const TAG_LABELS: u64 = 2;
const TAG_CLIP: u64 = 3;

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Writes a synthetic dataset under `out_dir` (`manifest.csv` plus `emb/`)
/// and returns its manifest. Output is a pure function of `config`.
pub fn generate_synthetic(config: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest, DataError> {
    config.validate()?;
    let emb_dir = out_dir.join("emb");
    fs::create_dir_all(&emb_dir).map_err(|e| DataError::io(&emb_dir, e))?;

    let zero_or = |signal: bool, dim: usize, stream: u64| {
        if signal {
            let mut rng = seed::rng(config.seed, &[TAG_CENTRES, stream]);
            class_centres(config.class_sep, dim, &mut rng)
        } else {
            vec![vec![0.0; dim]; NUM_CLASSES]
        }
    };
    let ecapa_centres = zero_or(config.ecapa_signal, ECAPA_DIM, STREAM_ECAPA);
    let layer_centres: Vec<(u8, Vec<Vec<f64>>)> = config
        .layers
        .iter()
        .map(|&l| {
            let signal = config.signal_layers.contains(&l);
            (l, zero_or(signal, W2V2_DIM, u64::from(l)))
        })
        .collect();

    let label_dist = WeightedIndex::new(config.class_profile)
        .map_err(|e| DataError::InvalidArgument(e.to_string()))?;
    let mut label_rng = seed::rng(config.seed, &[TAG_LABELS]);

    let mut rows = Vec::new();
    for p in 0..config.num_podcasts {
        let podcast_id = format!("pod{p:03}");
        for c in 0..config.clips_per_podcast {
            let clip_id = format!("{podcast_id}_c{c:04}");
            let label = ClassLabel::from_code(label_dist.sample(&mut label_rng)).unwrap();
            let clip_index = (p * config.clips_per_podcast + c) as u64;
            let mut rng = seed::rng(config.seed, &[TAG_CLIP, clip_index]);

            if config.ecapa {
                let centre = &ecapa_centres[label.code()];
                let data = centre
                    .iter()
                    .map(|m| (m + config.clip_noise * normal(&mut rng)) as f32)
                    .collect();
                let name = format!("{clip_id}_ecapa.emb");
                write_embedding(&Tensor::new(1, ECAPA_DIM, data)?, &emb_dir.join(&name))?;
                rows.push(ManifestRow {
                    clip_id: clip_id.clone(),
                    podcast_id: podcast_id.clone(),
                    label,
                    source: Source::Ecapa,
                    layer: 0,
                    path: format!("emb/{name}"),
                });
            }

            let frames = rng.random_range(config.frames.0..=config.frames.1);
            for (layer, centres) in &layer_centres {
                let centre: Vec<f64> = centres[label.code()]
                    .iter()
                    .map(|m| m + config.clip_noise * normal(&mut rng))
                    .collect();
                let mut data = Vec::with_capacity(frames * W2V2_DIM);
                for _ in 0..frames {
                    data.extend(
                        centre
                            .iter()
                            .map(|m| (m + config.frame_noise * normal(&mut rng)) as f32),
                    );
                }
                let name = format!("{clip_id}_w2v2_L{layer:02}.emb");
                write_embedding(&Tensor::new(frames, W2V2_DIM, data)?, &emb_dir.join(&name))?;
                rows.push(ManifestRow {
                    clip_id: clip_id.clone(),
                    podcast_id: podcast_id.clone(),
                    label,
                    source: Source::W2v2,
                    layer: *layer,
                    path: format!("emb/{name}"),
                });
            }
        }
    }

    let manifest = DatasetManifest::from_rows(rows, out_dir)?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::emb::read_embedding;

    fn small(sep: f64, seed: u64) -> SynthConfig {
        let mut cfg = SynthConfig::new(10, 3, sep, seed).with_layers(&[1, 11]);
        cfg.frames = (4, 6);
        cfg
    }

    #[test]
    fn rejects_bad_arguments() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::new(9, 3, 1.0, 0);
        assert!(matches!(generate_synthetic(&cfg, dir.path()), Err(DataError::InvalidArgument(_))));
        let cfg = SynthConfig::new(10, 3, -1.0, 0);
        assert!(matches!(generate_synthetic(&cfg, dir.path()), Err(DataError::InvalidArgument(_))));
        let cfg = SynthConfig::new(10, 3, 1.0, 0).with_layers(&[14]);
        assert!(matches!(generate_synthetic(&cfg, dir.path()), Err(DataError::InvalidArgument(_))));
    }

    #[test]
    fn shapes_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(&small(3.0, 1), dir.path()).unwrap();
        assert_eq!(m.len(), 10 * 3 * 3);
        let mut frames = Vec::new();
        for row in m.rows() {
            let t = read_embedding(&m.resolve(row)).unwrap();
            assert_eq!(t.cols(), row.source.dim());
            match row.source {
                Source::Ecapa => assert_eq!(t.rows(), 1),
                Source::W2v2 => {
                    assert!((4..=6).contains(&t.rows()));
                    frames.push((row.clip_id.clone(), t.rows()));
                }
            }
        }
        // Both layers of a clip share T.
        for pair in frames.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic(&small(2.0, 9), a.path()).unwrap();
        generate_synthetic(&small(2.0, 9), b.path()).unwrap();
        let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
        assert_eq!(read(a.path(), "manifest.csv"), read(b.path(), "manifest.csv"));
        for f in ["emb/pod000_c0000_ecapa.emb", "emb/pod009_c0002_w2v2_L11.emb"] {
            assert_eq!(read(a.path(), f), read(b.path(), f));
        }

        let c = tempfile::tempdir().unwrap();
        generate_synthetic(&small(2.0, 10), c.path()).unwrap();
        assert_ne!(
            read(a.path(), "emb/pod000_c0000_ecapa.emb"),
            read(c.path(), "emb/pod000_c0000_ecapa.emb")
        );
    }

    #[test]
    fn centres_have_requested_pairwise_distance() {
        let mut rng = seed::rng(3, &[]);
        let centres = class_centres(7.0, 50, &mut rng);
        for i in 0..NUM_CLASSES {
            for j in i + 1..NUM_CLASSES {
                let d: f64 = centres[i]
                    .iter()
                    .zip(&centres[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d - 7.0).abs() < 1e-9, "{d}");
            }
        }
    }
}
