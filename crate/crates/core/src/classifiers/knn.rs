use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use super::{decide, ClassifierError, DecisionRule, Scored};
use crate::dataio::{read_embedding, write_embedding, DataError, Tensor};
use crate::features::FeatureMatrix;
use crate::label::{ClassLabel, NUM_CLASSES};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_P: f64 = 2.0;

/// `(sum |x_i - y_i|^p)^(1/p)`.
pub fn minkowski_distance(x: &[f64], y: &[f64], p: f64) -> Result<f64, ClassifierError> {
    if x.len() != y.len() {
        return Err(ClassifierError::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if !(p >= 1.0) {
        return Err(ClassifierError::InvalidOrder(p));
    }
    Ok(distance(x, y, p))
}

#[inline]
fn distance(x: &[f64], y: &[f64], p: f64) -> f64 {
    let diffs = x.iter().zip(y).map(|(a, b)| (a - b).abs());
    if p == 2.0 {
        diffs.map(|d| d * d).sum::<f64>().sqrt()
    } else if p == 1.0 {
        diffs.sum()
    } else if p.is_infinite() {
        diffs.fold(0.0, f64::max)
    } else {
        diffs.map(|d| d.powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Lazy nearest-neighbour store.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    /// Row-major `n x dim` training vectors.
    store: Vec<f64>,
    labels: Vec<ClassLabel>,
    dim: usize,
    k: usize,
    p: f64,
}

pub fn knn_fit(train: &FeatureMatrix, k: usize, p: f64) -> Result<KnnModel, ClassifierError> {
    let rows: Vec<Vec<f64>> = (0..train.nrows()).map(|i| train.row(i)).collect();
    KnnModel::new(&rows, train.labels().to_vec(), k, p)
}

impl KnnModel {
    pub fn new(
        rows: &[Vec<f64>],
        labels: Vec<ClassLabel>,
        k: usize,
        p: f64,
    ) -> Result<Self, ClassifierError> {
        if k == 0 {
            return Err(ClassifierError::InvalidK);
        }
        if !(p >= 1.0) {
            return Err(ClassifierError::InvalidOrder(p));
        }
        if labels.len() != rows.len() {
            return Err(ClassifierError::DimensionMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        if rows.len() < k {
            return Err(ClassifierError::InsufficientData { k, n: rows.len() });
        }
        let dim = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(ClassifierError::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        Ok(Self {
            store: rows.concat(),
            labels,
            dim,
            k,
            p,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `k` nearest training rows as `(distance, row)`, ascending, ties
    /// by lower row index.
    pub fn neighbours(&self, query: &[f64]) -> Result<Vec<(f64, usize)>, ClassifierError> {
        if query.len() != self.dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        let mut d: Vec<(f64, usize)> = self
            .store
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, row)| (distance(row, query, self.p), i))
            .collect();
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, by_distance_then_index);
            d.truncate(self.k);
        }
        d.sort_unstable_by(by_distance_then_index);
        Ok(d)
    }

    /// Vote fractions plus a tiebreak of minus the summed voter distance.
    pub fn score(&self, query: &[f64]) -> Result<Scored, ClassifierError> {
        let neighbours = self.neighbours(query)?;
        let mut votes = [0usize; NUM_CLASSES];
        let mut dist = [0.0f64; NUM_CLASSES];
        for &(d, i) in &neighbours {
            let c = self.labels[i].code();
            votes[c] += 1;
            dist[c] += d;
        }
        let mut scored = Scored::new([0.0; NUM_CLASSES]);
        for c in 0..NUM_CLASSES {
            scored.proba[c] = votes[c] as f64 / self.k as f64;
            scored.tiebreak[c] = -dist[c];
        }
        Ok(scored)
    }

    pub fn predict(&self, query: &[f64]) -> Result<(ClassLabel, Scored), ClassifierError> {
        let scored = self.score(query)?;
        Ok((decide(&scored, DecisionRule::Argmax), scored))
    }

    /// Writes `store.emb`, `labels.csv` and `scalars.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ClassifierError> {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        let t = Tensor::new(
            self.len(),
            self.dim,
            self.store.iter().map(|&v| v as f32).collect(),
        )?;
        write_embedding(&t, &dir.join("store.emb"))?;
        let mut labels = String::from("label\n");
        for l in &self.labels {
            labels.push_str(l.name());
            labels.push('\n');
        }
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| DataError::io(&path, e))
        };
        write("labels.csv", labels)?;
        write("scalars.csv", format!("key,value\nk,{}\np,{}\n", self.k, self.p))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ClassifierError> {
        let t = read_embedding(&dir.join("store.emb"))?;
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| ClassifierError::Data(DataError::io(&path, e)))
        };
        let labels: Vec<ClassLabel> = read("labels.csv")?
            .lines()
            .skip(1)
            .map(|l| l.parse().map_err(|_| ClassifierError::Malformed(l.to_string())))
            .collect::<Result<_, _>>()?;
        let scalars = read("scalars.csv")?;
        let get = |key: &str| -> Result<f64, ClassifierError> {
            scalars
                .lines()
                .find_map(|l| l.strip_prefix(key)?.strip_prefix(',')?.parse().ok())
                .ok_or_else(|| ClassifierError::Malformed(key.to_string()))
        };
        let rows: Vec<Vec<f64>> = (0..t.rows())
            .map(|i| t.row(i).iter().map(|&v| f64::from(v)).collect())
            .collect();
        Self::new(&rows, labels, get("k")? as usize, get("p")?)
    }
}

/// Class probabilities for one query.
pub fn knn_predict_proba(model: &KnnModel, query: &[f64]) -> Result<[f64; NUM_CLASSES], ClassifierError> {
    Ok(model.score(query)?.proba)
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::*;

    #[test]
    fn distance_examples() {
        assert_eq!(minkowski_distance(&[0.0, 0.0], &[3.0, 4.0], 2.0).unwrap(), 5.0);
        assert_eq!(minkowski_distance(&[1.5, -2.0], &[1.5, -2.0], 3.0).unwrap(), 0.0);
        assert_eq!(minkowski_distance(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], 1.0).unwrap(), 6.0);
        assert!(matches!(
            minkowski_distance(&[1.0], &[1.0, 2.0], 2.0),
            Err(ClassifierError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            minkowski_distance(&[1.0], &[2.0], 0.5),
            Err(ClassifierError::InvalidOrder(_))
        ));
        let d = minkowski_distance(&[0.0, 0.0], &[1.0, 1.0], 3.0).unwrap();
        assert!((d - 2f64.powf(1.0 / 3.0)).abs() < 1e-15);
    }

    fn line(labels: &[ClassLabel]) -> KnnModel {
        let rows: Vec<Vec<f64>> = (0..labels.len()).map(|i| vec![i as f64]).collect();
        KnnModel::new(&rows, labels.to_vec(), 5, 2.0).unwrap()
    }

    #[test]
    fn fit_boundaries() {
        let five = FeatureMatrix::from_rows(&vec![vec![0.0]; 5], vec![Fluent; 5]).unwrap();
        let m = knn_fit(&five, DEFAULT_K, DEFAULT_P).unwrap();
        assert_eq!((m.k(), m.p()), (5, 2.0));
        let four = FeatureMatrix::from_rows(&vec![vec![0.0]; 4], vec![Fluent; 4]).unwrap();
        assert!(matches!(
            knn_fit(&four, 5, 2.0),
            Err(ClassifierError::InsufficientData { k: 5, n: 4 })
        ));
    }

    #[test]
    fn unanimous_and_majority_votes() {
        let m = line(&[Fluent; 5]);
        assert_eq!(knn_predict_proba(&m, &[2.0]).unwrap(), [0.0, 0.0, 0.0, 0.0, 1.0]);

        let m = line(&[Block, Fluent, Block, Fluent, Block, Repetition]);
        let (label, s) = m.predict(&[0.0]).unwrap();
        assert_eq!(label, Block);
        assert_eq!(s.proba, [0.0, 0.0, 0.6, 0.0, 0.4]);
    }

    #[test]
    fn vote_tie_goes_to_closer_voters() {
        // Neighbours at distances 0..4 labelled F,B,B,F,P: F and B tie on
        // votes and on summed distance (3 each), so the lower code wins.
        let m = line(&[Fluent, Block, Block, Fluent, Prolongation]);
        assert_eq!(m.predict(&[0.0]).unwrap().0, Block);
        // Shift so F voters are closer: F = 0 + 1, B = 2 + 3.
        let m = line(&[Fluent, Fluent, Block, Block, Prolongation]);
        assert_eq!(m.predict(&[0.0]).unwrap().0, Fluent);
    }

    #[test]
    fn distance_ties_prefer_lower_row() {
        // Rows 0..6 all at distance 1 from the query; only the first five vote.
        let rows = vec![vec![1.0]; 6];
        let labels = vec![Fluent, Fluent, Fluent, Block, Block, Block];
        let m = KnnModel::new(&rows, labels, 5, 2.0).unwrap();
        let n = m.neighbours(&[0.0]).unwrap();
        assert_eq!(n.iter().map(|x| x.1).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(m.predict(&[0.0]).unwrap().1.proba[Fluent.code()], 0.6);
    }

    #[test]
    fn save_load() {
        let m = line(&[Fluent, Block, Block, Fluent, Prolongation, Interjection]);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        assert_eq!(KnnModel::load(dir.path()).unwrap(), m);
    }
}
