use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;

use super::HarnessError;
use crate::seed;

pub const NUM_FOLDS: usize = 10;

/// Podcast roles for one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub eval: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Valid,
    Eval,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Valid => "valid",
            Role::Eval => "eval",
        }
    }
}

/// Row indices of one fold's three roles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldRows {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub eval: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    folds: Vec<Fold>,
}

/// Shuffles the distinct podcast ids with `seed` and cuts them into 10
/// contiguous blocks (the first `n % 10` blocks one larger). Fold `i`
/// evaluates on block `i`, validates on block `i + 1 mod 10` and trains on
/// the remaining eight.
pub fn make_folds(podcast_ids: &[String], seed: u64) -> Result<FoldPlan, HarnessError> {
    let mut ids: Vec<String> = podcast_ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() < NUM_FOLDS {
        return Err(HarnessError::TooFewPodcasts {
            found: ids.len(),
            needed: NUM_FOLDS,
        });
    }
    ids.shuffle(&mut seed::rng(seed, &[0xF01D]));
    let (base, extra) = (ids.len() / NUM_FOLDS, ids.len() % NUM_FOLDS);
    let mut blocks = Vec::with_capacity(NUM_FOLDS);
    let mut start = 0;
    for b in 0..NUM_FOLDS {
        let len = base + usize::from(b < extra);
        blocks.push(ids[start..start + len].to_vec());
        start += len;
    }
    let folds = (0..NUM_FOLDS)
        .map(|i| {
            let v = (i + 1) % NUM_FOLDS;
            let mut train: Vec<String> = (0..NUM_FOLDS)
                .filter(|&b| b != i && b != v)
                .flat_map(|b| blocks[b].iter().cloned())
                .collect();
            train.sort();
            let mut valid = blocks[v].clone();
            valid.sort();
            let mut eval = blocks[i].clone();
            eval.sort();
            Fold { train, valid, eval }
        })
        .collect();
    Ok(FoldPlan { folds })
}

impl FoldPlan {
    pub fn folds(&self) -> &[Fold] {
        &self.folds
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Maps each row's podcast to its role in fold `fold`.
    pub fn split_rows(&self, fold: usize, podcast_ids: &[String]) -> Result<FoldRows, HarnessError> {
        let f = &self.folds[fold];
        let mut role: HashMap<&str, Role> = HashMap::new();
        for (ids, r) in [(&f.train, Role::Train), (&f.valid, Role::Valid), (&f.eval, Role::Eval)] {
            for id in ids {
                role.insert(id, r);
            }
        }
        let mut rows = FoldRows {
            train: Vec::new(),
            valid: Vec::new(),
            eval: Vec::new(),
        };
        for (i, p) in podcast_ids.iter().enumerate() {
            match role.get(p.as_str()) {
                Some(Role::Train) => rows.train.push(i),
                Some(Role::Valid) => rows.valid.push(i),
                Some(Role::Eval) => rows.eval.push(i),
                None => return Err(HarnessError::UnknownPodcast(p.clone())),
            }
        }
        Ok(rows)
    }

    /// Checks that every fold partitions `universe` and that the eval sets
    /// are disjoint and cover it.
    pub fn verify(&self, universe: &[String]) -> Result<(), HarnessError> {
        let all: BTreeSet<&String> = universe.iter().collect();
        let mut covered = BTreeSet::new();
        for (i, f) in self.folds.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for id in f.train.iter().chain(&f.valid).chain(&f.eval) {
                if !seen.insert(id) {
                    return Err(HarnessError::Leakage(format!("podcast {id} has two roles in fold {i}")));
                }
            }
            if seen != all {
                return Err(HarnessError::Leakage(format!("fold {i} does not cover every podcast")));
            }
            for id in &f.eval {
                if !covered.insert(id) {
                    return Err(HarnessError::Leakage(format!("podcast {id} is evaluated twice")));
                }
            }
        }
        if covered != all {
            return Err(HarnessError::Leakage("eval sets do not cover every podcast".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("pod{i:03}")).collect()
    }

    #[test]
    fn twenty_podcasts() {
        let plan = make_folds(&ids(20), 1).unwrap();
        assert_eq!(plan.len(), 10);
        for f in plan.folds() {
            assert_eq!((f.eval.len(), f.valid.len(), f.train.len()), (2, 2, 16));
        }
        plan.verify(&ids(20)).unwrap();
    }

    #[test]
    fn uneven_blocks_and_duplicates() {
        let mut many = ids(23);
        many.extend(ids(23));
        let plan = make_folds(&many, 3).unwrap();
        let sizes: Vec<usize> = plan.folds().iter().map(|f| f.eval.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
        plan.verify(&ids(23)).unwrap();
        for (i, f) in plan.folds().iter().enumerate() {
            assert_eq!(f.valid, plan.folds()[(i + 1) % 10].eval);
        }
    }

    #[test]
    fn seeded() {
        assert_eq!(make_folds(&ids(30), 5).unwrap(), make_folds(&ids(30), 5).unwrap());
        assert_ne!(make_folds(&ids(30), 5).unwrap(), make_folds(&ids(30), 6).unwrap());
        assert!(matches!(
            make_folds(&ids(9), 0),
            Err(HarnessError::TooFewPodcasts { found: 9, needed: 10 })
        ));
    }

    #[test]
    fn rows_follow_podcasts() {
        let plan = make_folds(&ids(10), 0).unwrap();
        let rows: Vec<String> = ids(10).into_iter().cycle().take(35).collect();
        let split = plan.split_rows(4, &rows).unwrap();
        assert_eq!(split.train.len() + split.valid.len() + split.eval.len(), 35);
        for &r in &split.eval {
            assert_eq!(rows[r], plan.folds()[4].eval[0]);
        }
        assert!(matches!(
            plan.split_rows(0, &["stranger".to_string()]),
            Err(HarnessError::UnknownPodcast(_))
        ));
    }
}
