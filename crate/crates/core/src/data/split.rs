use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

/// Per-fold partition of every manifest item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: usize,
    pub seed: u64,
    /// `assignments[fold][item]`.
    pub assignments: Vec<Vec<Partition>>,
}

impl SplitPlan {
    pub fn indices(&self, fold: usize, part: Partition) -> Vec<usize> {
        self.assignments[fold]
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == part)
            .map(|(i, _)| i)
            .collect()
    }

    /// Tab-separated `item fold0 fold1 ...` table.
    pub fn to_table(&self) -> String {
        let mut s = format!("# folds\t{}\n# seed\t{}\nitem", self.folds, self.seed);
        for f in 0..self.folds {
            let _ = write!(s, "\tfold{f}");
        }
        s.push('\n');
        let items = self.assignments.first().map_or(0, Vec::len);
        for i in 0..items {
            let _ = write!(s, "{i}");
            for fold in &self.assignments {
                let _ = write!(s, "\t{}", fold[i].name());
            }
            s.push('\n');
        }
        s
    }
}

/// Partition sizes for `n` groups: `round(0.7n)`, `round(0.2n)`, remainder.
fn sizes(n: usize) -> (usize, usize) {
    let train = (0.7 * n as f64).round() as usize;
    let val = ((0.2 * n as f64).round() as usize).min(n - train);
    (train, val)
}

/// `folds` independent stratified 70/20/10 shuffles over original items.
/// Augmented items inherit their original's partition.
pub fn split(m: &DatasetManifest, folds: usize, seed: u64) -> Result<SplitPlan, DataError> {
    if folds < 2 {
        return Err(DataError::InvalidFolds(folds));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); m.classes.len()];
    for (i, it) in m.originals() {
        per_class[it.class].push(i);
    }
    for (c, group) in per_class.iter().enumerate() {
        if group.len() < folds {
            return Err(DataError::ClassTooSmall {
                class: m.classes[c].clone(),
                count: group.len(),
                folds,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = Vec::with_capacity(folds);
    for _ in 0..folds {
        let mut fold = vec![Partition::Train; m.items.len()];
        for group in &per_class {
            let mut order = group.clone();
            order.shuffle(&mut rng);
            let (train, val) = sizes(order.len());
            for (k, &i) in order.iter().enumerate() {
                fold[i] = if k < train {
                    Partition::Train
                } else if k < train + val {
                    Partition::Val
                } else {
                    Partition::Test
                };
            }
        }
        for i in 0..m.items.len() {
            fold[i] = fold[m.group_of(i)];
        }
        assignments.push(fold);
    }
    Ok(SplitPlan {
        folds,
        seed,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{augment, Item};

    fn manifest(per_class: &[usize]) -> DatasetManifest {
        let mut m = DatasetManifest {
            classes: (0..per_class.len()).map(|c| format!("c{c}")).collect(),
            ..Default::default()
        };
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                m.items.push(Item::original(format!("c{c}/{i}.png"), c));
            }
        }
        m
    }

    #[test]
    fn ten_per_class() {
        let m = manifest(&[10, 10]);
        let p = split(&m, 5, 3).unwrap();
        for f in 0..5 {
            for c in 0..2 {
                let count = |part| p.indices(f, part).iter().filter(|&&i| m.items[i].class == c).count();
                assert_eq!((count(Partition::Train), count(Partition::Val), count(Partition::Test)), (7, 2, 1));
            }
        }
        assert_eq!(split(&m, 5, 3).unwrap(), p);
        assert_ne!(split(&m, 5, 4).unwrap(), p);
    }

    #[test]
    fn small_class_and_bad_folds() {
        assert!(matches!(split(&manifest(&[4, 10]), 5, 0), Err(DataError::ClassTooSmall { count: 4, .. })));
        assert!(matches!(split(&manifest(&[4]), 1, 0), Err(DataError::InvalidFolds(1))));
    }

    #[test]
    fn descendants_follow_original() {
        let m = augment(&manifest(&[7, 9]), 4, 2).unwrap();
        let p = split(&m, 3, 1).unwrap();
        for fold in &p.assignments {
            for i in 0..m.items.len() {
                assert_eq!(fold[i], fold[m.group_of(i)]);
            }
        }
    }
}
