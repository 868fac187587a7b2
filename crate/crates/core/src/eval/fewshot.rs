//! Few-shot fold sampling and multi-run summaries.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEWSHOT_SIZES: [usize; 6] = [8, 16, 32, 64, 128, 256];
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotDataset {
    pub examples: Vec<LabeledExample>,
    /// Gold label inventory. Defaults to the labels seen in `examples`.
    pub classes: Vec<String>,
}

impl FewShotDataset {
    pub fn new(examples: Vec<LabeledExample>) -> Self {
        let classes: BTreeSet<String> = examples.iter().map(|e| e.label.clone()).collect();
        FewShotDataset {
            examples,
            classes: classes.into_iter().collect(),
        }
    }

    pub fn with_classes(examples: Vec<LabeledExample>, classes: Vec<String>) -> Self {
        FewShotDataset { examples, classes }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn by_class(&self) -> Result<BTreeMap<&str, Vec<usize>>> {
        let mut seen = HashSet::new();
        for e in &self.examples {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate example id {:?}", e.id)));
            }
        }
        let mut map: BTreeMap<&str, Vec<usize>> =
            self.classes.iter().map(|c| (c.as_str(), Vec::new())).collect();
        for (i, e) in self.examples.iter().enumerate() {
            match map.get_mut(e.label.as_str()) {
                Some(v) => v.push(i),
                None => {
                    return Err(Error::InvalidInput(format!(
                        "example {:?} has undeclared label {:?}",
                        e.id, e.label
                    )))
                }
            }
        }
        let empty: Vec<&str> = map.iter().filter(|(_, v)| v.is_empty()).map(|(c, _)| *c).collect();
        if !empty.is_empty() {
            return Err(Error::InvalidInput(format!(
                "classes with zero examples: {}",
                empty.join(", ")
            )));
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotFold {
    pub requested_size: usize,
    pub example_ids: Vec<String>,
    /// Ids appended to cover classes missing from the uniform draw.
    pub augmented: Vec<String>,
    pub seed: u64,
}

/// Uniform draw of `size` examples without replacement, then one uniformly
/// chosen example appended for each class the draw missed.
pub fn sample_fewshot(dataset: &FewShotDataset, size: usize, seed: u64) -> Result<FewShotFold> {
    if !FEWSHOT_SIZES.contains(&size) {
        return Err(Error::InvalidInput(format!(
            "few-shot size {size} not in {FEWSHOT_SIZES:?}"
        )));
    }
    if size > dataset.len() {
        return Err(Error::InvalidInput(format!(
            "few-shot size {size} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let by_class = dataset.by_class()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = index::sample(&mut rng, dataset.len(), size).into_vec();
    drawn.sort_unstable();

    let present: BTreeSet<&str> = drawn.iter().map(|&i| dataset.examples[i].label.as_str()).collect();
    let mut augmented = Vec::new();
    for (class, members) in &by_class {
        if !present.contains(class) {
            let pick = members[rng.random_range(0..members.len())];
            augmented.push(dataset.examples[pick].id.clone());
        }
    }
    let mut example_ids: Vec<String> = drawn.iter().map(|&i| dataset.examples[i].id.clone()).collect();
    example_ids.extend(augmented.iter().cloned());
    Ok(FewShotFold {
        requested_size: size,
        example_ids,
        augmented,
        seed,
    })
}

/// `n` folds with seeds `base_seed, base_seed + 1, ...`.
pub fn sample_folds(dataset: &FewShotDataset, size: usize, base_seed: u64, n: usize) -> Result<Vec<FewShotFold>> {
    (0..n as u64)
        .map(|i| sample_fewshot(dataset, size, base_seed.wrapping_add(i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

/// Mean and standard deviation over runs; population std unless `sample_std`.
pub fn summarize_runs(scores: &[f64], sample_std: bool) -> Result<RunSummary> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no runs to summarize".into()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let ss: f64 = scores.iter().map(|s| (s - mean) * (s - mean)).sum();
    let denom = if sample_std { n - 1.0 } else { n };
    let std = if denom <= 0.0 { 0.0 } else { (ss / denom).sqrt() };
    Ok(RunSummary {
        mean,
        std,
        n_runs: scores.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(counts: &[(&str, usize)]) -> FewShotDataset {
        let mut ex = Vec::new();
        for (label, n) in counts {
            for i in 0..*n {
                ex.push(LabeledExample {
                    id: format!("{label}{i}"),
                    label: label.to_string(),
                });
            }
        }
        FewShotDataset::new(ex)
    }

    #[test]
    fn rare_class_gets_augmented() {
        let d = dataset(&[("A", 200), ("B", 200), ("C", 2)]);
        let fold = (0..1000u64)
            .map(|s| sample_fewshot(&d, 8, s).unwrap())
            .find(|f| !f.augmented.is_empty())
            .expect("some seed misses class C");
        assert_eq!(fold.example_ids.len(), 9);
        assert_eq!(fold.augmented.len(), 1);
        assert!(fold.augmented[0].starts_with('C'));
    }

    #[test]
    fn whole_dataset_and_determinism() {
        let d = dataset(&[("A", 3), ("B", 3), ("C", 2)]);
        let f = sample_fewshot(&d, 8, 7).unwrap();
        assert_eq!(f.example_ids.len(), 8);
        assert!(f.augmented.is_empty());
        let d = dataset(&[("A", 30), ("B", 30)]);
        assert_eq!(sample_fewshot(&d, 16, 3).unwrap(), sample_fewshot(&d, 16, 3).unwrap());
        assert_eq!(sample_folds(&d, 16, 3, 5).unwrap().len(), 5);
    }

    #[test]
    fn sampling_errors() {
        let d = dataset(&[("A", 3), ("B", 3)]);
        assert!(sample_fewshot(&d, 8, 0).is_err());
        let d = dataset(&[("A", 30)]);
        assert!(sample_fewshot(&d, 10, 0).is_err());
        let d = FewShotDataset::with_classes(d.examples, vec!["A".into(), "Z".into()]);
        let e = sample_fewshot(&d, 8, 0).unwrap_err();
        assert!(e.to_string().contains('Z'));
    }

    #[test]
    fn run_summaries() {
        let s = summarize_runs(&[70.0; 5], false).unwrap();
        assert_eq!((s.mean, s.std, s.n_runs), (70.0, 0.0, 5));
        let s = summarize_runs(&[1.0, 2.0, 3.0, 4.0, 5.0], false).unwrap();
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        let s = summarize_runs(&[1.0, 2.0, 3.0, 4.0, 5.0], true).unwrap();
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(summarize_runs(&[42.0], true).unwrap().std, 0.0);
        assert!(summarize_runs(&[], false).is_err());
    }
}
