//! Classification metrics, method comparison tables and 2-D projections of
//! embedding files.

mod pca;
mod report;

pub use pca::{pca_project, project_file, write_projection, ProjectedRow, Projection, PROTOTYPE_KIND};
pub use report::{compare_methods, format_improvement, per_class_table, ComparisonRow, ComparisonTable};

use serde::{Deserialize, Serialize};

use crate::corpus::ClassId;
use crate::{Error, Result};

/// How the headline macro F1 was averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroConvention {
    /// Mean over all K classes; classes absent from the split count as 0.
    AllClasses,
    /// Mean over classes that occur as truth or prediction.
    PresentClasses,
}

/// Counts with rows = true class, columns = predicted class, both indexed by
/// `class id - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_id: ClassId,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true samples of the class.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub split: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_convention: MacroConvention,
    /// Macro F1 under the other convention, for reference.
    pub macro_f1_present: f64,
    pub per_class: Vec<ClassScore>,
    pub confusion: ConfusionMatrix,
    pub samples: usize,
}

impl EvalReport {
    pub fn labeled(mut self, method: &str, split: &str) -> Self {
        self.method = method.to_string();
        self.split = split.to_string();
        self
    }

    pub fn f1(&self, class: ClassId) -> Option<f64> {
        self.per_class.iter().find(|c| c.class_id == class).map(|c| c.f1)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, per-class precision/recall/F1 and macro F1 over classes `1..=k`.
/// F1 is 0 when precision + recall is 0, and the macro mean divides by `k`.
pub fn compute_metrics(truths: &[ClassId], predictions: &[ClassId], k: usize) -> Result<EvalReport> {
    if truths.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} truths but {} predictions",
            truths.len(),
            predictions.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let index = |c: ClassId, what: &str| -> Result<usize> {
        if c.0 >= 1 && (c.0 as usize) <= k {
            Ok(c.0 as usize - 1)
        } else {
            Err(Error::Validation(format!("{what} label {c} outside 1..={k}")))
        }
    };
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truths.iter().zip(predictions) {
        counts[index(t, "true")?][index(p, "predicted")?] += 1;
    }
    let confusion = ConfusionMatrix { k, counts };
    let mut per_class = Vec::with_capacity(k);
    let mut present = Vec::new();
    for c in 0..k {
        let tp = confusion.counts[c][c];
        let support = confusion.row_sum(c);
        let predicted = confusion.col_sum(c);
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support > 0 || predicted > 0 {
            present.push(f1);
        }
        per_class.push(ClassScore {
            class_id: ClassId(c as u32 + 1),
            precision,
            recall,
            f1,
            support,
        });
    }
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64;
    let macro_f1_present = present.iter().sum::<f64>() / present.len() as f64;
    Ok(EvalReport {
        method: String::new(),
        split: String::new(),
        accuracy: ratio(confusion.trace(), confusion.total()),
        macro_f1,
        macro_convention: MacroConvention::AllClasses,
        macro_f1_present,
        per_class,
        confusion,
        samples: truths.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn ids(v: &[u32]) -> Vec<ClassId> {
        v.iter().map(|&c| ClassId(c)).collect()
    }

    #[test]
    fn perfect_prediction() {
        let t = ids(&[1, 2, 2, 1]);
        let r = compute_metrics(&t, &t, 2).unwrap();
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn all_one_class_on_an_even_split() {
        // class 1: P = 1/2, R = 1 -> F1 = 2/3; class 2: never predicted -> 0.
        let r = compute_metrics(&ids(&[1, 1, 2, 2]), &ids(&[1, 1, 1, 1]), 2).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].f1, 0.0);
    }

    #[test]
    fn absent_classes_count_as_zero() {
        let t = ids(&[1, 2, 1, 2]);
        let r = compute_metrics(&t, &t, 4).unwrap();
        assert_eq!(r.macro_f1, 0.5);
        assert_eq!(r.macro_f1_present, 1.0);
        assert_eq!(r.macro_convention, MacroConvention::AllClasses);
    }

    #[test]
    fn out_of_range_labels_fail() {
        assert!(compute_metrics(&ids(&[1, 3]), &ids(&[1, 1]), 2).is_err());
        assert!(compute_metrics(&ids(&[1, 1]), &ids(&[0, 1]), 2).is_err());
        assert!(compute_metrics(&[], &[], 2).is_err());
        assert!(compute_metrics(&ids(&[1]), &ids(&[1, 1]), 2).is_err());
    }

    /// Independent tally over a 15-class fixture.
    #[test]
    fn fifteen_class_confusion_matches_a_tally() {
        let mut r = crate::rng::seeded(15);
        let t: Vec<u32> = (0..600).map(|_| r.gen_range(1..=15)).collect();
        let p: Vec<u32> = t
            .iter()
            .map(|&c| if r.gen_bool(0.6) { c } else { r.gen_range(1..=15) })
            .collect();
        let rep = compute_metrics(&ids(&t), &ids(&p), 15).unwrap();
        let mut f1s = Vec::new();
        for c in 1..=15u32 {
            let tp = t.iter().zip(&p).filter(|(a, b)| **a == c && **b == c).count() as f64;
            let fp = t.iter().zip(&p).filter(|(a, b)| **a != c && **b == c).count() as f64;
            let fn_ = t.iter().zip(&p).filter(|(a, b)| **a == c && **b != c).count() as f64;
            for pc in 1..=15u32 {
                let n = t.iter().zip(&p).filter(|(a, b)| **a == c && **b == pc).count() as u64;
                assert_eq!(rep.confusion.counts[c as usize - 1][pc as usize - 1], n);
            }
            // F1 = 2TP / (2TP + FP + FN)
            let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
            assert!((rep.per_class[c as usize - 1].f1 - f1).abs() < 1e-12);
            f1s.push(f1);
        }
        let acc = t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / 600.0;
        assert_eq!(rep.accuracy, acc);
        assert!((rep.macro_f1 - f1s.iter().sum::<f64>() / 15.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn invariants(pairs in prop::collection::vec((1u32..=6, 1u32..=6), 1..80), seed in 0u64..100) {
            let t: Vec<ClassId> = pairs.iter().map(|p| ClassId(p.0)).collect();
            let p: Vec<ClassId> = pairs.iter().map(|p| ClassId(p.1)).collect();
            let r = compute_metrics(&t, &p, 6).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.accuracy));
            prop_assert!((0.0..=1.0).contains(&r.macro_f1));
            let max_f1 = r.per_class.iter().map(|c| c.f1).fold(0.0, f64::max);
            prop_assert!(r.macro_f1 <= max_f1 + 1e-15);
            for c in 0..6 {
                let truth = t.iter().filter(|x| x.0 as usize == c + 1).count() as u64;
                prop_assert_eq!(r.confusion.row_sum(c), truth);
            }
            prop_assert_eq!(r.confusion.total(), t.len() as u64);

            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut crate::rng::seeded(seed));
            let t2: Vec<ClassId> = shuffled.iter().map(|p| ClassId(p.0)).collect();
            let p2: Vec<ClassId> = shuffled.iter().map(|p| ClassId(p.1)).collect();
            let r2 = compute_metrics(&t2, &p2, 6).unwrap();
            prop_assert_eq!(r.confusion, r2.confusion);
            prop_assert_eq!(r.accuracy, r2.accuracy);
            prop_assert!((r.macro_f1 - r2.macro_f1).abs() < 1e-15);
        }
    }
}
