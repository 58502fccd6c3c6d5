use std::collections::HashSet;

use chrono::NaiveDate;
use rand::seq::SliceRandom;

use super::Corpus;
use crate::{rng, Error, Result};

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Corpus,
    pub test: Corpus,
    pub warnings: Vec<String>,
}

/// Partitions by publication date: strictly before `cutoff` goes to train,
/// on or after it goes to test.
pub fn temporal_split(corpus: &Corpus, cutoff: NaiveDate) -> Result<Split> {
    if let Some(missing) = corpus.samples().iter().find(|s| s.published.is_none()) {
        return Err(Error::Validation(format!(
            "sample {} has no publication date",
            missing.id
        )));
    }
    let before = |s: &super::Sample| s.published.map_or(false, |d| d < cutoff);
    Ok(Split {
        train: corpus.filtered(before),
        test: corpus.filtered(|s| !before(s)),
        warnings: Vec::new(),
    })
}

/// Per-class random split. Each class with at least two samples contributes
/// `round(n * test_fraction)` test samples, clamped to `1..=n-1`; smaller
/// classes stay entirely in train.
pub fn stratified_split(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); corpus.classes().len()];
    for (i, s) in corpus.samples().iter().enumerate() {
        per_class[s.class_id.0 as usize - 1].push(i);
    }
    let mut test_idx = HashSet::new();
    let mut warnings = Vec::new();
    for (c, members) in per_class.iter_mut().enumerate() {
        let n = members.len();
        if n == 0 {
            continue;
        }
        if n < 2 {
            let msg = format!(
                "class {} has {n} sample(s); kept wholly in train",
                corpus.classes()[c].name
            );
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        let mut rng = rng::derived(seed, c as u64);
        members.shuffle(&mut rng);
        test_idx.extend(members[..n_test].iter().copied());
    }
    let samples = corpus.samples();
    let train_ids: HashSet<&str> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| !test_idx.contains(i))
        .map(|(_, s)| s.id.as_str())
        .collect();
    Ok(Split {
        train: corpus.filtered(|s| train_ids.contains(s.id.as_str())),
        test: corpus.filtered(|s| !train_ids.contains(s.id.as_str())),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::sample;
    use crate::corpus::{default_classes, Provenance, SampleKind};

    fn dated(id: &str, date: &str) -> super::super::Sample {
        let mut s = sample(id, SampleKind::Payload, 1, id);
        s.published = Some(date.parse().unwrap());
        s
    }

    #[test]
    fn cutoff_day_goes_to_test() {
        let corpus = Corpus::new(
            default_classes(),
            vec![dated("a", "2022-12-31"), dated("b", "2023-01-01")],
            Provenance::Real,
        )
        .unwrap();
        let split = temporal_split(&corpus, "2023-01-01".parse().unwrap()).unwrap();
        assert_eq!(split.train.samples()[0].id, "a");
        assert_eq!(split.test.samples()[0].id, "b");
        assert_eq!(split.train.len() + split.test.len(), 2);
    }

    #[test]
    fn everything_before_cutoff_leaves_test_empty() {
        let corpus = Corpus::new(
            default_classes(),
            vec![dated("a", "2020-01-01"), dated("b", "2021-06-30")],
            Provenance::Real,
        )
        .unwrap();
        let split = temporal_split(&corpus, "2023-01-01".parse().unwrap()).unwrap();
        assert!(split.test.is_empty());
    }

    #[test]
    fn undated_sample_is_named_in_error() {
        let corpus = Corpus::new(
            default_classes(),
            vec![dated("a", "2020-01-01"), sample("nodate", SampleKind::Payload, 1, "x")],
            Provenance::Real,
        )
        .unwrap();
        let err = temporal_split(&corpus, "2023-01-01".parse().unwrap()).unwrap_err();
        assert!(err.to_string().contains("nodate"));
    }

    fn classes_of(n_per_class: &[usize]) -> Corpus {
        let mut samples = Vec::new();
        for (c, &n) in n_per_class.iter().enumerate() {
            for i in 0..n {
                samples.push(sample(&format!("c{c}-{i}"), SampleKind::Payload, c as u32 + 1, "t"));
            }
        }
        Corpus::new(default_classes(), samples, Provenance::Real).unwrap()
    }

    #[test]
    fn exact_fraction_per_class() {
        let corpus = classes_of(&[10, 10, 10]);
        let split = stratified_split(&corpus, 0.2, 7).unwrap();
        for (_, n) in split.test.histogram(SampleKind::Payload).iter().take(3) {
            assert_eq!(*n, 2);
        }
    }

    #[test]
    fn odd_class_size_rounds_within_one() {
        let corpus = classes_of(&[101]);
        let split = stratified_split(&corpus, 0.2, 1).unwrap();
        assert!((20..=21).contains(&split.test.len()));
    }

    #[test]
    fn same_seed_same_split_and_singletons_stay_in_train() {
        let corpus = classes_of(&[13, 1, 7]);
        let a = stratified_split(&corpus, 0.3, 99).unwrap();
        let b = stratified_split(&corpus, 0.3, 99).unwrap();
        assert_eq!(a.test.samples(), b.test.samples());
        assert_eq!(a.warnings.len(), 1);
        assert!(a.train.samples().iter().any(|s| s.id == "c1-0"));
        assert_eq!(a.train.len() + a.test.len(), corpus.len());
    }

    #[test]
    fn fraction_out_of_range_is_rejected() {
        let corpus = classes_of(&[4]);
        assert!(stratified_split(&corpus, 0.0, 1).is_err());
        assert!(stratified_split(&corpus, 1.0, 1).is_err());
    }
}
