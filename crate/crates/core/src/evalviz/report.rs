use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::corpus::ClassId;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub samples: usize,
}

/// One row per method plus the relative improvement of the designated
/// method over the best other method, per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub split: String,
    pub designated: String,
    pub rows: Vec<ComparisonRow>,
    pub best_accuracy_baseline: String,
    pub best_macro_f1_baseline: String,
    /// Percent change; `None` when the best baseline scores 0.
    pub accuracy_improvement: Option<f64>,
    pub macro_f1_improvement: Option<f64>,
    pub accuracy_improvement_label: String,
    pub macro_f1_improvement_label: String,
}

fn relative(ours: f64, best: f64) -> Option<f64> {
    if best == 0.0 {
        (ours == 0.0).then_some(0.0)
    } else {
        Some((ours - best) / best * 100.0)
    }
}

/// Whole-percent label with an explicit sign, e.g. `+4%`; zero prints as `0%`.
pub fn format_improvement(percent: Option<f64>) -> String {
    match percent {
        None => "n/a".to_string(),
        Some(p) => {
            let r = p.round();
            if r == 0.0 {
                "0%".to_string()
            } else {
                format!("{r:+}%")
            }
        }
    }
}

/// Index of the maximum, first one on ties.
fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|b| b.0)
}

pub fn compare_methods(reports: &[EvalReport], designated: &str) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(Error::Validation("a comparison needs at least two reports".into()));
    }
    let split = &reports[0].split;
    if let Some(r) = reports.iter().find(|r| &r.split != split) {
        return Err(Error::Validation(format!(
            "report for {} is on split {:?}, expected {split:?}",
            r.method, r.split
        )));
    }
    let mut seen = HashSet::new();
    if let Some(r) = reports.iter().find(|r| !seen.insert(r.method.as_str())) {
        return Err(Error::Validation(format!("method {} appears twice", r.method)));
    }
    let ours = reports
        .iter()
        .find(|r| r.method == designated)
        .ok_or_else(|| Error::Validation(format!("no report for method {designated}")))?;
    let others: Vec<&EvalReport> = reports.iter().filter(|r| r.method != designated).collect();
    let best_acc = others[argmax(others.iter().map(|r| r.accuracy)).expect("non-empty")];
    let best_f1 = others[argmax(others.iter().map(|r| r.macro_f1)).expect("non-empty")];
    let acc_imp = relative(ours.accuracy, best_acc.accuracy);
    let f1_imp = relative(ours.macro_f1, best_f1.macro_f1);
    Ok(ComparisonTable {
        split: split.clone(),
        designated: designated.to_string(),
        rows: reports
            .iter()
            .map(|r| ComparisonRow {
                method: r.method.clone(),
                accuracy: r.accuracy,
                macro_f1: r.macro_f1,
                samples: r.samples,
            })
            .collect(),
        best_accuracy_baseline: best_acc.method.clone(),
        best_macro_f1_baseline: best_f1.method.clone(),
        accuracy_improvement: acc_imp,
        macro_f1_improvement: f1_imp,
        accuracy_improvement_label: format_improvement(acc_imp),
        macro_f1_improvement_label: format_improvement(f1_imp),
    })
}

impl ComparisonTable {
    /// Scores as percentages with one decimal, then the improvement row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["method", "accuracy", "macro_f1"]).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                format!("{:.1}", r.accuracy * 100.0),
                format!("{:.1}", r.macro_f1 * 100.0),
            ])
            .map_err(err)?;
        }
        w.write_record([
            "relative improvement",
            &self.accuracy_improvement_label,
            &self.macro_f1_improvement_label,
        ])
        .map_err(err)?;
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Per-class F1 (percent, one decimal) with one column per report; a zero
/// F1 prints as `-`.
pub fn per_class_table(reports: &[EvalReport], classes: &[(ClassId, String)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(e.to_string());
    let mut header = vec!["class".to_string()];
    header.extend(reports.iter().map(|r| r.method.clone()));
    w.write_record(&header).map_err(err)?;
    for (id, name) in classes {
        let mut rec = vec![name.clone()];
        for r in reports {
            rec.push(match r.f1(*id) {
                Some(f) if f > 0.0 => format!("{:.1}", f * 100.0),
                Some(_) => "-".to_string(),
                None => String::new(),
            });
        }
        w.write_record(&rec).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalviz::compute_metrics;
    use rand::Rng;

    fn report(method: &str, split: &str, acc: f64, f1: f64) -> EvalReport {
        let t = [ClassId(1)];
        let mut r = compute_metrics(&t, &t, 1).unwrap().labeled(method, split);
        r.accuracy = acc;
        r.macro_f1 = f1;
        r
    }

    #[test]
    fn published_rounding() {
        // (68.1 - 65.7) / 65.7 = 3.65 % -> "+4%"
        let imp = relative(68.1, 65.7);
        assert!((imp.unwrap() - 3.6529680365).abs() < 1e-8);
        assert_eq!(format_improvement(imp), "+4%");
        let t = compare_methods(
            &[report("salm", "test", 0.681, 0.301), report("tfidf-rf", "test", 0.657, 0.2)],
            "salm",
        )
        .unwrap();
        assert_eq!(t.accuracy_improvement_label, "+4%");
    }

    #[test]
    fn equal_scores_are_zero() {
        let t = compare_methods(&[report("a", "s", 0.5, 0.5), report("b", "s", 0.5, 0.5)], "a").unwrap();
        assert_eq!(t.accuracy_improvement, Some(0.0));
        assert_eq!(t.accuracy_improvement_label, "0%");
        assert_eq!(format_improvement(Some(-0.3)), "0%");
        assert_eq!(format_improvement(Some(-12.6)), "-13%");
        assert_eq!(format_improvement(None), "n/a");
    }

    #[test]
    fn best_baseline_matches_a_max_scan() {
        let mut r = crate::rng::seeded(2);
        for _ in 0..50 {
            let reps: Vec<EvalReport> = (0..3)
                .map(|i| report(&format!("m{i}"), "s", r.gen(), r.gen()))
                .collect();
            let t = compare_methods(&reps, "m0").unwrap();
            let (mut ba, mut bf) = (&reps[1], &reps[1]);
            for x in &reps[2..] {
                if x.accuracy > ba.accuracy {
                    ba = x;
                }
                if x.macro_f1 > bf.macro_f1 {
                    bf = x;
                }
            }
            assert_eq!(t.best_accuracy_baseline, ba.method);
            assert_eq!(t.best_macro_f1_baseline, bf.method);
            let expect = (reps[0].accuracy - ba.accuracy) / ba.accuracy * 100.0;
            assert!((t.accuracy_improvement.unwrap() - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(compare_methods(&[report("a", "s", 0.5, 0.5)], "a").is_err());
        assert!(compare_methods(&[report("a", "s", 0.5, 0.5), report("b", "t", 0.5, 0.5)], "a").is_err());
        assert!(compare_methods(&[report("a", "s", 0.5, 0.5), report("a", "s", 0.5, 0.5)], "a").is_err());
        assert!(compare_methods(&[report("a", "s", 0.5, 0.5), report("b", "s", 0.5, 0.5)], "c").is_err());
    }

    #[test]
    fn csv_shape() {
        let t = compare_methods(&[report("salm", "s", 0.681, 0.301), report("rf", "s", 0.657, 0.253)], "salm").unwrap();
        let csv = t.to_csv().unwrap();
        assert_eq!(
            csv,
            "method,accuracy,macro_f1\nsalm,68.1,30.1\nrf,65.7,25.3\nrelative improvement,+4%,+19%\n"
        );
        let back: ComparisonTable = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn per_class_dashes() {
        let a = compute_metrics(&[ClassId(1), ClassId(2)], &[ClassId(1), ClassId(1)], 2).unwrap().labeled("a", "s");
        let csv = per_class_table(&[a], &[(ClassId(1), "XSS".into()), (ClassId(2), "DoS".into())]).unwrap();
        assert_eq!(csv, "class,a\nXSS,66.7\nDoS,-\n");
    }
}
