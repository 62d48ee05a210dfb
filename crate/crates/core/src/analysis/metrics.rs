use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_pairs(
        classes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut m = Self::new(classes);
        for (t, p) in pairs {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.classes();
        for label in [truth, predicted] {
            if label >= k {
                return Err(Error::Label { label, classes: k });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.classes()).map(|c| self.counts[c][c]).sum::<u64>() as f64 / total as f64
    }

    /// Precision is 0 for a class never predicted; recall is 0 for a class
    /// with no samples.
    pub fn class_metrics(&self, c: usize) -> ClassMetrics {
        let tp = self.counts[c][c] as f64;
        let ratio = |n: u64| if n == 0 { 0.0 } else { tp / n as f64 };
        let (precision, recall) = (ratio(self.predicted(c)), ratio(self.support(c)));
        ClassMetrics {
            precision,
            recall,
            f1: f1_score(precision, recall),
            support: self.support(c),
        }
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMetrics {
    pub label: String,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

/// The metrics JSON document. Means are unweighted over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eta: usize,
    pub samples: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<LabeledMetrics>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn new(confusion: &ConfusionMatrix, labels: &[String], eta: usize) -> Result<Self> {
        let k = confusion.classes();
        if labels.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {k} classes",
                labels.len()
            )));
        }
        let per_class: Vec<LabeledMetrics> = (0..k)
            .map(|c| LabeledMetrics {
                label: labels[c].clone(),
                metrics: confusion.class_metrics(c),
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            per_class.iter().map(|m| f(&m.metrics)).sum::<f64>() / k.max(1) as f64
        };
        Ok(MetricsReport {
            eta,
            samples: confusion.total(),
            accuracy: confusion.accuracy(),
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            confusion: confusion.counts().to_vec(),
            per_class,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f1_values() {
        assert_eq!(f1_score(1.0, 1.0), 1.0);
        let want = 2.0 * 0.8 * 0.86 / 1.66;
        assert!((f1_score(0.8, 0.86) - want).abs() < 1e-15);
        assert!((f1_score(0.8, 0.86) - 0.829).abs() < 5e-4);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn single_class_perfect() {
        let m = ConfusionMatrix::from_pairs(3, [(1, 1), (1, 1)]).unwrap();
        let nonzero: Vec<_> = m.counts().iter().flatten().filter(|&&c| c > 0).collect();
        assert_eq!(nonzero, vec![&2]);
        assert_eq!(m.accuracy(), 1.0);
        let unused = m.class_metrics(0);
        assert_eq!((unused.precision, unused.f1), (0.0, 0.0));
    }

    #[test]
    fn rejects_unknown_labels() {
        assert!(matches!(
            ConfusionMatrix::new(2).add(2, 0),
            Err(Error::Label { .. })
        ));
    }

    #[test]
    fn report_json() {
        let m = ConfusionMatrix::from_pairs(2, [(0, 0), (0, 1), (1, 1), (1, 1)]).unwrap();
        let r = MetricsReport::new(&m, &["a".into(), "b".into()], 21).unwrap();
        assert!((r.macro_recall - 0.75).abs() < 1e-15);
        let json = r.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["per_class"][1]["label"], "b");
        assert_eq!(v["per_class"][0]["recall"], 0.5);
        assert_eq!(v["confusion"][0][1], 1);
        assert_eq!(MetricsReport::from_json(&json).unwrap(), r);
    }

    proptest! {
        #[test]
        fn metric_identities(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)) {
            let m = ConfusionMatrix::from_pairs(4, pairs.iter().copied()).unwrap();
            let mut diag = 0;
            for c in 0..4 {
                let want = pairs.iter().filter(|p| p.0 == c).count() as u64;
                prop_assert_eq!(m.support(c), want);
                diag += m.get(c, c);
                let cm = m.class_metrics(c);
                if cm.precision + cm.recall > 0.0 {
                    let f = 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall);
                    prop_assert!((cm.f1 - f).abs() < 1e-15);
                }
            }
            prop_assert_eq!(m.accuracy(), diag as f64 / pairs.len() as f64);
            // Micro-averaged recall: total true positives over total samples.
            let micro: u64 = (0..4).map(|c| m.get(c, c)).sum();
            prop_assert_eq!(micro as f64 / m.total() as f64, m.accuracy());
        }
    }
}
