//! Confusion-matrix accounting with fake (label 1) as the positive class,
//! and Table-style classification reports.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("predictions ({preds}) and labels ({labels}) differ in length")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("value {value} at position {index} is not a binary label")]
    BadLabel { index: usize, value: u8 },
    #[error("nothing to score")]
    EmptyMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// A ratio whose denominator may vanish; `degenerate` marks the 0/0 case,
/// reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize) -> Ratio {
    if den == 0 {
        Ratio {
            value: 0.0,
            degenerate: true,
        }
    } else {
        Ratio {
            value: num as f64 / den as f64,
            degenerate: false,
        }
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    let mut cm = ConfusionMatrix::default();
    for (i, (&p, &y)) in preds.iter().zip(labels).enumerate() {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            _ => {
                return Err(MetricsError::BadLabel {
                    index: i,
                    value: if p > 1 { p } else { y },
                })
            }
        }
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match cm.total() {
        0 => Err(MetricsError::EmptyMatrix),
        n => Ok((cm.tp + cm.tn) as f64 / n as f64),
    }
}

pub fn precision(cm: &ConfusionMatrix) -> Ratio {
    ratio(cm.tp, cm.tp + cm.fp)
}

pub fn recall(cm: &ConfusionMatrix) -> Ratio {
    ratio(cm.tp, cm.tp + cm.fn_)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    let s = precision + recall;
    if s == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: usize,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
    pub confusion: ConfusionMatrix,
}

impl MetricReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self, MetricsError> {
        let p = precision(&cm);
        let r = recall(&cm);
        Ok(Self {
            accuracy: accuracy(&cm)?,
            precision: p.value,
            recall: r.value,
            f1: f1(p.value, r.value),
            n: cm.total(),
            precision_degenerate: p.degenerate,
            recall_degenerate: r.degenerate,
            confusion: cm,
        })
    }

    /// `acc,p,r,f1,n`.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{}",
            self.accuracy, self.precision, self.recall, self.f1, self.n
        )
    }
}

pub fn classification_report(preds: &[u8], labels: &[u8]) -> Result<MetricReport, MetricsError> {
    MetricReport::from_confusion(confusion(preds, labels)?)
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

/// Aligned plain-text table: `Model  Acc  P  R  F1-score`, one row per
/// report. Degenerate precision/recall cells are marked with `*`.
pub fn render_report_table(rows: &[(String, MetricReport)]) -> String {
    let name_width = rows.iter().map(|(n, _)| n.len()).chain([5]).max().unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_width$}  {:>8}  {:>8}  {:>8}  {:>8}",
        "Model", "Acc", "P", "R", "F1-score"
    );
    let mut degenerate = false;
    for (name, r) in rows {
        let mark = |v: f64, d: bool| if d { format!("{}*", pct(v)) } else { pct(v) };
        degenerate |= r.precision_degenerate || r.recall_degenerate;
        let _ = writeln!(
            out,
            "{:<name_width$}  {:>8}  {:>8}  {:>8}  {:>8}",
            name,
            pct(r.accuracy),
            mark(r.precision, r.precision_degenerate),
            mark(r.recall, r.recall_degenerate),
            pct(r.f1)
        );
    }
    if degenerate {
        out.push_str("* zero denominator, reported as 0\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[1, 0, 1, 0, 1], &[1, 1, 1, 0, 0]).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                tp: 2,
                tn: 1,
                fp: 1,
                fn_: 1
            }
        );
        let labels = [1, 0, 0, 1, 1, 0];
        let same = confusion(&labels, &labels).unwrap();
        assert_eq!((same.fp, same.fn_), (0, 0));
        let inverted: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let inv = confusion(&inverted, &labels).unwrap();
        assert_eq!((inv.tp, inv.tn), (0, 0));
        assert!(matches!(
            confusion(&[1], &[1, 0]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion(&[2], &[1]),
            Err(MetricsError::BadLabel { index: 0, value: 2 })
        ));
        assert_eq!(confusion(&[], &[]), Err(MetricsError::EmptyMatrix));
    }

    #[test]
    fn ratio_examples() {
        let cm = ConfusionMatrix {
            tp: 2,
            tn: 1,
            fp: 1,
            fn_: 1,
        };
        assert_eq!(accuracy(&cm).unwrap(), 0.6);
        assert!((precision(&cm).value - 0.6667).abs() < 1e-4);
        assert!((recall(&cm).value - 0.6667).abs() < 1e-4);
        assert_eq!(
            accuracy(&ConfusionMatrix {
                tp: 3,
                tn: 4,
                fp: 0,
                fn_: 0
            })
            .unwrap(),
            1.0
        );
        assert_eq!(
            accuracy(&ConfusionMatrix {
                tp: 0,
                tn: 0,
                fp: 2,
                fn_: 1
            })
            .unwrap(),
            0.0
        );
        assert_eq!(accuracy(&ConfusionMatrix::default()), Err(MetricsError::EmptyMatrix));
        let p = precision(&ConfusionMatrix {
            tp: 0,
            tn: 5,
            fp: 0,
            fn_: 1,
        });
        assert_eq!(
            p,
            Ratio {
                value: 0.0,
                degenerate: true
            }
        );
    }

    #[test]
    fn f1_examples() {
        assert!((f1(0.8938, 0.9931) - 0.9408).abs() < 5e-4);
        assert!((f1(0.7792, 0.9397) - 0.8520).abs() < 5e-4);
        assert!((f1(0.42, 0.42) - 0.42).abs() < 1e-15);
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn report_rendering() {
        let r = classification_report(&[1, 0, 1, 0, 1], &[1, 1, 1, 0, 0]).unwrap();
        let table = render_report_table(&[("toy".into(), r)]);
        assert!(table.contains("60.00%") && table.contains("66.67%"));
        assert_eq!(r.to_csv_line(), "0.600000,0.666667,0.666667,0.666667,5");
        let perfect = classification_report(&[1, 0], &[1, 0]).unwrap();
        let table = render_report_table(&[("p".into(), perfect)]);
        assert_eq!(table.matches("100.00%").count(), 4);
    }

    proptest! {
        #[test]
        fn metric_laws(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..200)) {
            let preds: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let r = classification_report(&preds, &labels).unwrap();
            let s = classification_report(&labels, &preds).unwrap();
            prop_assert_eq!(r.accuracy, s.accuracy);
            prop_assert_eq!(r.precision, s.recall);
            prop_assert_eq!(r.recall, s.precision);
            for v in [r.accuracy, r.precision, r.recall, r.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(r.f1 <= (r.precision + r.recall) / 2.0 + 1e-15);
        }
    }
}
