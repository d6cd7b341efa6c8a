//! Pixel confusion counts and the overlap metrics derived from them.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn ratio(num: u64, den: u64, both_empty: bool) -> f64 {
        if den == 0 {
            if both_empty {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    }

    /// Prediction and ground truth both have no foreground.
    fn both_empty(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp, self.both_empty())
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_, self.both_empty())
    }

    pub fn dsc(&self) -> f64 {
        Self::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_, self.both_empty())
    }

    pub fn iou(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp + self.fn_, self.both_empty())
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Binarize `pred` at `threshold` (>= is foreground) and count against `truth`.
pub fn confusion<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>, threshold: f64) -> Result<ConfusionCounts> {
    ensure!(
        pred.shape() == truth.shape(),
        "confusion shape mismatch: {:?} vs {:?}",
        pred.shape(),
        truth.shape()
    );
    let th = T::of(threshold);
    let half = T::of(0.5);
    let mut c = ConfusionCounts::default();
    for (&p, &y) in pred.data().iter().zip(truth.data()) {
        match (p >= th, y >= half) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-sample metrics.
    Macro,
    /// Metrics of the summed counts.
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub dsc: f64,
    pub iou: f64,
}

impl From<&ConfusionCounts> for Scores {
    fn from(c: &ConfusionCounts) -> Self {
        Scores {
            precision: c.precision(),
            recall: c.recall(),
            dsc: c.dsc(),
            iou: c.iou(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub counts: ConfusionCounts,
    pub scores: Scores,
}

/// Flat CSV record.
#[derive(Serialize, Deserialize)]
struct Row {
    sample_id: String,
    tp: u64,
    fp: u64,
    tn: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    precision: f64,
    recall: f64,
    dsc: f64,
    iou: f64,
}

impl From<&SampleMetrics> for Row {
    fn from(s: &SampleMetrics) -> Self {
        Row {
            sample_id: s.sample_id.clone(),
            tp: s.counts.tp,
            fp: s.counts.fp,
            tn: s.counts.tn,
            fn_: s.counts.fn_,
            precision: s.scores.precision,
            recall: s.scores.recall,
            dsc: s.scores.dsc,
            iou: s.scores.iou,
        }
    }
}

impl From<Row> for SampleMetrics {
    fn from(r: Row) -> Self {
        SampleMetrics {
            sample_id: r.sample_id,
            counts: ConfusionCounts {
                tp: r.tp,
                fp: r.fp,
                tn: r.tn,
                fn_: r.fn_,
            },
            scores: Scores {
                precision: r.precision,
                recall: r.recall,
                dsc: r.dsc,
                iou: r.iou,
            },
        }
    }
}

impl SampleMetrics {
    pub fn new(sample_id: impl Into<String>, counts: ConfusionCounts) -> Self {
        SampleMetrics {
            sample_id: sample_id.into(),
            scores: Scores::from(&counts),
            counts,
        }
    }
}

pub const AGGREGATE_ID: &str = "mean";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetrics>,
}

impl MetricsReport {
    pub fn push(&mut self, s: SampleMetrics) {
        self.samples.push(s);
    }

    pub fn total_counts(&self) -> ConfusionCounts {
        self.samples
            .iter()
            .fold(ConfusionCounts::default(), |a, s| a + s.counts)
    }

    pub fn aggregate(&self, how: Aggregation) -> Scores {
        match how {
            Aggregation::Micro => Scores::from(&self.total_counts()),
            Aggregation::Macro => {
                let n = self.samples.len().max(1) as f64;
                let mut s = Scores {
                    precision: 0.0,
                    recall: 0.0,
                    dsc: 0.0,
                    iou: 0.0,
                };
                for m in &self.samples {
                    s.precision += m.scores.precision;
                    s.recall += m.scores.recall;
                    s.dsc += m.scores.dsc;
                    s.iou += m.scores.iou;
                }
                Scores {
                    precision: s.precision / n,
                    recall: s.recall / n,
                    dsc: s.dsc / n,
                    iou: s.iou / n,
                }
            }
        }
    }

    pub fn mean(&self) -> Scores {
        self.aggregate(Aggregation::Macro)
    }

    /// CSV with one row per sample and a final `mean` row holding summed
    /// counts and macro-averaged metrics.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            ensure!(
                s.sample_id != AGGREGATE_ID,
                "sample id {AGGREGATE_ID:?} is reserved for the aggregate row"
            );
            w.serialize(Row::from(s)).map_err(csv_err)?;
        }
        w.serialize(Row::from(&SampleMetrics {
            sample_id: AGGREGATE_ID.to_string(),
            counts: self.total_counts(),
            scores: self.mean(),
        }))
        .map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }

    /// Parse a CSV written by [`MetricsReport::write_csv`]; the aggregate row is dropped.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut report = MetricsReport::default();
        for row in r.deserialize::<Row>() {
            let row = SampleMetrics::from(row.map_err(csv_err)?);
            if row.sample_id != AGGREGATE_ID {
                report.push(row);
            }
        }
        Ok(report)
    }

    /// Values of one metric column (`precision`, `recall`, `dsc`, `iou`), keyed by sample id.
    pub fn column(&self, name: &str) -> Result<Vec<(String, f64)>> {
        let pick: fn(&Scores) -> f64 = match name {
            "precision" => |s| s.precision,
            "recall" => |s| s.recall,
            "dsc" | "dice" => |s| s.dsc,
            "iou" | "miou" => |s| s.iou,
            other => return Err(Error::Value(format!("unknown metric column {other:?}"))),
        };
        Ok(self
            .samples
            .iter()
            .map(|s| (s.sample_id.clone(), pick(&s.scores)))
            .collect())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formula_arithmetic() {
        let c = ConfusionCounts {
            tp: 8,
            fp: 2,
            tn: 100,
            fn_: 2,
        };
        assert_eq!(c.dsc(), 0.8);
        assert!((c.iou() - 8.0 / 12.0).abs() < 1e-15);
        assert_eq!(c.precision(), 0.8);
        assert_eq!(c.recall(), 0.8);
    }

    #[test]
    fn empty_empty_convention() {
        let c = ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 50,
            fn_: 0,
        };
        assert_eq!((c.precision(), c.recall(), c.dsc(), c.iou()), (1.0, 1.0, 1.0, 1.0));
        // Empty prediction against non-empty truth.
        let c = ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 40,
            fn_: 10,
        };
        assert_eq!((c.precision(), c.recall(), c.dsc(), c.iou()), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn confusion_edge_cases() {
        let y = Tensor::<f32>::from_fn(&[1, 1, 4, 4], |i| (i % 3 == 0) as u8 as f32);
        let c = confusion(&y, &y, DEFAULT_THRESHOLD).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let inv = y.map(|v| 1.0 - v);
        let c = confusion(&inv, &y, DEFAULT_THRESHOLD).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        // Threshold is inclusive.
        let half = Tensor::<f32>::full(&[1, 1, 4, 4], 0.5);
        assert_eq!(confusion(&half, &y, 0.5).unwrap().fn_, 0);
    }

    #[test]
    fn csv_layout_and_roundtrip() {
        let mut r = MetricsReport::default();
        r.push(SampleMetrics::new("a", ConfusionCounts { tp: 8, fp: 2, tn: 4, fn_: 2 }));
        r.push(SampleMetrics::new("b", ConfusionCounts { tp: 0, fp: 0, tn: 16, fn_: 0 }));
        let text = r.to_csv_string().unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sample_id,tp,fp,tn,fn,precision,recall,dsc,iou"
        );
        assert!(text.lines().last().unwrap().starts_with("mean,8,2,20,2,"));
        let back = MetricsReport::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn dsc_dominates_iou(tp in 0u64..500, fp in 0u64..500, tn in 0u64..500, fn_ in 0u64..500) {
            let c = ConfusionCounts { tp, fp, tn, fn_ };
            prop_assert!(c.dsc() >= c.iou());
            for v in [c.precision(), c.recall(), c.dsc(), c.iou()] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let perfect = fp == 0 && fn_ == 0 && tp > 0;
            prop_assert_eq!(c.dsc() == 1.0 && c.iou() == 1.0, perfect || (tp == 0 && fp == 0 && fn_ == 0));
        }
    }
}
