//! One-vs-rest confusion counts and the sensitivity / specificity /
//! accuracy / Jaccard / Matthews metric suite.
//!
//! Jaccard and MCC come in two variants. `literal` computes Jaccard over all
//! four counts and squares `(TP+FP)` in the MCC denominator; `standard` uses
//! the usual definitions and is what reports show by default.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use crate::data::OcclusionClass;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts::new(self.tp + o.tp, self.tn + o.tn, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Per-class one-vs-rest counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub per_class: [ConfusionCounts; OcclusionClass::COUNT],
    pub samples: u64,
}

impl Tally {
    pub fn class(&self, c: OcclusionClass) -> ConfusionCounts {
        self.per_class[c.code()]
    }

    /// Sum over classes.
    pub fn pooled(&self) -> ConfusionCounts {
        self.per_class.iter().copied().fold(ConfusionCounts::default(), Add::add)
    }

    pub fn merge(&mut self, other: &Tally) {
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            *a += *b;
        }
        self.samples += other.samples;
    }
}

pub fn tally(predictions: &[OcclusionClass], truths: &[OcclusionClass]) -> Result<Tally> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "tally: {} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("tally: no samples".into()));
    }
    let mut t = Tally {
        samples: predictions.len() as u64,
        ..Tally::default()
    };
    for (&p, &y) in predictions.iter().zip(truths) {
        if p == y {
            t.per_class[p.code()].tp += 1;
        } else {
            t.per_class[p.code()].fp += 1;
            t.per_class[y.code()].fn_ += 1;
        }
    }
    for c in &mut t.per_class {
        c.tn = t.samples - c.tp - c.fp - c.fn_;
    }
    Ok(t)
}

/// `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub jsi_literal: Option<f64>,
    pub jsi_standard: Option<f64>,
    pub mcc_literal: Option<f64>,
    pub mcc_standard: Option<f64>,
    pub samples: u64,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

pub fn metrics(c: &ConfusionCounts) -> Result<MetricRow> {
    if c.total() == 0 {
        return Err(Error::InvalidArgument("metrics: all counts are zero".into()));
    }
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let n = c.total() as f64;
    let prod = |a: u64, b: u64| (a as u128 * b as u128) as f64;
    let numerator = tp * tn - fp * fn_;
    let mcc_standard_den = prod(c.tp + c.fp, c.tp + c.fn_).sqrt() * prod(c.tn + c.fp, c.tn + c.fn_).sqrt();
    let mcc_literal_den = prod(c.tp + c.fp, c.tp + c.fp).sqrt() * prod(c.tn + c.fp, c.tn + c.fn_).sqrt();
    Ok(MetricRow {
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, fp + tn),
        accuracy: ratio(tp + tn, n),
        jsi_literal: ratio(tp, n),
        jsi_standard: ratio(tp, tp + fp + fn_),
        mcc_literal: ratio(numerator, mcc_literal_den),
        mcc_standard: ratio(numerator, mcc_standard_den),
        samples: c.total(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// In [`OcclusionClass`] order.
    pub rows: Vec<(OcclusionClass, MetricRow)>,
    /// Unweighted mean over classes of every defined value.
    pub macro_avg: MetricRow,
    pub samples: u64,
}

pub fn report(t: &Tally) -> Result<MetricReport> {
    let rows: Vec<(OcclusionClass, MetricRow)> = OcclusionClass::ALL
        .into_iter()
        .map(|c| Ok((c, metrics(&t.class(c))?)))
        .collect::<Result<_>>()?;
    let mean = |f: fn(&MetricRow) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = rows.iter().filter_map(|(_, r)| f(r)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let macro_avg = MetricRow {
        sensitivity: mean(|r| r.sensitivity),
        specificity: mean(|r| r.specificity),
        accuracy: mean(|r| r.accuracy),
        jsi_literal: mean(|r| r.jsi_literal),
        jsi_standard: mean(|r| r.jsi_standard),
        mcc_literal: mean(|r| r.mcc_literal),
        mcc_standard: mean(|r| r.mcc_standard),
        samples: t.samples,
    };
    Ok(MetricReport {
        rows,
        macro_avg,
        samples: t.samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Standard,
    Literal,
}

pub const UNDEFINED: &str = "n/a";

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| format!("{:.2}", v * 100.0))
}

/// Per-class `Occlusion type | Accuracy | JSI | MCC` table.
pub fn report_table(rows: &[(OcclusionClass, MetricRow)], format: ReportFormat, variant: Variant) -> Result<String> {
    if rows.len() != OcclusionClass::COUNT {
        return Err(Error::InvalidArgument(format!("report_table needs 5 rows, got {}", rows.len())));
    }
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|(c, _)| *c);
    let header = ["Occlusion type", "Accuracy", "JSI", "MCC"];
    let cells: Vec<[String; 4]> = sorted
        .iter()
        .map(|(c, r)| {
            let (jsi, mcc) = match variant {
                Variant::Standard => (r.jsi_standard, r.mcc_standard),
                Variant::Literal => (r.jsi_literal, r.mcc_literal),
            };
            [c.display_name().to_string(), pct(r.accuracy), pct(jsi), pct(mcc)]
        })
        .collect();
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(&header.join(","));
            out.push('\n');
            for row in &cells {
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        ReportFormat::Text => {
            let width = |i: usize| {
                cells
                    .iter()
                    .map(|r| r[i].chars().count())
                    .chain([header[i].chars().count()])
                    .max()
                    .unwrap_or(0)
            };
            let widths: Vec<usize> = (0..4).map(width).collect();
            let line = |row: [&str; 4]| -> String {
                let mut s = format!("{:<w$}", row[0], w = widths[0]);
                for i in 1..4 {
                    let pad = widths[i] - row[i].chars().count();
                    write!(s, "  {}{}", " ".repeat(pad), row[i]).unwrap();
                }
                s.push('\n');
                s
            };
            out.push_str(&line(header));
            for r in &cells {
                out.push_str(&line([&r[0], &r[1], &r[2], &r[3]]));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use OcclusionClass::*;

    #[test]
    fn perfect_predictions() {
        let y = [Face, MedicalMask, Scarf, Hand, Object, Face, Scarf];
        let t = tally(&y, &y).unwrap();
        for c in OcclusionClass::ALL {
            let k = t.class(c);
            assert_eq!((k.fp, k.fn_), (0, 0));
            assert_eq!(k.total(), 7);
            let m = metrics(&k).unwrap();
            assert_eq!(m.sensitivity, Some(1.0));
            assert_eq!(m.specificity, Some(1.0));
            assert_eq!(m.accuracy, Some(1.0));
            assert_eq!(m.mcc_standard, Some(1.0));
        }
        assert_eq!(report(&t).unwrap().macro_avg.accuracy, Some(1.0));
    }

    #[test]
    fn single_miss() {
        let t = tally(&[Hand], &[Scarf]).unwrap();
        assert_eq!(t.class(Hand), ConfusionCounts::new(0, 0, 1, 0));
        assert_eq!(t.class(Scarf), ConfusionCounts::new(0, 0, 0, 1));
        for c in [Face, MedicalMask, Object] {
            assert_eq!(t.class(c), ConfusionCounts::new(0, 1, 0, 0));
        }
        assert!(tally(&[Hand], &[]).is_err());
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&ConfusionCounts::new(50, 50, 0, 0)).unwrap();
        assert_eq!(
            (m.sensitivity, m.specificity, m.accuracy, m.mcc_standard),
            (Some(1.0), Some(1.0), Some(1.0), Some(1.0))
        );
        let m = metrics(&ConfusionCounts::new(99, 0, 0, 1)).unwrap();
        assert_eq!(m.sensitivity, Some(0.99));
        assert_eq!(m.specificity, None);
        let m = metrics(&ConfusionCounts::new(90, 90, 10, 10)).unwrap();
        assert_eq!(m.accuracy, Some(0.9));
        assert_eq!(m.jsi_literal, Some(0.45));
        assert!((m.jsi_standard.unwrap() - 90.0 / 110.0).abs() < 1e-15);
        assert!((m.jsi_standard.unwrap() - 0.818).abs() < 1e-3);
        // literal MCC squares (TP+FP): (8100-100)/sqrt(100*100*100*100) = 0.8
        assert!((m.mcc_literal.unwrap() - 0.8).abs() < 1e-15);
        assert!(metrics(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn literal_mcc_differs_when_fp_ne_fn() {
        let m = metrics(&ConfusionCounts::new(40, 30, 20, 10)).unwrap();
        let num = 40.0 * 30.0 - 20.0 * 10.0;
        let std = num / (60.0f64 * 50.0 * 50.0 * 40.0).sqrt();
        let literal = num / (60.0f64 * 60.0 * 50.0 * 40.0).sqrt();
        assert!((m.mcc_standard.unwrap() - std).abs() < 1e-12);
        assert!((m.mcc_literal.unwrap() - literal).abs() < 1e-12);
    }

    fn perfect_rows() -> Vec<(OcclusionClass, MetricRow)> {
        let y = [Face, MedicalMask, Scarf, Hand, Object];
        report(&tally(&y, &y).unwrap()).unwrap().rows
    }

    #[test]
    fn csv_table() {
        let csv = report_table(&perfect_rows(), ReportFormat::Csv, Variant::Standard).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("Occlusion type,Accuracy,JSI,MCC"));
        assert_eq!(lines.next(), Some("Face,100.00,100.00,100.00"));
        for l in lines {
            assert_eq!(l.split(',').nth(1), Some("100.00"));
        }
        let again = report_table(&perfect_rows(), ReportFormat::Csv, Variant::Standard).unwrap();
        assert_eq!(csv, again);
    }

    #[test]
    fn text_table_is_aligned_and_marks_undefined() {
        let t = tally(&[Face, Face], &[Face, Face]).unwrap();
        let txt = report_table(&report(&t).unwrap().rows, ReportFormat::Text, Variant::Standard).unwrap();
        let lines: Vec<&str> = txt.lines().collect();
        assert_eq!(lines.len(), 6);
        let widths: Vec<usize> = lines.iter().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{txt}");
        assert!(lines[2].contains(UNDEFINED));
        assert!(report_table(&perfect_rows()[..4], ReportFormat::Text, Variant::Standard).is_err());
    }

    fn class_strategy() -> impl Strategy<Value = OcclusionClass> {
        (0usize..5).prop_map(|c| OcclusionClass::from_code(c).unwrap())
    }

    proptest! {
        #[test]
        fn count_invariants(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
            prop_assume!(tp + tn + fp + fn_ > 0);
            let m = metrics(&ConfusionCounts::new(tp, tn, fp, fn_)).unwrap();
            let acc = m.accuracy.unwrap();
            prop_assert!(m.jsi_literal.unwrap() <= acc);
            if let Some(j) = m.jsi_standard {
                prop_assert!(j >= m.jsi_literal.unwrap());
            }
            for v in [m.sensitivity, m.specificity, m.accuracy].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let Some(mcc) = m.mcc_standard {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&mcc));
            }
        }

        #[test]
        fn partitioned_tallies_merge(pairs in prop::collection::vec((class_strategy(), class_strategy()), 2..60), cut in 1usize..59) {
            let cut = cut.min(pairs.len() - 1);
            let (p, y): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let whole = tally(&p, &y).unwrap();
            let mut merged = tally(&p[..cut], &y[..cut]).unwrap();
            merged.merge(&tally(&p[cut..], &y[cut..]).unwrap());
            prop_assert_eq!(whole, merged);
            for c in whole.per_class {
                prop_assert_eq!(c.total(), whole.samples);
            }
        }
    }
}
