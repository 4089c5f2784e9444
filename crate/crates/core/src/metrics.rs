//! Confusion matrix and the accuracy / agreement scores derived from it.
//! The changed class is the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ChangeMap, GroundTruth};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Textbook miss rate `FN / (FN + TP)`, kept apart from the reported
    /// [`MetricReport::fnr`], whose denominator is `FN + TN`.
    pub fn miss_rate(&self) -> f64 {
        let denom = self.fn_ + self.tp;
        if denom == 0 {
            0.0
        } else {
            self.fn_ as f64 / denom as f64
        }
    }
}

pub fn confusion(map: &ChangeMap, gt: &GroundTruth) -> Result<ConfusionMatrix> {
    if (map.height(), map.width()) != (gt.height(), gt.width()) {
        return Err(Error::Dimensions(format!(
            "change map is {}x{}, ground truth is {}x{}",
            map.height(),
            map.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&pred, &actual) in map.labels().iter().zip(gt.labels()) {
        match (pred == 1, actual == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub oa: f64,
    pub kappa: f64,
    pub f_score: f64,
    pub precision: f64,
    pub recall: f64,
    /// Percentage of wrong classification, 0..=100.
    pub pwc: f64,
    pub fnr: f64,
    pub tnr: f64,
    pub dr: f64,
}

pub const CSV_COLUMNS: [&str; 9] = [
    "oa", "kappa", "f_score", "precision", "recall", "pwc", "fnr", "tnr", "dr",
];

fn ratio_or(num: u64, denom: u64, fallback: f64) -> f64 {
    if denom == 0 {
        fallback
    } else {
        num as f64 / denom as f64
    }
}

/// Evaluates every score from the confusion counts.
///
/// Zero denominators resolve so that degenerate but correct predictions
/// score perfectly: precision 0 without predicted positives, recall 1 without
/// actual positives, FNR 0, TNR 1, and κ = 1 when chance agreement is total
/// and OA is 1 (else 0).
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Dimensions("empty confusion matrix".into()));
    }
    let (tp, fp, tn, fn_) = (cm.tp, cm.fp, cm.tn, cm.fn_);
    let nf = n as f64;

    let oa = (tp + tn) as f64 / nf;
    let ca_u = (tp + fp) as f64 * (tp + fn_) as f64 / (nf * nf);
    let ca_c = (tn + fn_) as f64 * (tn + fp) as f64 / (nf * nf);
    let ca = ca_u + ca_c;
    let kappa = if ca >= 1.0 {
        if oa == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (oa - ca) / (1.0 - ca)
    };

    let precision = ratio_or(tp, tp + fp, 0.0);
    let recall = ratio_or(tp, tp + fn_, 1.0);
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let pwc = 100.0 * (fp + fn_) as f64 / nf;
    let fnr = ratio_or(fn_, fn_ + tn, 0.0);
    let tnr = ratio_or(tn, fp + tn, 1.0);
    let dr = (1.0 - fnr) * tnr;

    Ok(MetricReport {
        oa,
        kappa,
        f_score,
        precision,
        recall,
        pwc,
        fnr,
        tnr,
        dr,
    })
}

impl MetricReport {
    pub fn values(&self) -> [f64; 9] {
        [
            self.oa,
            self.kappa,
            self.f_score,
            self.precision,
            self.recall,
            self.pwc,
            self.fnr,
            self.tnr,
            self.dr,
        ]
    }

    /// Header plus one row, four decimals per value.
    pub fn to_csv(&self) -> String {
        let row: Vec<String> = self.values().iter().map(|v| format!("{v:.4}")).collect();
        format!("{}\n{}\n", CSV_COLUMNS.join(","), row.join(","))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
