use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::Label;

/// Pair-level confusion counts with Same as the positive class.
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

    pub fn record(&mut self, truth: Label, decided: Label) {
        match (truth, decided) {
            (Label::Same, Label::Same) => self.tp += 1,
            (Label::Different, Label::Same) => self.fp += 1,
            (Label::Different, Label::Different) => self.tn += 1,
            (Label::Same, Label::Different) => self.fn_ += 1,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }

    /// Integer counts over `total` pairs reproducing the given error rates
    /// at the given share of Same pairs.
    pub fn from_rates(type1: f64, type2: f64, prevalence: f64, total: u64) -> Result<Self> {
        let n = total as f64;
        let positives = (prevalence * n).round() as u64;
        let fp = (type1 * n).round() as u64;
        let fn_ = (type2 * n).round() as u64;
        if fn_ > positives || fp > total - positives {
            return Err(Error::invalid(format!(
                "rates ({type1}, {type2}) do not fit prevalence {prevalence}"
            )));
        }
        Ok(Self {
            tp: positives - fn_,
            fp,
            tn: total - positives - fp,
            fn_,
        })
    }

    pub fn rates(&self) -> Result<MetricsReport> {
        metrics(*self)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub type1: f64,
    pub type2: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsReport {
    fn fields(&self) -> [f64; 6] {
        [self.accuracy, self.type1, self.type2, self.precision, self.recall, self.f1]
    }

    fn from_fields(f: [f64; 6]) -> Self {
        Self {
            accuracy: f[0],
            type1: f[1],
            type2: f[2],
            precision: f[3],
            recall: f[4],
            f1: f[5],
        }
    }

    /// Field-wise arithmetic mean.
    pub fn mean(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::invalid("mean of no reports"));
        }
        let n = reports.len() as f64;
        let mut acc = [0.0; 6];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.fields()) {
                *a += v;
            }
        }
        Ok(Self::from_fields(acc.map(|a| a / n)))
    }

    /// Field-wise population standard deviation.
    pub fn std(reports: &[MetricsReport]) -> Result<Self> {
        let mean = Self::mean(reports)?.fields();
        let n = reports.len() as f64;
        let mut acc = [0.0; 6];
        for r in reports {
            for ((a, v), m) in acc.iter_mut().zip(r.fields()).zip(mean) {
                *a += (v - m) * (v - m);
            }
        }
        Ok(Self::from_fields(acc.map(|a| (a / n).sqrt())))
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Error rates are fractions of all pairs, so accuracy + type1 + type2 = 1.
pub fn metrics(c: ConfusionCounts) -> Result<MetricsReport> {
    let total = c.total();
    if total == 0 {
        return Err(Error::invalid("metrics of an empty confusion table"));
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsReport {
        accuracy: ratio(c.tp + c.tn, total),
        type1: ratio(c.fp, total),
        type2: ratio(c.fn_, total),
        precision,
        recall,
        f1,
    })
}
