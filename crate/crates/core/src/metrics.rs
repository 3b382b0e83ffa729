//! Confusion matrices, F1/accuracy and the metrics CSV.

use std::fmt::{self, Write as _};
use std::path::Path;

use thiserror::Error;

pub const CLASS_NAMES: [&str; 4] = ["SINUS", "AFIB", "OTHER", "NOISE"];
const K: usize = CLASS_NAMES.len();

pub const METRICS_HEADER: [&str; 12] = [
    "round", "scenario", "client_id", "split", "loss", "accuracy", "f1_macro", "f1_sinus", "f1_afib", "f1_other", "f1_noise", "lr",
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{preds} predictions for {labels} labels")]
    Shape { preds: usize, labels: usize },
    #[error("class id {0} out of range")]
    Class(usize),
    #[error("accuracy of an empty evaluation")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|c| self.counts[c][c]).sum()
    }
}

pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::Shape {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= K {
            return Err(MetricsError::Class(p));
        }
        if l >= K {
            return Err(MetricsError::Class(l));
        }
        cm.counts[l][p] += 1;
    }
    Ok(cm)
}

/// Which classes enter the macro average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum F1Classes {
    #[default]
    All,
    /// SINUS, AFIB and OTHER only.
    Cinc3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Scores {
    pub per_class: [f64; K],
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class F1 (`0/0 → 0` throughout) and their unweighted mean over all
/// four classes.
pub fn f1_scores(cm: &ConfusionMatrix) -> F1Scores {
    f1_scores_over(cm, F1Classes::All)
}

pub fn f1_scores_over(cm: &ConfusionMatrix, classes: F1Classes) -> F1Scores {
    let mut per_class = [0.0; K];
    for (c, f1) in per_class.iter_mut().enumerate() {
        let tp = cm.counts[c][c];
        let predicted: u64 = (0..K).map(|r| cm.counts[r][c]).sum();
        let actual: u64 = cm.counts[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        *f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    let used = match classes {
        F1Classes::All => K,
        F1Classes::Cinc3 => 3,
    };
    let macro_f1 = per_class[..used].iter().sum::<f64>() / used as f64;
    F1Scores { per_class, macro_f1 }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match cm.total() {
        0 => Err(MetricsError::Empty),
        n => Ok(cm.trace() as f64 / n as f64),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    Local,
    Central,
    Federated,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Local => "local",
            Scenario::Central => "central",
            Scenario::Federated => "federated",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub scenario: Scenario,
    /// `c<k>` for a client and `global` for a shared model. Closing rows use
    /// `best` for the best-round model and `mean` for the local average.
    pub client_id: String,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1: [f64; K],
    pub lr: f64,
}

impl MetricsRow {
    /// Row for an evaluation summarized by `cm`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_confusion(
        round: usize,
        scenario: Scenario,
        client_id: &str,
        split: Split,
        loss: f64,
        cm: &ConfusionMatrix,
        classes: F1Classes,
        lr: f64,
    ) -> Result<Self, MetricsError> {
        let f1 = f1_scores_over(cm, classes);
        Ok(Self {
            round,
            scenario,
            client_id: client_id.to_string(),
            split,
            loss,
            accuracy: accuracy(cm)?,
            f1_macro: f1.macro_f1,
            f1: f1.per_class,
            lr,
        })
    }

    fn fields(&self) -> [String; 12] {
        let d = |v: f64| format!("{v:.6}");
        [
            self.round.to_string(),
            self.scenario.to_string(),
            self.client_id.clone(),
            self.split.to_string(),
            d(self.loss),
            d(self.accuracy),
            d(self.f1_macro),
            d(self.f1[0]),
            d(self.f1[1]),
            d(self.f1[2]),
            d(self.f1[3]),
            d(self.lr),
        ]
    }
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text confusion matrix with per-class and summary scores.
pub fn format_confusion(cm: &ConfusionMatrix, classes: F1Classes) -> String {
    let f1 = f1_scores_over(cm, classes);
    let mut s = String::from("true\\pred");
    for n in CLASS_NAMES {
        let _ = write!(s, " {n:>7}");
    }
    s.push_str("      f1\n");
    for (c, row) in cm.counts.iter().enumerate() {
        let _ = write!(s, "{:<9}", CLASS_NAMES[c]);
        for v in row {
            let _ = write!(s, " {v:>7}");
        }
        let _ = writeln!(s, " {:>7.4}", f1.per_class[c]);
    }
    let acc = accuracy(cm).unwrap_or(0.0);
    let _ = writeln!(s, "accuracy {acc:.6}");
    let _ = writeln!(s, "f1_macro {:.6}", f1.macro_f1);
    s
}
