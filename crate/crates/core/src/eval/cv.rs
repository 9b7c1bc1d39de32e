//! Cross-validation harness: per-fold accuracy reports and the aggregate
//! mean with sample standard deviation.

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::kfold::kfold_split;
use crate::tensor::atomic_write;

#[derive(Debug, Clone)]
pub struct PredRecord {
    pub video_id: String,
    pub true_label: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone)]
pub struct FoldReport {
    pub fold_index: usize,
    pub correct: usize,
    pub total: usize,
    pub predictions: Vec<PredRecord>,
}

impl FoldReport {
    pub fn from_predictions(fold_index: usize, predictions: Vec<PredRecord>) -> Result<FoldReport> {
        if predictions.is_empty() {
            return Err(Error::EmptyInput(format!(
                "fold {} produced no predictions",
                fold_index
            )));
        }
        let correct = predictions
            .iter()
            .filter(|p| p.predicted == p.true_label)
            .count();
        Ok(FoldReport {
            fold_index,
            correct,
            total: predictions.len(),
            predictions,
        })
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone)]
pub struct CvSummary {
    pub mean_accuracy: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single fold.
    pub std_accuracy: f64,
    pub folds: Vec<FoldReport>,
}

impl CvSummary {
    pub fn from_folds(folds: Vec<FoldReport>) -> Result<CvSummary> {
        if folds.is_empty() {
            return Err(Error::EmptyInput("no folds to summarize".into()));
        }
        let k = folds.len() as f64;
        let mean = folds.iter().map(|f| f.accuracy()).sum::<f64>() / k;
        let std = if folds.len() < 2 {
            0.0
        } else {
            let ss: f64 = folds.iter().map(|f| (f.accuracy() - mean).powi(2)).sum();
            (ss / (k - 1.0)).sqrt()
        };
        Ok(CvSummary {
            mean_accuracy: mean,
            std_accuracy: std,
            folds,
        })
    }

    /// "95.1 ± 1.7" style: percent with one decimal.
    pub fn format_percent(&self) -> String {
        format!(
            "{:.1} ± {:.1}",
            self.mean_accuracy * 100.0,
            self.std_accuracy * 100.0
        )
    }
}

/// Run a train/test closure over every stratified fold and aggregate.
/// The runner receives (fold index, train indices, test indices) and
/// returns one prediction per test video.
pub fn evaluate_cv<F>(labels: &[usize], k: usize, seed: u64, mut runner: F) -> Result<CvSummary>
where
    F: FnMut(usize, &[usize], &[usize]) -> Result<Vec<PredRecord>>,
{
    let splits = kfold_split(labels, k, seed)?;
    let mut folds = Vec::with_capacity(k);
    for (fold_index, (train, test)) in splits.iter().enumerate() {
        let predictions = runner(fold_index, train, test)?;
        folds.push(FoldReport::from_predictions(fold_index, predictions)?);
    }
    CvSummary::from_folds(folds)
}

/// `report.csv`: header `fold,accuracy`, one row per fold.
pub fn write_report_csv(summary: &CvSummary, path: &Path) -> Result<()> {
    let mut out = String::from("fold,accuracy\n");
    for fold in &summary.folds {
        out.push_str(&format!("{},{}\n", fold.fold_index, fold.accuracy()));
    }
    atomic_write(path, out.as_bytes())
}

/// `summary.txt`: the formatted mean ± std line.
pub fn write_summary_txt(summary: &CvSummary, path: &Path) -> Result<()> {
    atomic_write(path, format!("{}\n", summary.format_percent()).as_bytes())
}
