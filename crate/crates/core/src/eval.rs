//! Confusion matrices and the derived per-class and overall metrics.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::dataset::ClassCatalog;
use crate::grid::ImageGrid;
use crate::io::{save_png, IoError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class id {id} outside {classes} classes")]
    BadClassId { id: usize, classes: usize },
    #[error("confusion matrix has no entries")]
    EmptyMatrix,
    #[error("cannot merge matrices over different catalogs")]
    CatalogMismatch,
    #[error(transparent)]
    Io(#[from] IoError),
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(IoError::Io(e))
    }
}

/// `counts[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    catalog: ClassCatalog,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(catalog: ClassCatalog) -> Self {
        let n = catalog.len();
        Self {
            catalog,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn catalog(&self) -> &ClassCatalog {
        &self.catalog
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<(), EvalError> {
        let classes = self.classes();
        for id in [truth, predicted] {
            if id >= classes {
                return Err(EvalError::BadClassId { id, classes });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn accumulate(
        &mut self,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(), EvalError> {
        pairs.into_iter().try_for_each(|(t, p)| self.add(t, p))
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        if self.catalog != other.catalog {
            return Err(EvalError::CatalogMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Rows scaled to sum to 1; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&v| if s == 0 { 0.0 } else { v as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }
}

/// Metrics for one class. `None` marks a 0/0 ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub overall_accuracy: f64,
    /// Means over the classes where the value is defined.
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_specificity: Option<f64>,
    pub macro_f_score: Option<f64>,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let n = cm.classes();
    let diag: u64 = (0..n).map(|i| cm.count(i, i)).sum();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|i| {
            let tp = cm.count(i, i);
            let support: u64 = cm.rows()[i].iter().sum();
            let predicted: u64 = (0..n).map(|t| cm.count(t, i)).sum();
            let (fp, fn_) = (predicted - tp, support - tp);
            let tn = total - tp - fp - fn_;
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let specificity = ratio(tn, tn + fp);
            let f_score = match (precision, recall) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                (Some(_), Some(_)) => Some(0.0),
                _ => None,
            };
            ClassMetrics {
                name: cm.catalog().names()[i].clone(),
                support,
                precision,
                recall,
                specificity,
                f_score,
            }
        })
        .collect();
    Ok(MetricsReport {
        overall_accuracy: diag as f64 / total as f64,
        macro_precision: mean_defined(per_class.iter().map(|c| c.precision)),
        macro_recall: mean_defined(per_class.iter().map(|c| c.recall)),
        macro_specificity: mean_defined(per_class.iter().map(|c| c.specificity)),
        macro_f_score: mean_defined(per_class.iter().map(|c| c.f_score)),
        per_class,
        total,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// `class,support,precision,recall,specificity,f_score,accuracy`: one row per
/// class, then `__overall__` with the total in the support column, the macro
/// means and overall accuracy. Undefined cells are left empty.
pub fn write_report<W: Write>(mut w: W, report: &MetricsReport) -> Result<(), EvalError> {
    writeln!(w, "class,support,precision,recall,specificity,f_score,accuracy")?;
    for c in &report.per_class {
        writeln!(
            w,
            "{},{},{},{},{},{},",
            c.name,
            c.support,
            cell(c.precision),
            cell(c.recall),
            cell(c.specificity),
            cell(c.f_score)
        )?;
    }
    writeln!(
        w,
        "__overall__,{},{},{},{},{},{}",
        report.total,
        cell(report.macro_precision),
        cell(report.macro_recall),
        cell(report.macro_specificity),
        cell(report.macro_f_score),
        cell(Some(report.overall_accuracy))
    )?;
    Ok(())
}

/// Header row of predicted class names, then one row per true class.
pub fn write_confusion<W: Write>(mut w: W, cm: &ConfusionMatrix) -> Result<(), EvalError> {
    let names = cm.catalog().names();
    writeln!(w, "truth\\predicted,{}", names.join(","))?;
    for (name, row) in names.iter().zip(cm.rows()) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(w, "{name},{}", cells.join(","))?;
    }
    Ok(())
}

/// Row-normalized grayscale heatmap, `cell` pixels per entry; black is 0,
/// white is the whole row.
pub fn confusion_heatmap(cm: &ConfusionMatrix, cell: usize) -> ImageGrid {
    let norm = cm.row_normalized();
    let cell = cell.max(1);
    let side = cm.classes() * cell;
    ImageGrid::from_fn(side, side, 1, |y, x, _| 255.0 * norm[y / cell][x / cell])
}

pub fn save_heatmap(path: &Path, cm: &ConfusionMatrix) -> Result<(), EvalError> {
    Ok(save_png(path, &confusion_heatmap(cm, 32))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(n: usize) -> ClassCatalog {
        ClassCatalog::new((0..n).map(|i| format!("c{i}")).collect()).unwrap()
    }

    fn matrix(rows: &[&[u64]]) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::new(catalog(rows.len()));
        for (t, row) in rows.iter().enumerate() {
            for (p, &k) in row.iter().enumerate() {
                for _ in 0..k {
                    cm.add(t, p).unwrap();
                }
            }
        }
        cm
    }

    #[test]
    fn two_class_example() {
        let cm = matrix(&[&[8, 2], &[1, 9]]);
        let m = metrics(&cm).unwrap();
        assert!((m.overall_accuracy - 0.85).abs() < 1e-12);
        assert!((m.per_class[0].precision.unwrap() - 8.0 / 9.0).abs() < 1e-12);
        assert!((m.per_class[0].recall.unwrap() - 0.8).abs() < 1e-12);
        let f = 2.0 * (8.0 / 9.0) * 0.8 / (8.0 / 9.0 + 0.8);
        assert!((m.per_class[0].f_score.unwrap() - f).abs() < 1e-12);
        assert!((m.per_class[0].f_score.unwrap() - 0.842105).abs() < 1e-6);
    }

    #[test]
    fn hand_worked_two_class() {
        let m = metrics(&matrix(&[&[3, 1], &[2, 4]])).unwrap();
        assert!((m.overall_accuracy - 0.7).abs() < 1e-12);
        let c0 = &m.per_class[0];
        assert!((c0.precision.unwrap() - 0.6).abs() < 1e-12);
        assert!((c0.recall.unwrap() - 0.75).abs() < 1e-12);
        assert!((c0.f_score.unwrap() - 2.0 * 0.6 * 0.75 / 1.35).abs() < 1e-12);
        assert!((c0.f_score.unwrap() - 0.6667).abs() < 1e-4);
        // TN for class 0 is the 4 class-1 hits, FP is 2
        assert!((c0.specificity.unwrap() - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn class_permutation_keeps_summaries() {
        let a = metrics(&matrix(&[&[5, 1, 2], &[0, 7, 1], &[3, 0, 4]])).unwrap();
        // swap classes 0 and 2
        let b = metrics(&matrix(&[&[4, 0, 3], &[1, 7, 0], &[2, 1, 5]])).unwrap();
        assert_eq!(a.overall_accuracy, b.overall_accuracy);
        assert_eq!(a.per_class[0].recall, b.per_class[2].recall);
        assert_eq!(a.per_class[0].precision, b.per_class[2].precision);
        assert!((a.macro_f_score.unwrap() - b.macro_f_score.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn diagonal_is_perfect() {
        let m = metrics(&matrix(&[&[3, 0, 0], &[0, 4, 0], &[0, 0, 5]])).unwrap();
        assert_eq!(m.overall_accuracy, 1.0);
        assert_eq!(m.macro_f_score, Some(1.0));
        assert_eq!(m.macro_specificity, Some(1.0));
    }

    #[test]
    fn undefined_cells_are_excluded_from_means() {
        // class 2 never occurs and is never predicted
        let m = metrics(&matrix(&[&[2, 1, 0], &[0, 3, 0], &[0, 0, 0]])).unwrap();
        assert_eq!(m.per_class[2].precision, None);
        assert_eq!(m.per_class[2].recall, None);
        assert_eq!(m.per_class[2].f_score, None);
        let p = (1.0 + 0.75) / 2.0;
        assert!((m.macro_precision.unwrap() - p).abs() < 1e-12);
    }

    #[test]
    fn zero_precision_and_recall_give_zero_f() {
        let m = metrics(&matrix(&[&[0, 2], &[3, 0]])).unwrap();
        assert_eq!(m.per_class[0].f_score, Some(0.0));
        assert_eq!(m.overall_accuracy, 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(metrics(&matrix(&[&[0, 0], &[0, 0]])), Err(EvalError::EmptyMatrix)));
        let mut cm = ConfusionMatrix::new(catalog(2));
        assert!(matches!(cm.add(0, 2), Err(EvalError::BadClassId { id: 2, classes: 2 })));
        assert!(matches!(
            cm.merge(&ConfusionMatrix::new(catalog(3))),
            Err(EvalError::CatalogMismatch)
        ));
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = matrix(&[&[1, 0], &[0, 1]]);
        a.merge(&matrix(&[&[0, 2], &[0, 1]])).unwrap();
        assert_eq!(a.rows(), &[vec![1, 2], vec![0, 2]]);
    }

    #[test]
    fn csv_outputs() {
        let cm = matrix(&[&[8, 2], &[1, 9]]);
        let mut buf = Vec::new();
        write_confusion(&mut buf, &cm).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "truth\\predicted,c0,c1\nc0,8,2\nc1,1,9\n");
        let mut buf = Vec::new();
        write_report(&mut buf, &metrics(&cm).unwrap()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 2 + 1);
        assert!(lines[3].starts_with("__overall__,20,"));
        assert!(lines[3].ends_with(",0.850000"));
    }

    #[test]
    fn heatmap_shading() {
        let cm = matrix(&[&[1, 0], &[1, 1]]);
        let img = confusion_heatmap(&cm, 4);
        assert_eq!(img.shape(), (8, 8, 1));
        assert_eq!(img.get(0, 0, 0), 255.0);
        assert_eq!(img.get(3, 7, 0), 0.0);
        assert_eq!(img.get(4, 0, 0), 127.5);
    }
}
