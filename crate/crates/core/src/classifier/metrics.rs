use std::fmt::Write as _;

use super::model::{Model, SUB_CLASSES};
use crate::dataset::DatasetRecord;
use crate::labels::{DispatchKind, Role};

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub role: Role,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Nothing was predicted as this class; precision is reported as 0.
    pub precision_undefined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One row per role, in role order.
    pub rows: Vec<ClassRow>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub main_accuracy: f64,
    pub sub_accuracy: f64,
    /// `confusion[truth][predicted]` over sub labels.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

/// Scores paired truth and predictions. Both label slices must have equal
/// length.
pub fn report_from_labels(truth: &[(DispatchKind, Role)], predicted: &[(DispatchKind, Role)]) -> EvalReport {
    assert_eq!(truth.len(), predicted.len(), "truth and predictions differ in length");
    let mut confusion = vec![vec![0usize; SUB_CLASSES]; SUB_CLASSES];
    let mut main_hits = 0;
    for ((tm, ts), (pm, ps)) in truth.iter().zip(predicted) {
        confusion[ts.index()][ps.index()] += 1;
        main_hits += usize::from(tm == pm);
    }
    let total = truth.len();
    let rows: Vec<ClassRow> = Role::ALL
        .iter()
        .map(|&role| {
            let k = role.index();
            let tp = confusion[k][k];
            let predicted: usize = confusion.iter().map(|row| row[k]).sum();
            let support: usize = confusion[k].iter().sum();
            let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
            ClassRow {
                role,
                precision,
                recall,
                f1: f1(precision, recall),
                support,
                precision_undefined: predicted == 0,
            }
        })
        .collect();
    let mean = |f: fn(&ClassRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let sub_hits: usize = (0..SUB_CLASSES).map(|k| confusion[k][k]).sum();
    let ratio = |hits: usize| if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    EvalReport {
        macro_precision: mean(|r| r.precision),
        macro_recall: mean(|r| r.recall),
        macro_f1: mean(|r| r.f1),
        main_accuracy: ratio(main_hits),
        sub_accuracy: ratio(sub_hits),
        rows,
        confusion,
        total,
    }
}

pub fn evaluate(model: &Model, records: &[DatasetRecord]) -> EvalReport {
    let truth: Vec<_> = records.iter().map(|r| (r.main_label, r.sub_label)).collect();
    let predicted: Vec<_> = records
        .iter()
        .map(|r| {
            let p = model.predict(&r.tokens);
            (p.main, p.sub)
        })
        .collect();
    report_from_labels(&truth, &predicted)
}

impl EvalReport {
    /// Aligned per-class table followed by the macro row and accuracies.
    pub fn to_table(&self) -> String {
        let mut out =
            format!("{:<16}{:>10}{:>10}{:>10}{:>10}\n", "Class", "Precision", "Recall", "F1-score", "Support");
        for r in &self.rows {
            let flag = if r.precision_undefined { "*" } else { "" };
            let p = format!("{:.4}{flag}", r.precision);
            let _ = writeln!(out, "{:<16}{:>10}{:>10.4}{:>10.4}{:>10}", r.role.as_str(), p, r.recall, r.f1, r.support);
        }
        let _ = writeln!(
            out,
            "{:<16}{:>10.4}{:>10.4}{:>10.4}{:>10}",
            "Macro avg", self.macro_precision, self.macro_recall, self.macro_f1, self.total
        );
        let _ = writeln!(out, "main-label accuracy {:.4}", self.main_accuracy);
        let _ = writeln!(out, "sub-label accuracy {:.4}", self.sub_accuracy);
        if self.rows.iter().any(|r| r.precision_undefined) {
            out.push_str("* no predictions for this class; precision reported as 0\n");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support,precision_undefined\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{},{}",
                r.role, r.precision, r.recall, r.f1, r.support, r.precision_undefined
            );
        }
        let _ = writeln!(
            out,
            "macro_avg,{:.6},{:.6},{:.6},{},false",
            self.macro_precision, self.macro_recall, self.macro_f1, self.total
        );
        let _ = writeln!(out, "main_accuracy,{:.6},,,{},false", self.main_accuracy, self.total);
        let _ = writeln!(out, "sub_accuracy,{:.6},,,{},false", self.sub_accuracy, self.total);
        out
    }
}
