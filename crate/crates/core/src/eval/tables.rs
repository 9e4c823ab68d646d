//! Plain-text report tables: method rows with Macro-F1/Micro-F1 columns, the
//! evidence F1/Precision/Recall layout, and ablation deltas.

use super::{DeltaReport, EvidenceReport, MetricsReport};

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

/// One row per (method, report): `Method  Macro-F1  Micro-F1`.
pub fn metrics_table(rows: &[(String, &MetricsReport)]) -> String {
    let width = rows
        .iter()
        .map(|(name, _)| name.len())
        .chain(std::iter::once("Method".len()))
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    out.push_str(&format!("{:<width$}  Macro-F1  Micro-F1\n", "Method"));
    for (name, report) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>8}\n",
            name,
            fmt3(report.macro_avg.f1),
            fmt3(report.micro.f1),
        ));
    }
    out
}

/// Evidence layout: `Method  F1  Precision  Recall`.
pub fn evidence_table(rows: &[(String, &EvidenceReport)]) -> String {
    let width = rows
        .iter()
        .map(|(name, _)| name.len())
        .chain(std::iter::once("Method".len()))
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<width$}  {:>6}  {:>9}  {:>6}\n",
        "Method", "F1", "Precision", "Recall"
    ));
    for (name, report) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>9}  {:>6}\n",
            name,
            fmt3(report.f1),
            fmt3(report.precision),
            fmt3(report.recall),
        ));
    }
    out
}

/// Ablation layout: baseline row plus delta columns for each variant.
pub fn delta_table(rows: &[(String, &MetricsReport, &DeltaReport)]) -> String {
    let width = rows
        .iter()
        .map(|(name, _, _)| name.len())
        .chain(std::iter::once("Method".len()))
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<width$}  Macro-F1  Micro-F1  dMacro-F1  dMicro-F1\n",
        "Method"
    ));
    for (name, report, delta) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>8}  {:>+9.3}  {:>+9.3}\n",
            name,
            fmt3(report.macro_avg.f1),
            fmt3(report.micro.f1),
            delta.macro_avg.f1,
            delta.micro.f1,
        ));
    }
    out
}

/// Per-label breakdown appended under the headline table.
pub fn per_label_table(report: &MetricsReport) -> String {
    let width = report
        .label_space
        .iter()
        .map(String::len)
        .chain(std::iter::once("Label".len()))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<width$}  {:>4}  {:>4}  {:>4}  {:>9}  {:>6}  {:>6}\n",
        "Label", "TP", "FP", "FN", "Precision", "Recall", "F1"
    ));
    for label in &report.label_space {
        let m = report.per_label.get(label).copied().unwrap_or_default();
        out.push_str(&format!(
            "{:<width$}  {:>4}  {:>4}  {:>4}  {:>9}  {:>6}  {:>6}\n",
            label,
            m.true_pos,
            m.false_pos,
            m.false_neg,
            fmt3(m.precision),
            fmt3(m.recall),
            fmt3(m.f1),
        ));
    }
    out
}
