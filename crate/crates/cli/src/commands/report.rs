//! Re-render saved metric reports as plain-text tables.

use std::path::Path;

use anyhow::{Context, Result};

use macoder_core::eval::tables::{evidence_table, metrics_table, per_label_table};
use macoder_core::eval::{EvidenceReport, MetricsReport};

use crate::config::RunConfigFile;

pub fn cmd_report(
    cfg: &RunConfigFile,
    metrics_override: Option<&Path>,
    evidence_override: Option<&Path>,
) -> Result<()> {
    let metrics_path = metrics_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.paths.output_dir.join("metrics.json"));
    let text = std::fs::read_to_string(&metrics_path)
        .with_context(|| format!("cannot read metrics {}", metrics_path.display()))?;
    let metrics: MetricsReport =
        serde_json::from_str(&text).context("metrics file does not match the report schema")?;
    let method = cfg.workflow.mode.clone();
    print!("{}", metrics_table(&[(method.clone(), &metrics)]));
    print!("{}", per_label_table(&metrics));

    let evidence_path = evidence_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.paths.output_dir.join("evidence.json"));
    if evidence_path.exists() {
        let text = std::fs::read_to_string(&evidence_path)?;
        let evidence: EvidenceReport = serde_json::from_str(&text)
            .context("evidence file does not match the report schema")?;
        print!("{}", evidence_table(&[(method, &evidence)]));
    }
    Ok(())
}
