//! Ablation grids: run agent-subset and strategy-toggle variants against a
//! shared cache, then emit a delta table against the base configuration.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use macoder_core::eval::tables::delta_table;
use macoder_core::eval::{compare_runs, DeltaReport, MetricsReport, PrfDelta};
use macoder_core::gateway::ApproxCounter;
use macoder_core::workflow::run_batch;

use crate::config::RunConfigFile;
use crate::lock::CacheLock;
use crate::provider::build_provider;

use super::{
    ensure_output_dir, eval::evaluate_results, load_corpus_file, load_dictionary_file,
    read_soap_sidecar, resolve_label_space, CommandStatus,
};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    #[serde(default)]
    pub variant: Vec<Variant>,
}

/// One grid row: overrides applied on top of the base workflow config.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub agents: Option<Vec<String>>,
    #[serde(default)]
    pub confrontation: Option<bool>,
    #[serde(default)]
    pub external_knowledge: Option<bool>,
}

fn variant_config(base: &RunConfigFile, variant: &Variant) -> RunConfigFile {
    let mut cfg = base.clone();
    if let Some(agents) = &variant.agents {
        cfg.workflow.agents = Some(agents.clone());
    }
    if let Some(confrontation) = variant.confrontation {
        cfg.workflow.confrontation = confrontation;
    }
    if let Some(knowledge) = variant.external_knowledge {
        cfg.workflow.external_knowledge = knowledge;
    }
    cfg
}

pub fn cmd_ablate(cfg: &RunConfigFile, grid_path: &Path) -> Result<CommandStatus> {
    cfg.validate_paths()?;
    let grid_text = std::fs::read_to_string(grid_path)
        .with_context(|| format!("cannot read grid {}", grid_path.display()))?;
    let grid: GridFile = toml::from_str(&grid_text)
        .with_context(|| format!("grid {} is not valid TOML", grid_path.display()))?;
    if grid.variant.is_empty() {
        bail!("ablation grid {} has no variants", grid_path.display());
    }

    let corpus = load_corpus_file(cfg)?;
    let dictionary = load_dictionary_file(cfg)?;
    let label_space = resolve_label_space(cfg, &corpus)?;
    let soap_forms = {
        let sidecar = cfg.soap_sidecar_path();
        if sidecar.exists() {
            read_soap_sidecar(&sidecar)?
        } else {
            BTreeMap::new()
        }
    };

    // All variants share one provider so coinciding requests hit the cache.
    let _lock = cfg
        .paths
        .cache
        .as_deref()
        .map(CacheLock::acquire)
        .transpose()?;
    let provider = build_provider(cfg)?;

    let base_workflow = cfg.workflow_config(dictionary.as_ref())?;
    let (base_results, _) = run_batch(
        &corpus,
        &soap_forms,
        &base_workflow,
        provider.as_ref(),
        &ApproxCounter,
    )?;
    let base_eval = evaluate_results(&base_results, &corpus, &label_space, None)?;

    let mut reports: Vec<(String, MetricsReport, DeltaReport)> = Vec::new();
    let mut variant_errors: Vec<(String, String)> = Vec::new();
    for variant in &grid.variant {
        let variant_cfg = variant_config(cfg, variant);
        let outcome = (|| -> Result<(MetricsReport, DeltaReport)> {
            let workflow = variant_cfg.workflow_config(dictionary.as_ref())?;
            let (results, _) = run_batch(
                &corpus,
                &soap_forms,
                &workflow,
                provider.as_ref(),
                &ApproxCounter,
            )?;
            let eval = evaluate_results(&results, &corpus, &label_space, None)?;
            let delta = compare_runs(&base_eval.metrics, &eval.metrics)?;
            Ok((eval.metrics, delta))
        })();
        match outcome {
            Ok((metrics, delta)) => reports.push((variant.name.clone(), metrics, delta)),
            Err(err) => {
                // A broken variant must not sink the rest of the grid.
                eprintln!("variant {} failed: {err:#}", variant.name);
                variant_errors.push((variant.name.clone(), format!("{err:#}")));
            }
        }
    }

    let zero_delta = DeltaReport {
        micro: PrfDelta::default(),
        macro_avg: PrfDelta::default(),
        per_label_f1: BTreeMap::new(),
    };
    let mut rows: Vec<(String, &MetricsReport, &DeltaReport)> =
        vec![("base".to_string(), &base_eval.metrics, &zero_delta)];
    for (name, metrics, delta) in &reports {
        rows.push((name.clone(), metrics, delta));
    }
    let table = delta_table(&rows);
    print!("{table}");

    ensure_output_dir(cfg)?;
    let summary = serde_json::json!({
        "base": base_eval.metrics,
        "variants": reports
            .iter()
            .map(|(name, metrics, delta)| serde_json::json!({
                "name": name,
                "metrics": metrics,
                "delta": delta,
            }))
            .collect::<Vec<_>>(),
        "errors": variant_errors
            .iter()
            .map(|(name, error)| serde_json::json!({"name": name, "error": error}))
            .collect::<Vec<_>>(),
    });
    std::fs::write(
        cfg.paths.output_dir.join("ablation.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    std::fs::write(cfg.paths.output_dir.join("ablation.txt"), table)?;

    if variant_errors.is_empty() {
        Ok(CommandStatus::AllComplete)
    } else {
        Ok(CommandStatus::PartialFailures)
    }
}
