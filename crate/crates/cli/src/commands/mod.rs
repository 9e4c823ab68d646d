//! Command implementations and the file-format helpers they share.

pub mod ablate;
pub mod eval;
pub mod ingest;
pub mod report;
pub mod run;
pub mod soap;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use macoder_core::corpus::{load_corpus, Corpus, SoapNote};
use macoder_core::icd::{load_dictionary, CodeDictionary};
use macoder_core::workflow::WorkflowResult;

use crate::config::{read_code_lines, RunConfigFile};

/// Exit classification: 0 all complete, 2 partial per-note failures,
/// configuration and fatal errors surface as anyhow errors (exit 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandStatus {
    AllComplete,
    PartialFailures,
}

impl CommandStatus {
    pub fn exit_code(self) -> u8 {
        match self {
            CommandStatus::AllComplete => 0,
            CommandStatus::PartialFailures => 2,
        }
    }
}

pub fn load_corpus_file(cfg: &RunConfigFile) -> Result<Corpus> {
    let corpus = load_corpus(&cfg.paths.corpus)
        .with_context(|| format!("cannot load corpus {}", cfg.paths.corpus.display()))?;
    if corpus.is_empty() {
        bail!("corpus {} has no notes", cfg.paths.corpus.display());
    }
    Ok(corpus)
}

pub fn load_dictionary_file(cfg: &RunConfigFile) -> Result<Option<CodeDictionary>> {
    match &cfg.paths.dictionary {
        Some(path) => {
            let load = load_dictionary(path)
                .with_context(|| format!("cannot load dictionary {}", path.display()))?;
            for rejected in &load.rejected {
                log::warn!(
                    "dictionary line {}: rejected code {:?} ({})",
                    rejected.line,
                    rejected.raw_code,
                    rejected.reason
                );
            }
            if !load.rejected.is_empty() {
                eprintln!(
                    "dictionary: {} row(s) rejected by the ICD-9 grammar",
                    load.rejected.len()
                );
            }
            Ok(Some(load.dictionary))
        }
        None => Ok(None),
    }
}

/// Label space resolution order: explicit file, then the candidates file,
/// then the union of gold codes.
pub fn resolve_label_space(cfg: &RunConfigFile, corpus: &Corpus) -> Result<Vec<String>> {
    if let Some(path) = &cfg.evaluation.label_space {
        let labels = read_code_lines(path)?;
        if labels.is_empty() {
            bail!("label space file {} is empty", path.display());
        }
        return Ok(labels);
    }
    if let Some(path) = &cfg.paths.candidates {
        let labels = read_code_lines(path)?;
        if !labels.is_empty() {
            return Ok(labels);
        }
    }
    let labels: Vec<String> = corpus.all_codes().into_iter().collect();
    if labels.is_empty() {
        bail!("cannot derive a label space: no gold codes in the corpus");
    }
    Ok(labels)
}

pub fn write_results(path: &Path, results: &[WorkflowResult]) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("cannot write results {}", path.display()))?;
    for result in results {
        let line = serde_json::to_string(result)?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<WorkflowResult>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read results {}", path.display()))?;
    let mut results = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let result: WorkflowResult = serde_json::from_str(line)
            .with_context(|| format!("results line {}: invalid record", idx + 1))?;
        results.push(result);
    }
    Ok(results)
}

/// One line of the SOAP sidecar file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoapRecord {
    pub note_id: String,
    pub subjective: String,
    pub objective: String,
    pub assessment: String,
    pub plan: String,
    pub degenerate: bool,
}

impl SoapRecord {
    pub fn from_note(soap: &SoapNote) -> Self {
        Self {
            note_id: soap.note_id.clone(),
            subjective: soap.subjective.clone(),
            objective: soap.objective.clone(),
            assessment: soap.assessment.clone(),
            plan: soap.plan.clone(),
            degenerate: soap.is_degenerate(),
        }
    }

    pub fn to_note(&self) -> SoapNote {
        SoapNote {
            note_id: self.note_id.clone(),
            subjective: self.subjective.clone(),
            objective: self.objective.clone(),
            assessment: self.assessment.clone(),
            plan: self.plan.clone(),
        }
    }
}

pub fn read_soap_sidecar(path: &Path) -> Result<BTreeMap<String, SoapNote>> {
    let mut forms = BTreeMap::new();
    if !path.exists() {
        return Ok(forms);
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read SOAP sidecar {}", path.display()))?;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SoapRecord = serde_json::from_str(line)
            .with_context(|| format!("SOAP sidecar line {}: invalid record", idx + 1))?;
        forms.insert(record.note_id.clone(), record.to_note());
    }
    Ok(forms)
}

pub fn write_soap_sidecar(
    path: &Path,
    corpus: &Corpus,
    forms: &BTreeMap<String, SoapNote>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("cannot write SOAP sidecar {}", path.display()))?;
    // Corpus order keeps the sidecar reproducible across reruns.
    for note in corpus.notes() {
        if let Some(soap) = forms.get(&note.note_id) {
            let line = serde_json::to_string(&SoapRecord::from_note(soap))?;
            writeln!(file, "{line}")?;
        }
    }
    Ok(())
}

pub fn ensure_output_dir(cfg: &RunConfigFile) -> Result<()> {
    std::fs::create_dir_all(&cfg.paths.output_dir).with_context(|| {
        format!(
            "cannot create output directory {}",
            cfg.paths.output_dir.display()
        )
    })
}
