//! Declarative run configuration: one TOML file drives every command, with
//! `--set section.key=value` overrides for scalar fields. Secrets never live
//! here — the remote provider reads its API key from an environment variable.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use macoder_core::agents::AgentRole;
use macoder_core::gateway::RemoteConfig;
use macoder_core::icd::{build_candidate_set, CodeDictionary};
use macoder_core::workflow::{WorkflowConfig, WorkflowMode};
use macoder_core::GatewayParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub paths: PathsSection,
    #[serde(default)]
    pub workflow: WorkflowSection,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub corpus: PathBuf,
    #[serde(default)]
    pub dictionary: Option<PathBuf>,
    #[serde(default)]
    pub candidates: Option<PathBuf>,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub soap_sidecar: Option<PathBuf>,
    #[serde(default)]
    pub evidence: Option<PathBuf>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkflowSection {
    pub mode: String,
    pub agents: Option<Vec<String>>,
    pub confrontation: bool,
    pub external_knowledge: bool,
    /// The run's N_c: how many candidate codes enter the knowledge block.
    pub candidate_size: usize,
    pub parallelism: usize,
    pub retry_budget: usize,
    pub dispute_patterns: Option<Vec<String>>,
}

impl Default for WorkflowSection {
    fn default() -> Self {
        Self {
            mode: "mac1".to_string(),
            agents: None,
            confrontation: true,
            external_knowledge: false,
            candidate_size: 50,
            parallelism: 1,
            retry_budget: 2,
            dispute_patterns: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewaySection {
    pub provider: String,
    pub model_id: String,
    pub temperature: f64,
    pub token_budget: usize,
    pub max_response_tokens: usize,
    pub remote: RemoteSection,
    pub replay: ReplaySection,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            provider: "replay".to_string(),
            model_id: "gpt-4".to_string(),
            temperature: 0.1,
            token_budget: 8000,
            max_response_tokens: 1000,
            remote: RemoteSection::default(),
            replay: ReplaySection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteSection {
    pub endpoint: String,
    pub api_key_env: String,
    pub requests_per_minute: u32,
    pub max_attempts: usize,
    pub timeout_secs: u64,
    pub backoff_base_ms: u64,
}

impl Default for RemoteSection {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            api_key_env: "MACODER_API_KEY".to_string(),
            requests_per_minute: 60,
            max_attempts: 5,
            timeout_secs: 120,
            backoff_base_ms: 500,
        }
    }
}

impl RemoteSection {
    pub fn to_remote_config(&self) -> RemoteConfig {
        RemoteConfig {
            endpoint: self.endpoint.clone(),
            api_key_env: self.api_key_env.clone(),
            requests_per_minute: self.requests_per_minute,
            max_attempts: self.max_attempts,
            timeout: Duration::from_secs(self.timeout_secs),
            backoff_base_ms: self.backoff_base_ms,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplaySection {
    pub scripts: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// File with one label per line; defaults to the candidates file, then
    /// to the union of gold codes.
    pub label_space: Option<PathBuf>,
}

/// Apply one `section.key=value` override onto the parsed TOML tree.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw_value) = spec
        .split_once('=')
        .with_context(|| format!("override {spec:?} must look like section.key=value"))?;
    let value = if let Ok(b) = raw_value.parse::<bool>() {
        toml::Value::Boolean(b)
    } else if let Ok(i) = raw_value.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = raw_value.parse::<f64>() {
        toml::Value::Float(f)
    } else {
        toml::Value::String(raw_value.to_string())
    };
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    let (last, parents) = segments
        .split_last()
        .context("override path must not be empty")?;
    for segment in parents {
        node = node
            .as_table_mut()
            .with_context(|| format!("override path {path:?} crosses a non-table"))?
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .with_context(|| format!("override path {path:?} crosses a non-table"))?
        .insert(last.to_string(), value);
    Ok(())
}

/// Load the config file and apply command-line overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfigFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut value: toml::Value = text
        .parse()
        .with_context(|| format!("config {} is not valid TOML", path.display()))?;
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let cfg: RunConfigFile = value
        .try_into()
        .context("config does not match the expected schema")?;
    Ok(cfg)
}

impl RunConfigFile {
    pub fn mode(&self) -> Result<WorkflowMode> {
        match self.workflow.mode.to_ascii_lowercase().as_str() {
            "mac1" | "mac-1" | "mac_i" | "mac-i" => Ok(WorkflowMode::Mac1),
            "mac2" | "mac-2" | "mac_ii" | "mac-ii" => Ok(WorkflowMode::Mac2),
            other => bail!("unknown workflow mode {other:?} (expected mac1 or mac2)"),
        }
    }

    pub fn agent_set(&self) -> Result<BTreeSet<AgentRole>> {
        match &self.workflow.agents {
            Some(names) => {
                let mut set = BTreeSet::new();
                for name in names {
                    let role = AgentRole::parse_name(name)
                        .with_context(|| format!("unknown agent role {name:?}"))?;
                    set.insert(role);
                }
                Ok(set)
            }
            None => Ok(match self.mode()? {
                WorkflowMode::Mac1 => [
                    AgentRole::Coder,
                    AgentRole::Reviewer,
                    AgentRole::Patient,
                    AgentRole::PhysicianV1,
                    AgentRole::Adjuster,
                ]
                .into_iter()
                .collect(),
                WorkflowMode::Mac2 => [
                    AgentRole::SoapFormatter,
                    AgentRole::PhysicianV2,
                    AgentRole::PhysicianV3,
                    AgentRole::Patient,
                    AgentRole::PhysicianV1,
                    AgentRole::Adjuster,
                ]
                .into_iter()
                .collect(),
            }),
        }
    }

    pub fn gateway_params(&self) -> GatewayParams {
        GatewayParams {
            model_id: self.gateway.model_id.clone(),
            temperature: self.gateway.temperature,
            token_budget: self.gateway.token_budget,
            max_response_tokens: self.gateway.max_response_tokens,
        }
    }

    /// Every referenced input path must exist before a command starts.
    pub fn validate_paths(&self) -> Result<()> {
        let mut required: Vec<(&str, &Path)> = vec![("paths.corpus", self.paths.corpus.as_path())];
        if let Some(p) = &self.paths.dictionary {
            required.push(("paths.dictionary", p));
        }
        if let Some(p) = &self.paths.candidates {
            required.push(("paths.candidates", p));
        }
        if let Some(p) = &self.paths.evidence {
            required.push(("paths.evidence", p));
        }
        if let Some(p) = &self.evaluation.label_space {
            required.push(("evaluation.label_space", p));
        }
        if self.gateway.provider == "replay" {
            if let Some(p) = &self.gateway.replay.scripts {
                required.push(("gateway.replay.scripts", p));
            }
        }
        for (field, path) in required {
            if !path.exists() {
                bail!("{field} does not exist: {}", path.display());
            }
        }
        match self.gateway.provider.as_str() {
            "replay" => {}
            "remote" => {
                if self.gateway.remote.endpoint.is_empty() {
                    bail!("gateway.remote.endpoint is required for the remote provider");
                }
            }
            other => bail!("unknown gateway provider {other:?} (expected remote or replay)"),
        }
        Ok(())
    }

    pub fn soap_sidecar_path(&self) -> PathBuf {
        self.paths
            .soap_sidecar
            .clone()
            .unwrap_or_else(|| self.paths.output_dir.join("soap.jsonl"))
    }

    /// Build the workflow config, resolving the candidate set from the
    /// dictionary and candidates file when external knowledge is enabled.
    pub fn workflow_config(&self, dictionary: Option<&CodeDictionary>) -> Result<WorkflowConfig> {
        let mode = self.mode()?;
        let candidate_set = if self.workflow.external_knowledge {
            let dict = dictionary
                .context("external_knowledge requires paths.dictionary to be configured")?;
            let candidates_path = self
                .paths
                .candidates
                .as_ref()
                .context("external_knowledge requires paths.candidates to be configured")?;
            let codes = read_code_lines(candidates_path)?;
            Some(
                build_candidate_set(dict, &codes, self.workflow.candidate_size)
                    .context("cannot build the candidate set")?,
            )
        } else {
            None
        };
        let mut cfg = match mode {
            WorkflowMode::Mac1 => WorkflowConfig::mac1(candidate_set),
            WorkflowMode::Mac2 => WorkflowConfig::mac2(candidate_set),
        };
        cfg.agent_set = self.agent_set()?;
        cfg.confrontation = self.workflow.confrontation;
        cfg.external_knowledge = self.workflow.external_knowledge;
        cfg.gateway = self.gateway_params();
        cfg.parallelism = self.workflow.parallelism;
        cfg.retry_budget = self.workflow.retry_budget;
        if let Some(patterns) = &self.workflow.dispute_patterns {
            cfg.dispute_patterns = patterns.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Read a plain-text code list: one code per line, `#` comments allowed.
pub fn read_code_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read code list {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}
