//! End-to-end command flows: resumable runs, idempotent SOAP conversion,
//! ablation grids over a shared cache, cache locking, and exit codes.

use std::path::{Path, PathBuf};

use macoder::{load_config, CommandStatus};

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cache_lines(&self) -> usize {
        match std::fs::read_to_string(self.path("cache.jsonl")) {
            Ok(text) => text.lines().filter(|l| !l.trim().is_empty()).count(),
            Err(_) => 0,
        }
    }
}

fn coder_response(i: usize) -> String {
    format!(r#"[{{"code": "401.9", "explanation": "Case {i}: hypertension documented."}}]"#)
}

/// Five-note corpus, coder-only MAC-I, replay + on-disk cache.
fn fixture(scripted_notes: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = String::new();
    for i in 0..5 {
        corpus.push_str(
            &serde_json::json!({
                "note_id": format!("n{i}"),
                "text": format!("Case {i}: patient has hypertension."),
                "gold_codes": ["401.9"],
                "split": "test",
            })
            .to_string(),
        );
        corpus.push('\n');
    }
    std::fs::write(dir.path().join("corpus.jsonl"), corpus).unwrap();

    let mut scripts = String::new();
    for i in 0..scripted_notes {
        scripts.push_str(
            &serde_json::json!({
                "contains": format!("Case {i}:"),
                "responses": [coder_response(i)],
            })
            .to_string(),
        );
        scripts.push('\n');
    }
    std::fs::write(dir.path().join("scripts.jsonl"), scripts).unwrap();

    let config = format!(
        r#"[paths]
corpus = {corpus:?}
cache = {cache:?}
output_dir = {output:?}

[workflow]
mode = "mac1"
agents = ["coder"]
retry_budget = 0

[gateway]
provider = "replay"

[gateway.replay]
scripts = {scripts:?}
"#,
        corpus = dir.path().join("corpus.jsonl").display().to_string(),
        cache = dir.path().join("cache.jsonl").display().to_string(),
        output = dir.path().join("out").display().to_string(),
        scripts = dir.path().join("scripts.jsonl").display().to_string(),
    );
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    Fixture { dir }
}

fn load(fixture: &Fixture, overrides: &[String]) -> macoder::RunConfigFile {
    load_config(&fixture.path("run.toml"), overrides).unwrap()
}

#[test]
fn interrupted_run_resumes_with_only_pending_notes_executed() {
    // Notes 3 and 4 are unscripted, so the first run fails them.
    let fx = fixture(3);
    let cfg = load(&fx, &[]);
    let status = macoder::cmd_run(&cfg).unwrap();
    assert_eq!(status, CommandStatus::PartialFailures);
    assert_eq!(status.exit_code(), 2);
    assert_eq!(fx.cache_lines(), 3, "three scripted notes completed");

    // Add the missing scripts and rerun: the three complete notes must be
    // reused, so exactly two new gateway calls land in the cache.
    let mut extra = String::new();
    for i in 3..5 {
        extra.push_str(
            &serde_json::json!({
                "contains": format!("Case {i}:"),
                "responses": [coder_response(i)],
            })
            .to_string(),
        );
        extra.push('\n');
    }
    std::fs::write(fx.path("scripts2.jsonl"), extra).unwrap();
    let cfg = load(
        &fx,
        &[format!(
            "gateway.replay.scripts={}",
            fx.path("scripts2.jsonl").display()
        )],
    );
    let status = macoder::cmd_run(&cfg).unwrap();
    assert_eq!(status, CommandStatus::AllComplete);
    assert_eq!(status.exit_code(), 0);
    assert_eq!(fx.cache_lines(), 5, "exactly two new calls");

    let results = macoder::commands::read_results(&fx.path("out/results.jsonl")).unwrap();
    assert_eq!(results.len(), 5);
    let ids: Vec<&str> = results.iter().map(|r| r.note_id.as_str()).collect();
    assert_eq!(ids, vec!["n0", "n1", "n2", "n3", "n4"]);
    assert!(results.iter().all(|r| r.status.is_complete()));

    // The resumed run must equal an uninterrupted run byte for byte.
    let uninterrupted = fixture(5);
    let cfg = load(&uninterrupted, &[]);
    assert_eq!(macoder::cmd_run(&cfg).unwrap(), CommandStatus::AllComplete);
    let a = std::fs::read(fx.path("out/results.jsonl")).unwrap();
    let b = std::fs::read(uninterrupted.path("out/results.jsonl")).unwrap();
    assert_eq!(a, b, "resumed results differ from an uninterrupted run");
}

#[test]
fn eval_identity_scores_one() {
    let fixture = fixture(5);
    let cfg = load(&fixture, &[]);
    assert_eq!(macoder::cmd_run(&cfg).unwrap(), CommandStatus::AllComplete);
    macoder::cmd_eval(&cfg, None).unwrap();
    let metrics: macoder_core::eval::MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(fixture.path("out/metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics.micro.f1, 1.0);
    assert_eq!(metrics.macro_avg.f1, 1.0);
    let table = std::fs::read_to_string(fixture.path("out/metrics.txt")).unwrap();
    assert!(table.contains("1.000"));

    macoder::cmd_report(&cfg, None, None).unwrap();
}

fn soap_fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = String::new();
    let mut scripts = String::new();
    for i in 0..2 {
        corpus.push_str(
            &serde_json::json!({
                "note_id": format!("n{i}"),
                "text": format!("Case {i}: chest pain, bp elevated. Plan made."),
                "gold_codes": ["401.9"],
                "split": "test",
            })
            .to_string(),
        );
        corpus.push('\n');
        scripts.push_str(
            &serde_json::json!({
                "contains": format!("Case {i}:"),
                "responses": [format!(
                    r#"{{"Subjective": "chest pain {i}", "Objective": "bp elevated", "Assessment": "hypertension", "Plan": "losartan"}}"#
                )],
            })
            .to_string(),
        );
        scripts.push('\n');
    }
    std::fs::write(dir.path().join("corpus.jsonl"), corpus).unwrap();
    std::fs::write(dir.path().join("scripts.jsonl"), scripts).unwrap();
    let config = format!(
        r#"[paths]
corpus = {corpus:?}
cache = {cache:?}
output_dir = {output:?}
soap_sidecar = {sidecar:?}

[workflow]
mode = "mac2"

[gateway]
provider = "replay"

[gateway.replay]
scripts = {scripts:?}
"#,
        corpus = dir.path().join("corpus.jsonl").display().to_string(),
        cache = dir.path().join("cache.jsonl").display().to_string(),
        output = dir.path().join("out").display().to_string(),
        sidecar = dir.path().join("soap.jsonl").display().to_string(),
        scripts = dir.path().join("scripts.jsonl").display().to_string(),
    );
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    Fixture { dir }
}

#[test]
fn soap_convert_is_idempotent_on_warm_cache() {
    let fixture = soap_fixture();
    let cfg = load(&fixture, &[]);
    assert_eq!(
        macoder::cmd_soap_convert(&cfg).unwrap(),
        CommandStatus::AllComplete
    );
    let sidecar = std::fs::read_to_string(fixture.path("soap.jsonl")).unwrap();
    assert_eq!(sidecar.lines().count(), 2);
    let calls_after_first = fixture.cache_lines();
    assert_eq!(calls_after_first, 2);

    // Rerun with the sidecar intact: no work, no calls.
    assert_eq!(
        macoder::cmd_soap_convert(&cfg).unwrap(),
        CommandStatus::AllComplete
    );
    assert_eq!(fixture.cache_lines(), calls_after_first);

    // Delete the sidecar but keep the cache; rerun with empty scripts must
    // rebuild it entirely from cache hits.
    std::fs::remove_file(fixture.path("soap.jsonl")).unwrap();
    std::fs::write(fixture.path("empty.jsonl"), "").unwrap();
    let cfg = load(
        &fixture,
        &[format!(
            "gateway.replay.scripts={}",
            fixture.path("empty.jsonl").display()
        )],
    );
    assert_eq!(
        macoder::cmd_soap_convert(&cfg).unwrap(),
        CommandStatus::AllComplete
    );
    assert_eq!(
        fixture.cache_lines(),
        calls_after_first,
        "zero new gateway calls"
    );
    let rebuilt = std::fs::read_to_string(fixture.path("soap.jsonl")).unwrap();
    assert_eq!(rebuilt, sidecar, "sidecar rebuilt byte-identically");
}

#[test]
fn mac2_full_pipeline_soap_convert_then_run_then_eval() {
    let fixture = soap_fixture();
    // Each command builds a fresh provider from its scripts file, so the
    // conversion and the run get separate scripts. The SOAP subjective and
    // the generated assessment embed the note marker so the per-note rule
    // keeps matching across the run's turns (physician_v2, physician_v3,
    // patient, physician_v1).
    let mut soap_scripts = String::new();
    let mut run_scripts = String::new();
    for i in 0..2 {
        let soap = format!(
            r#"{{"Subjective": "Case {i}: chest pain", "Objective": "bp elevated", "Assessment": "hypertension", "Plan": "losartan"}}"#
        );
        let ap = format!(
            r#"{{"Assessment": "Case {i}: generated assessment", "Plan": "generated plan"}}"#
        );
        let codes = r#"[{"code": "401.9", "explanation": "hypertension documented"}]"#.to_string();
        let accept = r#"[{"code": "401.9", "verdict": "accept", "explanation": "ok"}]"#.to_string();
        soap_scripts.push_str(
            &serde_json::json!({
                "contains": format!("Case {i}:"),
                "responses": [soap],
            })
            .to_string(),
        );
        soap_scripts.push('\n');
        run_scripts.push_str(
            &serde_json::json!({
                "contains": format!("Case {i}:"),
                "responses": [ap, codes, accept.clone(), accept],
            })
            .to_string(),
        );
        run_scripts.push('\n');
    }
    std::fs::write(fixture.path("scripts.jsonl"), soap_scripts).unwrap();
    std::fs::write(fixture.path("run_scripts.jsonl"), run_scripts).unwrap();

    let cfg = load(&fixture, &[]);
    assert_eq!(
        macoder::cmd_soap_convert(&cfg).unwrap(),
        CommandStatus::AllComplete
    );
    let run_cfg = load(
        &fixture,
        &[format!(
            "gateway.replay.scripts={}",
            fixture.path("run_scripts.jsonl").display()
        )],
    );
    assert_eq!(
        macoder::cmd_run(&run_cfg).unwrap(),
        CommandStatus::AllComplete
    );
    macoder::cmd_eval(&run_cfg, None).unwrap();

    let results = macoder::commands::read_results(&fixture.path("out/results.jsonl")).unwrap();
    assert_eq!(results.len(), 2);
    for result in &results {
        assert!(result.status.is_complete());
        // Sidecar supplied the SOAP form, so the formatter never ran.
        assert!(result
            .transcript
            .iter()
            .all(|t| t.role != macoder_core::AgentRole::SoapFormatter));
        assert_eq!(
            result.transcript.len(),
            4,
            "physician_v2, physician_v3, patient, physician_v1"
        );
        assert_eq!(result.final_codes.len(), 1);
    }
    let metrics: macoder_core::eval::MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(fixture.path("out/metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics.micro.f1, 1.0);
}

#[test]
fn mac2_run_without_sidecar_fails_before_execution() {
    let fixture = soap_fixture();
    let cfg = load(&fixture, &[]);
    let err = macoder::cmd_run(&cfg).unwrap_err();
    assert!(format!("{err:#}").contains("soap-convert"), "{err:#}");
    assert_eq!(
        fixture.cache_lines(),
        0,
        "no gateway call before validation"
    );
}

#[test]
fn degenerate_soap_conversion_is_flagged_and_fails_the_note() {
    let fixture = soap_fixture();
    // Re-script note 0 with an empty subjective and objective.
    std::fs::write(
        fixture.path("scripts.jsonl"),
        format!(
            "{}\n{}\n",
            serde_json::json!({
                "contains": "Case 0:",
                "responses": [r#"{"Subjective": "", "Objective": "", "Assessment": "a", "Plan": "p"}"#],
            }),
            serde_json::json!({
                "contains": "Case 1:",
                "responses": [r#"{"Subjective": "s", "Objective": "o", "Assessment": "a", "Plan": "p"}"#],
            }),
        ),
    )
    .unwrap();
    let cfg = load(&fixture, &[]);
    assert_eq!(
        macoder::cmd_soap_convert(&cfg).unwrap(),
        CommandStatus::AllComplete
    );
    let sidecar = std::fs::read_to_string(fixture.path("soap.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(sidecar.lines().next().unwrap()).unwrap();
    assert_eq!(first["degenerate"], serde_json::Value::Bool(true));

    // Running MAC-II against the degenerate form fails that note only.
    let status = macoder::cmd_run(&cfg);
    // Note n0 has a degenerate SOAP form; n1 would need further scripts, so
    // just confirm the degenerate failure is recorded.
    let _ = status;
    let results = macoder::commands::read_results(&fixture.path("out/results.jsonl")).unwrap();
    let n0 = results.iter().find(|r| r.note_id == "n0").unwrap();
    match &n0.status {
        macoder_core::workflow::WorkflowStatus::Failed { reason } => {
            assert!(reason.contains("degenerate"), "{reason}");
        }
        other => panic!("expected degenerate failure, got {other:?}"),
    }
}

#[test]
fn cache_lock_blocks_concurrent_invocations() {
    let fixture = fixture(5);
    let cfg = load(&fixture, &[]);
    let lock_path = fixture.path("cache.jsonl.lock");
    std::fs::write(&lock_path, "").unwrap();
    let err = macoder::cmd_run(&cfg).unwrap_err();
    assert!(format!("{err:#}").contains("locked"), "{err:#}");
    std::fs::remove_file(&lock_path).unwrap();
    assert_eq!(macoder::cmd_run(&cfg).unwrap(), CommandStatus::AllComplete);
}

fn write_grid(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("grid.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn ablation_grid_produces_delta_table_and_survives_bad_variants() {
    let fixture = fixture(5);
    // Pop order per note: base coder, then the +reviewer variant's reviewer
    // turn, then the no-confrontation variant's re-prompted coder. The
    // variant coder requests that coincide with the base run hit the cache.
    let mut scripts = String::new();
    for i in 0..5 {
        scripts.push_str(
            &serde_json::json!({
                "contains": format!("Case {i}:"),
                "responses": [coder_response(i), coder_response(i), coder_response(i)],
            })
            .to_string(),
        );
        scripts.push('\n');
    }
    std::fs::write(fixture.path("scripts.jsonl"), scripts).unwrap();

    let grid = write_grid(
        fixture.dir.path(),
        r#"
[[variant]]
name = "+reviewer"
agents = ["coder", "reviewer"]

[[variant]]
name = "no-confrontation"
confrontation = false

[[variant]]
name = "broken"
agents = ["reviewer"]
"#,
    );
    let cfg = load(&fixture, &[]);
    let status = macoder::cmd_ablate(&cfg, &grid).unwrap();
    // The "broken" variant (no coding role) must be reported, not fatal.
    assert_eq!(status, CommandStatus::PartialFailures);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture.path("out/ablation.json")).unwrap())
            .unwrap();
    assert_eq!(summary["variants"].as_array().unwrap().len(), 2);
    assert_eq!(summary["errors"].as_array().unwrap().len(), 1);
    let table = std::fs::read_to_string(fixture.path("out/ablation.txt")).unwrap();
    assert!(table.contains("base"));
    assert!(table.contains("+reviewer"));
    assert!(table.contains("dMacro-F1"));

    // no-confrontation reruns the coder with a different prompt, so the
    // second scripted response per note covers it; equal outputs mean zero
    // delta.
    let variants = summary["variants"].as_array().unwrap();
    let no_conf = variants
        .iter()
        .find(|v| v["name"] == "no-confrontation")
        .unwrap();
    assert_eq!(no_conf["delta"]["micro"]["f1"].as_f64().unwrap(), 0.0);
}

#[test]
fn empty_grid_is_rejected() {
    let fixture = fixture(5);
    let grid = write_grid(fixture.dir.path(), "");
    let cfg = load(&fixture, &[]);
    assert!(macoder::cmd_ablate(&cfg, &grid).is_err());
}

#[test]
fn invalid_config_is_rejected_before_any_call() {
    let fixture = fixture(5);
    // Unknown agent role.
    let cfg = load_config(
        &fixture.path("run.toml"),
        &["workflow.mode=mac2".to_string()],
    )
    .unwrap();
    // mac2 with agents=["coder"] lacks physician_v3.
    let err = macoder::cmd_run(&cfg).unwrap_err();
    assert!(format!("{err:#}").contains("physician_v3"), "{err:#}");
    assert_eq!(fixture.cache_lines(), 0);
}
