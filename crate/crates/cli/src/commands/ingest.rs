//! Convert raw note exports into the canonical corpus format, optionally
//! projecting onto a top-k or rare label space with an audit manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use macoder_core::corpus::{
    build_rare_subset, build_top_k_subset, write_corpus, Corpus, NoteRecord, Split, Subset,
};
use macoder_core::icd::canonicalize_any;

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| {
        let h = h.trim().to_ascii_lowercase();
        names.iter().any(|n| h == *n)
    })
}

struct ColumnMap {
    note_id: usize,
    text: usize,
    codes: usize,
    split: Option<usize>,
}

fn map_columns(format: &str, headers: &csv::StringRecord) -> Result<ColumnMap> {
    match format {
        "csv" => Ok(ColumnMap {
            note_id: find_column(headers, &["note_id"])
                .context("csv format needs a note_id column")?,
            text: find_column(headers, &["text"]).context("csv format needs a text column")?,
            codes: find_column(headers, &["gold_codes", "codes"])
                .context("csv format needs a gold_codes column")?,
            split: find_column(headers, &["split"]),
        }),
        "mimic" => Ok(ColumnMap {
            note_id: find_column(headers, &["hadm_id", "note_id"])
                .context("mimic format needs a HADM_ID column")?,
            text: find_column(headers, &["text"]).context("mimic format needs a TEXT column")?,
            codes: find_column(headers, &["labels", "icd9_code", "icd9_codes"])
                .context("mimic format needs a LABELS column")?,
            split: find_column(headers, &["split"]),
        }),
        other => bail!("unknown ingest format {other:?} (expected csv or mimic)"),
    }
}

fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "corpus".to_string());
    output.with_file_name(format!("{stem}.{suffix}"))
}

fn apply_subset(
    corpus: Corpus,
    output: &Path,
    top_k: Option<usize>,
    rare_threshold: Option<usize>,
) -> Result<Corpus> {
    let subset: Subset = match (top_k, rare_threshold) {
        (None, None) => return Ok(corpus),
        (Some(_), Some(_)) => bail!("--top-k and --rare-threshold are mutually exclusive"),
        (Some(k), None) => build_top_k_subset(&corpus, k)?,
        (None, Some(threshold)) => build_rare_subset(&corpus, threshold)?,
    };
    let labels_path = sibling(output, "labels.txt");
    std::fs::write(&labels_path, subset.label_space.join("\n") + "\n")?;
    let manifest_path = sibling(output, "subset.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&subset.manifest())?,
    )?;
    println!(
        "subset: {} labels, {} notes kept -> {} / {}",
        subset.label_space.len(),
        subset.corpus.len(),
        labels_path.display(),
        manifest_path.display()
    );
    Ok(subset.corpus)
}

/// Ingest a raw export and emit the canonical line-delimited corpus file,
/// printing a record count and code-frequency summary.
pub fn cmd_ingest(
    input: &Path,
    format: &str,
    output: &Path,
    top_k: Option<usize>,
    rare_threshold: Option<usize>,
) -> Result<()> {
    let file = std::fs::File::open(input)
        .with_context(|| format!("cannot open export {}", input.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .context("export has no header row")?
        .clone();
    let columns = map_columns(format, &headers)?;

    let mut notes = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.with_context(|| format!("export line {line}: unreadable row"))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let note_id = record
            .get(columns.note_id)
            .filter(|s| !s.is_empty())
            .with_context(|| format!("export line {line}: missing note id"))?
            .to_string();
        let text = record
            .get(columns.text)
            .filter(|s| !s.is_empty())
            .with_context(|| format!("export line {line}: missing note text"))?
            .to_string();
        let raw_codes = record.get(columns.codes).unwrap_or("");
        let mut gold_codes = std::collections::BTreeSet::new();
        for raw in raw_codes
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            let (code, _) = canonicalize_any(raw)
                .with_context(|| format!("export line {line}: bad code {raw:?}"))?;
            gold_codes.insert(code);
        }
        let split = match columns.split.and_then(|i| record.get(i)) {
            Some(s) if !s.is_empty() => Split::parse(s)
                .with_context(|| format!("export line {line}: unknown split {s:?}"))?,
            _ => Split::Test,
        };
        notes.push(NoteRecord {
            note_id,
            text,
            gold_codes,
            split,
        });
    }
    if notes.is_empty() {
        bail!("export {} produced an empty corpus", input.display());
    }
    let corpus = Corpus::from_notes(notes).context("export has duplicate note ids")?;
    let corpus = apply_subset(corpus, output, top_k, rare_threshold)?;
    if corpus.is_empty() {
        bail!("subset construction dropped every note");
    }

    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let out = std::fs::File::create(output)
        .with_context(|| format!("cannot write corpus {}", output.display()))?;
    write_corpus(&corpus, out)?;

    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for note in corpus.notes() {
        for code in &note.gold_codes {
            *freq.entry(code.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    println!(
        "ingested {} notes with {} distinct codes -> {}",
        corpus.len(),
        ranked.len(),
        output.display()
    );
    println!("most frequent codes:");
    for (code, count) in ranked.iter().take(10) {
        println!("  {code}: {count}");
    }
    Ok(())
}
