//! Persistent request/response audit log: one line per completion with the
//! digest, role, note id, token counts, and a wall-clock timestamp. Kept
//! separate from result files so results stay byte-reproducible.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub digest: String,
    pub role: String,
    pub note_id: String,
    pub prompt_tokens: usize,
    pub response_tokens: usize,
    pub timestamp_ms: u64,
}

pub struct TranscriptLog {
    writer: Mutex<std::fs::File>,
}

impl TranscriptLog {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::CacheIo(e.to_string()))?;
        Ok(Self {
            writer: Mutex::new(file),
        })
    }

    pub fn record(
        &self,
        digest: &str,
        role: &str,
        note_id: &str,
        prompt_tokens: usize,
        response_tokens: usize,
    ) -> Result<(), GatewayError> {
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let record = TranscriptRecord {
            digest: digest.to_string(),
            role: role.to_string(),
            note_id: note_id.to_string(),
            prompt_tokens,
            response_tokens,
            timestamp_ms,
        };
        let line =
            serde_json::to_string(&record).map_err(|e| GatewayError::CacheIo(e.to_string()))?;
        let mut writer = self.writer.lock().unwrap();
        writeln!(writer, "{line}").map_err(|e| GatewayError::CacheIo(e.to_string()))?;
        writer
            .flush()
            .map_err(|e| GatewayError::CacheIo(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_one_line_per_call() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcript.jsonl");
        let log = TranscriptLog::open(&path).unwrap();
        log.record("d1", "coder", "n1", 5, 1).unwrap();
        log.record("d2", "reviewer", "n1", 7, 2).unwrap();
        let contents = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = contents.lines().collect();
        assert_eq!(lines.len(), 2);
        let first: TranscriptRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first.role, "coder");
        assert_eq!(first.digest, "d1");
        assert_eq!(first.prompt_tokens, 5);
    }
}
