//! Run artifacts: line-delimited round records, the summary document, and a
//! config snapshot. Records carry a schema version and contain no wall-clock
//! data, so reruns of the same (config, seed) are byte-identical.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, SimError};
use crate::fl::RoundRecord;
use crate::harness::config::ExperimentConfig;
use crate::harness::runner::MetricsSummary;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.snapshot.toml";

/// Streams round records into `<dir>/records.jsonl`, one JSON object per
/// line, appended as rounds complete.
pub struct RecordWriter {
    out: BufWriter<File>,
}

impl RecordWriter {
    pub fn create(dir: &Path) -> Result<RecordWriter> {
        fs::create_dir_all(dir)?;
        let file = File::create(dir.join(RECORDS_FILE))?;
        Ok(RecordWriter {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &RoundRecord) -> Result<()> {
        let line =
            serde_json::to_string(record).map_err(|e| SimError::MalformedData(e.to_string()))?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn records_path(dir: &Path) -> PathBuf {
    dir.join(RECORDS_FILE)
}

pub fn read_records(dir: &Path) -> Result<Vec<RoundRecord>> {
    let path = records_path(dir);
    let reader = BufReader::new(File::open(&path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RoundRecord = serde_json::from_str(&line)
            .map_err(|e| SimError::MalformedData(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(SimError::EmptyInput("records file has no rounds"));
    }
    Ok(records)
}

pub fn write_summary(dir: &Path, summary: &MetricsSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| SimError::MalformedData(e.to_string()))?;
    fs::write(dir.join(SUMMARY_FILE), text + "\n")?;
    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<MetricsSummary> {
    let text = fs::read_to_string(dir.join(SUMMARY_FILE))?;
    serde_json::from_str(&text).map_err(|e| SimError::MalformedData(e.to_string()))
}

pub fn write_config_snapshot(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), config.to_toml_string())?;
    Ok(())
}

pub fn read_config_snapshot(dir: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(&dir.join(CONFIG_FILE))
}
