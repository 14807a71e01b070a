//! JSONL event log of a search. The first line is a versioned header.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Individual, Provenance, SearchContext, Status};
use crate::error::{Error, Result};
use crate::space::SpaceParams;

pub const RUNLOG_SCHEMA: &str = "evoada.runlog";
pub const RUNLOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Header {
        schema: String,
        version: u32,
        config_digest: String,
        search: String,
        method: String,
        early_stop_phase: String,
    },
    /// One trained and scored individual. Score fields are absent when
    /// training diverged.
    Eval {
        gen: usize,
        id: u64,
        provenance: Provenance,
        genome: Vec<u32>,
        l_ent: Option<f64>,
        l_div: Option<f64>,
        l_pse: Option<f64>,
        total: Option<f64>,
        source_acc: Option<f64>,
        pseudo_quality: Option<f64>,
        status: Status,
        attention_params: usize,
        epochs_used: Option<u64>,
    },
    Generation {
        gen: usize,
        population: usize,
        archived: usize,
        dropped: usize,
        refilled: usize,
        archive_size: usize,
        epochs_used: u64,
        best_total: Option<f64>,
        archive_best_total: Option<f64>,
        note: Option<String>,
    },
}

impl Event {
    pub fn header(ctx: &SearchContext, search: &str) -> Event {
        Event::Header {
            schema: RUNLOG_SCHEMA.into(),
            version: RUNLOG_VERSION,
            config_digest: ctx.digest.into(),
            search: search.into(),
            method: ctx.da.method_name().into(),
            early_stop_phase: "after evaluation, before crossover and mutation".into(),
        }
    }

    pub(crate) fn eval(gen: usize, ind: &Individual, space: &SpaceParams) -> Event {
        let fresh = ind.history.last().filter(|h| h.gen == gen).map(|h| &h.report);
        Event::Eval {
            gen,
            id: ind.id,
            provenance: ind.provenance,
            genome: space.encode(&ind.genome),
            l_ent: fresh.map(|r| r.l_ent),
            l_div: fresh.map(|r| r.l_div),
            l_pse: fresh.map(|r| r.l_pse),
            total: fresh.map(|r| r.total),
            source_acc: fresh.map(|r| r.source_acc),
            pseudo_quality: fresh.map(|r| r.pseudo_quality),
            status: ind.status,
            attention_params: ind.attention_params(),
            epochs_used: None,
        }
    }
}

/// Append-only log kept in memory and optionally mirrored to a file.
#[derive(Debug, Default)]
pub struct RunLog {
    lines: Vec<String>,
    bytes: u64,
    path: Option<PathBuf>,
    file: Option<File>,
}

impl RunLog {
    pub fn in_memory() -> Self {
        RunLog::default()
    }

    /// Creates (truncating) a log file.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path)?;
        Ok(RunLog {
            lines: Vec::new(),
            bytes: 0,
            path: Some(path.to_path_buf()),
            file: Some(file),
        })
    }

    /// Reopens a log file and cuts it back to `len` bytes, discarding events
    /// written after the last checkpoint.
    pub fn reopen(path: &Path, len: u64) -> Result<Self> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        if file.metadata()?.len() < len {
            return Err(Error::Format(format!(
                "{} is shorter than the checkpoint expects ({len} bytes)",
                path.display()
            )));
        }
        file.set_len(len)?;
        let lines = BufReader::new(&file).lines().collect::<std::io::Result<Vec<_>>>()?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(RunLog {
            lines,
            bytes: len,
            path: Some(path.to_path_buf()),
            file: Some(file),
        })
    }

    pub fn push(&mut self, event: &Event) -> Result<()> {
        let line = serde_json::to_string(event).map_err(|e| Error::Format(e.to_string()))?;
        if let Some(f) = self.file.as_mut() {
            f.write_all(line.as_bytes())?;
            f.write_all(b"\n")?;
        }
        self.bytes += line.len() as u64 + 1;
        self.lines.push(line);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(f) = self.file.as_mut() {
            f.flush()?;
            f.sync_data()?;
        }
        Ok(())
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn byte_len(&self) -> u64 {
        self.bytes
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// The log as it would appear on disk.
    pub fn contents(&self) -> String {
        let mut s = String::with_capacity(self.bytes as usize);
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}

/// Parses a log, checking the header schema and version.
pub fn parse(text: &str) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: Event = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        if events.is_empty() {
            match &ev {
                Event::Header { schema, version, .. } => {
                    if schema != RUNLOG_SCHEMA || *version != RUNLOG_VERSION {
                        return Err(Error::Format(format!(
                            "unsupported run log {schema} v{version}"
                        )));
                    }
                }
                _ => return Err(Error::Format("run log does not start with a header".into())),
            }
        }
        events.push(ev);
    }
    Ok(events)
}
