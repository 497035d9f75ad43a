//! Corpus manifest: a JSON-lines file whose first line is a header.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::build::CorpusConfig;
use super::labels::{CodecProfile, Task, TaxonomyLabel};
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA: &str = "codectrace.corpus/1";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Hash-assigned partition of a take, independent of the content threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fold {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    /// Unique storage key, also the WAV file stem.
    pub key: String,
    pub utt_id: u64,
    pub speaker_id: u64,
    pub label: TaxonomyLabel,
    /// Codec system name; `None` for bona fide records.
    pub system: Option<String>,
    pub profile: Option<CodecProfile>,
    /// Produced by a system held out of training.
    pub unseen_codec: bool,
    pub silence_head: f64,
    pub silence_tail: f64,
    pub duration: f64,
    pub fold: Fold,
    /// Path relative to the corpus root.
    pub path: String,
}

impl UtteranceRecord {
    pub fn is_bonafide(&self) -> bool {
        self.label.is_bonafide()
    }

    /// Identifier used for per-source breakdowns.
    pub fn source(&self) -> &str {
        self.system.as_deref().unwrap_or("bonafide")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    schema: String,
    config_digest: String,
    seed: u64,
    config: CorpusConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub records: Vec<UtteranceRecord>,
    pub config: CorpusConfig,
    pub seed: u64,
    /// Directory that record paths are relative to.
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn config_digest(&self) -> String {
        self.config.digest()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// A manifest with the same header and a subset of the records.
    pub fn filtered(&self, keep: impl Fn(&UtteranceRecord) -> bool) -> Self {
        Self {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            config: self.config.clone(),
            seed: self.seed,
            root: self.root.clone(),
        }
    }

    pub fn wav_path(&self, r: &UtteranceRecord) -> PathBuf {
        self.root.join(&r.path)
    }

    /// Class histogram for a task; records without a class are skipped.
    pub fn histogram(&self, task: Task) -> Vec<usize> {
        let mut h = vec![0; task.n_classes()];
        for r in &self.records {
            if let Some(c) = task.class_of(&r.label) {
                h[c] += 1;
            }
        }
        h
    }

    pub fn utt_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.records.iter().map(|r| r.utt_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn by_key(&self) -> BTreeMap<&str, &UtteranceRecord> {
        self.records.iter().map(|r| (r.key.as_str(), r)).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let header = Header {
            schema: MANIFEST_SCHEMA.to_string(),
            config_digest: self.config_digest(),
            seed: self.seed,
            config: self.config.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl()?.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; record paths resolve against the file's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = std::io::BufReader::new(file).lines();
        let context = path.display().to_string();
        let first = lines
            .next()
            .ok_or_else(|| Error::Schema {
                context: context.clone(),
                field: "header".into(),
            })?
            .map_err(|e| Error::io(path, e))?;
        let header: Header = parse_json(&first, &context)?;
        if header.schema != MANIFEST_SCHEMA {
            return Err(Error::Schema {
                context,
                field: "schema".into(),
            });
        }
        if header.config.digest() != header.config_digest {
            return Err(Error::Schema {
                context,
                field: "config_digest".into(),
            });
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(parse_json(&line, &context)?);
        }
        Ok(Self {
            records,
            config: header.config,
            seed: header.seed,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }
}

/// Parses JSON, reporting the offending field on schema mismatch.
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(s: &str, context: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .map(str::to_string)
            .unwrap_or_else(|| msg.clone());
        Error::Schema {
            context: context.to_string(),
            field,
        }
    })
}
