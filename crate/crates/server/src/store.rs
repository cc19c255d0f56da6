//! Append-only record store.
//!
//! One file of JSON lines behind a magic header. Each line is an operation:
//! a new record or an override appended to an existing one. Compaction
//! rewrites the file with one line per record (overrides inline) and swaps
//! it in atomically. Images live next to the log, named by content hash.
//!
//! All writes go through one mutex-guarded writer; readers clone from a
//! read-locked index.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use memesentinel::pipeline::PipelineTrace;
use memesentinel::{Decision, Harmfulness, Image, Verdict};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub const MAGIC: &str = "MEMESENTINEL-STORE v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub decision: Decision,
    pub moderator_id: String,
    #[serde(default)]
    pub note: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationRecord {
    pub record_id: String,
    pub image_hash: String,
    /// Upload file name or source URL, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PipelineTrace>,
    /// Backend error that left the verdict unresolved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub created_at: DateTime<Utc>,
    /// Oldest first. Never shrinks.
    #[serde(default)]
    pub overrides: Vec<Override>,
    /// Latest override if any, else the model's verdict. Derived.
    #[serde(default = "unresolved")]
    pub effective_decision: Harmfulness,
}

fn unresolved() -> Harmfulness {
    Harmfulness::Unresolved
}

impl ModerationRecord {
    pub fn new(image_hash: String, verdict: Verdict, created_at: DateTime<Utc>) -> Self {
        let mut r = Self {
            record_id: uuid::Uuid::new_v4().to_string(),
            image_hash,
            source: None,
            verdict,
            trace: None,
            error: None,
            created_at,
            overrides: Vec::new(),
            effective_decision: Harmfulness::Unresolved,
        };
        r.refresh();
        r
    }

    pub fn effective(&self) -> Harmfulness {
        match self.overrides.last() {
            Some(o) => o.decision.into(),
            None => self.verdict.harmful,
        }
    }

    fn refresh(&mut self) {
        self.effective_decision = self.effective();
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Op {
    Record { record: Box<ModerationRecord> },
    Override { record_id: String, #[serde(rename = "override")] entry: Override },
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a record store (missing {MAGIC:?} header)")]
    BadHeader { path: PathBuf },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("record {0} not found")]
    NotFound(String),
}

#[derive(Default)]
struct Index {
    records: Vec<ModerationRecord>,
    by_id: HashMap<String, usize>,
}

impl Index {
    fn apply(&mut self, op: Op) -> Result<(), String> {
        match op {
            Op::Record { record } => {
                let mut record = *record;
                record.refresh();
                if let Some(&i) = self.by_id.get(&record.record_id) {
                    self.records[i] = record;
                } else {
                    self.by_id.insert(record.record_id.clone(), self.records.len());
                    self.records.push(record);
                }
            }
            Op::Override { record_id, entry } => {
                let i = *self.by_id.get(&record_id).ok_or_else(|| format!("override for unknown record {record_id}"))?;
                let r = &mut self.records[i];
                r.overrides.push(entry);
                r.refresh();
            }
        }
        Ok(())
    }
}

struct Writer {
    out: BufWriter<File>,
    since_compaction: usize,
}

pub struct Store {
    path: PathBuf,
    images: PathBuf,
    compact_every: usize,
    index: RwLock<Index>,
    writer: Mutex<Writer>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Store {
    /// Opens or creates the store at `path`. A torn final line, as left by a
    /// crash mid-append, is dropped; corruption anywhere else is an error.
    pub fn open(path: impl AsRef<Path>, compact_every: usize) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut images = path.clone().into_os_string();
        images.push(".images");
        let images = PathBuf::from(images);
        std::fs::create_dir_all(&images).map_err(io(&images))?;

        let mut index = Index::default();
        let mut torn = false;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io(&path))?);
            let lines: Vec<String> = reader.lines().collect::<Result<_, _>>().map_err(io(&path))?;
            match lines.first() {
                Some(h) if h.trim_end() == MAGIC => {}
                None => {}
                Some(_) => return Err(StoreError::BadHeader { path }),
            }
            let body = lines.iter().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty());
            let last = lines.iter().rposition(|l| !l.trim().is_empty()).unwrap_or(0);
            for (i, line) in body {
                let parsed = serde_json::from_str::<Op>(line).map_err(|e| e.to_string());
                match parsed.and_then(|op| index.apply(op)) {
                    Ok(()) => {}
                    Err(message) if i == last => {
                        tracing::warn!(line = i + 1, %message, "dropping torn final store line");
                        torn = true;
                    }
                    Err(message) => {
                        return Err(StoreError::Corrupt {
                            path,
                            line: i + 1,
                            message,
                        })
                    }
                }
            }
        }

        let store = Self {
            images,
            compact_every,
            index: RwLock::new(index),
            writer: Mutex::new(Writer {
                out: BufWriter::new(Self::open_append(&path)?),
                since_compaction: 0,
            }),
            path,
        };
        if torn || std::fs::metadata(&store.path).map(|m| m.len() == 0).unwrap_or(true) {
            store.compact()?;
        }
        Ok(store)
    }

    fn open_append(path: &Path) -> Result<File, StoreError> {
        OpenOptions::new().create(true).append(true).open(path).map_err(io(path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&self, writer: &mut Writer, op: &Op) -> Result<(), StoreError> {
        let line = serde_json::to_string(op).expect("ops serialize");
        writer.out.write_all(line.as_bytes()).map_err(io(&self.path))?;
        writer.out.write_all(b"\n").map_err(io(&self.path))?;
        writer.out.flush().map_err(io(&self.path))?;
        writer.out.get_ref().sync_data().map_err(io(&self.path))?;
        writer.since_compaction += 1;
        Ok(())
    }

    fn maybe_compact(&self, writer: &mut Writer) -> Result<(), StoreError> {
        if self.compact_every > 0 && writer.since_compaction >= self.compact_every {
            self.compact_locked(writer)?;
        }
        Ok(())
    }

    pub fn insert(&self, record: ModerationRecord) -> Result<ModerationRecord, StoreError> {
        let mut writer = self.writer.lock();
        let op = Op::Record { record: Box::new(record) };
        self.append(&mut writer, &op)?;
        let Op::Record { record } = op else { unreachable!() };
        let id = record.record_id.clone();
        {
            let mut index = self.index.write();
            index.apply(Op::Record { record }).expect("inserting a record cannot fail");
        }
        self.maybe_compact(&mut writer)?;
        self.get(&id).ok_or(StoreError::NotFound(id))
    }

    pub fn add_override(&self, record_id: &str, entry: Override) -> Result<ModerationRecord, StoreError> {
        let mut writer = self.writer.lock();
        if !self.index.read().by_id.contains_key(record_id) {
            return Err(StoreError::NotFound(record_id.to_string()));
        }
        let op = Op::Override {
            record_id: record_id.to_string(),
            entry,
        };
        self.append(&mut writer, &op)?;
        self.index.write().apply(op).expect("record exists");
        self.maybe_compact(&mut writer)?;
        self.get(record_id).ok_or_else(|| StoreError::NotFound(record_id.to_string()))
    }

    pub fn get(&self, record_id: &str) -> Option<ModerationRecord> {
        let index = self.index.read();
        index.by_id.get(record_id).map(|&i| index.records[i].clone())
    }

    /// All records ordered by `created_at`, then `record_id`.
    pub fn snapshot(&self) -> Vec<ModerationRecord> {
        let mut all = self.index.read().records.clone();
        all.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.record_id.cmp(&b.record_id)));
        all
    }

    pub fn len(&self) -> usize {
        self.index.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn compact(&self) -> Result<(), StoreError> {
        let mut writer = self.writer.lock();
        self.compact_locked(&mut writer)
    }

    fn compact_locked(&self, writer: &mut Writer) -> Result<(), StoreError> {
        let mut tmp = self.path.clone().into_os_string();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut out = BufWriter::new(File::create(&tmp).map_err(io(&tmp))?);
            writeln!(out, "{MAGIC}").map_err(io(&tmp))?;
            for record in self.snapshot() {
                let line = serde_json::to_string(&Op::Record { record: Box::new(record) }).expect("ops serialize");
                writeln!(out, "{line}").map_err(io(&tmp))?;
            }
            out.flush().map_err(io(&tmp))?;
            out.get_ref().sync_all().map_err(io(&tmp))?;
        }
        std::fs::rename(&tmp, &self.path).map_err(io(&self.path))?;
        writer.out = BufWriter::new(Self::open_append(&self.path)?);
        writer.since_compaction = 0;
        Ok(())
    }

    fn image_path(&self, hash: &str, ext: &str) -> PathBuf {
        self.images.join(format!("{hash}.{ext}"))
    }

    /// Stores image bytes under their content hash, once.
    pub fn put_image(&self, image: &Image) -> Result<(), StoreError> {
        let path = self.image_path(image.hash(), image.format().extension());
        if path.exists() {
            return Ok(());
        }
        let mut tmp = path.clone().into_os_string();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        std::fs::write(&tmp, image.bytes()).map_err(io(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io(&path))
    }

    pub fn get_image(&self, hash: &str) -> Option<Image> {
        if hash.is_empty() || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
            return None;
        }
        let entries = std::fs::read_dir(&self.images).ok()?;
        entries
            .filter_map(Result::ok)
            .find(|e| {
                let p = e.path();
                p.file_stem().is_some_and(|s| s == hash) && p.extension().is_some_and(|x| x != "tmp")
            })
            .and_then(|e| std::fs::read(e.path()).ok())
            .and_then(|b| Image::from_bytes(b).ok())
    }
}
