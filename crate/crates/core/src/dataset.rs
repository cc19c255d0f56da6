//! Meme corpus manifests: loading, per-dataset filename dedup, the held-out
//! validation split, and per-dataset accounting.
//!
//! A manifest is line-delimited JSON, one sample per line:
//!
//! ```text
//! {"id":"sg-0001","dataset":"@sgagsg","path":"img/0001.jpg","sg_context":true,"harmful":"yes","victim_groups":["women"]}
//! ```
//!
//! `harmful` accepts `"yes"`/`"no"` (any case) or a JSON boolean. Optional keys:
//! `victim_groups`, `methods_of_attack`, `explanation`, `split`, `gpt_label`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::labeling::GptLabelRecord;

/// The nine victim groups of the labeling taxonomy.
pub const CANONICAL_VICTIM_GROUPS: [&str; 9] = [
    "racial minorities",
    "religious minorities",
    "sexual minorities",
    "foreigners",
    "poor",
    "elderly",
    "men",
    "women",
    "disabled",
];

/// The four Singapore-context Instagram accounts held out for validation.
pub const SG_VALIDATION_ACCOUNTS: [&str; 4] = [
    "@bukittimahpoly",
    "@childrenholdingguns",
    "@diaozuihotline",
    "@tkk.jc",
];

pub fn is_canonical_victim_group(group: &str) -> bool {
    CANONICAL_VICTIM_GROUPS.contains(&group.trim().to_lowercase().as_str())
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path} has no valid records ({diagnostics} malformed lines)")]
    Empty { path: PathBuf, diagnostics: usize },
    #[error("validation datasets absent from corpus: {}", .0.join(", "))]
    MissingValidationDatasets(Vec<String>),
    #[error("GIF duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
}

/// Human (or third-party) label attached to a sample.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarmLabel {
    pub harmful: Option<bool>,
    pub victim_groups: Vec<String>,
    pub methods_of_attack: Vec<String>,
    pub explanation: Option<String>,
}

impl HarmLabel {
    pub fn is_empty(&self) -> bool {
        self.harmful.is_none()
            && self.victim_groups.is_empty()
            && self.methods_of_attack.is_empty()
            && self.explanation.is_none()
    }

    /// Victim groups outside the nine-group taxonomy. They are kept verbatim;
    /// this only reports them.
    pub fn non_canonical_groups(&self) -> Vec<&str> {
        self.victim_groups
            .iter()
            .map(String::as_str)
            .filter(|g| !is_canonical_victim_group(g))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemeSample {
    pub id: String,
    pub dataset: String,
    pub path: PathBuf,
    pub sg_context: bool,
    pub human_label: Option<HarmLabel>,
    pub gpt_label: Option<GptLabelRecord>,
    pub split_hint: Option<String>,
}

impl MemeSample {
    pub fn new(id: impl Into<String>, dataset: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            dataset: dataset.into(),
            path: path.into(),
            sg_context: false,
            human_label: None,
            gpt_label: None,
            split_hint: None,
        }
    }

    pub fn file_name(&self) -> String {
        self.path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.to_string_lossy().into_owned())
    }

    /// Ground truth for evaluation: the human rating when present, otherwise
    /// the model-generated label.
    pub fn ground_truth(&self) -> Option<bool> {
        self.human_label
            .as_ref()
            .and_then(|l| l.harmful)
            .or_else(|| self.gpt_label.as_ref().map(|g| g.harmful.is_yes()))
    }

    pub fn to_manifest_line(&self) -> String {
        let label = self.human_label.clone().unwrap_or_default();
        let record = ManifestRecord {
            id: self.id.clone(),
            dataset: self.dataset.clone(),
            path: self.path.clone(),
            sg_context: self.sg_context,
            harmful: label.harmful.map(YesNo),
            victim_groups: (!label.victim_groups.is_empty()).then_some(label.victim_groups),
            methods_of_attack: (!label.methods_of_attack.is_empty()).then_some(label.methods_of_attack),
            explanation: label.explanation,
            split: self.split_hint.clone(),
            gpt_label: self.gpt_label.clone(),
        };
        serde_json::to_string(&record).expect("manifest record serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct YesNo(bool);

impl Serialize for YesNo {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(if self.0 { "yes" } else { "no" })
    }
}

impl<'de> Deserialize<'de> for YesNo {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bool(bool),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Bool(b) => Ok(YesNo(b)),
            Raw::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "yes" | "true" => Ok(YesNo(true)),
                "no" | "false" => Ok(YesNo(false)),
                other => Err(serde::de::Error::custom(format!(
                    "harmful must be yes or no, got {other:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    dataset: String,
    path: PathBuf,
    sg_context: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    harmful: Option<YesNo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    victim_groups: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    methods_of_attack: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gpt_label: Option<GptLabelRecord>,
}

impl ManifestRecord {
    fn into_sample(self) -> Result<MemeSample, String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.dataset.trim().is_empty() {
            return Err("empty dataset".into());
        }
        if self.path.as_os_str().is_empty() {
            return Err("empty path".into());
        }
        let label = HarmLabel {
            harmful: self.harmful.map(|h| h.0),
            victim_groups: self.victim_groups.unwrap_or_default(),
            methods_of_attack: self.methods_of_attack.unwrap_or_default(),
            explanation: self.explanation.filter(|e| !e.trim().is_empty()),
        };
        Ok(MemeSample {
            id: self.id,
            dataset: self.dataset,
            path: self.path,
            sg_context: self.sg_context,
            human_label: (!label.is_empty()).then_some(label),
            gpt_label: self.gpt_label,
            split_hint: self.split,
        })
    }
}

/// A problem with one manifest line. Line numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    /// Directory relative image paths are resolved against.
    pub base_dir: PathBuf,
    pub samples: Vec<MemeSample>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Manifest {
    pub fn resolve(&self, sample: &MemeSample) -> PathBuf {
        if sample.path.is_absolute() {
            sample.path.clone()
        } else {
            self.base_dir.join(&sample.path)
        }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (samples, diagnostics) = parse_manifest(&text);
    if samples.is_empty() {
        return Err(DatasetError::Empty {
            path: path.to_path_buf(),
            diagnostics: diagnostics.len(),
        });
    }
    Ok(Manifest {
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        samples,
        diagnostics,
    })
}

/// Parses manifest text. Blank lines are skipped; every other line yields
/// either a sample or a diagnostic.
pub fn parse_manifest(text: &str) -> (Vec<MemeSample>, Vec<Diagnostic>) {
    let mut samples = Vec::new();
    let mut diagnostics = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<ManifestRecord>(line)
            .map_err(|e| e.to_string())
            .and_then(ManifestRecord::into_sample);
        match parsed {
            Ok(sample) => samples.push(sample),
            Err(message) => diagnostics.push(Diagnostic {
                line: idx + 1,
                message,
            }),
        }
    }
    (samples, diagnostics)
}

/// Ids that occur more than once, in first-repeat order.
pub fn duplicate_ids(samples: &[MemeSample]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut reported = BTreeSet::new();
    let mut out = Vec::new();
    for s in samples {
        if !seen.insert(s.id.as_str()) && reported.insert(s.id.as_str()) {
            out.push(s.id.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dedup {
    pub samples: Vec<MemeSample>,
    pub removed: usize,
}

/// Keeps the first sample per (dataset, filename). Filenames repeated across
/// different datasets are left alone.
pub fn dedup_by_filename(samples: Vec<MemeSample>) -> Dedup {
    let before = samples.len();
    let mut seen: HashSet<(String, String)> = HashSet::with_capacity(before);
    let kept: Vec<MemeSample> = samples
        .into_iter()
        .filter(|s| seen.insert((s.dataset.clone(), s.file_name())))
        .collect();
    Dedup {
        removed: before - kept.len(),
        samples: kept,
    }
}

/// Rule-based split: whole datasets go to validation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitSpec {
    pub validation_datasets: BTreeSet<String>,
}

impl SplitSpec {
    pub fn new<I, S>(datasets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            validation_datasets: datasets.into_iter().map(Into::into).collect(),
        }
    }

    pub fn sg_holdout() -> Self {
        Self::new(SG_VALIDATION_ACCOUNTS)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<MemeSample>,
    pub validation: Vec<MemeSample>,
}

pub fn build_validation_split(samples: Vec<MemeSample>, spec: &SplitSpec) -> Result<Split, DatasetError> {
    let present: HashSet<&str> = samples.iter().map(|s| s.dataset.as_str()).collect();
    let missing: Vec<String> = spec
        .validation_datasets
        .iter()
        .filter(|d| !present.contains(d.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(DatasetError::MissingValidationDatasets(missing));
    }
    let (validation, train) = samples
        .into_iter()
        .partition(|s| spec.validation_datasets.contains(&s.dataset));
    Ok(Split { train, validation })
}

/// Timestamp of the representative frame for an animated GIF: 30% in.
pub fn select_gif_frame(duration_secs: f64) -> Result<f64, DatasetError> {
    if !(duration_secs.is_finite() && duration_secs > 0.0) {
        return Err(DatasetError::InvalidDuration(duration_secs));
    }
    Ok(0.30 * duration_secs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCount {
    pub dataset: String,
    pub count: usize,
    pub sg_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Sorted by dataset name.
    pub rows: Vec<DatasetCount>,
    pub total: usize,
    pub sg_total: usize,
}

pub fn corpus_stats(samples: &[MemeSample]) -> CorpusStats {
    let mut by_dataset: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for s in samples {
        let entry = by_dataset.entry(s.dataset.as_str()).or_default();
        entry.0 += 1;
        if s.sg_context {
            entry.1 += 1;
        }
    }
    let rows: Vec<DatasetCount> = by_dataset
        .into_iter()
        .map(|(dataset, (count, sg_count))| DatasetCount {
            dataset: dataset.to_string(),
            count,
            sg_count,
        })
        .collect();
    CorpusStats {
        total: rows.iter().map(|r| r.count).sum(),
        sg_total: rows.iter().map(|r| r.sg_count).sum(),
        rows,
    }
}

pub const STATS_HEADER: [&str; 3] = ["dataset", "count", "sg_count"];
pub const STATS_TOTAL_LABEL: &str = "TOTAL";

impl CorpusStats {
    /// Aligned text table: header line, one line per dataset, then a `TOTAL`
    /// line. The dataset column is left-aligned, counts right-aligned, and
    /// columns are separated by at least two spaces.
    pub fn render_table(&self) -> String {
        let name_width = self
            .rows
            .iter()
            .map(|r| r.dataset.chars().count())
            .chain([STATS_HEADER[0].len(), STATS_TOTAL_LABEL.len()])
            .max()
            .unwrap_or(0);
        let count_width = self.total.to_string().len().max(STATS_HEADER[1].len());
        let sg_width = self.sg_total.to_string().len().max(STATS_HEADER[2].len());
        let mut out = String::new();
        let mut line = |name: &str, a: &str, b: &str| {
            let pad = name_width - name.chars().count();
            let _ = writeln!(
                out,
                "{name}{:pad$}  {a:>count_width$}  {b:>sg_width$}",
                ""
            );
        };
        line(STATS_HEADER[0], STATS_HEADER[1], STATS_HEADER[2]);
        for r in &self.rows {
            line(&r.dataset, &r.count.to_string(), &r.sg_count.to_string());
        }
        line(STATS_TOTAL_LABEL, &self.total.to_string(), &self.sg_total.to_string());
        out
    }

    /// Inverse of [`CorpusStats::render_table`].
    pub fn parse_table(text: &str) -> Option<CorpusStats> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next()?.split_whitespace().collect();
        if header != STATS_HEADER {
            return None;
        }
        let mut rows = Vec::new();
        let mut totals = None;
        for l in lines {
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() < 3 {
                return None;
            }
            let n = fields.len();
            let count: usize = fields[n - 2].parse().ok()?;
            let sg: usize = fields[n - 1].parse().ok()?;
            let name = fields[..n - 2].join(" ");
            if name == STATS_TOTAL_LABEL {
                totals = Some((count, sg));
            } else {
                rows.push(DatasetCount {
                    dataset: name,
                    count,
                    sg_count: sg,
                });
            }
        }
        let (total, sg_total) = totals?;
        Some(CorpusStats { rows, total, sg_total })
    }
}
