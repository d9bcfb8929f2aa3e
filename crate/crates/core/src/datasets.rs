//! Ground-truth manifests, their validation, and the append-only annotation store.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{matches_ratio, AspectRatio, Rect};

pub const MANIFEST_VERSION: u32 = 1;
pub const MAX_CROPPINGS_PER_PAIR: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub record: String,
    pub message: String,
}

/// Every invariant violation found in a document, not just the first.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn push(&mut self, record: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            record: record.into(),
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} validation issue(s)", self.issues.len())?;
        for i in &self.issues {
            write!(f, "\n  {}: {}", i.record, i.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestKind {
    Aesthetic,
    Semantic,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Pixel tolerance for the 1:1 constraint on semantic croppings.
    pub aspect_tolerance: u32,
    /// Require every referenced image to exist, relative to `image_root`.
    pub check_images: bool,
    pub image_root: Option<PathBuf>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            aspect_tolerance: 1,
            check_images: false,
            image_root: None,
        }
    }
}

/// Ground-truth croppings of one image (FLMS / Flickr style).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CroppingRecordSet {
    #[serde(rename = "id")]
    pub image_id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub croppings: Vec<Rect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AestheticManifest {
    pub version: u32,
    pub images: Vec<CroppingRecordSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCroppings {
    pub name: String,
    pub croppings: Vec<Rect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticImage {
    pub id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub entities: Vec<EntityCroppings>,
}

/// Optional self-description a manifest can carry; checked against the content on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub images: usize,
    pub pairs: usize,
    pub croppings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticManifest {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<ManifestCounts>,
    pub images: Vec<SemanticImage>,
}

/// One image-entity pair with its ground-truth croppings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemanticRecord {
    pub image_id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub entity: String,
    pub croppings: Vec<Rect>,
}

impl SemanticManifest {
    pub fn records(&self) -> Vec<SemanticRecord> {
        self.images
            .iter()
            .flat_map(|img| {
                img.entities.iter().map(move |e| SemanticRecord {
                    image_id: img.id.clone(),
                    path: img.path.clone(),
                    width: img.width,
                    height: img.height,
                    entity: e.name.clone(),
                    croppings: e.croppings.clone(),
                })
            })
            .collect()
    }

    pub fn measured_counts(&self) -> ManifestCounts {
        ManifestCounts {
            images: self.images.len(),
            pairs: self.images.iter().map(|i| i.entities.len()).sum(),
            croppings: self
                .images
                .iter()
                .flat_map(|i| &i.entities)
                .map(|e| e.croppings.len())
                .sum(),
        }
    }

    /// Canonical pretty-printed JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

impl AestheticManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Manifest {
    Aesthetic(AestheticManifest),
    Semantic(SemanticManifest),
}

impl Manifest {
    pub fn kind(&self) -> ManifestKind {
        match self {
            Manifest::Aesthetic(_) => ManifestKind::Aesthetic,
            Manifest::Semantic(_) => ManifestKind::Semantic,
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            Manifest::Aesthetic(m) => m.to_json(),
            Manifest::Semantic(m) => m.to_json(),
        }
    }
}

fn check_crop(
    report: &mut ValidationReport,
    record: &str,
    crop: &Rect,
    width: u32,
    height: u32,
    square_tol: Option<u32>,
) {
    if crop.is_degenerate() {
        report.push(record, format!("cropping {crop} has zero area"));
        return;
    }
    if !crop.fits_within(width, height) {
        report.push(record, format!("cropping {crop} extends past the {width}x{height} image"));
    }
    if let Some(tol) = square_tol {
        if !matches_ratio(crop, AspectRatio::SQUARE, tol) {
            report.push(record, format!("cropping {crop} is not 1:1 within {tol} px"));
        }
    }
}

fn check_image_header(
    report: &mut ValidationReport,
    seen: &mut HashSet<String>,
    id: &str,
    path: &str,
    width: u32,
    height: u32,
    opts: &LoadOptions,
) {
    if id.is_empty() {
        report.push("<unnamed>", "image id is empty");
    } else if !seen.insert(id.to_string()) {
        report.push(id, "duplicate image id");
    }
    if width == 0 || height == 0 {
        report.push(id, format!("image size {width}x{height} must be positive"));
    }
    if opts.check_images {
        let root = opts.image_root.clone().unwrap_or_default();
        if !root.join(path).is_file() {
            report.push(id, format!("image file `{}` does not exist", root.join(path).display()));
        }
    }
}

pub fn validate_semantic(m: &SemanticManifest, opts: &LoadOptions) -> Result<()> {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    for img in &m.images {
        check_image_header(&mut report, &mut seen, &img.id, &img.path, img.width, img.height, opts);
        if img.entities.is_empty() {
            report.push(&img.id, "image has no entities");
        }
        let mut names = HashSet::new();
        for e in &img.entities {
            let record = format!("{}/{}", img.id, e.name);
            if e.name.trim().is_empty() {
                report.push(&record, "entity name is empty");
            } else if !names.insert(e.name.as_str()) {
                report.push(&record, "duplicate entity for this image");
            }
            if e.croppings.is_empty() || e.croppings.len() > MAX_CROPPINGS_PER_PAIR {
                report.push(
                    &record,
                    format!(
                        "{} croppings, expected 1 to {MAX_CROPPINGS_PER_PAIR}",
                        e.croppings.len()
                    ),
                );
            }
            for c in &e.croppings {
                check_crop(&mut report, &record, c, img.width, img.height, Some(opts.aspect_tolerance));
            }
        }
    }
    if let Some(declared) = m.counts {
        let measured = m.measured_counts();
        if declared != measured {
            report.push(
                "<counts>",
                format!(
                    "header declares {} images / {} pairs / {} croppings but the manifest holds {} / {} / {}",
                    declared.images,
                    declared.pairs,
                    declared.croppings,
                    measured.images,
                    measured.pairs,
                    measured.croppings
                ),
            );
        }
    }
    report.into_result()
}

pub fn validate_aesthetic(m: &AestheticManifest, opts: &LoadOptions) -> Result<()> {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    for img in &m.images {
        check_image_header(&mut report, &mut seen, &img.image_id, &img.path, img.width, img.height, opts);
        if img.croppings.is_empty() {
            report.push(&img.image_id, "image has no croppings");
        }
        for c in &img.croppings {
            check_crop(&mut report, &img.image_id, c, img.width, img.height, None);
        }
    }
    report.into_result()
}

/// Deserializes each image entry on its own so a malformed record is reported by id.
fn parse_images<T: DeserializeOwned>(doc: &serde_json::Value, report: &mut ValidationReport) -> Vec<T> {
    let Some(images) = doc.get("images").and_then(|v| v.as_array()) else {
        report.push("<document>", "missing `images` array");
        return Vec::new();
    };
    let mut out = Vec::with_capacity(images.len());
    for (i, v) in images.iter().enumerate() {
        match serde_json::from_value::<T>(v.clone()) {
            Ok(t) => out.push(t),
            Err(e) => {
                let name = v
                    .get("id")
                    .and_then(|id| id.as_str())
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("images[{i}]"));
                report.push(name, format!("malformed record: {e}"));
            }
        }
    }
    out
}

pub fn parse_manifest(text: &str, kind: ManifestKind, opts: &LoadOptions) -> Result<Manifest> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::format("manifest", e.to_string()))?;
    let mut report = ValidationReport::default();
    let version = match doc.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == MANIFEST_VERSION as u64 => v as u32,
        Some(v) => {
            report.push("<document>", format!("unsupported manifest version {v}"));
            v as u32
        }
        None => {
            report.push("<document>", "missing `version`");
            MANIFEST_VERSION
        }
    };
    match kind {
        ManifestKind::Semantic => {
            let counts = match doc.get("counts") {
                None | Some(serde_json::Value::Null) => None,
                Some(v) => match serde_json::from_value(v.clone()) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        report.push("<counts>", format!("malformed counts: {e}"));
                        None
                    }
                },
            };
            let m = SemanticManifest {
                version,
                counts,
                images: parse_images(&doc, &mut report),
            };
            if let Err(Error::Validation(more)) = validate_semantic(&m, opts) {
                report.issues.extend(more.issues);
            }
            report.into_result()?;
            Ok(Manifest::Semantic(m))
        }
        ManifestKind::Aesthetic => {
            let m = AestheticManifest {
                version,
                images: parse_images(&doc, &mut report),
            };
            if let Err(Error::Validation(more)) = validate_aesthetic(&m, opts) {
                report.issues.extend(more.issues);
            }
            report.into_result()?;
            Ok(Manifest::Aesthetic(m))
        }
    }
}

/// Loads and validates a manifest. When image checking is on and no root is given,
/// image paths resolve against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>, kind: ManifestKind, opts: &LoadOptions) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut opts = opts.clone();
    if opts.image_root.is_none() {
        opts.image_root = path.parent().map(Path::to_path_buf);
    }
    parse_manifest(&text, kind, &opts)
}

/// One annotation job: draw a crop containing `entity` on image `image_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub image_id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub version: u32,
    pub tasks: Vec<Task>,
}

impl TaskManifest {
    pub fn validate(&self) -> Result<()> {
        let mut report = ValidationReport::default();
        let mut ids = HashSet::new();
        let mut pairs = HashSet::new();
        let mut images: HashMap<&str, (&str, u32, u32)> = HashMap::new();
        for t in &self.tasks {
            if !ids.insert(t.task_id.as_str()) {
                report.push(&t.task_id, "duplicate task id");
            }
            if !pairs.insert((t.image_id.as_str(), t.entity.as_str())) {
                report.push(&t.task_id, "duplicate image-entity pair");
            }
            if t.width == 0 || t.height == 0 {
                report.push(&t.task_id, "image size must be positive");
            }
            if t.entity.trim().is_empty() {
                report.push(&t.task_id, "entity is empty");
            }
            let meta = (t.path.as_str(), t.width, t.height);
            if let Some(prev) = images.insert(&t.image_id, meta) {
                if prev != meta {
                    report.push(&t.task_id, format!("image `{}` described inconsistently", t.image_id));
                }
            }
        }
        report.into_result()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: TaskManifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn task(&self, task_id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }
}

/// A stored annotation line: `{seq, task_id, image_id, entity, worker_id, crop, ts}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub seq: u64,
    pub task_id: String,
    pub image_id: String,
    pub entity: String,
    pub worker_id: String,
    /// In original image coordinates.
    pub crop: Rect,
    pub ts: DateTime<Utc>,
}

/// A submission before the store assigns its sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationDraft {
    pub task_id: String,
    pub worker_id: String,
    pub crop: Rect,
    /// Defaults to the time of the append.
    pub ts: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Ack {
    pub seq: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum AppendError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("worker `{worker}` already annotated task `{task}`")]
    Duplicate { task: String, worker: String },
    #[error("task `{0}` already has the maximum number of croppings")]
    TaskFull(String),
    #[error("{0}")]
    Rejected(String),
    #[error(transparent)]
    Storage(#[from] Error),
}

struct StoreState {
    file: File,
    records: Vec<AnnotationRecord>,
    keys: HashSet<(String, String)>,
    per_task: HashMap<String, usize>,
    next_seq: u64,
}

/// Line-per-record annotation log. Appends are serialized through a mutex and each
/// line reaches the file in a single write followed by `fsync`.
pub struct AnnotationStore {
    path: PathBuf,
    tasks: TaskManifest,
    state: Mutex<StoreState>,
}

impl AnnotationStore {
    pub fn open(path: impl AsRef<Path>, tasks: TaskManifest) -> Result<Self> {
        tasks.validate()?;
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if path.exists() {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| {
                    Error::format("annotation log", format!("{} line {}: {e}", path.display(), n + 1))
                })?;
                records.push(rec);
            }
        }
        let mut keys = HashSet::new();
        let mut per_task = HashMap::new();
        for r in &records {
            keys.insert((r.task_id.clone(), r.worker_id.clone()));
            *per_task.entry(r.task_id.clone()).or_insert(0) += 1;
        }
        let next_seq = records.iter().map(|r| r.seq).max().unwrap_or(0) + 1;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(AnnotationStore {
            path,
            tasks,
            state: Mutex::new(StoreState {
                file,
                records,
                keys,
                per_task,
                next_seq,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn tasks(&self) -> &TaskManifest {
        &self.tasks
    }

    /// Checks a crop for a task without storing anything.
    pub fn check_crop(task: &Task, crop: &Rect) -> std::result::Result<(), String> {
        if crop.is_degenerate() {
            return Err(format!("crop {crop} has zero area"));
        }
        if !crop.fits_within(task.width, task.height) {
            return Err(format!(
                "crop {crop} extends past the {}x{} image",
                task.width, task.height
            ));
        }
        if !matches_ratio(crop, AspectRatio::SQUARE, 1) {
            return Err(format!("crop {crop} is not square (1:1 within 1 px)"));
        }
        Ok(())
    }

    pub fn append(&self, draft: AnnotationDraft) -> std::result::Result<Ack, AppendError> {
        let task = self
            .tasks
            .task(&draft.task_id)
            .ok_or_else(|| AppendError::UnknownTask(draft.task_id.clone()))?;
        if draft.worker_id.trim().is_empty() {
            return Err(AppendError::Rejected("worker id is empty".into()));
        }
        Self::check_crop(task, &draft.crop).map_err(AppendError::Rejected)?;

        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let key = (draft.task_id.clone(), draft.worker_id.clone());
        if state.keys.contains(&key) {
            return Err(AppendError::Duplicate {
                task: draft.task_id,
                worker: draft.worker_id,
            });
        }
        if state.per_task.get(&draft.task_id).copied().unwrap_or(0) >= MAX_CROPPINGS_PER_PAIR {
            return Err(AppendError::TaskFull(draft.task_id));
        }
        let rec = AnnotationRecord {
            seq: state.next_seq,
            task_id: task.task_id.clone(),
            image_id: task.image_id.clone(),
            entity: task.entity.clone(),
            worker_id: draft.worker_id,
            crop: draft.crop,
            ts: draft.ts.unwrap_or_else(Utc::now),
        };
        let mut line = serde_json::to_string(&rec).map_err(|e| Error::json(&self.path, e))?;
        line.push('\n');
        state
            .file
            .write_all(line.as_bytes())
            .and_then(|_| state.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))?;
        state.next_seq += 1;
        state.keys.insert(key);
        *state.per_task.entry(rec.task_id.clone()).or_insert(0) += 1;
        let ack = Ack { seq: rec.seq };
        state.records.push(rec);
        Ok(ack)
    }

    pub fn snapshot(&self) -> Vec<AnnotationRecord> {
        self.state.lock().unwrap_or_else(|p| p.into_inner()).records.clone()
    }

    pub fn completed(&self, task_id: &str) -> usize {
        let state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        state.per_task.get(task_id).copied().unwrap_or(0)
    }

    /// The open task with the fewest annotations that this worker has not done yet;
    /// ties go to the task listed first.
    pub fn next_task_for(&self, worker: &str) -> Option<&Task> {
        let state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        self.tasks
            .tasks
            .iter()
            .filter(|t| !state.keys.contains(&(t.task_id.clone(), worker.to_string())))
            .map(|t| (state.per_task.get(&t.task_id).copied().unwrap_or(0), t))
            .filter(|(n, _)| *n < MAX_CROPPINGS_PER_PAIR)
            .min_by_key(|(n, _)| *n)
            .map(|(_, t)| t)
    }

    pub fn export_semantic_manifest(&self) -> SemanticManifest {
        export_semantic_manifest(&self.tasks, &self.snapshot())
    }
}

/// Groups annotations by image and entity: images by id, entities by name, croppings by sequence.
pub fn export_semantic_manifest(tasks: &TaskManifest, records: &[AnnotationRecord]) -> SemanticManifest {
    let mut sorted: Vec<&AnnotationRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.seq);
    let mut grouped: BTreeMap<&str, BTreeMap<&str, Vec<Rect>>> = BTreeMap::new();
    for r in sorted {
        grouped
            .entry(&r.image_id)
            .or_default()
            .entry(&r.entity)
            .or_default()
            .push(r.crop);
    }
    let images: Vec<SemanticImage> = grouped
        .into_iter()
        .map(|(image_id, entities)| {
            let meta = tasks.tasks.iter().find(|t| t.image_id == image_id);
            SemanticImage {
                id: image_id.to_string(),
                path: meta.map(|t| t.path.clone()).unwrap_or_default(),
                width: meta.map_or(0, |t| t.width),
                height: meta.map_or(0, |t| t.height),
                entities: entities
                    .into_iter()
                    .map(|(name, croppings)| EntityCroppings {
                        name: name.to_string(),
                        croppings,
                    })
                    .collect(),
            }
        })
        .collect();
    let mut m = SemanticManifest {
        version: MANIFEST_VERSION,
        counts: None,
        images,
    };
    m.counts = Some(m.measured_counts());
    m
}

/// RFC 3339 with second precision, the format used in annotation lines.
pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}
