//! Dataset manifests: one JSON object per line describing an image and the
//! attributes the evaluations condition on.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degrade::BoundingBox;
use crate::error::{Error, Result};

/// Largest per-axis pose angle (degrees) accepted for a mugshot.
pub const MUGSHOT_MAX_POSE_DEG: f64 = 10.0;

/// Minimum number of identities with a mugshot for a six-person lineup.
pub const MIN_LINEUP_IDENTITIES: usize = 6;

/// Keys every manifest line carries, in canonical order.
pub const MANIFEST_KEYS: [&str; 15] = [
    "image_id",
    "identity_id",
    "path",
    "role",
    "yaw",
    "pitch",
    "roll",
    "glasses",
    "mask",
    "headwear",
    "lighting",
    "race",
    "gender",
    "source",
    "bbox",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Mugshot,
    Unconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Glasses {
    None,
    Clear,
    Opaque,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lighting {
    Normal,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

/// One face image and its attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    pub identity_id: String,
    pub path: PathBuf,
    pub role: Role,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub glasses: Glasses,
    pub mask: bool,
    pub headwear: bool,
    pub lighting: Lighting,
    pub race: String,
    pub gender: String,
    pub source: Source,
    pub bbox: Option<BoundingBox>,
}

impl ImageRecord {
    /// Largest absolute pose angle over yaw, pitch and roll.
    pub fn max_abs_pose(&self) -> f64 {
        self.yaw.abs().max(self.pitch.abs()).max(self.roll.abs())
    }

    pub fn is_occluded(&self) -> bool {
        self.glasses == Glasses::Opaque || self.mask
    }

    pub fn is_mugshot(&self) -> bool {
        self.role == Role::Mugshot
    }

    /// Value of a grouping attribute (`race` or `gender`).
    pub fn attribute(&self, key: &str) -> Option<&str> {
        match key {
            "race" => Some(&self.race),
            "gender" => Some(&self.gender),
            _ => None,
        }
    }

    /// Checks the per-record invariants.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.image_id.is_empty() {
            return Err("image_id is empty".into());
        }
        if self.identity_id.is_empty() {
            return Err(format!("record '{}' has an empty identity_id", self.image_id));
        }
        for (name, v) in [("yaw", self.yaw), ("pitch", self.pitch), ("roll", self.roll)] {
            if !(-180.0..=180.0).contains(&v) {
                return Err(format!("record '{}': {name} {v} outside [-180, 180]", self.image_id));
            }
        }
        if self.role == Role::Mugshot {
            if self.glasses != Glasses::None || self.mask {
                return Err(format!(
                    "mugshot '{}' must have no glasses and no mask",
                    self.image_id
                ));
            }
            if self.max_abs_pose() > MUGSHOT_MAX_POSE_DEG {
                return Err(format!(
                    "mugshot '{}' pose {:.1} deg exceeds {MUGSHOT_MAX_POSE_DEG} deg",
                    self.image_id,
                    self.max_abs_pose()
                ));
            }
        }
        if let Some(b) = self.bbox {
            if b.w == 0 || b.h == 0 {
                return Err(format!("record '{}' has an empty bbox", self.image_id));
            }
        }
        Ok(())
    }
}

/// An ordered set of image records.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub notes: String,
    pub records: Vec<ImageRecord>,
    /// Directory relative image paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(dataset_id: impl Into<String>, records: Vec<ImageRecord>, root: PathBuf) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, rec) in records.iter().enumerate() {
            rec.validate()
                .map_err(|message| Error::Validation { line: i + 1, message })?;
            if !seen.insert(rec.image_id.as_str()) {
                return Err(duplicate(i + 1, &rec.image_id));
            }
        }
        Ok(Self {
            dataset_id: dataset_id.into(),
            notes: String::new(),
            records,
            root,
        })
    }

    pub fn resolve(&self, rec: &ImageRecord) -> PathBuf {
        if rec.path.is_absolute() {
            rec.path.clone()
        } else {
            self.root.join(&rec.path)
        }
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn identities(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.identity_id.as_str()).collect()
    }

    /// Fails unless enough identities have a mugshot to fill a lineup.
    pub fn check_lineup_feasible(&self) -> Result<()> {
        let n = select_mugshots(self).len();
        if n < MIN_LINEUP_IDENTITIES {
            return Err(Error::Setup(format!(
                "manifest '{}' has {n} identities with a mugshot; at least {MIN_LINEUP_IDENTITIES} are required",
                self.dataset_id
            )));
        }
        Ok(())
    }

    /// Serializes to the line-delimited format read by [`load_manifest`].
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

fn duplicate(line: usize, id: &str) -> Error {
    Error::Validation {
        line,
        message: format!("duplicate image_id '{id}'"),
    }
}

/// Whether unknown manifest keys are rejected or only logged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

/// Loads a manifest in strict mode.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest_with(path, Strictness::Strict)
}

pub fn load_manifest_with(path: &Path, strictness: Strictness) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let dataset_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let records = parse_records(&text, strictness)?;
    let mut manifest = DatasetManifest::new(dataset_id, Vec::new(), root)?;
    manifest.records = records;
    if manifest.dataset_id == "manifest" {
        if let Some(dir) = manifest.root.file_name() {
            manifest.dataset_id = dir.to_string_lossy().into_owned();
        }
    }
    Ok(manifest)
}

/// Parses JSONL manifest text, validating every record.
pub fn parse_records(text: &str, strictness: Strictness) -> Result<Vec<ImageRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: lineno,
            message,
        };
        let mut obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let unknown: Vec<String> = obj
            .keys()
            .filter(|k| !MANIFEST_KEYS.contains(&k.as_str()))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            match strictness {
                Strictness::Strict => {
                    return Err(parse_err(format!("unknown key(s): {}", unknown.join(", "))))
                }
                Strictness::Lenient => {
                    log::warn!("manifest line {lineno}: ignoring unknown key(s) {}", unknown.join(", "));
                    for k in &unknown {
                        obj.remove(k);
                    }
                }
            }
        }
        if let Some(missing) = MANIFEST_KEYS.iter().find(|k| !obj.contains_key(**k)) {
            return Err(parse_err(format!("missing key '{missing}'")));
        }
        let rec: ImageRecord = serde_json::from_value(serde_json::Value::Object(obj))
            .map_err(|e| parse_err(e.to_string()))?;
        rec.validate().map_err(|message| Error::Validation {
            line: lineno,
            message,
        })?;
        if !seen.insert(rec.image_id.clone()) {
            return Err(duplicate(lineno, &rec.image_id));
        }
        records.push(rec);
    }
    Ok(records)
}

/// The designated mugshot per identity: the lexicographically smallest
/// `image_id` among that identity's mugshot records.
pub fn select_mugshots(manifest: &DatasetManifest) -> BTreeMap<String, ImageRecord> {
    let mut out: BTreeMap<String, ImageRecord> = BTreeMap::new();
    for rec in manifest.records.iter().filter(|r| r.is_mugshot()) {
        match out.get(&rec.identity_id) {
            Some(cur) if cur.image_id <= rec.image_id => {}
            _ => {
                out.insert(rec.identity_id.clone(), rec.clone());
            }
        }
    }
    out
}

/// Probe selection predicates, combined by conjunction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeFilter {
    /// Opaque glasses or a mask.
    pub occluded_only: bool,
    /// Any pose angle strictly greater than `rotation_threshold`.
    pub rotated_only: bool,
    pub low_light_only: bool,
    pub rotation_threshold: f64,
}

impl Default for ProbeFilter {
    fn default() -> Self {
        Self {
            occluded_only: false,
            rotated_only: false,
            low_light_only: false,
            rotation_threshold: 30.0,
        }
    }
}

impl ProbeFilter {
    pub fn occluded() -> Self {
        Self {
            occluded_only: true,
            ..Self::default()
        }
    }

    pub fn rotated() -> Self {
        Self {
            rotated_only: true,
            ..Self::default()
        }
    }

    pub fn low_light() -> Self {
        Self {
            low_light_only: true,
            ..Self::default()
        }
    }

    pub fn all_three() -> Self {
        Self {
            occluded_only: true,
            rotated_only: true,
            low_light_only: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation_threshold > 0.0 && self.rotation_threshold.is_finite() {
            Ok(())
        } else {
            Err(Error::param(format!(
                "rotation threshold {} must be positive",
                self.rotation_threshold
            )))
        }
    }

    pub fn accepts(&self, rec: &ImageRecord) -> bool {
        rec.role == Role::Unconstrained
            && (!self.occluded_only || rec.is_occluded())
            && (!self.rotated_only || rec.max_abs_pose() > self.rotation_threshold)
            && (!self.low_light_only || rec.lighting == Lighting::Low)
    }
}

/// Unconstrained records passing `filter`, in manifest order.
pub fn filter_probes<'a>(manifest: &'a DatasetManifest, filter: &ProbeFilter) -> Vec<&'a ImageRecord> {
    manifest.records.iter().filter(|r| filter.accepts(r)).collect()
}
