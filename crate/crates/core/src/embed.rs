//! Face embeddings, the EMB1 archive format, and the built-in baseline embedder.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::{self, DegradationSpec, RasterImage, CROP_SIZE};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ImageRecord};
use crate::rng::{derive_seed, Gaussian};

/// Tolerance on the L2 norm of a stored embedding.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Looser norm tolerance applied to archives produced by external tools.
pub const ARCHIVE_NORM_TOL: f64 = 1e-4;

/// Output dimension of the baseline embedder.
pub const BASELINE_DIM: usize = 128;

/// Side of the luma thumbnail the baseline embedder projects.
pub const BASELINE_THUMB: u32 = 32;

const MIN_NORM: f64 = 1e-12;

/// A unit-norm latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// L2-normalizes `raw`. Fails on empty, non-finite, or zero vectors.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::param("embedding has zero dimensions"));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("embedding has non-finite components"));
        }
        let norm = l2(&raw);
        if norm < MIN_NORM {
            return Err(Error::param("cannot normalize a zero vector"));
        }
        Ok(Self {
            values: raw.into_iter().map(|v| v / norm).collect(),
        })
    }

    /// The `i`-th standard basis vector of dimension `dim`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut values = vec![0.0; dim];
        values[i] = 1.0;
        Self { values }
    }

    /// Wraps stored components without renormalizing; used for archive loads.
    fn from_stored(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }

    /// Rounds every component through `f32`, the archive's storage width.
    pub fn quantized(&self) -> Self {
        Self {
            values: self.values.iter().map(|&v| v as f32 as f64).collect(),
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::param(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok((dot(&a.values, &b.values) / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

/// Embeddings keyed by image id, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingArchive {
    backend_id: String,
    dim: usize,
    entries: BTreeMap<String, Embedding>,
}

impl EmbeddingArchive {
    pub fn new(backend_id: impl Into<String>, dim: usize) -> Self {
        Self {
            backend_id: backend_id.into(),
            dim,
            entries: BTreeMap::new(),
        }
    }

    /// Stores `e` at `f32` precision.
    pub fn insert(&mut self, image_id: impl Into<String>, e: &Embedding) -> Result<()> {
        let id = image_id.into();
        if id.is_empty() {
            return Err(Error::param("archive image_id is empty"));
        }
        if e.dim() != self.dim {
            return Err(Error::param(format!(
                "embedding for '{id}' has dim {}, archive has {}",
                e.dim(),
                self.dim
            )));
        }
        self.entries.insert(id, e.quantized());
        Ok(())
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&Embedding> {
        self.entries.get(image_id)
    }

    /// Like [`get`](Self::get), but a miss is a lookup error.
    pub fn require(&self, image_id: &str) -> Result<&Embedding> {
        self.get(image_id)
            .ok_or_else(|| Error::Lookup(image_id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Embedding)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Replaces or adds every entry of `other`.
    pub fn merge_from(&mut self, other: &EmbeddingArchive) -> Result<()> {
        for (id, e) in other.iter() {
            self.insert(id, e)?;
        }
        Ok(())
    }
}

const MAGIC: &[u8; 4] = b"EMB1";

impl EmbeddingArchive {
    /// Serializes to the EMB1 layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dim = u32::try_from(self.dim).map_err(|_| Error::param("dimension exceeds u32"))?;
        let mut out = Vec::with_capacity(22 + self.entries.len() * (8 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        put_str(&mut out, &self.backend_id)?;
        for (id, e) in &self.entries {
            put_str(&mut out, id)?;
            for &v in &e.values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses the EMB1 layout. Errors report the byte offset of the problem.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {:?}", String::from_utf8_lossy(magic)),
            });
        }
        let dim = u32::from_le_bytes(r.array("dim")?) as usize;
        let count = u64::from_le_bytes(r.array("count")?);
        let backend_id = r.string("backend_id")?;
        let mut archive = EmbeddingArchive::new(backend_id, dim);
        for _ in 0..count {
            let at = r.pos as u64;
            let id = r.string("image_id")?;
            if id.is_empty() {
                return Err(Error::Format {
                    offset: at,
                    message: "empty image_id".into(),
                });
            }
            let vec_at = r.pos as u64;
            let raw = r.take(4 * dim, "embedding values")?;
            let values: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let norm = l2(&values);
            if !norm.is_finite() || (norm - 1.0).abs() > ARCHIVE_NORM_TOL {
                return Err(Error::Format {
                    offset: vec_at,
                    message: format!("embedding for '{id}' has norm {norm}"),
                });
            }
            if archive.entries.contains_key(&id) {
                return Err(Error::Format {
                    offset: at,
                    message: format!("duplicate image_id '{id}'"),
                });
            }
            archive.entries.insert(id, Embedding::from_stored(values));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                message: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(archive)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::param(format!("string of {} bytes exceeds u16 length", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            }),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = u16::from_le_bytes(self.array(what)?) as usize;
        let at = self.pos as u64;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            offset: at,
            message: format!("{what} is not valid UTF-8"),
        })
    }
}

pub fn save_archive(archive: &EmbeddingArchive, path: &Path) -> Result<()> {
    crate::report::atomic_write(path, &archive.to_bytes()?)
}

pub fn load_archive(path: &Path) -> Result<EmbeddingArchive> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingArchive::from_bytes(&bytes)
}

/// Deterministic random-projection embedder over a 32×32 luma thumbnail.
///
/// This is a pipeline stand-in so evaluations run without model weights; it
/// carries no claim of face-recognition quality.
#[derive(Debug, Clone)]
pub struct BaselineEmbedder {
    seed: u64,
    /// Row-major `BASELINE_DIM × 1024` standard normals.
    projection: Vec<f64>,
}

impl BaselineEmbedder {
    pub fn new(seed: u64) -> Self {
        let n = (BASELINE_THUMB * BASELINE_THUMB) as usize;
        Self {
            seed,
            projection: Gaussian::new(seed).take(BASELINE_DIM * n).collect(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn backend_id(&self) -> String {
        format!("baseline-rp{BASELINE_DIM}-seed{}", self.seed)
    }

    /// Embeds a 160×160 crop. Constant images map to the first basis vector.
    pub fn embed(&self, img: &RasterImage) -> Result<Embedding> {
        if img.width() != CROP_SIZE || img.height() != CROP_SIZE {
            return Err(Error::param(format!(
                "baseline embedder expects a {CROP_SIZE}x{CROP_SIZE} crop, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        let thumb = degrade::resize_plane(
            &img.luma(),
            CROP_SIZE,
            CROP_SIZE,
            1,
            BASELINE_THUMB,
            BASELINE_THUMB,
        );
        let mean = thumb.iter().sum::<f64>() / thumb.len() as f64;
        let centred: Vec<f64> = thumb.iter().map(|v| v - mean).collect();
        let raw: Vec<f64> = self
            .projection
            .chunks_exact(centred.len())
            .map(|row| dot(row, &centred))
            .collect();
        if l2(&raw) < MIN_NORM {
            return Ok(Embedding::basis(BASELINE_DIM, 0));
        }
        Embedding::normalized(raw)
    }
}

/// One-shot convenience over [`BaselineEmbedder`].
pub fn baseline_embed(img: &RasterImage, seed: u64) -> Result<Embedding> {
    BaselineEmbedder::new(seed).embed(img)
}

/// Where embeddings come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendDescriptor {
    Baseline { seed: u64 },
    Archive { path: PathBuf },
}

/// Seed used to degrade one probe: the spec's seed mixed with the image id.
pub fn probe_noise_seed(spec_seed: u64, image_id: &str) -> u64 {
    derive_seed(spec_seed, image_id)
}

/// Reads `rec`'s image and returns its 160×160 crop.
pub fn load_crop(manifest: &DatasetManifest, rec: &ImageRecord) -> Result<RasterImage> {
    let path = manifest.resolve(rec);
    let img = RasterImage::load(&path).map_err(|e| Error::Image {
        image_id: rec.image_id.clone(),
        path: path.clone(),
        message: e.to_string(),
    })?;
    degrade::crop_resize(&img, rec.bbox).map_err(|e| Error::Image {
        image_id: rec.image_id.clone(),
        path,
        message: e.to_string(),
    })
}

/// Embeds `records` with the baseline embedder, degrading non-mugshot records
/// when `degradation` is given. Runs in parallel; results are keyed by id.
pub fn embed_records(
    manifest: &DatasetManifest,
    records: &[&ImageRecord],
    embedder: &BaselineEmbedder,
    degradation: Option<&DegradationSpec>,
) -> Result<EmbeddingArchive> {
    if let Some(spec) = degradation {
        spec.validate()?;
    }
    let embedded: Vec<(String, Embedding)> = records
        .par_iter()
        .map(|rec| {
            let mut crop = load_crop(manifest, rec)?;
            if let (Some(spec), false) = (degradation, rec.is_mugshot()) {
                let spec = spec.with_seed(probe_noise_seed(spec.seed, &rec.image_id));
                crop = degrade::apply_spec(&crop, &spec)?;
            }
            Ok((rec.image_id.clone(), embedder.embed(&crop)?))
        })
        .collect::<Result<_>>()?;
    let mut archive = EmbeddingArchive::new(embedder.backend_id(), BASELINE_DIM);
    for (id, e) in &embedded {
        archive.insert(id.clone(), e)?;
    }
    Ok(archive)
}

/// Embeds every record of `manifest`. Mugshots are never degraded.
pub fn batch_embed(
    manifest: &DatasetManifest,
    backend: &BackendDescriptor,
    degradation: Option<&DegradationSpec>,
) -> Result<EmbeddingArchive> {
    let records: Vec<&ImageRecord> = manifest.records.iter().collect();
    match backend {
        BackendDescriptor::Baseline { seed } => {
            embed_records(manifest, &records, &BaselineEmbedder::new(*seed), degradation)
        }
        BackendDescriptor::Archive { path } => {
            if degradation.is_some() {
                return Err(Error::param(
                    "precomputed archive embeddings cannot be degraded; use the baseline backend",
                ));
            }
            let source = load_archive(path)?;
            let mut out = EmbeddingArchive::new(source.backend_id(), source.dim());
            for rec in records {
                out.insert(rec.image_id.clone(), source.require(&rec.image_id)?)?;
            }
            Ok(out)
        }
    }
}
