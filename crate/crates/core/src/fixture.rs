//! Procedural stand-in corpus.
//!
//! Each identity is a smooth random pattern (mid-frequency detail plus weak
//! low-frequency structure) over a template shared by every identity. Each
//! image of an identity is a variant: its own perturbation pattern, a
//! brightness shift, a small translation, and mild pixel noise. Scene
//! attributes change the pixels too: opaque glasses and masks paint occluding
//! bands, head rotation adds translation, and low light compresses contrast.
//! The first image of every identity is its mugshot.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::degrade::{self, BoundingBox, RasterImage};
use crate::error::{Error, Result};
use crate::manifest::{
    DatasetManifest, Glasses, ImageRecord, Lighting, Role, Source, MIN_LINEUP_IDENTITIES,
};
use crate::report::atomic_write;
use crate::rng::{derive_seed, Gaussian, SplitMix64};

pub const FIXTURE_SIZE: u32 = 512;

/// Face box recorded for every fixture image.
pub const FIXTURE_BBOX: [u32; 4] = [16, 16, 480, 480];

const TEMPLATE_AMP: f64 = 30.0;
const IDENTITY_AMP: f64 = 30.0;
const LOW_FREQ_AMP: f64 = 6.0;
const VARIANT_AMP: f64 = 45.0;
const PIXEL_NOISE: f64 = 4.0;
const MAX_SHIFT: i64 = 1;

/// Coarse grid sizes and in-grid smoothing. Identity detail is finer than the
/// per-image perturbation.
const DETAIL_GRID: u32 = 96;
const PERTURB_GRID: u32 = 32;
const DETAIL_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureParams {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub seed: u64,
}

impl FixtureParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < MIN_LINEUP_IDENTITIES {
            return Err(Error::param(format!(
                "fixture needs at least {MIN_LINEUP_IDENTITIES} identities, got {}",
                self.n_identities
            )));
        }
        if self.images_per_identity == 0 {
            return Err(Error::param("fixture needs at least one image per identity"));
        }
        Ok(())
    }
}

/// Unit-variance smooth random field at `FIXTURE_SIZE`, from a coarse grid of
/// Gaussian samples blurred in-grid then upsampled bilinearly.
fn smooth_field(grid: u32, sigma: f64, seed: u64) -> Vec<f64> {
    let n = (grid * grid) as usize;
    let white: Vec<f64> = Gaussian::new(seed).take(n).collect();
    let smoothed = blur_plane(&white, grid, sigma);
    let up = degrade::resize_plane(&smoothed, grid, grid, 1, FIXTURE_SIZE, FIXTURE_SIZE);
    let mean = up.iter().sum::<f64>() / up.len() as f64;
    let sd = (up.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / up.len() as f64).sqrt();
    up.into_iter().map(|v| (v - mean) / sd).collect()
}

/// Separable Gaussian on a square float plane with wrap-around edges.
fn blur_plane(src: &[f64], side: u32, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let ksum: f64 = k.iter().sum();
    let s = side as i64;
    let idx = |x: i64, y: i64| (y.rem_euclid(s) * s + x.rem_euclid(s)) as usize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..s {
        for x in 0..s {
            tmp[idx(x, y)] = k.iter().enumerate().map(|(t, w)| w * src[idx(x + t as i64 - r, y)]).sum::<f64>() / ksum;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..s {
        for x in 0..s {
            out[idx(x, y)] = k.iter().enumerate().map(|(t, w)| w * tmp[idx(x, y + t as i64 - r)]).sum::<f64>() / ksum;
        }
    }
    out
}

/// Sum of a few random plane waves of 1–3 cycles per image, unit variance.
fn low_frequency(seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let fx = 1.0 + rng.next_f64() * 2.0;
            let fy = 1.0 + rng.next_f64() * 2.0;
            let phase = rng.next_f64() * std::f64::consts::TAU;
            (fx, fy, phase)
        })
        .collect();
    let size = FIXTURE_SIZE as f64;
    let mut out = Vec::with_capacity((FIXTURE_SIZE * FIXTURE_SIZE) as usize);
    for y in 0..FIXTURE_SIZE {
        for x in 0..FIXTURE_SIZE {
            let v: f64 = waves
                .iter()
                .map(|&(fx, fy, ph)| {
                    (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / size + ph).sin()
                })
                .sum();
            out.push(v * (2.0f64 / 3.0).sqrt());
        }
    }
    out
}

struct Identity {
    id: String,
    detail: Vec<f64>,
    low: Vec<f64>,
    tint: [f64; 3],
    race: &'static str,
    gender: &'static str,
}

struct Variant {
    record: ImageRecord,
    shift: (i64, i64),
    brightness: f64,
    seed: u64,
}

fn pick<T: Copy>(rng: &mut SplitMix64, options: &[(T, f64)]) -> T {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for &(v, p) in options {
        acc += p;
        if u < acc {
            return v;
        }
    }
    options[options.len() - 1].0
}

fn make_identity(i: usize, seed: u64) -> Identity {
    let s = derive_seed(seed, &format!("identity/{i}"));
    let mut rng = SplitMix64::new(derive_seed(s, "attributes"));
    let race = pick(&mut rng, &[("white", 0.25), ("black", 0.15), ("other", 0.60)]);
    let gender = pick(&mut rng, &[("female", 0.5), ("male", 0.5)]);
    let tint = [0; 3].map(|_| 0.85 + 0.3 * rng.next_f64());
    Identity {
        id: format!("id{i:04}"),
        detail: smooth_field(DETAIL_GRID, DETAIL_SIGMA, derive_seed(s, "detail")),
        low: low_frequency(derive_seed(s, "low")),
        tint,
        race,
        gender,
    }
}

fn make_variant(ident: &Identity, j: usize, seed: u64) -> Variant {
    let s = derive_seed(seed, &format!("variant/{}/{j}", ident.id));
    let mut rng = SplitMix64::new(s);
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.next_f64();
    let mugshot = j == 0;
    let (yaw, pitch, roll) = if mugshot {
        (uniform(-5.0, 5.0), uniform(-5.0, 5.0), uniform(-5.0, 5.0))
    } else {
        (uniform(-45.0, 45.0), uniform(-35.0, 35.0), uniform(-20.0, 20.0))
    };
    let brightness = uniform(-20.0, 20.0);
    let shift = (
        (uniform(-1.0, 1.0) * MAX_SHIFT as f64).round() as i64,
        (uniform(-1.0, 1.0) * MAX_SHIFT as f64).round() as i64,
    );
    let mut rng = SplitMix64::new(derive_seed(s, "scene"));
    let (glasses, mask, headwear, lighting) = if mugshot {
        (Glasses::None, false, false, Lighting::Normal)
    } else {
        (
            pick(&mut rng, &[(Glasses::None, 0.6), (Glasses::Clear, 0.2), (Glasses::Opaque, 0.2)]),
            rng.next_f64() < 0.15,
            rng.next_f64() < 0.2,
            pick(&mut rng, &[(Lighting::Normal, 0.75), (Lighting::Low, 0.25)]),
        )
    };
    let image_id = format!("{}_{j:02}", ident.id);
    Variant {
        record: ImageRecord {
            path: PathBuf::from(format!("images/{image_id}.png")),
            image_id,
            identity_id: ident.id.clone(),
            role: if mugshot { Role::Mugshot } else { Role::Unconstrained },
            yaw: round1(yaw),
            pitch: round1(pitch),
            roll: round1(roll),
            glasses,
            mask,
            headwear,
            lighting,
            race: ident.race.to_string(),
            gender: ident.gender.to_string(),
            source: Source::Synthetic,
            bbox: Some(BoundingBox::from(FIXTURE_BBOX)),
        },
        shift,
        brightness,
        seed: s,
    }
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn render(template: &[f64], ident: &Identity, v: &Variant) -> RasterImage {
    let size = FIXTURE_SIZE as i64;
    let rec = &v.record;
    let perturb = smooth_field(PERTURB_GRID, DETAIL_SIGMA, derive_seed(v.seed, "perturb"));
    let mut noise = Gaussian::new(derive_seed(v.seed, "noise"));
    // Head rotation reads as extra displacement of the pattern.
    let dx = v.shift.0 + (rec.yaw / 30.0).round() as i64;
    let dy = v.shift.1 + (rec.pitch / 30.0).round() as i64;
    let contrast = if rec.lighting == Lighting::Low { 0.45 } else { 1.0 };

    let mut data = Vec::with_capacity((size * size * 3) as usize);
    for y in 0..size {
        for x in 0..size {
            let sx = (x - dx).clamp(0, size - 1);
            let sy = (y - dy).clamp(0, size - 1);
            let k = (sy * size + sx) as usize;
            let p = (y * size + x) as usize;
            let mut base = TEMPLATE_AMP * template[k]
                + IDENTITY_AMP * ident.detail[k]
                + LOW_FREQ_AMP * ident.low[k]
                + VARIANT_AMP * perturb[p];
            let in_eyes = (150..210).contains(&y) && (96..416).contains(&x);
            let in_mouth = (320..470).contains(&y) && (120..392).contains(&x);
            let in_hat = y < 90;
            let mut flat = None;
            match rec.glasses {
                Glasses::Opaque if in_eyes => flat = Some(-100.0),
                Glasses::Clear if in_eyes => base *= 0.8,
                _ => {}
            }
            if rec.mask && in_mouth {
                flat = Some(70.0);
            }
            if rec.headwear && in_hat {
                flat = Some(-40.0);
            }
            let centred = flat.unwrap_or(base);
            for tint in ident.tint {
                let value = 128.0 + contrast * (tint * centred + v.brightness) + PIXEL_NOISE * noise.sample();
                data.push(value.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage::new(FIXTURE_SIZE, FIXTURE_SIZE, 3, data).expect("fixture dimensions")
}

/// Writes `n_identities × images_per_identity` PNGs under `out_dir/images`
/// and `out_dir/manifest.jsonl`. Equal parameters give byte-identical files.
pub fn gen_fixture(
    n_identities: usize,
    images_per_identity: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let params = FixtureParams {
        n_identities,
        images_per_identity,
        seed,
    };
    params.validate()?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let template = smooth_field(PERTURB_GRID, DETAIL_SIGMA, derive_seed(seed, "template"));
    let records: Vec<Vec<ImageRecord>> = (0..n_identities)
        .into_par_iter()
        .map(|i| {
            let ident = make_identity(i, seed);
            (0..images_per_identity)
                .map(|j| {
                    let v = make_variant(&ident, j, seed);
                    let img = render(&template, &ident, &v);
                    atomic_write(&out_dir.join(&v.record.path), &img.encode_png()?)?;
                    Ok(v.record)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let dataset_id = out_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("fixture-{seed}"));
    let manifest = DatasetManifest::new(dataset_id, records.into_iter().flatten().collect(), out_dir.to_path_buf())?;
    atomic_write(&out_dir.join("manifest.jsonl"), manifest.to_jsonl().as_bytes())?;
    Ok(manifest)
}
