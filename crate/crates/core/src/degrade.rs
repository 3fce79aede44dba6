//! Probe preprocessing and image degradations.
//!
//! All operators take and return 8-bit [`RasterImage`]s and are deterministic
//! in their full argument tuple. Resampling uses bilinear interpolation with
//! pixel centres at half-integer coordinates and edge clamping.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Gaussian;

/// Side length of the square crop fed to the embedders.
pub const CROP_SIZE: u32 = 160;

/// An 8-bit, row-major, channel-interleaved image with 1 or 3 channels.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(format!("image size {width}x{height} is empty")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::param(format!("unsupported channel count {channels}")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::param(format!(
                "sample count {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self> {
        let n = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; n])
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        channels: u8,
        mut f: impl FnMut(u32, u32, u8) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize * channels as usize);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.index(x, y, c)]
    }

    fn index(&self, x: u32, y: u32, c: u8) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize
    }

    /// Per-pixel luma (0.299 R + 0.587 G + 0.114 B); the sample itself for grayscale.
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f64).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .collect(),
        }
    }

    /// Reads a PNG or JPEG file, converting to 8-bit gray or RGB.
    pub fn load(path: &Path) -> Result<Self> {
        let dynimg = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::param(format!("{}: {other}", path.display())),
        })?;
        Ok(Self::from_dynamic(dynimg))
    }

    fn from_dynamic(dynimg: image::DynamicImage) -> Self {
        use image::ColorType;
        match dynimg.color() {
            ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16 => {
                let buf = dynimg.into_luma8();
                let (w, h) = buf.dimensions();
                Self {
                    width: w,
                    height: h,
                    channels: 1,
                    data: buf.into_raw(),
                }
            }
            _ => {
                let buf = dynimg.into_rgb8();
                let (w, h) = buf.dimensions();
                Self {
                    width: w,
                    height: h,
                    channels: 3,
                    data: buf.into_raw(),
                }
            }
        }
    }

    /// Encodes as PNG; byte output is a deterministic function of the pixels.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        use image::ImageEncoder;
        let mut out = Vec::new();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&self.data, self.width, self.height, color)
            .map_err(|e| Error::param(format!("png encode: {e}")))?;
        Ok(out)
    }
}

/// Pixel box `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<[u32; 4]> for BoundingBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BoundingBox {
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64
    }
}

/// Source coordinate of destination sample `d` when mapping `src_len` samples onto `dst_len`.
fn source_coord(d: u32, src_len: u32, dst_len: u32) -> f64 {
    let s = (d as f64 + 0.5) * (src_len as f64 / dst_len as f64) - 0.5;
    s.clamp(0.0, (src_len - 1) as f64)
}

/// Neighbour indices and the weight of the upper neighbour.
fn taps(d: u32, src_len: u32, dst_len: u32) -> (usize, usize, f64) {
    let s = source_coord(d, src_len, dst_len);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len as usize - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resampling of a float plane (`channels` interleaved).
pub(crate) fn resize_plane(
    src: &[f64],
    width: u32,
    height: u32,
    channels: usize,
    out_w: u32,
    out_h: u32,
) -> Vec<f64> {
    let xt: Vec<_> = (0..out_w).map(|x| taps(x, width, out_w)).collect();
    let mut out = Vec::with_capacity(out_w as usize * out_h as usize * channels);
    let stride = width as usize * channels;
    for y in 0..out_h {
        let (y0, y1, fy) = taps(y, height, out_h);
        for &(x0, x1, fx) in &xt {
            for c in 0..channels {
                let p = |xx: usize, yy: usize| src[yy * stride + xx * channels + c];
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn resize(img: &RasterImage, out_w: u32, out_h: u32) -> RasterImage {
    if out_w == img.width && out_h == img.height {
        return img.clone();
    }
    let plane: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    let out = resize_plane(
        &plane,
        img.width,
        img.height,
        img.channels as usize,
        out_w,
        out_h,
    );
    RasterImage {
        width: out_w,
        height: out_h,
        channels: img.channels,
        data: out.into_iter().map(quantize).collect(),
    }
}

fn crop(img: &RasterImage, b: BoundingBox) -> RasterImage {
    let ch = img.channels as usize;
    let mut data = Vec::with_capacity(b.w as usize * b.h as usize * ch);
    for y in b.y..b.y + b.h {
        let start = img.index(b.x, y, 0);
        data.extend_from_slice(&img.data[start..start + b.w as usize * ch]);
    }
    RasterImage {
        width: b.w,
        height: b.h,
        channels: img.channels,
        data,
    }
}

/// Crops to `bbox` (or the centred square of side `min(w, h)`) and resamples to 160×160.
pub fn crop_resize(img: &RasterImage, bbox: Option<BoundingBox>) -> Result<RasterImage> {
    let region = match bbox {
        Some(b) => {
            if !b.fits(img.width, img.height) {
                return Err(Error::param(format!(
                    "bbox {:?} outside {}x{} image",
                    <[u32; 4]>::from(b),
                    img.width,
                    img.height
                )));
            }
            b
        }
        None => {
            let side = img.width.min(img.height);
            BoundingBox {
                x: (img.width - side) / 2,
                y: (img.height - side) / 2,
                w: side,
                h: side,
            }
        }
    };
    let cropped = if region.x == 0
        && region.y == 0
        && region.w == img.width
        && region.h == img.height
    {
        img.clone()
    } else {
        crop(img, region)
    };
    Ok(resize(&cropped, CROP_SIZE, CROP_SIZE))
}

/// Degradation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Blur,
    Scale,
    Noise,
    Jpeg,
    Gamma,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Blur,
        Family::Scale,
        Family::Noise,
        Family::Jpeg,
        Family::Gamma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Blur => "blur",
            Family::Scale => "scale",
            Family::Noise => "noise",
            Family::Jpeg => "jpeg",
            Family::Gamma => "gamma",
        }
    }

    /// The parameter value at which the family leaves images untouched, if any.
    pub fn identity_level(self) -> Option<f64> {
        match self {
            Family::Blur => Some(1.0),
            Family::Scale | Family::Gamma => Some(1.0),
            Family::Noise | Family::Jpeg => None,
        }
    }

    /// Checks that `level` is a legal parameter for this family.
    pub fn validate_level(self, level: f64) -> Result<()> {
        let ok = level.is_finite()
            && match self {
                Family::Blur => level >= 1.0 && level.fract() == 0.0 && (level as u64) % 2 == 1,
                Family::Scale | Family::Jpeg => level > 0.0 && level <= 1.0,
                Family::Gamma => level > 0.0,
                Family::Noise => true,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("{} level {level} is invalid", self.as_str())))
        }
    }

    /// Default grid, ordered mildest to harshest.
    pub fn default_levels(self) -> Vec<f64> {
        match self {
            Family::Blur => vec![1.0, 5.0, 9.0, 13.0, 17.0],
            Family::Scale => vec![0.8625, 0.6625, 0.4625, 0.2625, 0.0625],
            Family::Noise => vec![16.0, 8.0, 0.0, -8.0, -16.0],
            Family::Jpeg => vec![0.9, 0.7, 0.5, 0.3, 0.1],
            Family::Gamma => vec![0.05, 0.3, 1.3, 3.3, 5.3],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown degradation family '{s}'")))
    }
}

/// One parameterized degradation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub family: Family,
    pub level: f64,
    /// Only consulted by the noise family.
    #[serde(default)]
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(family: Family, level: f64) -> Self {
        Self {
            family,
            level,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate_level(self.level)
    }
}

/// Ordered list of levels for one family; index order is severity order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "GridRepr")]
pub struct DegradationGrid {
    family: Family,
    levels: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    family: Family,
    levels: Vec<f64>,
}

impl TryFrom<GridRepr> for DegradationGrid {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        DegradationGrid::new(r.family, r.levels)
    }
}

impl DegradationGrid {
    pub fn new(family: Family, levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::param(format!(
                "{family} grid needs at least 2 levels, got {}",
                levels.len()
            )));
        }
        for (i, &l) in levels.iter().enumerate() {
            family.validate_level(l)?;
            if levels[..i].contains(&l) {
                return Err(Error::param(format!("{family} grid repeats level {l}")));
            }
        }
        Ok(Self { family, levels })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

/// Normalized 1-D Gaussian taps for odd width `k`, σ = (k − 1) / 6.
pub fn gaussian_kernel(k: u32) -> Result<Vec<f64>> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::param(format!("blur kernel width {k} must be odd and >= 1")));
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let radius = (k as i64 - 1) / 2;
    let sigma = (k as f64 - 1.0) / 6.0;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / sum).collect())
}

/// Separable Gaussian blur with edge replication.
pub fn apply_blur(img: &RasterImage, k: u32) -> Result<RasterImage> {
    let kernel = gaussian_kernel(k)?;
    if k == 1 {
        return Ok(img.clone());
    }
    let (w, h, ch) = (img.width as i64, img.height as i64, img.channels as usize);
    let r = (kernel.len() / 2) as i64;
    let at = |x: i64, y: i64, c: usize| -> usize {
        (y.clamp(0, h - 1) as usize * w as usize + x.clamp(0, w - 1) as usize) * ch + c
    };

    let mut horiz = vec![0.0f64; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (t, wt) in kernel.iter().enumerate() {
                    acc += wt * img.data[at(x + t as i64 - r, y, c)] as f64;
                }
                horiz[at(x, y, c)] = acc;
            }
        }
    }
    let mut data = vec![0u8; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (t, wt) in kernel.iter().enumerate() {
                    acc += wt * horiz[at(x, y + t as i64 - r, c)];
                }
                data[at(x, y, c)] = quantize(acc);
            }
        }
    }
    Ok(RasterImage { data, ..*img })
}

/// Downsamples by `s` (each side to `max(1, round(s·side))`) and resamples back to full size.
pub fn apply_scale(img: &RasterImage, s: f64) -> Result<RasterImage> {
    Family::Scale.validate_level(s)?;
    if s == 1.0 {
        return Ok(img.clone());
    }
    let (sw, sh) = scaled_dims(img.width, img.height, s);
    let small = resize(img, sw, sh);
    Ok(resize(&small, img.width, img.height))
}

/// Intermediate dimensions used by [`apply_scale`].
pub fn scaled_dims(width: u32, height: u32, s: f64) -> (u32, u32) {
    let side = |n: u32| ((s * n as f64).round() as u32).max(1);
    (side(width), side(height))
}

/// Population standard deviation of the image's luma.
pub fn luma_std(img: &RasterImage) -> f64 {
    let luma = img.luma();
    let n = luma.len() as f64;
    let mean = luma.iter().sum::<f64>() / n;
    (luma.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// The additive noise field [`apply_noise`] adds before rounding and clamping.
pub fn noise_field(len: usize, sigma: f64, seed: u64) -> Vec<f64> {
    Gaussian::new(seed).take(len).map(|z| sigma * z).collect()
}

/// Additive white Gaussian noise at `snr_db` relative to the luma standard deviation.
pub fn apply_noise(img: &RasterImage, snr_db: f64, seed: u64) -> Result<RasterImage> {
    if !snr_db.is_finite() {
        return Err(Error::param(format!("noise SNR {snr_db} dB is not finite")));
    }
    let sigma_img = luma_std(img);
    if sigma_img == 0.0 {
        return Ok(img.clone());
    }
    let sigma = sigma_img * 10f64.powf(-snr_db / 20.0);
    let field = noise_field(img.data.len(), sigma, seed);
    let data = img
        .data
        .iter()
        .zip(field)
        .map(|(&v, n)| quantize(v as f64 + n))
        .collect();
    Ok(RasterImage { data, ..*img })
}

/// Encoder quality and chroma subsampling used for JPEG level `q`.
pub fn jpeg_settings(q: f64) -> (u8, bool) {
    let quality = (100.0 * q).round().clamp(1.0, 100.0) as u8;
    (quality, q < 0.9)
}

/// Baseline JPEG round trip at quality `round(100·q)`.
pub fn apply_jpeg(img: &RasterImage, q: f64) -> Result<RasterImage> {
    Family::Jpeg.validate_level(q)?;
    let (quality, subsample) = jpeg_settings(q);
    let mut buf = Vec::new();
    let mut enc = jpeg_encoder::Encoder::new(&mut buf, quality);
    enc.set_sampling_factor(if subsample {
        jpeg_encoder::SamplingFactor::F_2_2
    } else {
        jpeg_encoder::SamplingFactor::F_1_1
    });
    let color = if img.channels == 1 {
        jpeg_encoder::ColorType::Luma
    } else {
        jpeg_encoder::ColorType::Rgb
    };
    let (w, h) = (
        u16::try_from(img.width).map_err(|_| Error::param("image too wide for JPEG"))?,
        u16::try_from(img.height).map_err(|_| Error::param("image too tall for JPEG"))?,
    );
    enc.encode(&img.data, w, h, color)
        .map_err(|e| Error::param(format!("jpeg encode: {e}")))?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)
        .map_err(|e| Error::param(format!("jpeg decode: {e}")))?;
    let out = if img.channels == 1 {
        decoded.into_luma8().into_raw()
    } else {
        decoded.into_rgb8().into_raw()
    };
    RasterImage::new(img.width, img.height, img.channels, out)
}

/// Power-law intensity transform `round(255·(v/255)^g)`.
pub fn apply_gamma(img: &RasterImage, g: f64) -> Result<RasterImage> {
    Family::Gamma.validate_level(g)?;
    if g == 1.0 {
        return Ok(img.clone());
    }
    let lut: Vec<u8> = (0..=255u32)
        .map(|v| quantize(255.0 * (v as f64 / 255.0).powf(g)))
        .collect();
    let data = img.data.iter().map(|&v| lut[v as usize]).collect();
    Ok(RasterImage { data, ..*img })
}

/// Dispatches to the operator for `spec.family`.
pub fn apply_spec(img: &RasterImage, spec: &DegradationSpec) -> Result<RasterImage> {
    spec.validate()?;
    match spec.family {
        Family::Blur => apply_blur(img, spec.level as u32),
        Family::Scale => apply_scale(img, spec.level),
        Family::Noise => apply_noise(img, spec.level, spec.seed),
        Family::Jpeg => apply_jpeg(img, spec.level),
        Family::Gamma => apply_gamma(img, spec.level),
    }
}

/// Peak signal-to-noise ratio in dB between equally sized images.
pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::param("psnr requires images of equal shape"));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    })
}
