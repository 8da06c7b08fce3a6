//! Saliency files, image files and evaluation manifests.
//!
//! # Saliency file layout
//!
//! All integers little-endian.
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `HDMS` |
//! | 2 | version (`u16`, currently 1) |
//! | 4 | height `H` (`u32`) |
//! | 4 | width `W` (`u32`) |
//! | 4 | class index (`u32`) |
//! | 2 | method label length `n` (`u16`) |
//! | n | method label, UTF-8 |
//! | 4·H·W | map values, `f32`, row-major |

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::gateway::RawImage;
use crate::mask_math::MaskGrid;
use crate::metrics::SaliencyRecord;

pub const SALIENCY_MAGIC: [u8; 4] = *b"HDMS";
pub const SALIENCY_VERSION: u16 = 1;
const HEADER_FIXED: usize = 4 + 2 + 4 + 4 + 4 + 2;

pub fn encode_saliency(record: &SaliencyRecord) -> Result<Vec<u8>> {
    let (h, w) = record.map.shape();
    let label = record.method.as_bytes();
    let label_len = u16::try_from(label.len())
        .map_err(|_| Error::input("method label longer than 65535 bytes"))?;
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::input(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(HEADER_FIXED + label.len() + 4 * h * w);
    out.extend_from_slice(&SALIENCY_MAGIC);
    out.extend_from_slice(&SALIENCY_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(h, "height")?.to_le_bytes());
    out.extend_from_slice(&dim(w, "width")?.to_le_bytes());
    out.extend_from_slice(&dim(record.class, "class")?.to_le_bytes());
    out.extend_from_slice(&label_len.to_le_bytes());
    out.extend_from_slice(label);
    for &v in record.map.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_saliency(bytes: &[u8], path: &Path) -> Result<SaliencyRecord> {
    let fail = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < HEADER_FIXED {
        return Err(fail(format!(
            "header needs {HEADER_FIXED} bytes, file has {}",
            bytes.len()
        )));
    }
    if bytes[..4] != SALIENCY_MAGIC {
        return Err(fail("bad magic tag".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let version = u16_at(4);
    if version != SALIENCY_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: SALIENCY_VERSION,
        });
    }
    let (h, w, class) = (u32_at(6), u32_at(10), u32_at(14));
    let label_len = u16_at(18) as usize;
    let payload_start = HEADER_FIXED + label_len;
    if bytes.len() < payload_start {
        return Err(fail(format!(
            "method label needs {label_len} bytes, only {} left",
            bytes.len() - HEADER_FIXED
        )));
    }
    let method = std::str::from_utf8(&bytes[HEADER_FIXED..payload_start])
        .map_err(|_| fail("method label is not UTF-8".into()))?
        .to_string();
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(format!("dimensions {h}x{w} overflow")))?;
    let actual = bytes.len() - payload_start;
    if actual != expected {
        return Err(fail(format!(
            "payload should be {expected} bytes for {h}x{w}, found {actual}"
        )));
    }
    let values: Vec<f64> = bytes[payload_start..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let map = MaskGrid::new(h, w, values).map_err(|e| fail(e.to_string()))?;
    Ok(SaliencyRecord {
        map,
        source: path.display().to_string(),
        method,
        class,
    })
}

pub fn save_saliency(record: &SaliencyRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_saliency(record)?).map_err(|e| Error::io(path, e))
}

/// Loads a saliency file; `source` is set to the file path.
pub fn load_saliency(path: impl AsRef<Path>) -> Result<SaliencyRecord> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_saliency(&bytes, path)
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    }
}

/// Loads an 8-bit PNG/JPEG/BMP. Grayscale stays single-channel, everything
/// else becomes RGB (alpha dropped).
pub fn load_image(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA8(_) => RawImage::from_u8(h, w, 1, img.to_luma8().as_raw()),
        _ => RawImage::from_u8(h, w, 3, img.to_rgb8().as_raw()),
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[0, 1]` image as 8-bit PNG (gray or RGB by channel count).
pub fn save_png(img: &RawImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = img.shape();
    let bytes: Vec<u8> = img.pixels().iter().map(|&v| to_u8(v)).collect();
    let result = if c == 1 {
        ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, bytes)
            .expect("buffer matches dimensions")
            .save(path)
    } else {
        ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, bytes)
            .expect("buffer matches dimensions")
            .save(path)
    };
    result.map_err(|e| image_err(path, e))
}

/// Writes a binary map as a black/white PNG.
pub fn save_foreground(
    mask: &[bool],
    height: usize,
    width: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if mask.len() != height * width {
        return Err(Error::input("foreground size mismatch"));
    }
    let bytes = mask.iter().map(|&f| if f { 255 } else { 0 }).collect();
    GrayImage::from_raw(width as u32, height as u32, bytes)
        .expect("buffer matches dimensions")
        .save(path)
        .map_err(|e| image_err(path, e))
}

/// Loads a foreground mask: pixels brighter than mid-gray are foreground.
pub fn load_foreground(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| image_err(path, e))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok((
        h as usize,
        w as usize,
        img.as_raw().iter().map(|&v| v > 127).collect(),
    ))
}

/// One line of an evaluation manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub label: Option<usize>,
    pub foreground: Option<PathBuf>,
    /// Explicit saliency file; otherwise looked up by image stem.
    pub saliency: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn new(image: impl Into<PathBuf>) -> Self {
        Self {
            image: image.into(),
            label: None,
            foreground: None,
            saliency: None,
        }
    }

    pub fn stem(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Parses a tab-separated manifest: `image [label [foreground [saliency]]]`.
/// `-` marks an absent field, `#` starts a comment line, and relative paths
/// are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let resolve = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let field = |i: usize| {
            fields
                .get(i)
                .copied()
                .filter(|f| !f.is_empty() && *f != "-")
        };
        let image = field(0).ok_or_else(|| Error::Format {
            path: origin.to_path_buf(),
            message: format!("line {}: missing image path", n + 1),
        })?;
        let label = field(1)
            .map(|l| {
                l.parse::<usize>().map_err(|_| Error::Format {
                    path: origin.to_path_buf(),
                    message: format!("line {}: bad label '{l}'", n + 1),
                })
            })
            .transpose()?;
        entries.push(ManifestEntry {
            image: resolve(image),
            label,
            foreground: field(2).map(resolve),
            saliency: field(3).map(resolve),
        });
    }
    Ok(entries)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base, path)
}

/// Writes entries with paths relative to the manifest directory when possible.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let show = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut text = String::from("# image\tlabel\tforeground\tsaliency\n");
    for e in entries {
        let opt = |p: &Option<PathBuf>| p.as_deref().map(show).unwrap_or_else(|| "-".into());
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            show(&e.image),
            e.label.map(|l| l.to_string()).unwrap_or_else(|| "-".into()),
            opt(&e.foreground),
            opt(&e.saliency),
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
