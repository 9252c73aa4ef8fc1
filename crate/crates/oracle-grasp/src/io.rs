//! Disk formats: images, depth maps, dataset manifests, annotations, and
//! oracle transcripts.
//!
//! RGB inputs are 8-bit PNGs (grayscale and alpha variants are converted;
//! 16-bit color data is rejected rather than silently truncated). Depth
//! maps are 16-bit single-channel PNGs holding millimeters. Manifests and
//! annotations are JSON; transcripts are JSON lines with one header line
//! followed by one line per oracle exchange.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::depth_refine::{DepthError, DepthMap};
use crate::eval::AnnotationSet;
use crate::oracle::{TranscriptEntry, TranscriptHeader};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: unsupported bit depth or color type ({detail})")]
    UnsupportedColor { path: PathBuf, detail: String },
    #[error("{path}: depth image must be 16-bit single-channel ({detail})")]
    DepthFormat { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest contains duplicate id {0:?}")]
    DuplicateId(String),
    #[error("manifest entry {id:?} references missing file {path}")]
    MissingFile { id: String, path: PathBuf },
    #[error("{path}: missing transcript header line")]
    MissingHeader { path: PathBuf },
    #[error("{path}: invalid annotation: {detail}")]
    InvalidAnnotation { path: PathBuf, detail: String },
    #[error(transparent)]
    Depth(#[from] DepthError),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

/// SHA-256 hex digest of a byte string.
pub fn image_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Encode an RGB image as PNG bytes (the exact bytes sent to oracles and
/// hashed into transcripts).
pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, image::ImageError> {
    let mut bytes = Vec::new();
    PngEncoder::new(&mut bytes).write_image(
        image.as_raw(),
        image.width(),
        image.height(),
        ExtendedColorType::Rgb8,
    )?;
    Ok(bytes)
}

/// Load an 8-bit RGB image. Grayscale and alpha-carrying 8-bit images are
/// converted; anything with more than 8 bits per channel is an error.
pub fn load_rgb(path: &Path) -> Result<RgbImage, IoError> {
    let img = image::open(path).map_err(|source| IoError::Image { path: path.to_path_buf(), source })?;
    rgb_from_dynamic(img, path)
}

/// [`load_rgb`] plus the SHA-256 of the file bytes, for transcript headers
/// that must identify the exact input file.
pub fn load_rgb_with_digest(path: &Path) -> Result<(RgbImage, String), IoError> {
    let bytes = fs::read(path).map_err(file_err(path))?;
    let digest = image_digest(&bytes);
    let img = image::load_from_memory(&bytes)
        .map_err(|source| IoError::Image { path: path.to_path_buf(), source })?;
    Ok((rgb_from_dynamic(img, path)?, digest))
}

fn rgb_from_dynamic(img: DynamicImage, path: &Path) -> Result<RgbImage, IoError> {
    match img {
        DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgba8(_) => {
            Ok(img.to_rgb8())
        }
        other => Err(IoError::UnsupportedColor {
            path: path.to_path_buf(),
            detail: format!("{:?}", other.color()),
        }),
    }
}

pub fn save_rgb(path: &Path, image: &RgbImage) -> Result<(), IoError> {
    image
        .save(path)
        .map_err(|source| IoError::Image { path: path.to_path_buf(), source })
}

/// Load a 16-bit single-channel PNG as a millimeter depth map. 8-bit
/// images are rejected: quantizing depth to 256 steps is a silent data
/// loss, not a convenience.
pub fn load_depth(path: &Path) -> Result<DepthMap, IoError> {
    let img = image::open(path).map_err(|source| IoError::Image { path: path.to_path_buf(), source })?;
    depth_from_dynamic(img, path)
}

/// [`load_depth`] plus the SHA-256 of the file bytes.
pub fn load_depth_with_digest(path: &Path) -> Result<(DepthMap, String), IoError> {
    let bytes = fs::read(path).map_err(file_err(path))?;
    let digest = image_digest(&bytes);
    let img = image::load_from_memory(&bytes)
        .map_err(|source| IoError::Image { path: path.to_path_buf(), source })?;
    Ok((depth_from_dynamic(img, path)?, digest))
}

fn depth_from_dynamic(img: DynamicImage, path: &Path) -> Result<DepthMap, IoError> {
    match img {
        DynamicImage::ImageLuma16(gray) => {
            let (w, h) = (gray.width(), gray.height());
            Ok(DepthMap::new(w, h, gray.into_raw())?)
        }
        other => Err(IoError::DepthFormat {
            path: path.to_path_buf(),
            detail: format!("{:?}", other.color()),
        }),
    }
}

pub fn save_depth(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    let buffer: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width(), depth.height(), depth.data().to_vec())
            .expect("depth buffer length is validated at construction");
    buffer
        .save(path)
        .map_err(|source| IoError::Image { path: path.to_path_buf(), source })
}

/// One dataset image with optional depth and annotation sidecars.
/// Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Read a manifest, resolve its paths, and verify ids are unique and all
/// referenced files exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;

    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };

    let mut seen = std::collections::HashSet::new();
    for entry in &mut manifest.entries {
        if !seen.insert(entry.id.clone()) {
            return Err(IoError::DuplicateId(entry.id.clone()));
        }
        entry.image = resolve(&entry.image);
        entry.depth = entry.depth.as_ref().map(resolve);
        entry.annotation = entry.annotation.as_ref().map(resolve);
        for p in std::iter::once(&entry.image)
            .chain(entry.depth.iter())
            .chain(entry.annotation.iter())
        {
            if !p.is_file() {
                return Err(IoError::MissingFile { id: entry.id.clone(), path: p.clone() });
            }
        }
    }
    Ok(manifest)
}

/// Load an annotation set and validate it.
pub fn load_annotation(path: &Path) -> Result<AnnotationSet, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let ann: AnnotationSet = serde_json::from_str(&text)
        .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    ann.validate()
        .map_err(|e| IoError::InvalidAnnotation { path: path.to_path_buf(), detail: e.to_string() })?;
    Ok(ann)
}

pub fn save_annotation(path: &Path, annotation: &AnnotationSet) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(annotation)
        .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(file_err(path))
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    kind: String,
    #[serde(flatten)]
    header: TranscriptHeader,
}

/// Write a transcript as JSON lines: one header line, then one line per
/// entry, in exchange order.
pub fn write_transcript(
    path: &Path,
    header: &TranscriptHeader,
    entries: &[TranscriptEntry],
) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(file_err(path))?;
    let mut out = BufWriter::new(file);
    let header_line = HeaderLine { kind: "header".to_string(), header: header.clone() };
    let json_err = |source| IoError::Json { path: path.to_path_buf(), source };
    let text = serde_json::to_string(&header_line).map_err(json_err)?;
    writeln!(out, "{text}").map_err(file_err(path))?;
    for entry in entries {
        let json_err = |source| IoError::Json { path: path.to_path_buf(), source };
        let text = serde_json::to_string(entry).map_err(json_err)?;
        writeln!(out, "{text}").map_err(file_err(path))?;
    }
    out.flush().map_err(file_err(path))
}

/// Read a transcript written by [`write_transcript`].
pub fn read_transcript(path: &Path) -> Result<(TranscriptHeader, Vec<TranscriptEntry>), IoError> {
    let file = fs::File::open(path).map_err(file_err(path))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let first = match lines.next() {
        Some(line) => line.map_err(file_err(path))?,
        None => return Err(IoError::MissingHeader { path: path.to_path_buf() }),
    };
    let header_line: HeaderLine = serde_json::from_str(&first)
        .map_err(|_| IoError::MissingHeader { path: path.to_path_buf() })?;
    if header_line.kind != "header" {
        return Err(IoError::MissingHeader { path: path.to_path_buf() });
    }

    let mut entries = Vec::new();
    for line in lines {
        let line = line.map_err(file_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: TranscriptEntry = serde_json::from_str(&line)
            .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
        entries.push(entry);
    }
    Ok((header_line.header, entries))
}
