use std::io::{BufReader, BufWriter, Cursor};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::grid::{Frame, FrameSequence, Grid};

use super::write_bytes;

pub const MANIFEST_NAME: &str = "manifest.txt";

const MANIFEST: &str = "manifest";

/// 8-bit binary PNM flavours: `P5` grayscale, `P6` color.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Ppm,
}

impl ImageFormat {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "pgm" => Ok(ImageFormat::Pgm),
            "ppm" => Ok(ImageFormat::Ppm),
            other => Err(Error::InvalidInput(format!("image format {other:?}, expected pgm or ppm"))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Ppm => "ppm",
        }
    }

    /// Grayscale for 1-channel grids, color otherwise.
    pub fn natural(grid: &Grid) -> Self {
        if grid.channels() == 1 {
            ImageFormat::Pgm
        } else {
            ImageFormat::Ppm
        }
    }
}

fn pnm_error(e: image::ImageError) -> Error {
    Error::format("pnm", e.to_string())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes intensities in `[0, 1]` as 8-bit samples. A color grid written as
/// PGM is reduced to luminance; a gray grid written as PPM is replicated.
pub fn encode_pnm(grid: &Grid, format: ImageFormat) -> Result<Vec<u8>> {
    let (w, h) = (grid.width(), grid.height());
    let (samples, subtype, color): (Vec<u8>, _, _) = match format {
        ImageFormat::Pgm => {
            let gray = if grid.channels() == 1 { grid.clone() } else { grid.luminance() };
            (
                gray.data().iter().map(|&v| quantize(v)).collect(),
                PnmSubtype::Graymap(SampleEncoding::Binary),
                ExtendedColorType::L8,
            )
        }
        ImageFormat::Ppm => {
            let data = if grid.channels() == 3 {
                grid.data().iter().map(|&v| quantize(v)).collect()
            } else {
                grid.data().iter().flat_map(|&v| [quantize(v); 3]).collect()
            };
            (data, PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8)
        }
    };
    let mut out = Vec::new();
    PnmEncoder::new(BufWriter::new(&mut out))
        .with_subtype(subtype)
        .write_image(&samples, w as u32, h as u32, color)
        .map_err(pnm_error)?;
    Ok(out)
}

/// Decodes any PNM variant into a 1- or 3-channel grid scaled to `[0, 1]`.
pub fn decode_pnm(data: &[u8]) -> Result<Grid> {
    let decoder = PnmDecoder::new(BufReader::new(Cursor::new(data))).map_err(pnm_error)?;
    let img = DynamicImage::from_decoder(decoder).map_err(pnm_error)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(b) => Grid::new(w, h, 1, b.iter().map(|&v| v as f64 / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => Grid::new(w, h, 3, b.iter().map(|&v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => {
            Grid::new(w, h, 1, b.iter().map(|&v| v as f64 / 65535.0).collect())
        }
        other if !other.color().has_color() => Grid::new(
            w,
            h,
            1,
            other.to_luma32f().iter().map(|&v| v as f64).collect(),
        ),
        other => Grid::new(w, h, 3, other.to_rgb32f().iter().map(|&v| v as f64).collect()),
    }
}

pub fn load_pnm(path: &Path) -> Result<Grid> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn save_pnm(path: &Path, grid: &Grid, format: ImageFormat) -> Result<()> {
    write_bytes(path, &encode_pnm(grid, format)?)
}

/// One `index timestamp filename` manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub timestamp: f64,
    pub file: String,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::format(MANIFEST, format!("line {}: {raw:?}", n + 1));
        let mut it = line.splitn(3, char::is_whitespace);
        let index = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let timestamp = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let file = it.next().map(str::trim).filter(|s| !s.is_empty()).ok_or_else(bad)?;
        entries.push(ManifestEntry {
            index,
            timestamp,
            file: file.to_string(),
        });
    }
    entries.sort_by_key(|e| e.index);
    if entries.windows(2).any(|w| w[0].index == w[1].index) {
        return Err(Error::format(MANIFEST, "duplicate frame index"));
    }
    Ok(entries)
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

/// Reads a manifest given either its path or the directory holding it.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    parse_manifest(&std::fs::read_to_string(manifest_path(path))?)
}

/// Loads the frames listed in a manifest; file names resolve relative to it.
pub fn read_sequence(path: &Path) -> Result<FrameSequence> {
    let manifest = manifest_path(path);
    let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let frames = read_manifest(&manifest)?
        .into_iter()
        .map(|e| Frame::new(load_pnm(&dir.join(&e.file))?, e.timestamp))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

/// Writes `frame_NNNNN.{pgm,ppm}` files and the manifest into `dir`.
/// `format` defaults to each frame's natural format.
pub fn write_sequence(dir: &Path, frames: &[Frame], format: Option<ImageFormat>) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut text = String::from("# index timestamp file\n");
    let mut entries = Vec::with_capacity(frames.len());
    for (index, frame) in frames.iter().enumerate() {
        let fmt = format.unwrap_or_else(|| ImageFormat::natural(frame.grid()));
        let file = format!("frame_{index:05}.{}", fmt.extension());
        save_pnm(&dir.join(&file), frame.grid(), fmt)?;
        text.push_str(&format!("{index} {} {file}\n", frame.timestamp()));
        entries.push(ManifestEntry {
            index,
            timestamp: frame.timestamp(),
            file,
        });
    }
    write_bytes(&dir.join(MANIFEST_NAME), text.as_bytes())?;
    Ok(entries)
}
