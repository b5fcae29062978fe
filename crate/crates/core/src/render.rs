//! Jet colormap, grayscale blending and lossless frame-sequence output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldpipe::{BandConfig, ScalarImage};

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Argument(format!(
                "{} bytes for a {width}x{height} RGB frame",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rows `[y0, y0 + height)`.
    pub fn crop_rows(&self, y0: usize, height: usize) -> Result<RgbFrame> {
        if y0 + height > self.height {
            return Err(Error::Argument(format!(
                "rows {y0}..{} outside a frame of height {}",
                y0 + height,
                self.height
            )));
        }
        let row = self.width * 3;
        RgbFrame::new(
            self.width,
            height,
            self.data[y0 * row..(y0 + height) * row].to_vec(),
        )
    }

    fn same_size(&self, other: &RgbFrame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Piecewise-linear jet: dark blue at 0, green at 0.5, dark red at 1.
pub fn jet(v: f64) -> [f64; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let ramp = |offset: f64| (1.5 - (4.0 * v - offset).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

fn to_u8(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

/// Luma `0.299 r + 0.587 g + 0.114 b` replicated to all channels.
pub fn grayscale(frame: &RgbFrame) -> RgbFrame {
    let data = frame
        .data
        .chunks_exact(3)
        .flat_map(|p| {
            let y = to_u8(0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]));
            [y, y, y]
        })
        .collect();
    RgbFrame {
        width: frame.width,
        height: frame.height,
        data,
    }
}

/// `(1 - alpha) · gray + alpha · 255 · jet(field)`, rounded per channel.
pub fn overlay(gray: &RgbFrame, field: &ScalarImage, alpha: f64) -> Result<RgbFrame> {
    if field.width != gray.width || field.height != gray.height {
        return Err(Error::Argument(format!(
            "field is {}x{} but the frame is {}x{}",
            field.width, field.height, gray.width, gray.height
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let data = gray
        .data
        .chunks_exact(3)
        .zip(&field.values)
        .flat_map(|(p, &v)| {
            let c = jet(v);
            [0, 1, 2].map(|i| to_u8((1.0 - alpha) * f64::from(p[i]) + alpha * 255.0 * c[i]))
        })
        .collect();
    Ok(RgbFrame {
        width: gray.width,
        height: gray.height,
        data,
    })
}

/// Conventional frame on top, acoustic field frame below.
pub fn stack_pair(conventional: &RgbFrame, af: &RgbFrame) -> Result<RgbFrame> {
    if !conventional.same_size(af) {
        return Err(Error::Argument(format!(
            "cannot stack {}x{} over {}x{}",
            conventional.width, conventional.height, af.width, af.height
        )));
    }
    let mut data = Vec::with_capacity(conventional.data.len() * 2);
    data.extend_from_slice(&conventional.data);
    data.extend_from_slice(&af.data);
    Ok(RgbFrame {
        width: conventional.width,
        height: conventional.height * 2,
        data,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridInfo {
    pub cols: usize,
    pub rows: usize,
    pub distance_m: f64,
}

/// Assembly manifest written next to a frame sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameManifest {
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub sample_rate: u32,
    pub chunk_size: usize,
    pub stacked: bool,
    pub alpha: f64,
    pub bands: Vec<BandConfig>,
    pub grid: GridInfo,
    pub frames: Vec<String>,
}

/// Everything in a [`FrameManifest`] except the frame list and size.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInfo {
    pub sample_rate: u32,
    pub chunk_size: usize,
    pub stacked: bool,
    pub alpha: f64,
    pub bands: Vec<BandConfig>,
    pub grid: GridInfo,
    /// Output size used when the sequence is empty.
    pub frame_size: (usize, usize),
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

pub fn write_frame(frame: &RgbFrame, path: &Path) -> Result<()> {
    let img = image::RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.data.clone())
        .ok_or_else(|| Error::Argument("frame buffer size mismatch".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(other.to_string()),
        })
}

pub fn read_frame(path: &Path) -> Result<RgbFrame> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    RgbFrame::new(w as usize, h as usize, rgb.into_raw())
}

/// Write `frame_%06d.png` files and `manifest.json` into `dir`.
pub fn write_frame_sequence<'a, I>(frames: I, dir: &Path, info: &SequenceInfo) -> Result<FrameManifest>
where
    I: IntoIterator<Item = &'a RgbFrame>,
{
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    let mut size = info.frame_size;
    for (index, frame) in frames.into_iter().enumerate() {
        let name = frame_file_name(index);
        write_frame(frame, &dir.join(&name)).map_err(|e| Error::Frame {
            index,
            message: e.to_string(),
        })?;
        size = (frame.width, frame.height);
        names.push(name);
    }
    let manifest = FrameManifest {
        fps: f64::from(info.sample_rate) / info.chunk_size as f64,
        width: size.0,
        height: size.1,
        sample_rate: info.sample_rate,
        chunk_size: info.chunk_size,
        stacked: info.stacked,
        alpha: info.alpha,
        bands: info.bands.clone(),
        grid: info.grid.clone(),
        frames: names,
    };
    write_manifest(&manifest, &dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &FrameManifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<FrameManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Load a sequence written by [`write_frame_sequence`].
pub fn read_frame_sequence(dir: &Path) -> Result<(FrameManifest, Vec<RgbFrame>)> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let frames = manifest
        .frames
        .iter()
        .enumerate()
        .map(|(index, name)| {
            read_frame(&dir.join(name)).map_err(|e| Error::Frame {
                index,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, frames))
}

/// Sorted `*.png` files in a directory, used as a plain video source.
pub fn list_png_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}
