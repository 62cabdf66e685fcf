//! On-disk formats: 8-bit PNG for images and label maps, a small binary
//! container for warp grids and gate maps, and JSON helpers.
//!
//! Images cross the 8-bit boundary here: tensors hold unit-scaled samples,
//! PNG holds `round(v * 255)`. Segmentation PNGs store the label directly
//! as the gray value. Grid files are `b"SWGRID1\n"`, an ASCII
//! `"<height> <width>\n"` line, then row-major little-endian `f32` pairs
//! `(source_x, source_y)`; gate files reuse the container with header
//! `b"SWGATE1\n"` and one `f32` per pixel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, ImageReader, RgbImage};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::WarpGrid;
use crate::tensor::{ImageTensor, SegmentationMap, NUM_PART_LABELS};
use crate::warp::GateMap;

const GRID_MAGIC: &[u8; 8] = b"SWGRID1\n";
const GATE_MAGIC: &[u8; 8] = b"SWGATE1\n";

/// Writes a 1-channel (gray) or 3-channel (RGB) unit-scaled tensor as an
/// 8-bit PNG.
pub fn write_image_png(path: &Path, t: &ImageTensor) -> Result<()> {
    let to_byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let dynamic = match t.channels() {
        1 => {
            let mut img = GrayImage::new(t.width() as u32, t.height() as u32);
            for (x, y, p) in img.enumerate_pixels_mut() {
                p.0 = [to_byte(t.at(y as usize, x as usize, 0))];
            }
            DynamicImage::ImageLuma8(img)
        }
        3 => {
            let mut img = RgbImage::new(t.width() as u32, t.height() as u32);
            for (x, y, p) in img.enumerate_pixels_mut() {
                for c in 0..3 {
                    p.0[c] = to_byte(t.at(y as usize, x as usize, c));
                }
            }
            DynamicImage::ImageRgb8(img)
        }
        other => {
            return Err(Error::Format(format!(
                "PNG export supports 1 or 3 channels, tensor has {other}"
            )))
        }
    };
    let mut writer = BufWriter::new(File::create(path)?);
    dynamic
        .write_to(&mut writer, ImageFormat::Png)
        .map_err(Error::Image)?;
    Ok(())
}

/// Reads an 8-bit gray or RGB PNG into a unit-scaled tensor.
pub fn read_image_png(path: &Path) -> Result<ImageTensor> {
    let decoded = ImageReader::open(path)?.decode().map_err(Error::Image)?;
    match decoded {
        DynamicImage::ImageLuma8(img) => ImageTensor::new(
            img.height() as usize,
            img.width() as usize,
            1,
            img.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        ),
        DynamicImage::ImageRgb8(img) => ImageTensor::new(
            img.height() as usize,
            img.width() as usize,
            3,
            img.pixels()
                .flat_map(|p| p.0.into_iter().map(|v| v as f64 / 255.0))
                .collect(),
        ),
        other => Err(Error::Format(format!(
            "unsupported PNG color type {:?}; expected 8-bit gray or RGB",
            other.color()
        ))),
    }
}

/// Writes a segmentation map as a gray PNG with pixel value = label.
pub fn write_segmentation_png(path: &Path, seg: &SegmentationMap) -> Result<()> {
    let mut img = GrayImage::new(seg.width() as u32, seg.height() as u32);
    for (x, y, p) in img.enumerate_pixels_mut() {
        p.0 = [seg.label_at(y as usize, x as usize)];
    }
    let mut writer = BufWriter::new(File::create(path)?);
    DynamicImage::ImageLuma8(img)
        .write_to(&mut writer, ImageFormat::Png)
        .map_err(Error::Image)?;
    Ok(())
}

/// Reads a gray PNG whose pixel values are part labels.
pub fn read_segmentation_png(path: &Path) -> Result<SegmentationMap> {
    let decoded = ImageReader::open(path)?.decode().map_err(Error::Image)?;
    let DynamicImage::ImageLuma8(img) = decoded else {
        return Err(Error::Format(
            "segmentation PNG must be 8-bit gray".into(),
        ));
    };
    let labels: Vec<u8> = img.pixels().map(|p| p.0[0]).collect();
    if let Some(bad) = labels.iter().find(|l| **l >= NUM_PART_LABELS) {
        return Err(Error::Format(format!(
            "segmentation PNG contains label {bad}, valid range is 0..{}",
            NUM_PART_LABELS - 1
        )));
    }
    SegmentationMap::new(img.height() as usize, img.width() as usize, labels)
}

fn write_container(
    path: &Path,
    magic: &[u8; 8],
    height: usize,
    width: usize,
    values: impl Iterator<Item = f64>,
) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(magic)?;
    writer.write_all(format!("{height} {width}\n").as_bytes())?;
    for v in values {
        writer.write_all(&(v as f32).to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads the shared container header and returns `(height, width, payload)`.
fn read_container(path: &Path, magic: &[u8; 8], values_per_pixel: usize) -> Result<(usize, usize, Vec<f64>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut got_magic = [0u8; 8];
    reader.read_exact(&mut got_magic)?;
    if &got_magic != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {:?}",
            String::from_utf8_lossy(magic).trim_end()
        )));
    }
    let mut dims_line = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        reader.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        dims_line.push(byte[0]);
        if dims_line.len() > 64 {
            return Err(Error::Format("dimension line too long".into()));
        }
    }
    let dims_line = String::from_utf8(dims_line)
        .map_err(|_| Error::Format("dimension line is not ASCII".into()))?;
    let mut parts = dims_line.split_whitespace();
    let parse = |s: Option<&str>| -> Result<usize> {
        s.ok_or_else(|| Error::Format("missing dimension".into()))?
            .parse()
            .map_err(|_| Error::Format(format!("bad dimension line {dims_line:?}")))
    };
    let height = parse(parts.next())?;
    let width = parse(parts.next())?;
    if parts.next().is_some() {
        return Err(Error::Format(format!("bad dimension line {dims_line:?}")));
    }

    let count = height * width * values_per_pixel;
    let mut payload = vec![0u8; count * 4];
    reader.read_exact(&mut payload).map_err(|_| {
        Error::Format(format!("truncated payload: expected {count} f32 values"))
    })?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((height, width, values))
}

/// Writes a warp grid to the `SWGRID1` binary container.
pub fn write_grid(path: &Path, grid: &WarpGrid) -> Result<()> {
    write_container(
        path,
        GRID_MAGIC,
        grid.height(),
        grid.width(),
        grid.coords().iter().flat_map(|&(x, y)| [x, y]),
    )
}

/// Reads a warp grid from the `SWGRID1` binary container.
pub fn read_grid(path: &Path) -> Result<WarpGrid> {
    let (height, width, values) = read_container(path, GRID_MAGIC, 2)?;
    let coords = values.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    WarpGrid::new(height, width, coords)
}

/// Writes a single-channel gate map to the `SWGATE1` binary container.
pub fn write_gate(path: &Path, gate: &GateMap) -> Result<()> {
    if gate.channels() != 1 {
        return Err(Error::Format(format!(
            "gate container stores single-channel gates, got {} channels",
            gate.channels()
        )));
    }
    write_container(
        path,
        GATE_MAGIC,
        gate.height(),
        gate.width(),
        gate.values().iter().copied(),
    )
}

/// Reads a gate map from the `SWGATE1` binary container.
pub fn read_gate(path: &Path) -> Result<GateMap> {
    let (height, width, values) = read_container(path, GATE_MAGIC, 1)?;
    GateMap::new(height, width, 1, values)
}

/// Reads any JSON-encoded value from a file.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let reader = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(reader)?)
}

/// Writes a value as pretty-printed JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}
