//! Lossless 8-bit PNG frame input and output.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, RgbImage};

use crate::error::{Error, Result};
use crate::types::ImageTensor;

/// `frame_0001.png` style name for a 1-based frame index.
pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

pub fn write_png(path: &Path, img: &ImageTensor) -> Result<()> {
    let (h, w) = img.resolution();
    let buf: RgbImage = ImageBuffer::from_raw(w as u32, h as u32, img.to_rgb8())
        .ok_or_else(|| Error::Shape("frame buffer size".into()))?;
    let file = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut writer = std::io::BufWriter::new(file);
    buf.write_to(&mut writer, image::ImageFormat::Png)?;
    let file = writer
        .into_inner()
        .map_err(|e| Error::io(format!("flushing {}", path.display()), e.into_error()))?;
    file.sync_all()
        .map_err(|e| Error::io(format!("syncing {}", path.display()), e))
}

pub fn read_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    ImageTensor::from_rgb8(h as usize, w as usize, img.as_raw())
}

/// Image files (png) directly inside `dir`, sorted by name.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_image_dir(dir: &Path) -> Result<Vec<ImageTensor>> {
    let files = image_files(dir)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no png images in {}", dir.display())));
    }
    files.iter().map(|p| read_png(p)).collect()
}

/// Tiles frames row-major into one image, `columns` per row.
pub fn contact_sheet(frames: &[ImageTensor], columns: usize) -> Result<ImageTensor> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("contact sheet needs frames".into()))?;
    let (h, w) = first.resolution();
    if frames.iter().any(|f| f.resolution() != (h, w)) {
        return Err(Error::Shape("contact sheet frames differ in size".into()));
    }
    let cols = columns.clamp(1, frames.len());
    let rows = frames.len().div_ceil(cols);
    let mut sheet = ndarray::Array3::from_elem((rows * h, cols * w, 3), -1.0);
    for (k, f) in frames.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        sheet
            .slice_mut(ndarray::s![r * h..(r + 1) * h, c * w..(c + 1) * w, ..])
            .assign(&f.0);
    }
    ImageTensor::new(sheet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_lossless_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(frame_name(3));
        assert!(path.ends_with("frame_0003.png"));
        let img = ImageTensor::new(ndarray::Array3::from_shape_fn((5, 7, 3), |(y, x, c)| {
            ((y * 7 + x) as f64 * 0.05 + c as f64 * 0.1) - 1.0
        }))
        .unwrap();
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.to_rgb8(), img.to_rgb8());
        let raw = image::open(&path).unwrap().to_rgb8();
        assert_eq!(raw.get_pixel(0, 0).0, img.to_rgb8()[..3]);
    }

    #[test]
    fn contact_sheet_layout() {
        let a = ImageTensor::filled(2, 3, 1.0);
        let b = ImageTensor::filled(2, 3, -1.0);
        let s = contact_sheet(&[a.clone(), b, a], 2).unwrap();
        assert_eq!(s.resolution(), (4, 6));
        assert_eq!(s.0[[0, 0, 0]], 1.0);
        assert_eq!(s.0[[0, 3, 0]], -1.0);
        assert_eq!(s.0[[2, 0, 0]], 1.0);
    }
}
