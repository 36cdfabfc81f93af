//! Map export as 16-bit grayscale PNG plus an 8-bit observation mask.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};

use sepba::mapgrid::GridMap;

use crate::error::CliResult;

pub type GrayImage16 = ImageBuffer<Luma<u16>, Vec<u16>>;
pub type MaskImage = ImageBuffer<Luma<u8>, Vec<u8>>;

/// Image row 0 is the northmost map row so the picture reads like a map.
pub fn map_images(map: &GridMap) -> (GrayImage16, MaskImage) {
    let (cols, rows) = (map.layout.cols, map.layout.rows);
    let mut gray = ImageBuffer::new(cols as u32, rows as u32);
    let mut mask = ImageBuffer::new(cols as u32, rows as u32);
    for row in 0..rows {
        for col in 0..cols {
            let i = row * cols + col;
            let y = (rows - 1 - row) as u32;
            if map.is_observed(i) {
                let v = (map.intensity()[i].clamp(0.0, 1.0) * f64::from(u16::MAX)).round() as u16;
                gray.put_pixel(col as u32, y, Luma([v]));
                mask.put_pixel(col as u32, y, Luma([u8::MAX]));
            }
        }
    }
    (gray, mask)
}

/// Writes `<stem>.png` and `<stem>_mask.png`; returns both paths.
pub fn write_map_png(map: &GridMap, stem: &Path) -> CliResult<(PathBuf, PathBuf)> {
    let (gray, mask) = map_images(map);
    let gray_path = stem.with_extension("png");
    let name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mask_path = stem.with_file_name(format!("{name}_mask.png"));
    gray.save(&gray_path)
        .map_err(|e| sepba::Error::format("png image", &gray_path, e.to_string()))?;
    mask.save(&mask_path)
        .map_err(|e| sepba::Error::format("png image", &mask_path, e.to_string()))?;
    Ok((gray_path, mask_path))
}
