//! PNG input/output for Lab images.

use std::path::Path;

use crate::colorspace::LabImage;
use crate::error::{Error, Result};

/// Load any 8-bit image as sRGB and convert to Lab.
pub fn load_lab_image(path: &Path) -> Result<LabImage> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    LabImage::from_rgb8(w as usize, h as usize, img.as_raw())
}

pub fn save_rgb8(path: &Path, width: usize, height: usize, rgb: Vec<u8>) -> Result<()> {
    let img = image::RgbImage::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| Error::Contract("RGB buffer length does not match dimensions".into()))?;
    img.save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

/// Clamp, convert to 8-bit sRGB and write as PNG.
pub fn save_lab_image(path: &Path, img: &LabImage) -> Result<()> {
    save_rgb8(path, img.width, img.height, img.to_rgb8())
}
