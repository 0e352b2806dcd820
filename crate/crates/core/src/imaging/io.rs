//! PNG ingestion and export. Depth travels as 16-bit millimeters.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use super::{BitMask, DepthImage, ImagingError, RgbImage};

fn io_err(path: &Path, e: impl std::fmt::Display) -> ImagingError {
    ImagingError::Io { path: path.display().to_string(), message: e.to_string() }
}

pub fn load_rgb_png(path: &Path) -> Result<RgbImage, ImagingError> {
    let img = image::open(path).map_err(|e| io_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::new(w as usize, h as usize, img.into_raw())
}

pub fn save_rgb_png(img: &RgbImage, path: &Path) -> Result<(), ImagingError> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.as_bytes().to_vec())
            .ok_or_else(|| io_err(path, "buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| io_err(path, e))
}

/// Load a single-channel 16-bit PNG in millimeters as meters.
pub fn load_depth_png(path: &Path) -> Result<DepthImage<f64>, ImagingError> {
    let dynimg = image::open(path).map_err(|e| io_err(path, e))?;
    let img = match dynimg {
        image::DynamicImage::ImageLuma16(b) => b,
        other => return Err(io_err(path, format!("expected 16-bit grayscale depth, got {:?}", other.color()))),
    };
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(io_err(path, "empty depth image"));
    }
    let depths = img.into_raw().into_iter().map(|mm| f64::from(mm) / 1000.0).collect();
    DepthImage::new(w as usize, h as usize, depths)
}

/// Millimeter-quantized 16-bit export; depths beyond 65.535 m saturate.
pub fn save_depth_png(d: &DepthImage<f64>, path: &Path) -> Result<(), ImagingError> {
    let raw: Vec<u16> =
        d.as_slice().iter().map(|z| (z * 1000.0).round().clamp(0.0, f64::from(u16::MAX)) as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(d.width() as u32, d.height() as u32, raw)
        .ok_or_else(|| io_err(path, "buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| io_err(path, e))
}

pub fn save_mask_png(m: &BitMask, path: &Path) -> Result<(), ImagingError> {
    let raw: Vec<u8> = m.as_slice().iter().map(|b| if *b { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(m.width() as u32, m.height() as u32, raw)
        .ok_or_else(|| io_err(path, "buffer size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| io_err(path, e))
}
