use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::raster::Plane;

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other),
    })
}

/// Grayscale frame scaled to `[0, 1]`. 8- and 16-bit images keep their full
/// precision; colour images are converted to luma.
pub fn read_frame(path: &Path) -> Result<Plane> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        other => other
            .into_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
    };
    Plane::from_vec(w, h, data)
}

/// Binary mask: pixels above half range are foreground.
pub fn read_mask(path: &Path) -> Result<Plane> {
    let frame = read_frame(path)?;
    Ok(frame.map(|v| if v > 0.5 { 1.0 } else { 0.0 }))
}

fn save<P, C>(path: &Path, buf: ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    buf.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other),
    })
}

/// 16-bit grayscale PNG of a `[0, 1]` plane (values are clamped).
pub fn write_frame_u16(path: &Path, plane: &Plane) -> Result<()> {
    let raw: Vec<u16> = plane
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(plane.width() as u32, plane.height() as u32, raw)
        .expect("buffer matches plane size");
    save(path, buf)
}

/// `{0, 255}` PNG of a mask (foreground where the plane exceeds 0.5).
pub fn write_mask(path: &Path, plane: &Plane) -> Result<()> {
    let raw: Vec<u8> = plane.data().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
    let buf = ImageBuffer::<Luma<u8>, _>::from_raw(plane.width() as u32, plane.height() as u32, raw)
        .expect("buffer matches plane size");
    save(path, buf)
}

pub fn write_rgb(path: &Path, width: usize, height: usize, pixels: &[[u8; 3]]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::shape("write_rgb", width * height, pixels.len()));
    }
    let raw: Vec<u8> = pixels.iter().flatten().copied().collect();
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(width as u32, height as u32, raw)
        .expect("buffer matches size");
    save(path, buf)
}
