//! PNG encodings: RGBA images as 8-bit RGBA, masks as 8-bit grayscale with
//! values 0 and 255. Any nonzero gray level decodes as set.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat};

use super::{BinaryMask, MaskError, Result, RgbaImage};

fn png_err(e: image::ImageError) -> MaskError {
    MaskError::Png(e.to_string())
}

pub fn encode_mask_png(m: &BinaryMask) -> Vec<u8> {
    let gray = GrayImage::from_fn(m.width(), m.height(), |x, y| image::Luma([if m.get(x, y) { 255 } else { 0 }]));
    let mut buf = Cursor::new(Vec::new());
    gray.write_to(&mut buf, ImageFormat::Png).expect("in-memory png encode");
    buf.into_inner()
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<BinaryMask> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(png_err)?.to_luma8();
    Ok(BinaryMask::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[0] > 0))
}

pub fn encode_rgba_png(img: &RgbaImage) -> Vec<u8> {
    let buf = image::RgbaImage::from_raw(img.width(), img.height(), img.as_raw().to_vec()).expect("buffer size checked at construction");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).expect("in-memory png encode");
    out.into_inner()
}

pub fn decode_rgba_png(bytes: &[u8]) -> Result<RgbaImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(png_err)?.to_rgba8();
    RgbaImage::from_raw(img.width(), img.height(), img.into_raw())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MaskError + '_ {
    move |source| MaskError::Io { path: path.display().to_string(), source }
}

pub fn write_mask_png(path: &Path, m: &BinaryMask) -> Result<()> {
    std::fs::write(path, encode_mask_png(m)).map_err(io_err(path))
}

pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    decode_mask_png(&std::fs::read(path).map_err(io_err(path))?)
}

pub fn write_rgba_png(path: &Path, img: &RgbaImage) -> Result<()> {
    std::fs::write(path, encode_rgba_png(img)).map_err(io_err(path))
}

pub fn read_rgba_png(path: &Path) -> Result<RgbaImage> {
    decode_rgba_png(&std::fs::read(path).map_err(io_err(path))?)
}
