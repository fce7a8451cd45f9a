//! PNG encoding of images and masks.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use orpose_core::synth::{Image, Mask};

use crate::error::{Error, Result};
use crate::fsutil;

fn encode(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fsutil::create_dir(dir)?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(f), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Fast);
    let mut w = enc.write_header().map_err(|e| Error::format(path, e))?;
    w.write_image_data(data).map_err(|e| Error::format(path, e))?;
    w.finish().map_err(|e| Error::format(path, e))
}

fn decode(path: &Path, want: png::ColorType) -> Result<(usize, usize, Vec<u8>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = png::Decoder::new(BufReader::new(f));
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e))?;
    if info.color_type != want || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, format!("expected 8-bit {want:?}, found {:?} {:?}", info.bit_depth, info.color_type)));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

pub fn write_rgb(path: &Path, img: &Image) -> Result<()> {
    encode(path, img.width, img.height, png::ColorType::Rgb, &img.data)
}

pub fn read_rgb(path: &Path) -> Result<Image> {
    let (width, height, data) = decode(path, png::ColorType::Rgb)?;
    Ok(Image { width, height, data })
}

pub fn write_mask(path: &Path, m: &Mask) -> Result<()> {
    let data: Vec<u8> = m.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode(path, m.width, m.height, png::ColorType::Grayscale, &data)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let (width, height, data) = decode(path, png::ColorType::Grayscale)?;
    Ok(Mask { width, height, data: data.into_iter().map(|v| v >= 128).collect() })
}
