//! File boundary: 8-bit raster formats through the `image` crate and the
//! raw float dump (`UWIMG1`, u32 height, u32 width, then three little-endian
//! `f32` planes R, G, B).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Image, ImagingError};
use crate::Scalar;

pub const RAW_MAGIC: &[u8; 6] = b"UWIMG1";

fn is_raw(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("uwimg"))
}

/// Loads a raster (PNG, BMP, JPEG) or a `.uwimg` raw dump.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Image<T>, ImagingError> {
    if is_raw(path) {
        return read_raw(&mut BufReader::new(File::open(path)?));
    }
    let rgb = image::open(path)
        .map_err(|e| ImagingError::Codec(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb
        .into_raw()
        .into_iter()
        .map(|b| T::of(b as f64 / 255.0))
        .collect();
    Image::new(h as usize, w as usize, data)
}

/// Saves an image, choosing the format from the extension.
pub fn save_image<T: Scalar>(img: &Image<T>, path: &Path) -> Result<(), ImagingError> {
    if is_raw(path) {
        let mut w = BufWriter::new(File::create(path)?);
        write_raw(img, &mut w)?;
        w.flush()?;
        return Ok(());
    }
    let bytes: Vec<u8> = img
        .as_slice()
        .iter()
        .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .ok_or_else(|| ImagingError::Codec("raster buffer size".into()))?;
    buf.save(path)
        .map_err(|e| ImagingError::Codec(format!("{}: {e}", path.display())))
}

pub fn write_raw<T: Scalar, W: Write>(img: &Image<T>, out: &mut W) -> Result<(), ImagingError> {
    out.write_all(RAW_MAGIC)?;
    out.write_u32::<LittleEndian>(img.height() as u32)?;
    out.write_u32::<LittleEndian>(img.width() as u32)?;
    for ch in 0..3 {
        for px in img.as_slice().chunks_exact(3) {
            out.write_f32::<LittleEndian>(px[ch].as_f32())?;
        }
    }
    Ok(())
}

pub fn read_raw<T: Scalar, R: Read>(input: &mut R) -> Result<Image<T>, ImagingError> {
    let mut magic = [0u8; 6];
    input.read_exact(&mut magic)?;
    if &magic != RAW_MAGIC {
        return Err(ImagingError::Codec("bad raw image magic".into()));
    }
    let h = input.read_u32::<LittleEndian>()? as usize;
    let w = input.read_u32::<LittleEndian>()? as usize;
    let plane = h * w;
    let mut data = vec![T::zero(); plane * 3];
    for ch in 0..3 {
        for i in 0..plane {
            data[i * 3 + ch] = T::of(input.read_f32::<LittleEndian>()? as f64);
        }
    }
    Image::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_layout_is_planar() {
        let img = Image::<f32>::from_fn(1, 2, |_, x, ch| (x * 3 + ch) as f32 / 10.0).unwrap();
        let mut buf = Vec::new();
        write_raw(&img, &mut buf).unwrap();
        assert_eq!(&buf[..6], b"UWIMG1");
        assert_eq!(&buf[6..14], &[1, 0, 0, 0, 2, 0, 0, 0]);
        let floats: Vec<f32> = buf[14..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        // R plane, then G, then B.
        assert_eq!(floats, vec![0.0, 0.3, 0.1, 0.4, 0.2, 0.5]);
        let back: Image<f32> = read_raw(&mut buf.as_slice()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn png_roundtrip_is_exact_on_8bit_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::<f32>::from_fn(3, 5, |y, x, ch| {
            ((y * 31 + x * 7 + ch * 50) % 256) as f32 / 255.0
        })
        .unwrap();
        save_image(&img, &path).unwrap();
        let back: Image<f32> = load_image(&path).unwrap();
        assert_eq!(back, img);
    }
}
