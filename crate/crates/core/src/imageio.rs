//! Lossless 8-bit PNG I/O for [`Image8`] (planar CHW in memory, interleaved on disk).

use std::fs::File;
use std::io::{BufReader, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Image8;

pub fn encode_png(img: &Image8) -> Result<Vec<u8>> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::Png(format!("cannot store {c} channels as PNG"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        w.write_image_data(&interleave(img)).map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Image8> {
    read(Cursor::new(bytes))
}

pub fn write_png(path: &Path, img: &Image8) -> Result<()> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_png(path: &Path) -> Result<Image8> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read(BufReader::new(f)).map_err(|e| Error::Data { path: path.to_path_buf(), msg: e.to_string() })
}

fn read<R: std::io::BufRead + std::io::Seek>(r: R) -> Result<Image8> {
    let mut reader = png::Decoder::new(r).read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        c => return Err(Error::Png(format!("unsupported color type {c:?}"))),
    };
    buf.truncate(info.buffer_size());
    let (h, w) = (info.height as usize, info.width as usize);
    let mut pixels = vec![0u8; channels * h * w];
    for (i, px) in buf.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            pixels[c * h * w + i] = v;
        }
    }
    Image8::new(channels, h, w, pixels)
}

fn interleave(img: &Image8) -> Vec<u8> {
    let hw = img.height * img.width;
    let mut out = vec![0u8; img.pixels.len()];
    for c in 0..img.channels {
        for i in 0..hw {
            out[i * img.channels + c] = img.pixels[c * hw + i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_bit_exact() {
        for c in [1, 3] {
            let pixels: Vec<u8> = (0..c * 5 * 7).map(|i| (i * 37 % 256) as u8).collect();
            let img = Image8::new(c, 5, 7, pixels).unwrap();
            assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap(), img);
        }
    }
}
