//! 8-bit RGBA PNG files; row 0 is the top of the image.

use anyhow::{bail, Context, Result};
use softras::RgbaImage;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

/// Clamp to `[0, 1]` and round half away from zero.
pub fn to_byte(value: f64) -> u8 {
    let v = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

pub fn encode_png(image: &RgbaImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        let data: Vec<u8> = image.pixels().iter().flat_map(|p| p.map(to_byte)).collect();
        writer.write_image_data(&data)?;
    }
    Ok(out)
}

pub fn write_png(image: &RgbaImage, path: &Path) -> Result<()> {
    let bytes = encode_png(image)?;
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Any 8- or 16-bit PNG, expanded to RGBA in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<RgbaImage> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .with_context(|| format!("decoding {}", path.display()))?;
    let mut buf = vec![0; reader.output_buffer_size().context("image too large")?];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => bail!("unsupported PNG color type {other:?}"),
    };
    let s = |b: u8| b as f64 / 255.0;
    let pixels = (0..w * h)
        .map(|i| {
            let px = &buf[i * channels..(i + 1) * channels];
            match channels {
                1 => [s(px[0]), s(px[0]), s(px[0]), 1.0],
                2 => [s(px[0]), s(px[0]), s(px[0]), s(px[1])],
                3 => [s(px[0]), s(px[1]), s(px[2]), 1.0],
                _ => [s(px[0]), s(px[1]), s(px[2]), s(px[3])],
            }
        })
        .collect();
    Ok(RgbaImage::from_pixels(h, w, pixels)?)
}
