//! Image files: 8-bit PNG for display, RAFF floats for lossless intermediates.
//!
//! RAFF layout: the bytes `RAFF`, then width, height and channel count as
//! little-endian `u32`, then `W * H * C` little-endian `f32` values in
//! row-major, channel-interleaved order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use rafe_core::degrade::ImageBuffer;

pub const RAFF_MAGIC: &[u8; 4] = b"RAFF";

/// Round-half-up quantization of `[0, 1]` to a byte; 0.5 maps to 128.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Buffer with every value snapped to the 8-bit grid.
pub fn quantized(img: &ImageBuffer) -> ImageBuffer {
    let data = img.data.iter().map(|&v| quantize(v) as f64 / 255.0).collect();
    ImageBuffer::new(img.width, img.height, data).expect("same extent")
}

pub fn encode_raff(img: &ImageBuffer) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * img.data.len());
    out.extend_from_slice(RAFF_MAGIC);
    for v in [img.width, img.height, 3] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in &img.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raff(bytes: &[u8]) -> Result<ImageBuffer> {
    ensure!(bytes.len() >= 16, "truncated RAFF header ({} bytes)", bytes.len());
    ensure!(&bytes[..4] == RAFF_MAGIC, "not a RAFF file");
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, c) = (word(0), word(1), word(2));
    ensure!(c == 3, "RAFF files with {c} channels are not supported");
    let n = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(c))
        .context("RAFF extent overflows")?;
    let body = &bytes[16..];
    ensure!(body.len() == 4 * n, "truncated RAFF body: {} of {} bytes", body.len(), 4 * n);
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(ImageBuffer::new(w, h, data)?)
}

pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
        w.write_image_data(&bytes)?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().context("PNG too large")?];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let px = &buf[..info.buffer_size()];
    let data: Vec<f64> = match info.color_type {
        png::ColorType::Rgb => px.iter().map(|&b| b as f64 / 255.0).collect(),
        png::ColorType::Rgba => px
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .map(|b| b as f64 / 255.0)
            .collect(),
        png::ColorType::Grayscale => px.iter().flat_map(|&b| [b as f64 / 255.0; 3]).collect(),
        png::ColorType::GrayscaleAlpha => px.chunks_exact(2).flat_map(|p| [p[0] as f64 / 255.0; 3]).collect(),
        other => bail!("unsupported PNG color type {other:?}"),
    };
    Ok(ImageBuffer::new(w, h, data)?)
}

/// Writes `img` as PNG or RAFF depending on the extension.
pub fn save_image(path: &Path, img: &ImageBuffer) -> Result<()> {
    let bytes = match extension(path)?.as_str() {
        "png" => encode_png(img)?,
        "raff" => encode_raff(img),
        other => bail!("unsupported image extension `{other}`"),
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let ext = extension(path)?;
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?).read_to_end(&mut bytes)?;
    match ext.as_str() {
        "png" => decode_png(&bytes),
        "raff" => decode_raff(&bytes),
        other => bail!("unsupported image extension `{other}`"),
    }
    .with_context(|| format!("reading {}", path.display()))
}

fn extension(path: &Path) -> Result<String> {
    Ok(path
        .extension()
        .and_then(|e| e.to_str())
        .with_context(|| format!("{} has no extension", path.display()))?
        .to_ascii_lowercase())
}

/// Images placed left to right on a common canvas; shorter images are
/// top-aligned and the remainder filled with black.
pub fn hstack(images: &[ImageBuffer]) -> ImageBuffer {
    let w = images.iter().map(|i| i.width).sum::<usize>().max(1);
    let h = images.iter().map(|i| i.height).max().unwrap_or(1);
    let mut out = ImageBuffer::filled(w, h, [0.0; 3]);
    let mut x0 = 0;
    for img in images {
        for y in 0..img.height {
            for x in 0..img.width {
                for c in 0..3 {
                    out.set(x0 + x, y, c, img.get(x, y, c));
                }
            }
        }
        x0 += img.width;
    }
    out
}

/// Bilinear resize to `w x h` with pixel-center alignment.
pub fn resize(img: &ImageBuffer, w: usize, h: usize) -> ImageBuffer {
    if img.width == w && img.height == h {
        return img.clone();
    }
    let sx = img.width as f64 / w as f64;
    let sy = img.height as f64 / h as f64;
    ImageBuffer::from_fn(w, h, |x, y| {
        img.sample_bilinear((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
    })
}
