//! PPM (P6) and PNG output. Values are clamped to `[0, 1]` and mapped to
//! bytes with `round(v · 255)`; no gamma curve is applied.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use fieldcache_core::render::Image;

pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn rgb_bytes(image: &Image) -> Vec<u8> {
    image.pixels().iter().flat_map(|p| p.map(to_byte)).collect()
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(rgb_bytes(image));
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated PPM header");
        }
        fields.push(std::str::from_utf8(&bytes[start..pos])?.to_string());
    }
    pos += 1;
    if fields[0] != "P6" {
        bail!("not a binary PPM (magic {:?})", fields[0]);
    }
    let w: usize = fields[1].parse().context("PPM width")?;
    let h: usize = fields[2].parse().context("PPM height")?;
    if fields[3] != "255" {
        bail!("only 8-bit PPM is supported");
    }
    let data = bytes.get(pos..pos + 3 * w * h).context("truncated PPM pixel data")?;
    let pixels = data
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]].map(|b| b as f64 / 255.0))
        .collect();
    Image::from_pixels(w, h, pixels).context("PPM pixel count")
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_end(&mut bytes)?;
    decode_ppm(&bytes).with_context(|| format!("reading {}", path.display()))
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    std::fs::write(path, encode_ppm(image)).with_context(|| format!("writing {}", path.display()))
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width() as u32, image.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&rgb_bytes(image))?;
    writer.finish()?;
    Ok(())
}

/// Writes PNG when the extension is `.png`, PPM otherwise.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => write_png(path, image),
        _ => write_ppm(path, image),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping_rounds_and_clamps() {
        assert_eq!(to_byte(-0.5), 0);
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(2.0), 255);
        assert_eq!(to_byte(1.0 / 255.0 * 0.49), 0);
    }

    #[test]
    fn ppm_round_trip_is_exact_on_byte_values() {
        let mut img = Image::new(3, 2);
        img.set(1, 1, [1.0, 0.0, 128.0 / 255.0]);
        img.set(2, 0, [0.2, 0.4, 0.6].map(|v: f64| (v * 255.0).round() / 255.0));
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_header_layout() {
        let bytes = encode_ppm(&Image::new(2, 1));
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(bytes.len(), 11 + 6);
        assert!(decode_ppm(b"P3\n1 1\n255\n...").is_err());
    }
}
