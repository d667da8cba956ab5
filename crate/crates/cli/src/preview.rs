use std::io::BufWriter;
use std::path::Path;

use ksynth::Image;

use crate::error::CliResult;

/// 16-bit grayscale PNG windowed to the image's own min/max.
pub fn write_png(path: &Path, image: &Image) -> CliResult<()> {
    let p = image.pixels();
    let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 65535.0 / (hi - lo) } else { 0.0 };
    let mut data = Vec::with_capacity(p.len() * 2);
    for &v in p {
        let level = ((v - lo) * scale).round().clamp(0.0, 65535.0) as u16;
        data.extend_from_slice(&level.to_be_bytes());
    }
    let n = image.size() as u32;
    let mut encoder = png::Encoder::new(BufWriter::new(std::fs::File::create(path)?), n, n);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(())
}
