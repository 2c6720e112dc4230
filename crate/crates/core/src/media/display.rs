use std::io::Cursor;

use super::dicom::{DicomImage, Photometric};

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

/// Value used for every pixel when the input has no dynamic range.
pub const DEGENERATE_GRAY: u8 = 128;

/// Linear min-max window of the samples onto 0..=255, with MONOCHROME1
/// inverted so that higher output is always brighter.
///
/// Integer arithmetic with round-half-up keeps the mapping exact, which makes
/// the output invariant under positive affine rescaling of the input.
pub fn window_to_gray(d: &DicomImage) -> GrayImage {
    let min = d.pixels.iter().copied().min().unwrap_or(0) as u64;
    let max = d.pixels.iter().copied().max().unwrap_or(0) as u64;
    let pixels = if min == max {
        vec![DEGENERATE_GRAY; d.pixels.len()]
    } else {
        let range = max - min;
        d.pixels
            .iter()
            .map(|&v| {
                let scaled = ((v as u64 - min) * 510 + range) / (2 * range);
                let g = scaled as u8;
                match d.photometric {
                    Photometric::Monochrome2 => g,
                    Photometric::Monochrome1 => 255 - g,
                }
            })
            .collect()
    };
    GrayImage {
        width: d.columns as u32,
        height: d.rows as u32,
        pixels,
    }
}

/// Window a parsed DICOM image and encode it as an 8-bit grayscale PNG.
pub fn to_display_image(d: &DicomImage) -> Vec<u8> {
    encode_gray_png(&window_to_gray(d))
}

/// Encode with fixed settings so identical rasters give identical bytes.
pub fn encode_gray_png(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        enc.set_filter(png::Filter::NoFilter);
        let mut writer = enc.write_header().expect("png header to Vec cannot fail");
        writer
            .write_image_data(&img.pixels)
            .expect("raster size matches header");
    }
    out
}

/// Decode an 8-bit grayscale PNG. Returns `None` for any other format.
pub fn decode_gray_png(bytes: &[u8]) -> Option<GrayImage> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().ok()?;
    let mut buf = vec![0; reader.output_buffer_size()?];
    let info = reader.next_frame(&mut buf).ok()?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return None;
    }
    buf.truncate(info.buffer_size());
    Some(GrayImage {
        width: info.width,
        height: info.height,
        pixels: buf,
    })
}

/// Whether `bytes` start with the PNG signature.
pub fn is_png(bytes: &[u8]) -> bool {
    bytes.starts_with(&[0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A])
}

/// Whether `bytes` start with a JPEG SOI marker.
pub fn is_jpeg(bytes: &[u8]) -> bool {
    bytes.starts_with(&[0xFF, 0xD8, 0xFF])
}
