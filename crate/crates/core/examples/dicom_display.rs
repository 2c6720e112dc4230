//! Parse a DICOM file and derive its display PNG. Without an argument a
//! synthetic 16-bit gradient is written and used.
//!
//!     cargo run --example dicom_display -- [input.dcm] [out.png]

use anyhow::{Context, Result};
use cxr_agent::media::dicom::EXPLICIT_VR_LITTLE_ENDIAN;
use cxr_agent::media::display::window_to_gray;
use cxr_agent::media::{parse_dicom, to_display_image, write_dicom, DicomImage, Photometric};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let input = args.next();
    let output = args.next().unwrap_or_else(|| "display.png".into());

    let bytes = match &input {
        Some(p) => std::fs::read(p).with_context(|| format!("reading {p}"))?,
        None => {
            let (rows, cols) = (64u16, 96u16);
            let img = DicomImage {
                rows,
                columns: cols,
                bits_allocated: 16,
                photometric: Photometric::Monochrome2,
                pixels: (0..rows as u32 * cols as u32)
                    .map(|i| (i % cols as u32 * 40 + i / cols as u32 * 7) as u16)
                    .collect(),
                transfer_syntax: EXPLICIT_VR_LITTLE_ENDIAN.into(),
            };
            let b = write_dicom(&img);
            std::fs::write("synthetic.dcm", &b)?;
            println!("wrote synthetic.dcm ({} bytes)", b.len());
            b
        }
    };

    let d = match parse_dicom(&bytes) {
        Ok(d) => d,
        Err(e) => {
            // the error kind is what the gateway reports in its 422 body
            println!("cannot display: {} ({e})", e.kind());
            return Ok(());
        }
    };
    let gray = window_to_gray(&d);
    let (lo, hi) = (d.pixels.iter().min().copied().unwrap_or(0), d.pixels.iter().max().copied().unwrap_or(0));
    println!(
        "{}x{} {}-bit {} samples {lo}..={hi} -> gray {}..={}",
        d.columns,
        d.rows,
        d.bits_allocated,
        d.photometric.as_str(),
        gray.pixels.iter().min().unwrap_or(&0),
        gray.pixels.iter().max().unwrap_or(&0)
    );
    std::fs::write(&output, to_display_image(&d))?;
    println!("wrote {output}");

    let truncated = &bytes[..bytes.len().saturating_sub(3)];
    if let Err(e) = parse_dicom(truncated) {
        println!("truncated copy is rejected: {}", e.kind());
    }
    Ok(())
}
