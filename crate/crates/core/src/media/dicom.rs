//! Minimal DICOM Part 10 reader and writer.
//!
//! Supported subset: Explicit VR Little Endian, a single frame, one sample
//! per pixel, 8 or 16 bits allocated, unsigned samples, MONOCHROME1/2.
//! Anything outside that subset is rejected with a named error instead of
//! being rendered incorrectly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EXPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2.1";
pub const IMPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2";
const SECONDARY_CAPTURE_SOP_CLASS: &str = "1.2.840.10008.5.1.4.1.1.7";

const PREAMBLE_LEN: usize = 128;
const MAGIC: &[u8; 4] = b"DICM";
const UNDEFINED_LENGTH: u32 = 0xFFFF_FFFF;

type Tag = (u16, u16);

const TRANSFER_SYNTAX_UID: Tag = (0x0002, 0x0010);
const SAMPLES_PER_PIXEL: Tag = (0x0028, 0x0002);
const PHOTOMETRIC: Tag = (0x0028, 0x0004);
const NUMBER_OF_FRAMES: Tag = (0x0028, 0x0008);
const ROWS: Tag = (0x0028, 0x0010);
const COLUMNS: Tag = (0x0028, 0x0011);
const BITS_ALLOCATED: Tag = (0x0028, 0x0100);
const PIXEL_REPRESENTATION: Tag = (0x0028, 0x0103);
const PIXEL_DATA: Tag = (0x7FE0, 0x0010);
const ITEM: Tag = (0xFFFE, 0xE000);
const ITEM_DELIMITATION: Tag = (0xFFFE, 0xE00D);
const SEQUENCE_DELIMITATION: Tag = (0xFFFE, 0xE0DD);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Photometric {
    #[serde(rename = "MONOCHROME1")]
    Monochrome1,
    #[serde(rename = "MONOCHROME2")]
    Monochrome2,
}

impl Photometric {
    pub fn as_str(self) -> &'static str {
        match self {
            Photometric::Monochrome1 => "MONOCHROME1",
            Photometric::Monochrome2 => "MONOCHROME2",
        }
    }
}

/// A decoded single-frame grayscale image. Samples are row-major; 8-bit
/// images store values 0..=255 widened to `u16`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DicomImage {
    pub rows: u16,
    pub columns: u16,
    pub bits_allocated: u16,
    pub photometric: Photometric,
    pub pixels: Vec<u16>,
    pub transfer_syntax: String,
}

impl DicomImage {
    pub fn pixel_count(&self) -> usize {
        self.rows as usize * self.columns as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DicomError {
    #[error("missing DICM magic at offset 128")]
    NotDicom,
    #[error("unsupported transfer syntax {0}")]
    UnsupportedTransferSyntax(String),
    #[error("pixel data length {actual} does not match expected {expected}")]
    CorruptPixelData { expected: usize, actual: usize },
    #[error("required element ({:04X},{:04X}) missing", .0.0, .0.1)]
    MissingElement(Tag),
    #[error("unsupported image layout: {0}")]
    UnsupportedLayout(String),
    #[error("malformed data set: {0}")]
    Malformed(String),
}

impl DicomError {
    /// Stable machine-readable kind, surfaced in HTTP error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            DicomError::NotDicom => "not_dicom",
            DicomError::UnsupportedTransferSyntax(_) => "unsupported_transfer_syntax",
            DicomError::CorruptPixelData { .. } => "corrupt_pixel_data",
            DicomError::MissingElement(_) => "missing_element",
            DicomError::UnsupportedLayout(_) => "unsupported_layout",
            DicomError::Malformed(_) => "malformed",
        }
    }
}

/// Returns true when `bytes` carry the Part 10 preamble and magic.
pub fn is_dicom(bytes: &[u8]) -> bool {
    bytes.len() >= PREAMBLE_LEN + 4 && &bytes[PREAMBLE_LEN..PREAMBLE_LEN + 4] == MAGIC
}

fn has_long_length(vr: &[u8; 2]) -> bool {
    matches!(
        vr,
        b"OB" | b"OW" | b"OF" | b"OD" | b"OL" | b"OV" | b"SQ" | b"UT" | b"UN" | b"UC" | b"UR"
            | b"SV" | b"UV"
    )
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

struct Header {
    tag: Tag,
    vr: [u8; 2],
    len: u32,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u16(&mut self) -> Result<u16, DicomError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DicomError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DicomError> {
        if self.remaining() < n {
            return Err(DicomError::Malformed(format!(
                "need {n} bytes at offset {}, {} remain",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn peek_tag(&self) -> Option<Tag> {
        if self.remaining() < 4 {
            return None;
        }
        let b = &self.buf[self.pos..];
        Some((
            u16::from_le_bytes([b[0], b[1]]),
            u16::from_le_bytes([b[2], b[3]]),
        ))
    }

    fn header(&mut self) -> Result<Header, DicomError> {
        let tag = (self.u16()?, self.u16()?);
        if tag.0 == 0xFFFE {
            // item / delimiter tags carry no VR
            let len = self.u32()?;
            return Ok(Header {
                tag,
                vr: *b"  ",
                len,
            });
        }
        let vr_bytes = self.take(2)?;
        let vr = [vr_bytes[0], vr_bytes[1]];
        if !vr.iter().all(u8::is_ascii_uppercase) {
            return Err(DicomError::Malformed(format!(
                "invalid VR bytes {:02X}{:02X} for ({:04X},{:04X})",
                vr[0], vr[1], tag.0, tag.1
            )));
        }
        let len = if has_long_length(&vr) {
            self.take(2)?;
            self.u32()?
        } else {
            self.u16()? as u32
        };
        Ok(Header { tag, vr, len })
    }

    /// Skip the value of an undefined-length sequence, including nested items.
    fn skip_undefined_sequence(&mut self) -> Result<(), DicomError> {
        loop {
            let h = self.header()?;
            match h.tag {
                SEQUENCE_DELIMITATION => return Ok(()),
                ITEM if h.len == UNDEFINED_LENGTH => self.skip_undefined_item()?,
                ITEM => {
                    self.take(h.len as usize)?;
                }
                other => {
                    return Err(DicomError::Malformed(format!(
                        "unexpected ({:04X},{:04X}) inside sequence",
                        other.0, other.1
                    )))
                }
            }
        }
    }

    fn skip_undefined_item(&mut self) -> Result<(), DicomError> {
        loop {
            let h = self.header()?;
            if h.tag == ITEM_DELIMITATION {
                return Ok(());
            }
            if h.len == UNDEFINED_LENGTH {
                if &h.vr == b"SQ" {
                    self.skip_undefined_sequence()?;
                } else {
                    return Err(DicomError::Malformed(
                        "undefined length on non-sequence element inside item".into(),
                    ));
                }
            } else {
                self.take(h.len as usize)?;
            }
        }
    }
}

fn trim_text(value: &[u8]) -> String {
    String::from_utf8_lossy(value)
        .trim_end_matches(['\0', ' '])
        .trim_start()
        .to_string()
}

fn read_us(value: &[u8], tag: Tag) -> Result<u16, DicomError> {
    if value.len() < 2 {
        return Err(DicomError::Malformed(format!(
            "({:04X},{:04X}) too short for US",
            tag.0, tag.1
        )));
    }
    Ok(u16::from_le_bytes([value[0], value[1]]))
}

#[derive(Default)]
struct Collected {
    rows: Option<u16>,
    columns: Option<u16>,
    bits_allocated: Option<u16>,
    photometric: Option<String>,
    samples_per_pixel: Option<u16>,
    pixel_representation: Option<u16>,
    frames: Option<String>,
}

/// Parse a Part 10 file in the supported subset.
pub fn parse_dicom(bytes: &[u8]) -> Result<DicomImage, DicomError> {
    if !is_dicom(bytes) {
        return Err(DicomError::NotDicom);
    }
    let mut r = Reader {
        buf: bytes,
        pos: PREAMBLE_LEN + 4,
    };

    // File meta group (0002) is always explicit VR little endian.
    let mut transfer_syntax = None;
    while let Some(tag) = r.peek_tag() {
        if tag.0 != 0x0002 {
            break;
        }
        let h = r.header()?;
        let value = r.take(h.len as usize)?;
        if h.tag == TRANSFER_SYNTAX_UID {
            transfer_syntax = Some(trim_text(value));
        }
    }
    let transfer_syntax = transfer_syntax.ok_or(DicomError::MissingElement(TRANSFER_SYNTAX_UID))?;
    if transfer_syntax != EXPLICIT_VR_LITTLE_ENDIAN {
        return Err(DicomError::UnsupportedTransferSyntax(transfer_syntax));
    }

    let mut c = Collected::default();
    let mut pixel_bytes: Option<&[u8]> = None;
    while r.remaining() > 0 {
        let h = r.header()?;
        if h.tag == PIXEL_DATA {
            if h.len == UNDEFINED_LENGTH {
                // encapsulated pixel data under a native syntax is inconsistent
                return Err(DicomError::UnsupportedTransferSyntax(transfer_syntax));
            }
            let declared = h.len as usize;
            if declared > r.remaining() {
                return Err(DicomError::CorruptPixelData {
                    expected: declared,
                    actual: r.remaining(),
                });
            }
            pixel_bytes = Some(r.take(declared)?);
            break;
        }
        if h.len == UNDEFINED_LENGTH {
            if &h.vr == b"SQ" || &h.vr == b"UN" {
                r.skip_undefined_sequence()?;
                continue;
            }
            return Err(DicomError::Malformed(format!(
                "undefined length on ({:04X},{:04X})",
                h.tag.0, h.tag.1
            )));
        }
        let value = r.take(h.len as usize)?;
        match h.tag {
            ROWS => c.rows = Some(read_us(value, h.tag)?),
            COLUMNS => c.columns = Some(read_us(value, h.tag)?),
            BITS_ALLOCATED => c.bits_allocated = Some(read_us(value, h.tag)?),
            PHOTOMETRIC => c.photometric = Some(trim_text(value)),
            SAMPLES_PER_PIXEL => c.samples_per_pixel = Some(read_us(value, h.tag)?),
            PIXEL_REPRESENTATION => c.pixel_representation = Some(read_us(value, h.tag)?),
            NUMBER_OF_FRAMES => c.frames = Some(trim_text(value)),
            _ => {}
        }
    }

    let rows = c.rows.ok_or(DicomError::MissingElement(ROWS))?;
    let columns = c.columns.ok_or(DicomError::MissingElement(COLUMNS))?;
    let bits_allocated = c
        .bits_allocated
        .ok_or(DicomError::MissingElement(BITS_ALLOCATED))?;
    let photometric = match c
        .photometric
        .as_deref()
        .ok_or(DicomError::MissingElement(PHOTOMETRIC))?
    {
        "MONOCHROME1" => Photometric::Monochrome1,
        "MONOCHROME2" => Photometric::Monochrome2,
        other => {
            return Err(DicomError::UnsupportedLayout(format!(
                "photometric interpretation {other}"
            )))
        }
    };
    if let Some(spp) = c.samples_per_pixel {
        if spp != 1 {
            return Err(DicomError::UnsupportedLayout(format!(
                "{spp} samples per pixel"
            )));
        }
    }
    if c.pixel_representation.unwrap_or(0) != 0 {
        return Err(DicomError::UnsupportedLayout("signed pixel samples".into()));
    }
    if let Some(frames) = c.frames.as_deref() {
        if frames.parse::<u32>().map(|n| n > 1).unwrap_or(true) {
            return Err(DicomError::UnsupportedLayout(format!("{frames} frames")));
        }
    }
    if rows == 0 || columns == 0 {
        return Err(DicomError::UnsupportedLayout("zero-sized image".into()));
    }
    let sample_bytes = match bits_allocated {
        8 => 1,
        16 => 2,
        other => {
            return Err(DicomError::UnsupportedLayout(format!(
                "{other} bits allocated"
            )))
        }
    };
    let raw = pixel_bytes.ok_or(DicomError::MissingElement(PIXEL_DATA))?;
    let count = rows as usize * columns as usize;
    let expected = count * sample_bytes;
    // odd-length values carry one byte of padding
    let padded = expected + (expected % 2);
    if raw.len() != expected && raw.len() != padded {
        return Err(DicomError::CorruptPixelData {
            expected,
            actual: raw.len(),
        });
    }
    let pixels = if sample_bytes == 1 {
        raw[..count].iter().map(|&b| b as u16).collect()
    } else {
        raw[..expected]
            .chunks_exact(2)
            .map(|p| u16::from_le_bytes([p[0], p[1]]))
            .collect()
    };

    Ok(DicomImage {
        rows,
        columns,
        bits_allocated,
        photometric,
        pixels,
        transfer_syntax,
    })
}

struct Writer {
    out: Vec<u8>,
}

impl Writer {
    fn element(&mut self, tag: Tag, vr: &[u8; 2], value: &[u8]) {
        self.out.extend_from_slice(&tag.0.to_le_bytes());
        self.out.extend_from_slice(&tag.1.to_le_bytes());
        self.out.extend_from_slice(vr);
        if has_long_length(vr) {
            self.out.extend_from_slice(&[0, 0]);
            self.out.extend_from_slice(&(value.len() as u32).to_le_bytes());
        } else {
            self.out.extend_from_slice(&(value.len() as u16).to_le_bytes());
        }
        self.out.extend_from_slice(value);
    }

    fn text(&mut self, tag: Tag, vr: &[u8; 2], s: &str, pad: u8) {
        let mut v = s.as_bytes().to_vec();
        if v.len() % 2 == 1 {
            v.push(pad);
        }
        self.element(tag, vr, &v);
    }
}

/// Serialize `image` as an Explicit VR Little Endian Part 10 file.
///
/// The data set is always encoded explicit-VR little-endian, but the meta
/// header declares `image.transfer_syntax` as given; that is how fixtures
/// with unsupported syntaxes are produced. The file meta group length is computed, so output is byte-deterministic
/// for a given image.
pub fn write_dicom(image: &DicomImage) -> Vec<u8> {
    let mut meta = Writer { out: Vec::new() };
    meta.element((0x0002, 0x0001), b"OB", &[0, 1]);
    meta.text((0x0002, 0x0002), b"UI", SECONDARY_CAPTURE_SOP_CLASS, 0);
    meta.text((0x0002, 0x0003), b"UI", "1.2.826.0.1.3680043.10.1", 0);
    meta.text(TRANSFER_SYNTAX_UID, b"UI", &image.transfer_syntax, 0);

    let mut w = Writer {
        out: vec![0u8; PREAMBLE_LEN],
    };
    w.out.extend_from_slice(MAGIC);
    w.element(
        (0x0002, 0x0000),
        b"UL",
        &(meta.out.len() as u32).to_le_bytes(),
    );
    w.out.extend_from_slice(&meta.out);

    w.text((0x0008, 0x0016), b"UI", SECONDARY_CAPTURE_SOP_CLASS, 0);
    w.text((0x0008, 0x0060), b"CS", "DX", b' ');
    w.element(SAMPLES_PER_PIXEL, b"US", &1u16.to_le_bytes());
    w.text(PHOTOMETRIC, b"CS", image.photometric.as_str(), b' ');
    w.element(ROWS, b"US", &image.rows.to_le_bytes());
    w.element(COLUMNS, b"US", &image.columns.to_le_bytes());
    w.element(BITS_ALLOCATED, b"US", &image.bits_allocated.to_le_bytes());
    w.element((0x0028, 0x0101), b"US", &image.bits_allocated.to_le_bytes());
    w.element(
        (0x0028, 0x0102),
        b"US",
        &(image.bits_allocated - 1).to_le_bytes(),
    );
    w.element(PIXEL_REPRESENTATION, b"US", &0u16.to_le_bytes());

    let mut data: Vec<u8> = if image.bits_allocated == 8 {
        image.pixels.iter().map(|&p| p as u8).collect()
    } else {
        image.pixels.iter().flat_map(|p| p.to_le_bytes()).collect()
    };
    if data.len() % 2 == 1 {
        data.push(0);
    }
    let vr = if image.bits_allocated == 8 { b"OB" } else { b"OW" };
    w.element(PIXEL_DATA, vr, &data);
    w.out
}
