//! Image utilities: a minimal DICOM reader/writer, display conversion to
//! 8-bit grayscale PNG, and the content-addressed artifact store shared by
//! the tool bus, the mock fleet and the gateway.

pub mod dicom;
pub mod display;
pub mod store;

pub use dicom::{parse_dicom, write_dicom, DicomError, DicomImage, Photometric};
pub use display::{decode_gray_png, encode_gray_png, to_display_image, GrayImage};
pub use store::{content_hash, ArtifactStore, ImageRef, MediaKind, StoreError};
