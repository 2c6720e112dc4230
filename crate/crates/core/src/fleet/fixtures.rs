//! Authored fixture data for the mock fleet: three synthetic grayscale
//! images and the response table keyed like the tool cache.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use serde_json::{json, Map, Value};

use crate::media::{content_hash, encode_gray_png, GrayImage};
use crate::toolkit::catalog::{self, PATHOLOGIES, SEGMENTATION_REGIONS};
use crate::toolkit::{CacheKey, ToolSpec};

pub const IMAGE_SIZE: u32 = 64;

/// A named synthetic image with its PNG bytes and content hash.
#[derive(Debug, Clone)]
pub struct FixtureImage {
    pub name: &'static str,
    pub png: Vec<u8>,
    pub hash: String,
}

pub const CXR_1: &str = "fixture_cxr_1";
pub const CXR_2: &str = "fixture_cxr_2";
pub const CXR_3: &str = "fixture_cxr_3";

/// Question used by the authored classifier/vqa conflict on `fixture_cxr_2`.
pub const CONFLICT_QUESTION: &str = "is there a pneumothorax?";

fn raster(f: impl Fn(u32, u32) -> u8) -> GrayImage {
    let mut pixels = Vec::with_capacity((IMAGE_SIZE * IMAGE_SIZE) as usize);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            pixels.push(f(x, y));
        }
    }
    GrayImage {
        width: IMAGE_SIZE,
        height: IMAGE_SIZE,
        pixels,
    }
}

fn in_ellipse(x: u32, y: u32, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let dx = (x as f64 - cx) / rx;
    let dy = (y as f64 - cy) / ry;
    dx * dx + dy * dy <= 1.0
}

fn build_images() -> Vec<FixtureImage> {
    let one = raster(|x, y| {
        if in_ellipse(x, y, 20.0, 32.0, 10.0, 18.0) || in_ellipse(x, y, 44.0, 32.0, 10.0, 18.0) {
            30
        } else {
            (60 + y * 2) as u8
        }
    });
    let two = raster(|x, y| {
        if x > 40 && y < 30 {
            10
        } else {
            (50 + x * 3) as u8
        }
    });
    let three = raster(|x, y| {
        if in_ellipse(x, y, 34.0, 40.0, 14.0, 12.0) {
            220
        } else {
            let d = (x as i32 - 32).abs() + (y as i32 - 32).abs();
            (200 - d * 2).clamp(0, 255) as u8
        }
    });
    [(CXR_1, one), (CXR_2, two), (CXR_3, three)]
        .into_iter()
        .map(|(name, img)| {
            let png = encode_gray_png(&img);
            let hash = content_hash(&png);
            FixtureImage { name, png, hash }
        })
        .collect()
}

pub fn fixture_images() -> &'static [FixtureImage] {
    static IMAGES: OnceLock<Vec<FixtureImage>> = OnceLock::new();
    IMAGES.get_or_init(build_images)
}

pub fn fixture_image(name: &str) -> Option<&'static FixtureImage> {
    fixture_images().iter().find(|i| i.name == name)
}

/// The image served by the mock generation tool for every prompt.
pub fn generated_image_png() -> &'static [u8] {
    static PNG: OnceLock<Vec<u8>> = OnceLock::new();
    PNG.get_or_init(|| {
        encode_gray_png(&raster(|x, y| {
            if in_ellipse(x, y, 32.0, 32.0, 24.0, 28.0) {
                ((x ^ y) % 64 + 64) as u8
            } else {
                0
            }
        }))
    })
}

/// Run-length encode a row-major boolean mask as `start:length` runs.
pub fn rle_encode(mask: &[bool]) -> String {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] {
            let start = i;
            while i < mask.len() && mask[i] {
                i += 1;
            }
            runs.push(format!("{start}:{}", i - start));
        } else {
            i += 1;
        }
    }
    runs.join(" ")
}

fn rect_mask(x0: u32, x1: u32, y0: u32, y1: u32) -> Vec<bool> {
    let mut m = vec![false; (IMAGE_SIZE * IMAGE_SIZE) as usize];
    for y in y0..y1 {
        for x in x0..x1 {
            m[(y * IMAGE_SIZE + x) as usize] = true;
        }
    }
    m
}

/// Probability vector over the 18 pathology classes; unlisted classes get 0.05.
pub fn probabilities(overrides: &[(&str, f64)]) -> Value {
    let mut m = Map::new();
    for p in PATHOLOGIES {
        let v = overrides
            .iter()
            .find(|(k, _)| *k == p)
            .map(|(_, v)| *v)
            .unwrap_or(0.05);
        m.insert(p.to_string(), json!(v));
    }
    Value::Object(m)
}

/// Response table: exact key match first, then the tool's fallback payload.
#[derive(Debug, Clone, Default)]
pub struct FixtureTable {
    entries: HashMap<CacheKey, Value>,
    fallback: HashMap<String, Value>,
}

impl FixtureTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add an entry. `images` maps image params to fixture image names.
    pub fn insert(&mut self, spec: &ToolSpec, args: Value, images: &[(&str, &str)], payload: Value) {
        let mut arguments = args.as_object().cloned().unwrap_or_default();
        let mut hashes = BTreeMap::new();
        for (param, name) in images {
            let img = fixture_image(name).unwrap_or_else(|| panic!("unknown fixture image {name}"));
            hashes.insert(param.to_string(), img.hash.clone());
            arguments.insert(param.to_string(), json!(img.hash));
        }
        self.entries
            .insert(CacheKey::new(spec, &arguments, &hashes), payload);
    }

    pub fn set_fallback(&mut self, tool: &str, payload: Value) {
        self.fallback.insert(tool.to_string(), payload);
    }

    pub fn exact(&self, key: &CacheKey) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn lookup(&self, key: &CacheKey) -> Option<&Value> {
        self.entries
            .get(key)
            .or_else(|| self.fallback.get(&key.tool))
    }

    pub fn fallback(&self, tool: &str) -> Option<&Value> {
        self.fallback.get(tool)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn payloads(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.entries
            .iter()
            .map(|(k, v)| (k.tool.as_str(), v))
            .chain(self.fallback.iter().map(|(k, v)| (k.as_str(), v)))
    }
}

fn spec_for(name: &str) -> ToolSpec {
    catalog::standard_specs(|_| "http://fixture.invalid".to_string())
        .into_iter()
        .find(|s| s.name == name)
        .expect("catalog tool")
}

/// Regions authored per image as axis-aligned boxes (x0, x1, y0, y1).
fn region_box(image: &str, region: &str) -> (u32, u32, u32, u32) {
    match (image, region) {
        (CXR_1, "left_lung") => (36, 52, 16, 48),
        (CXR_1, "right_lung") => (12, 28, 16, 48),
        (CXR_1, "heart") => (26, 40, 34, 50),
        (CXR_2, "left_lung") => (40, 56, 30, 50),
        (CXR_2, "right_lung") => (10, 26, 14, 50),
        (CXR_2, "heart") => (26, 38, 36, 50),
        (CXR_3, "left_lung") => (44, 56, 18, 44),
        (CXR_3, "right_lung") => (8, 20, 18, 44),
        (CXR_3, "heart") => (20, 48, 28, 52),
        _ => (0, 0, 0, 0),
    }
}

fn segmentation_payload(region: &str, mask: &[bool]) -> Value {
    json!({
        "region": region,
        "width": IMAGE_SIZE,
        "height": IMAGE_SIZE,
        "mask_rle": rle_encode(mask),
        "pixel_count": mask.iter().filter(|&&b| b).count(),
    })
}

/// The complete authored fixture suite for the six table-driven tools.
/// Generation and DICOM conversion are computed by the server itself.
pub fn make_fixture_suite() -> FixtureTable {
    let mut t = FixtureTable::new();

    let classifier = spec_for(catalog::CLASSIFIER);
    t.insert(
        &classifier,
        json!({}),
        &[("image", CXR_1)],
        probabilities(&[("effusion", 0.82), ("atelectasis", 0.41), ("cardiomegaly", 0.12), ("pneumothorax", 0.03)]),
    );
    // conflict pair, first half: strong pneumothorax signal
    t.insert(
        &classifier,
        json!({}),
        &[("image", CXR_2)],
        probabilities(&[("pneumothorax", 0.91), ("lung_opacity", 0.22)]),
    );
    t.insert(
        &classifier,
        json!({}),
        &[("image", CXR_3)],
        probabilities(&[("cardiomegaly", 0.88), ("edema", 0.57), ("enlarged_cardiomediastinum", 0.64)]),
    );
    t.set_fallback(catalog::CLASSIFIER, probabilities(&[]));

    let report = spec_for(catalog::REPORT_GENERATION);
    t.insert(
        &report,
        json!({}),
        &[("image", CXR_1)],
        json!({
            "findings": "Moderate right pleural effusion with adjacent basilar atelectasis. Heart size normal.",
            "impression": "Right pleural effusion."
        }),
    );
    t.insert(
        &report,
        json!({}),
        &[("image", CXR_2)],
        json!({
            "findings": "Hyperlucent left upper zone without lung markings; visceral pleural line not clearly seen.",
            "impression": "Possible left apical pneumothorax."
        }),
    );
    t.insert(
        &report,
        json!({}),
        &[("image", CXR_3)],
        json!({
            "findings": "Enlarged cardiac silhouette with cephalization of pulmonary vessels.",
            "impression": "Cardiomegaly with mild pulmonary edema."
        }),
    );
    t.set_fallback(
        catalog::REPORT_GENERATION,
        json!({"findings": "No acute cardiopulmonary abnormality.", "impression": "Normal study."}),
    );

    let vqa = spec_for(catalog::VQA);
    // conflict pair, second half: VQA denies the pneumothorax
    t.insert(&vqa, json!({"question": CONFLICT_QUESTION}), &[("image", CXR_2)], json!({"answer": "no"}));
    t.insert(
        &vqa,
        json!({"question": "is there a pleural effusion?"}),
        &[("image", CXR_1)],
        json!({"answer": "yes, a moderate right pleural effusion"}),
    );
    t.insert(
        &vqa,
        json!({"question": "is the heart enlarged?"}),
        &[("image", CXR_3)],
        json!({"answer": "yes"}),
    );
    t.set_fallback(catalog::VQA, json!({"answer": "unable to determine"}));

    let grounding = spec_for(catalog::GROUNDING);
    t.insert(
        &grounding,
        json!({"phrase": "pleural effusion"}),
        &[("image", CXR_1)],
        json!({"phrase": "pleural effusion", "x_min": 0.1, "y_min": 0.55, "x_max": 0.45, "y_max": 0.85, "confidence": 0.78}),
    );
    t.insert(
        &grounding,
        json!({"phrase": "pneumothorax"}),
        &[("image", CXR_2)],
        json!({"phrase": "pneumothorax", "x_min": 0.64, "y_min": 0.0, "x_max": 1.0, "y_max": 0.47, "confidence": 0.66}),
    );
    t.set_fallback(
        catalog::GROUNDING,
        json!({"phrase": "", "x_min": 0.0, "y_min": 0.0, "x_max": 1.0, "y_max": 1.0, "confidence": 0.0}),
    );

    let segmentation = spec_for(catalog::SEGMENTATION);
    for image in [CXR_1, CXR_2, CXR_3] {
        for region in SEGMENTATION_REGIONS {
            let (x0, x1, y0, y1) = region_box(image, region);
            t.insert(
                &segmentation,
                json!({"region": region}),
                &[("image", image)],
                segmentation_payload(region, &rect_mask(x0, x1, y0, y1)),
            );
        }
    }
    t.set_fallback(
        catalog::SEGMENTATION,
        segmentation_payload("", &vec![false; (IMAGE_SIZE * IMAGE_SIZE) as usize]),
    );

    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toolkit::registry::check_payload;

    #[test]
    fn images_are_distinct_and_deterministic() {
        let a = build_images();
        let b = build_images();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.png, y.png);
        }
        assert_ne!(a[0].hash, a[1].hash);
        assert_ne!(a[1].hash, a[2].hash);
    }

    #[test]
    fn every_payload_is_schema_valid() {
        let specs = catalog::standard_specs(|_| "http://x.invalid".into());
        let suite = make_fixture_suite();
        for (tool, payload) in suite.payloads() {
            let spec = specs.iter().find(|s| s.name == tool).unwrap();
            assert!(check_payload(spec, payload).is_empty(), "{tool}: {payload}");
        }
    }

    #[test]
    fn rle_runs() {
        assert_eq!(rle_encode(&[true, true, false, true, false, false, true]), "0:2 3:1 6:1");
        assert_eq!(rle_encode(&[false, false]), "");
    }
}
