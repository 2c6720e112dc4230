//! The seven chest X-ray tool contracts. Real model servers and the mock
//! fleet serve the same contracts; only endpoints differ.

use super::spec::{Category, ParamSpec, ParamType, ToolSpec, DEFAULT_TOOL_TIMEOUT_MS};

pub const CLASSIFIER: &str = "classifier";
pub const REPORT_GENERATION: &str = "report_generation";
pub const VQA: &str = "vqa";
pub const SEGMENTATION: &str = "segmentation";
pub const GROUNDING: &str = "grounding";
pub const GENERATION: &str = "generation";
pub const DICOM_PROCESSOR: &str = "dicom_processor";

/// Tool names in registration order.
pub const TOOL_NAMES: [&str; 7] = [
    CLASSIFIER,
    REPORT_GENERATION,
    VQA,
    SEGMENTATION,
    GROUNDING,
    GENERATION,
    DICOM_PROCESSOR,
];

/// Output classes of the pathology classifier.
pub const PATHOLOGIES: [&str; 18] = [
    "atelectasis",
    "consolidation",
    "infiltration",
    "pneumothorax",
    "edema",
    "emphysema",
    "fibrosis",
    "effusion",
    "pneumonia",
    "pleural_thickening",
    "cardiomegaly",
    "nodule",
    "mass",
    "hernia",
    "lung_lesion",
    "fracture",
    "lung_opacity",
    "enlarged_cardiomediastinum",
];

pub const SEGMENTATION_REGIONS: [&str; 3] = ["left_lung", "right_lung", "heart"];

fn image(name: &str) -> ParamSpec {
    ParamSpec::new(name, ParamType::ImageRef, true)
}

fn text(name: &str) -> ParamSpec {
    ParamSpec::new(name, ParamType::Text, true)
}

fn unit(name: &str) -> ParamSpec {
    ParamSpec::new(name, ParamType::Number, true).within(0.0, 1.0)
}

fn spec(
    name: &str,
    category: Category,
    description: &str,
    inputs: Vec<ParamSpec>,
    outputs: Vec<ParamSpec>,
    endpoint: String,
) -> ToolSpec {
    ToolSpec {
        name: name.to_string(),
        description: description.to_string(),
        category,
        inputs,
        outputs,
        endpoint,
        timeout_ms: DEFAULT_TOOL_TIMEOUT_MS,
        cacheable: category != Category::Generation,
    }
}

/// Build the seven standard specs, asking `endpoint_for` for each tool's base URL.
pub fn standard_specs(endpoint_for: impl Fn(&str) -> String) -> Vec<ToolSpec> {
    vec![
        spec(
            CLASSIFIER,
            Category::Classification,
            "Predicts probabilities for 18 chest X-ray pathology classes (DenseNet-121 classifier).",
            vec![image("image").describe("chest X-ray to classify")],
            PATHOLOGIES.iter().map(|p| unit(p)).collect(),
            endpoint_for(CLASSIFIER),
        ),
        spec(
            REPORT_GENERATION,
            Category::ReportGeneration,
            "Writes a radiology report with findings and impression for a chest X-ray.",
            vec![image("image")],
            vec![text("findings"), text("impression")],
            endpoint_for(REPORT_GENERATION),
        ),
        spec(
            VQA,
            Category::Vqa,
            "Answers a free-form question about a chest X-ray.",
            vec![
                image("image"),
                text("question").describe("question about the image"),
            ],
            vec![text("answer")],
            endpoint_for(VQA),
        ),
        spec(
            SEGMENTATION,
            Category::Segmentation,
            "Segments an anatomical region; returns a run-length encoded row-major mask and its pixel count.",
            vec![
                image("image"),
                ParamSpec::new(
                    "region",
                    ParamType::Enum(SEGMENTATION_REGIONS.iter().map(|s| s.to_string()).collect()),
                    true,
                ),
            ],
            vec![
                text("region"),
                ParamSpec::new("width", ParamType::Number, true),
                ParamSpec::new("height", ParamType::Number, true),
                text("mask_rle").describe("space-separated start:length runs over row-major pixels"),
                ParamSpec::new("pixel_count", ParamType::Number, true),
            ],
            endpoint_for(SEGMENTATION),
        ),
        spec(
            GROUNDING,
            Category::Grounding,
            "Localizes a textual finding as a bounding box in normalized [0,1] image coordinates.",
            vec![image("image"), text("phrase")],
            vec![
                text("phrase"),
                unit("x_min"),
                unit("y_min"),
                unit("x_max"),
                unit("y_max"),
                unit("confidence"),
            ],
            endpoint_for(GROUNDING),
        ),
        spec(
            GENERATION,
            Category::Generation,
            "Synthesizes a chest X-ray image from a text description. Sampling makes outputs non-cacheable.",
            vec![text("prompt")],
            vec![
                ParamSpec::new("image", ParamType::ImageRef, true),
                text("prompt"),
            ],
            endpoint_for(GENERATION),
        ),
        spec(
            DICOM_PROCESSOR,
            Category::Utility,
            "Converts a DICOM file to an 8-bit grayscale PNG and reports its dimensions.",
            vec![image("file")],
            vec![
                ParamSpec::new("image", ParamType::ImageRef, true),
                ParamSpec::new("rows", ParamType::Number, true),
                ParamSpec::new("columns", ParamType::Number, true),
                text("photometric"),
            ],
            endpoint_for(DICOM_PROCESSOR),
        ),
    ]
}
