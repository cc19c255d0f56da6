//! OCR orchestration: detect text boxes, classify each box's script, pick the
//! majority script and run the matching recognizer.

use std::cmp::Ordering;
use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::media::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Quadrilateral in image coordinates.
pub type Polygon = [Point; 4];

pub fn polygon(coords: [(f64, f64); 4]) -> Polygon {
    coords.map(|(x, y)| Point { x, y })
}

fn top_edge(p: &Polygon) -> f64 {
    p.iter().map(|pt| pt.y).fold(f64::INFINITY, f64::min)
}

fn left_edge(p: &Polygon) -> f64 {
    p.iter().map(|pt| pt.x).fold(f64::INFINITY, f64::min)
}

/// Reading order: top edge ascending, then left edge ascending. Total over
/// all finite and non-finite coordinates.
pub fn reading_order(a: &Polygon, b: &Polygon) -> Ordering {
    top_edge(a)
        .total_cmp(&top_edge(b))
        .then_with(|| left_edge(a).total_cmp(&left_edge(b)))
        .then_with(|| {
            let flat = |p: &Polygon| p.iter().flat_map(|pt| [pt.x, pt.y]).collect::<Vec<_>>();
            flat(a)
                .iter()
                .zip(flat(b).iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Script {
    Latin,
    Chinese,
    Tamil,
    Other,
}

impl Script {
    /// Maps a script-classifier label. Accepts full names and the short codes
    /// common language-classification models emit.
    pub fn from_label(label: &str) -> Script {
        match label.trim().to_ascii_lowercase().as_str() {
            "latin" | "en" | "english" => Script::Latin,
            "chinese" | "ch" | "chinese_cht" | "zh" | "cht" => Script::Chinese,
            "tamil" | "ta" => Script::Tamil,
            _ => Script::Other,
        }
    }
}

/// Scripts that have a dedicated recognizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutedScript {
    Latin,
    Chinese,
    Tamil,
}

impl RoutedScript {
    pub const ALL: [RoutedScript; 3] = [RoutedScript::Latin, RoutedScript::Chinese, RoutedScript::Tamil];

    pub fn as_str(self) -> &'static str {
        match self {
            RoutedScript::Latin => "latin",
            RoutedScript::Chinese => "chinese",
            RoutedScript::Tamil => "tamil",
        }
    }
}

impl fmt::Display for RoutedScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBox {
    pub polygon: Polygon,
    pub script: Script,
    pub text: Option<String>,
    pub confidence: f64,
}

/// Recognizer model identifiers, one per routed script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recognizers {
    pub latin: String,
    pub chinese: String,
    pub tamil: String,
}

impl Default for Recognizers {
    fn default() -> Self {
        Self {
            latin: "latin_PP-OCRv3_rec".into(),
            chinese: "ch_PP-OCRv4_rec".into(),
            tamil: "ta_PP-OCRv4_rec".into(),
        }
    }
}

impl Recognizers {
    pub fn for_script(&self, script: RoutedScript) -> &str {
        match script {
            RoutedScript::Latin => &self.latin,
            RoutedScript::Chinese => &self.chinese,
            RoutedScript::Tamil => &self.tamil,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrOutcome {
    pub boxes: Vec<TextBox>,
    pub majority_script: RoutedScript,
    /// True when unrouted scripts outnumbered every routed one; such text is
    /// treated as English and skips language detection.
    pub unrouted_majority: bool,
    pub routed_model: String,
    pub joined_text: String,
    pub has_text: bool,
}

impl OcrOutcome {
    pub fn empty(recognizers: &Recognizers) -> Self {
        Self {
            boxes: Vec::new(),
            majority_script: RoutedScript::Latin,
            unrouted_majority: false,
            routed_model: recognizers.latin.clone(),
            joined_text: String::new(),
            has_text: false,
        }
    }
}

/// Stage of an OCR backend call. On the wire: `detect`, `classify-script`,
/// `recognize:<script>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OcrStage {
    Detect,
    ClassifyScript,
    Recognize(RoutedScript),
}

impl OcrStage {
    pub fn wire_name(self) -> String {
        match self {
            OcrStage::Detect => "detect".into(),
            OcrStage::ClassifyScript => "classify-script".into(),
            OcrStage::Recognize(s) => format!("recognize:{s}"),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "detect" => Some(OcrStage::Detect),
            "classify-script" => Some(OcrStage::ClassifyScript),
            _ => {
                let script = name.strip_prefix("recognize:")?;
                RoutedScript::ALL
                    .into_iter()
                    .find(|s| s.as_str() == script)
                    .map(OcrStage::Recognize)
            }
        }
    }
}

impl Serialize for OcrStage {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.wire_name())
    }
}

impl<'de> Deserialize<'de> for OcrStage {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        OcrStage::parse(&raw).ok_or_else(|| serde::de::Error::custom(format!("unknown OCR stage {raw:?}")))
    }
}

/// One record of an OCR backend reply. `label` is empty for detection, the
/// script name for classification and the recognized text for recognition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrRecord {
    pub polygon: Polygon,
    #[serde(default)]
    pub label: String,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct OcrRequest<'a> {
    pub image: &'a Image,
    pub stage: OcrStage,
    /// Boxes from detection; empty for the detect stage.
    pub boxes: &'a [Polygon],
    /// Recognizer model id for recognize stages.
    pub model: Option<&'a str>,
}

#[async_trait]
pub trait OcrClient: Send + Sync {
    fn name(&self) -> &str {
        "ocr"
    }

    async fn call(&self, request: OcrRequest<'_>) -> Result<Vec<OcrRecord>, BackendError>;

    async fn ping(&self) -> Result<(), BackendError>;
}

fn check_confidence(backend: &str, records: &[OcrRecord]) -> Result<(), BackendError> {
    match records
        .iter()
        .find(|r| !(0.0..=1.0).contains(&r.confidence))
    {
        Some(bad) => Err(BackendError::malformed(
            backend,
            format!("confidence {} outside [0, 1]", bad.confidence),
        )),
        None => Ok(()),
    }
}

/// Detection followed by per-box script classification. Text is left unset.
pub async fn detect_boxes(image: &Image, client: &dyn OcrClient) -> Result<Vec<TextBox>, BackendError> {
    let detected = client
        .call(OcrRequest {
            image,
            stage: OcrStage::Detect,
            boxes: &[],
            model: None,
        })
        .await?;
    check_confidence(client.name(), &detected)?;
    if detected.is_empty() {
        return Ok(Vec::new());
    }
    let polygons: Vec<Polygon> = detected.iter().map(|r| r.polygon).collect();
    let scripts = client
        .call(OcrRequest {
            image,
            stage: OcrStage::ClassifyScript,
            boxes: &polygons,
            model: None,
        })
        .await?;
    if scripts.len() != detected.len() {
        return Err(BackendError::malformed(
            client.name(),
            format!(
                "script classification returned {} labels for {} boxes",
                scripts.len(),
                detected.len()
            ),
        ));
    }
    Ok(detected
        .into_iter()
        .zip(scripts)
        .map(|(det, cls)| TextBox {
            polygon: det.polygon,
            script: Script::from_label(&cls.label),
            text: None,
            confidence: det.confidence,
        })
        .collect())
}

/// Per-script box counts `[latin, chinese, tamil, other]`.
pub fn script_counts(boxes: &[TextBox]) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for b in boxes {
        let slot = match b.script {
            Script::Latin => 0,
            Script::Chinese => 1,
            Script::Tamil => 2,
            Script::Other => 3,
        };
        counts[slot] += 1;
    }
    counts
}

/// Majority vote over box scripts. Ties go to Latin, then Chinese, then
/// Tamil. If unrouted scripts strictly outnumber every routed script, or
/// there are no boxes, the answer is Latin (the second field is then true
/// for the unrouted case).
pub fn majority_vote(boxes: &[TextBox]) -> (RoutedScript, bool) {
    let [latin, chinese, tamil, other] = script_counts(boxes);
    let mut best = (RoutedScript::Latin, latin);
    for (script, count) in [(RoutedScript::Chinese, chinese), (RoutedScript::Tamil, tamil)] {
        if count > best.1 {
            best = (script, count);
        }
    }
    if other > best.1 {
        (RoutedScript::Latin, true)
    } else {
        (best.0, false)
    }
}

pub fn majority_script(boxes: &[TextBox]) -> RoutedScript {
    majority_vote(boxes).0
}

/// Runs the routed recognizer over the detected boxes and joins the text in
/// reading order, one box per line.
pub async fn recognize(
    image: &Image,
    boxes: Vec<TextBox>,
    script: RoutedScript,
    recognizers: &Recognizers,
    client: &dyn OcrClient,
) -> Result<OcrOutcome, BackendError> {
    let unrouted_majority = majority_vote(&boxes).1 && script == RoutedScript::Latin;
    let routed_model = recognizers.for_script(script).to_string();
    if boxes.is_empty() {
        return Ok(OcrOutcome {
            routed_model,
            majority_script: script,
            ..OcrOutcome::empty(recognizers)
        });
    }
    let polygons: Vec<Polygon> = boxes.iter().map(|b| b.polygon).collect();
    let recognized = client
        .call(OcrRequest {
            image,
            stage: OcrStage::Recognize(script),
            boxes: &polygons,
            model: Some(&routed_model),
        })
        .await?;
    check_confidence(client.name(), &recognized)?;
    if recognized.len() != boxes.len() {
        return Err(BackendError::malformed(
            client.name(),
            format!(
                "recognizer returned {} results for {} boxes",
                recognized.len(),
                boxes.len()
            ),
        ));
    }
    let mut boxes: Vec<TextBox> = boxes
        .into_iter()
        .zip(recognized)
        .map(|(b, r)| {
            let text = r.label.trim().to_string();
            TextBox {
                text: (!text.is_empty()).then_some(text),
                ..b
            }
        })
        .collect();
    boxes.sort_by(|a, b| reading_order(&a.polygon, &b.polygon));
    let joined_text = boxes
        .iter()
        .filter_map(|b| b.text.as_deref())
        .collect::<Vec<_>>()
        .join("\n");
    Ok(OcrOutcome {
        has_text: !joined_text.is_empty(),
        joined_text,
        boxes,
        majority_script: script,
        unrouted_majority,
        routed_model,
    })
}

/// Detect, vote, recognize.
pub async fn run_ocr(
    image: &Image,
    recognizers: &Recognizers,
    client: &dyn OcrClient,
) -> Result<OcrOutcome, BackendError> {
    let boxes = detect_boxes(image, client).await?;
    let script = majority_script(&boxes);
    recognize(image, boxes, script, recognizers, client).await
}
