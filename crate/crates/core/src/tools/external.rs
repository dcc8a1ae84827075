//! Clients for detection, web search and super-resolution services, plus
//! offline stand-ins.

use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use image::imageops::{self, FilterType};
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Params, PixelOp, ToolError};
use crate::frames::FrameRef;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Source frame index in the video.
    pub frame_index: usize,
    pub category: String,
    /// `[x, y, width, height]` in pixels.
    pub bbox: [f64; 4],
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    #[serde(alias = "content")]
    pub snippet: String,
    #[serde(default)]
    pub url: String,
}

pub trait Detector: Send + Sync {
    fn detect(
        &self,
        frames: &[(FrameRef, Arc<RgbImage>)],
        categories: &[String],
    ) -> Result<Vec<Detection>, ToolError>;
}

pub trait WebSearch: Send + Sync {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, ToolError>;
}

pub trait SuperResolver: Send + Sync {
    fn upscale(&self, img: &RgbImage, scale: u32) -> Result<RgbImage, ToolError>;
}

/// Drops detections whose box leaves the frame, has no area, or whose
/// confidence is outside `[0, 1]`.
pub fn validate_detections(
    detections: Vec<Detection>,
    frames: &[(FrameRef, Arc<RgbImage>)],
) -> Vec<Detection> {
    detections
        .into_iter()
        .filter(|d| {
            let Some((_, img)) = frames.iter().find(|(r, _)| r.index() == d.frame_index) else {
                tracing::warn!(
                    frame = d.frame_index,
                    "detection for a frame outside the request"
                );
                return false;
            };
            let [x, y, w, h] = d.bbox;
            let ok = x >= 0.0
                && y >= 0.0
                && w > 0.0
                && h > 0.0
                && x + w <= img.width() as f64
                && y + h <= img.height() as f64
                && (0.0..=1.0).contains(&d.confidence);
            if !ok {
                tracing::warn!(?d, "dropping invalid detection");
            }
            ok
        })
        .collect()
}

pub fn object_detect(
    frames: &[(FrameRef, Arc<RgbImage>)],
    categories: &[String],
    client: &dyn Detector,
) -> Result<Vec<Detection>, ToolError> {
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    Ok(validate_detections(
        client.detect(frames, categories)?,
        frames,
    ))
}

/// Searches and condenses the hits to one `- title: snippet` line each.
pub fn web_search(query: &str, client: &dyn WebSearch) -> Result<String, ToolError> {
    let hits = client.search(query)?;
    let mut out = format!("web_search \"{query}\":");
    if hits.is_empty() {
        out.push_str(" no results");
    }
    for hit in hits {
        let snippet = hit.snippet.split_whitespace().collect::<Vec<_>>().join(" ");
        out.push_str(&format!("\n- {}: {}", hit.title.trim(), snippet));
    }
    Ok(out)
}

pub(super) struct SuperResolveOp(pub Arc<dyn SuperResolver>);

impl PixelOp for SuperResolveOp {
    fn apply(&self, img: &RgbImage, params: &Params) -> Result<RgbImage, ToolError> {
        self.0.upscale(img, params.usize("scale") as u32)
    }
}

/// Bicubic upscaling used when no super-resolution service is configured.
#[derive(Debug, Clone, Copy, Default)]
pub struct BicubicSuperResolver;

impl SuperResolver for BicubicSuperResolver {
    fn upscale(&self, img: &RgbImage, scale: u32) -> Result<RgbImage, ToolError> {
        Ok(imageops::resize(
            img,
            img.width() * scale,
            img.height() * scale,
            FilterType::CatmullRom,
        ))
    }
}

#[derive(Debug, Deserialize)]
struct StubDetection {
    /// Position within the requested frames; the reported index is that frame's.
    frame_offset: usize,
    category: String,
    bbox: [f64; 4],
    confidence: f64,
}

/// Replays fixed detections from a JSON fixture
/// `{"detections": [{"frame_offset", "category", "bbox", "confidence"}]}`.
/// Only detections whose category was requested are returned.
#[derive(Debug, Default)]
pub struct StubDetector {
    detections: Vec<StubDetection>,
}

impl StubDetector {
    pub fn from_json(text: &str) -> Result<Self, ToolError> {
        #[derive(Deserialize)]
        struct Fixture {
            #[serde(default)]
            detections: Vec<StubDetection>,
        }
        let f: Fixture = serde_json::from_str(text)
            .map_err(|e| ToolError::Failed(format!("detection fixture: {e}")))?;
        Ok(Self {
            detections: f.detections,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ToolError> {
        Self::from_json(&read(path)?)
    }
}

impl Detector for StubDetector {
    fn detect(
        &self,
        frames: &[(FrameRef, Arc<RgbImage>)],
        categories: &[String],
    ) -> Result<Vec<Detection>, ToolError> {
        Ok(self
            .detections
            .iter()
            .filter(|d| {
                categories.is_empty()
                    || categories
                        .iter()
                        .any(|c| c.eq_ignore_ascii_case(&d.category))
            })
            .filter_map(|d| {
                frames.get(d.frame_offset).map(|(r, _)| Detection {
                    frame_index: r.index(),
                    category: d.category.clone(),
                    bbox: d.bbox,
                    confidence: d.confidence,
                })
            })
            .collect())
    }
}

/// Returns the same hits for every query, from `{"results": [...]}`.
#[derive(Debug, Default)]
pub struct StubSearch {
    results: Vec<SearchHit>,
}

impl StubSearch {
    pub fn new(results: Vec<SearchHit>) -> Self {
        Self { results }
    }

    pub fn from_json(text: &str) -> Result<Self, ToolError> {
        #[derive(Deserialize)]
        struct Fixture {
            #[serde(default)]
            results: Vec<SearchHit>,
        }
        let f: Fixture = serde_json::from_str(text)
            .map_err(|e| ToolError::Failed(format!("search fixture: {e}")))?;
        Ok(Self { results: f.results })
    }

    pub fn from_file(path: &Path) -> Result<Self, ToolError> {
        Self::from_json(&read(path)?)
    }
}

impl WebSearch for StubSearch {
    fn search(&self, _query: &str) -> Result<Vec<SearchHit>, ToolError> {
        Ok(self.results.clone())
    }
}

fn read(path: &Path) -> Result<String, ToolError> {
    std::fs::read_to_string(path).map_err(|e| ToolError::Failed(format!("{}: {e}", path.display())))
}

fn encode_png(img: &RgbImage) -> Result<String, ToolError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| ToolError::Failed(e.to_string()))?;
    Ok(B64.encode(buf.into_inner()))
}

struct JsonService {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl JsonService {
    fn new(endpoint: String, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("http client builds");
        Self {
            endpoint,
            api_key,
            client,
        }
    }

    fn post(&self, body: &Value) -> Result<Value, ToolError> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ToolError::Network(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ToolError::Network(format!(
                "{} returned {status}",
                self.endpoint
            )));
        }
        resp.json().map_err(|e| ToolError::Network(e.to_string()))
    }
}

/// Posts `{"categories", "images": [{"frame_index", "image_b64"}]}` and
/// reads `{"detections": [Detection]}`.
pub struct HttpDetector(JsonService);

impl HttpDetector {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        Self(JsonService::new(endpoint.into(), api_key))
    }
}

impl Detector for HttpDetector {
    fn detect(
        &self,
        frames: &[(FrameRef, Arc<RgbImage>)],
        categories: &[String],
    ) -> Result<Vec<Detection>, ToolError> {
        let images = frames
            .iter()
            .map(|(r, img)| Ok(json!({"frame_index": r.index(), "image_b64": encode_png(img)?})))
            .collect::<Result<Vec<_>, ToolError>>()?;
        let reply = self
            .0
            .post(&json!({"categories": categories, "images": images}))?;
        serde_json::from_value(
            reply
                .get("detections")
                .cloned()
                .unwrap_or(Value::Array(Vec::new())),
        )
        .map_err(|e| ToolError::Network(format!("malformed detections: {e}")))
    }
}

/// Posts `{"query", "max_results"}` and reads `{"results": [{title, content, url}]}`.
pub struct HttpSearch {
    service: JsonService,
    max_results: usize,
}

impl HttpSearch {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, max_results: usize) -> Self {
        Self {
            service: JsonService::new(endpoint.into(), api_key),
            max_results,
        }
    }
}

impl WebSearch for HttpSearch {
    fn search(&self, query: &str) -> Result<Vec<SearchHit>, ToolError> {
        let reply = self
            .service
            .post(&json!({"query": query, "max_results": self.max_results}))?;
        serde_json::from_value(
            reply
                .get("results")
                .cloned()
                .unwrap_or(Value::Array(Vec::new())),
        )
        .map_err(|e| ToolError::Network(format!("malformed search results: {e}")))
    }
}

/// Posts `{"scale", "image_b64"}` (PNG) and reads `{"image_b64"}`.
pub struct HttpSuperResolver(JsonService);

impl HttpSuperResolver {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        Self(JsonService::new(endpoint.into(), api_key))
    }
}

impl SuperResolver for HttpSuperResolver {
    fn upscale(&self, img: &RgbImage, scale: u32) -> Result<RgbImage, ToolError> {
        let reply = self
            .0
            .post(&json!({"scale": scale, "image_b64": encode_png(img)?}))?;
        let encoded = reply
            .get("image_b64")
            .and_then(Value::as_str)
            .ok_or_else(|| ToolError::Network("reply lacks image_b64".into()))?;
        let bytes = B64
            .decode(encoded)
            .map_err(|e| ToolError::Network(format!("bad base64: {e}")))?;
        let out = image::load_from_memory(&bytes)
            .map_err(|e| ToolError::Network(format!("bad image: {e}")))?
            .to_rgb8();
        if out.dimensions() != (img.width() * scale, img.height() * scale) {
            return Err(ToolError::Network(format!(
                "super-resolved frame is {:?}, expected {}x scale",
                out.dimensions(),
                scale
            )));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize) -> Vec<(FrameRef, Arc<RgbImage>)> {
        (0..n)
            .map(|i| {
                (
                    FrameRef::source("v", 10 + i),
                    Arc::new(RgbImage::new(64, 48)),
                )
            })
            .collect()
    }

    #[test]
    fn stub_detector_reports_source_indices_and_filters() {
        let stub = StubDetector::from_json(
            r#"{"detections": [
                {"frame_offset": 1, "category": "fire", "bbox": [1, 2, 10, 10], "confidence": 0.9},
                {"frame_offset": 0, "category": "person", "bbox": [0, 0, 5, 5], "confidence": 0.5},
                {"frame_offset": 0, "category": "fire", "bbox": [60, 0, 10, 10], "confidence": 0.7}
            ]}"#,
        )
        .unwrap();
        let got = object_detect(&frames(2), &["fire".to_string()], &stub).unwrap();
        assert_eq!(got.len(), 1, "out-of-frame box must be dropped");
        assert_eq!(got[0].frame_index, 11);
        assert_eq!(got[0].category, "fire");
    }

    #[test]
    fn validation_rejects_bad_confidence_and_empty_boxes() {
        let f = frames(1);
        let d = |bbox, confidence| Detection {
            frame_index: 10,
            category: "x".into(),
            bbox,
            confidence,
        };
        let kept = validate_detections(
            vec![
                d([0.0, 0.0, 64.0, 48.0], 1.0),
                d([0.0, 0.0, 0.0, 4.0], 0.5),
                d([1.0, 1.0, 2.0, 2.0], 1.5),
            ],
            &f,
        );
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn search_summary_has_one_bullet_per_hit() {
        let stub = StubSearch::from_json(
            r#"{"results": [
                {"title": "A", "content": "first\nsnippet"},
                {"title": "B", "snippet": "second", "url": "http://b"},
                {"title": "C", "content": "third"}
            ]}"#,
        )
        .unwrap();
        let text = web_search("what is arson", &stub).unwrap();
        let bullets: Vec<_> = text.lines().filter(|l| l.starts_with("- ")).collect();
        assert_eq!(bullets, ["- A: first snippet", "- B: second", "- C: third"]);
    }

    #[test]
    fn bicubic_super_resolution_scales() {
        let img = RgbImage::new(7, 5);
        assert_eq!(
            BicubicSuperResolver.upscale(&img, 4).unwrap().dimensions(),
            (28, 20)
        );
    }
}
