//! Frame identifiers and the shared in-memory frame cache.
//!
//! Every image that flows through the engine (source frames, preprocessed
//! frames, tool outputs) is addressed by a [`FrameRef`]. Derived frames
//! carry the chain of operations that produced them in their variant suffix,
//! so a ref always names exactly one pixel buffer.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("unknown video id `{0}`")]
    UnknownVideo(String),
    #[error("frame `{0}` is not cached and has no source on disk")]
    Missing(FrameRef),
    #[error("failed to decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to encode frame `{0}`")]
    Encode(FrameRef),
    #[error("malformed frame ref `{0}`")]
    BadRef(String),
}

/// Identifies a frame: `<video_id>/<index:06>[~op[params]]*`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct FrameRef {
    video_id: String,
    index: usize,
    variant: String,
}

impl FrameRef {
    pub fn source(video_id: impl Into<String>, index: usize) -> Self {
        Self {
            video_id: video_id.into(),
            index,
            variant: String::new(),
        }
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    /// Index of the source frame this ref was derived from.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn is_source(&self) -> bool {
        self.variant.is_empty()
    }

    pub fn variant(&self) -> &str {
        &self.variant
    }

    /// Ref for the result of applying `op` (with its rendered params) to this frame.
    pub fn derive(&self, op: &str, params: &str) -> Self {
        let mut variant = self.variant.clone();
        variant.push('~');
        variant.push_str(op);
        if !params.is_empty() {
            variant.push('[');
            variant.push_str(params);
            variant.push(']');
        }
        Self {
            video_id: self.video_id.clone(),
            index: self.index,
            variant,
        }
    }
}

impl fmt::Display for FrameRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{:06}{}", self.video_id, self.index, self.variant)
    }
}

impl FromStr for FrameRef {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FrameError::BadRef(s.to_string());
        let slash = s.rfind('/').ok_or_else(bad)?;
        let (video_id, rest) = (&s[..slash], &s[slash + 1..]);
        if video_id.is_empty() {
            return Err(bad());
        }
        let digits_end = rest.find('~').unwrap_or(rest.len());
        let index = rest[..digits_end].parse().map_err(|_| bad())?;
        Ok(Self {
            video_id: video_id.to_string(),
            index,
            variant: rest[digits_end..].to_string(),
        })
    }
}

impl From<FrameRef> for String {
    fn from(r: FrameRef) -> Self {
        r.to_string()
    }
}

impl TryFrom<String> for FrameRef {
    type Error = FrameError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// File name of source frame `index` inside a frame directory.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.jpg")
}

/// Shared frame cache. Source frames load lazily from their registered
/// directory; derived frames exist only once inserted.
#[derive(Debug, Default)]
pub struct FrameStore {
    sources: RwLock<HashMap<String, PathBuf>>,
    cache: RwLock<HashMap<FrameRef, Arc<RgbImage>>>,
    captions: RwLock<HashMap<FrameRef, String>>,
}

impl FrameStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_source(&self, video_id: &str, frame_dir: &Path) {
        self.sources
            .write()
            .unwrap()
            .insert(video_id.to_string(), frame_dir.to_path_buf());
    }

    pub fn get(&self, frame: &FrameRef) -> Result<Arc<RgbImage>, FrameError> {
        if let Some(img) = self.cache.read().unwrap().get(frame) {
            return Ok(Arc::clone(img));
        }
        if !frame.is_source() {
            return Err(FrameError::Missing(frame.clone()));
        }
        let dir = self
            .sources
            .read()
            .unwrap()
            .get(frame.video_id())
            .cloned()
            .ok_or_else(|| FrameError::UnknownVideo(frame.video_id().to_string()))?;
        let path = dir.join(frame_file_name(frame.index()));
        if !path.exists() {
            return Err(FrameError::Missing(frame.clone()));
        }
        let img = image::open(&path)
            .map_err(|source| FrameError::Decode { path, source })?
            .to_rgb8();
        let img = Arc::new(img);
        self.cache
            .write()
            .unwrap()
            .insert(frame.clone(), Arc::clone(&img));
        Ok(img)
    }

    pub fn insert(&self, frame: FrameRef, img: RgbImage) -> Arc<RgbImage> {
        let img = Arc::new(img);
        self.cache.write().unwrap().insert(frame, Arc::clone(&img));
        img
    }

    pub fn contains(&self, frame: &FrameRef) -> bool {
        self.cache.read().unwrap().contains_key(frame)
    }

    /// JPEG encoding of a frame, used for model attachments.
    pub fn jpeg_bytes(&self, frame: &FrameRef) -> Result<Vec<u8>, FrameError> {
        let img = self.get(frame)?;
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Jpeg)
            .map_err(|_| FrameError::Encode(frame.clone()))?;
        Ok(buf.into_inner())
    }

    pub fn set_caption(&self, frame: &FrameRef, caption: impl Into<String>) {
        self.captions
            .write()
            .unwrap()
            .insert(frame.clone(), caption.into());
    }

    pub fn caption(&self, frame: &FrameRef) -> Option<String> {
        self.captions.read().unwrap().get(frame).cloned()
    }

    /// Drops cached pixels of `video_id` except for `keep`. Source frames can
    /// be reloaded later; dropped derived frames are gone.
    pub fn retain_video(&self, video_id: &str, keep: &HashSet<FrameRef>) {
        self.cache
            .write()
            .unwrap()
            .retain(|r, _| r.video_id() != video_id || keep.contains(r));
    }

    /// Forgets everything about a finished video.
    pub fn release_video(&self, video_id: &str) {
        self.cache
            .write()
            .unwrap()
            .retain(|r, _| r.video_id() != video_id);
        self.captions
            .write()
            .unwrap()
            .retain(|r, _| r.video_id() != video_id);
        self.sources.write().unwrap().remove(video_id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ref_round_trips_through_string() {
        let r = FrameRef::source("cam/01", 42).derive("zoom", "factor=2");
        let s = r.to_string();
        assert_eq!(s, "cam/01/000042~zoom[factor=2]");
        assert_eq!(s.parse::<FrameRef>().unwrap(), r);
        assert_eq!(r.index(), 42);
        assert!(!r.is_source());
    }

    #[test]
    fn rejects_malformed_refs() {
        assert!("no-slash".parse::<FrameRef>().is_err());
        assert!("/000001".parse::<FrameRef>().is_err());
        assert!("v/abc".parse::<FrameRef>().is_err());
    }

    #[test]
    fn derived_frames_must_be_inserted() {
        let store = FrameStore::new();
        let r = FrameRef::source("v", 0).derive("brighten", "");
        assert!(matches!(store.get(&r), Err(FrameError::Missing(_))));
        store.insert(r.clone(), RgbImage::new(2, 2));
        assert_eq!(store.get(&r).unwrap().dimensions(), (2, 2));
    }

    #[test]
    fn retain_keeps_only_listed_frames_of_the_video() {
        let store = FrameStore::new();
        let a = FrameRef::source("v", 0).derive("x", "");
        let b = FrameRef::source("v", 1).derive("x", "");
        let c = FrameRef::source("w", 0).derive("x", "");
        for r in [&a, &b, &c] {
            store.insert(r.clone(), RgbImage::new(1, 1));
        }
        store.retain_video("v", &HashSet::from([a.clone()]));
        assert!(store.contains(&a));
        assert!(!store.contains(&b));
        assert!(store.contains(&c));
    }
}
