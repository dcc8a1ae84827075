//! Pre-extracted frame directories.
//!
//! A video is a directory of `frame_%06d.jpg` files numbered densely from 0,
//! optionally accompanied by a `video.json` sidecar `{"fps": .., "video_id": ..}`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{frame_file_name, FrameRef};

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("no frames found in {0}")]
    NoFrames(PathBuf),
    #[error("frame directory {dir} is missing frame {index}")]
    MissingFrame { dir: PathBuf, index: usize },
    #[error("source fps must be positive, got {0}")]
    BadFps(f64),
    #[error("invalid video sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    fps: Option<f64>,
    video_id: Option<String>,
}

pub const SIDECAR_FILE: &str = "video.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSource {
    pub frame_dir: PathBuf,
    pub frame_count: usize,
    pub source_fps: f64,
    pub video_id: String,
}

impl VideoSource {
    /// Opens a frame directory. The sidecar's fps wins over `fallback_fps`;
    /// the video id defaults to the directory name.
    pub fn open(frame_dir: &Path, fallback_fps: f64) -> Result<Self, VideoError> {
        let sidecar_path = frame_dir.join(SIDECAR_FILE);
        let sidecar = if sidecar_path.exists() {
            let text = fs::read_to_string(&sidecar_path)?;
            serde_json::from_str::<Sidecar>(&text).map_err(|e| VideoError::Sidecar {
                path: sidecar_path.clone(),
                message: e.to_string(),
            })?
        } else {
            Sidecar {
                fps: None,
                video_id: None,
            }
        };
        let source_fps = sidecar.fps.unwrap_or(fallback_fps);
        if !(source_fps.is_finite() && source_fps > 0.0) {
            return Err(VideoError::BadFps(source_fps));
        }

        let mut indices = Vec::new();
        for entry in fs::read_dir(frame_dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(idx) = name
                .strip_prefix("frame_")
                .and_then(|s| s.strip_suffix(".jpg"))
                .and_then(|s| s.parse::<usize>().ok())
            {
                indices.push(idx);
            }
        }
        if indices.is_empty() {
            return Err(VideoError::NoFrames(frame_dir.to_path_buf()));
        }
        indices.sort_unstable();
        if let Some(index) = indices
            .iter()
            .enumerate()
            .find(|(i, idx)| i != *idx)
            .map(|(i, _)| i)
        {
            return Err(VideoError::MissingFrame {
                dir: frame_dir.to_path_buf(),
                index,
            });
        }

        let video_id = sidecar.video_id.unwrap_or_else(|| {
            frame_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "video".to_string())
        });
        Ok(Self {
            frame_dir: frame_dir.to_path_buf(),
            frame_count: indices.len(),
            source_fps,
            video_id,
        })
    }

    pub fn frame_ref(&self, index: usize) -> FrameRef {
        FrameRef::source(self.video_id.clone(), index)
    }

    pub fn frame_path(&self, index: usize) -> PathBuf {
        self.frame_dir.join(frame_file_name(index))
    }
}

/// Writes a deterministic synthetic video: a moving bright square over a
/// textured background whose brightness dips for frames in `dark`.
pub fn write_synthetic_video(
    dir: &Path,
    video_id: &str,
    frames: usize,
    fps: f64,
    size: (u32, u32),
    dark: std::ops::Range<usize>,
) -> Result<VideoSource, VideoError> {
    fs::create_dir_all(dir)?;
    let (w, h) = size;
    for i in 0..frames {
        let gain = if dark.contains(&i) { 0.25 } else { 1.0 };
        let sq_x = ((i as u32) * 3) % w.max(1);
        let img = RgbImage::from_fn(w, h, |x, y| {
            let base = ((x * 7 + y * 13 + (i as u32) * 5) % 64) as f64 + 64.0;
            let in_square = x >= sq_x && x < sq_x + w / 4 && y >= h / 3 && y < h / 3 + h / 4;
            let v = if in_square { 230.0 } else { base };
            let v = (v * gain).round() as u8;
            Rgb([v, v.saturating_add(10), v.saturating_sub(10)])
        });
        img.save(dir.join(frame_file_name(i)))
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    let sidecar = Sidecar {
        fps: Some(fps),
        video_id: Some(video_id.to_string()),
    };
    fs::write(
        dir.join(SIDECAR_FILE),
        serde_json::to_string(&sidecar).expect("sidecar serializes"),
    )?;
    VideoSource::open(dir, fps)
}
