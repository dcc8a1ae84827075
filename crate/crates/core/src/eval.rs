//! Frame-level evaluation: score expansion, smoothing, ROC AUC, AP,
//! annotation loading and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::to_canonical_json;

pub const DEFAULT_SMOOTH_WINDOW: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("clip scores do not cover the video: {0}")]
    CoverageGap(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("labels contain no positives")]
    NoPositives,
    #[error("{len_labels} labels but {len_scores} scores")]
    LengthMismatch {
        len_labels: usize,
        len_scores: usize,
    },
    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error("video `{video_id}`: range {start}..={end} outside 0..{frames}")]
    RangeOutOfBounds {
        video_id: String,
        start: usize,
        end: usize,
        frames: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Gives every source frame the score of the clip whose sampled span holds
/// it. Clip `t` owns frames `[t·s·stride, (t+1)·s·stride)`; frames after the
/// last clip inherit its score.
pub fn expand_scores(
    clip_scores: &[f64],
    n: usize,
    stride: usize,
    s: usize,
) -> Result<Vec<f64>, EvalError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let Some(&last) = clip_scores.last() else {
        return Err(EvalError::CoverageGap(format!("no clips for {n} frames")));
    };
    let span = stride.max(1) * s.max(1);
    if (clip_scores.len() - 1) * span >= n {
        return Err(EvalError::CoverageGap(format!(
            "{} clips of span {span} overrun {n} frames",
            clip_scores.len()
        )));
    }
    Ok((0..n)
        .map(|i| clip_scores.get(i / span).copied().unwrap_or(last))
        .collect())
}

/// Centered mean filter; windows are truncated at the ends. An even window
/// reaches one frame further forward than back.
pub fn smooth(scores: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let (back, fwd) = ((w - 1) / 2, w / 2);
    (0..scores.len())
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + fwd).min(scores.len() - 1);
            let sum: f64 = scores[lo..=hi].iter().sum();
            sum / (hi - lo + 1) as f64
        })
        .collect()
}

fn check_lengths(labels: &[u8], scores: &[f64]) -> Result<(), EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch {
            len_labels: labels.len(),
            len_scores: scores.len(),
        });
    }
    Ok(())
}

/// Mann–Whitney estimate of P(positive outranks negative), ties counting ½,
/// from mid-ranks.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<f64, EvalError> {
    check_lengths(labels, scores)?;
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps mid-ranks integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].total_cmp(&scores[order[i]]).is_eq() {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] != 0).count() as u128;
        rank_sum2 += mid2 * tied_pos;
        i = j + 1;
    }
    let (p, q) = (pos as u128, neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

/// Mean precision at the rank of each positive, ranking by descending score
/// with ties kept in input order.
pub fn average_precision(labels: &[u8], scores: &[f64]) -> Result<f64, EvalError> {
    check_lengths(labels, scores)?;
    let pos = labels.iter().filter(|&&l| l != 0).count();
    if pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] != 0 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationFormat {
    CanonicalCsv,
    UcfTemporalTxt,
}

impl AnnotationFormat {
    /// `.csv` files are canonical; anything else is read as UCF text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::CanonicalCsv,
            _ => Self::UcfTemporalTxt,
        }
    }
}

impl FromStr for AnnotationFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "canonical_csv" | "csv" => Ok(Self::CanonicalCsv),
            "ucf_temporal_txt" | "ucf" => Ok(Self::UcfTemporalTxt),
            other => Err(format!("unknown annotation format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabels {
    pub video_id: String,
    pub labels: Vec<u8>,
}

/// Inclusive anomalous frame ranges per video.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Annotations {
    ranges: BTreeMap<String, Vec<(usize, usize)>>,
}

fn video_key(name: &str) -> &str {
    match name.rsplit_once('.') {
        Some((stem, ext))
            if !stem.is_empty()
                && ext.chars().all(|c| c.is_ascii_alphanumeric())
                && ext.len() <= 4 =>
        {
            stem
        }
        _ => name,
    }
}

impl Annotations {
    pub fn parse(text: &str, format: AnnotationFormat, source: &str) -> Result<Self, EvalError> {
        let mut ranges: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
        let bad = |line: usize, message: String| EvalError::MalformedLine {
            path: source.to_string(),
            line,
            message,
        };
        let number = |line: usize, field: &str| -> Result<i64, EvalError> {
            field
                .trim()
                .parse::<i64>()
                .map_err(|_| bad(line, format!("`{field}` is not an integer")))
        };
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match format {
                AnnotationFormat::CanonicalCsv => {
                    if line_no == 1 && line.replace(' ', "") == "video_id,start_frame,end_frame" {
                        continue;
                    }
                    let fields: Vec<&str> = line.split(',').collect();
                    if fields.len() != 3 {
                        return Err(bad(
                            line_no,
                            format!("expected 3 fields, found {}", fields.len()),
                        ));
                    }
                    let video = fields[0].trim();
                    let entry = ranges.entry(video_key(video).to_string()).or_default();
                    let (start, end) = (number(line_no, fields[1])?, number(line_no, fields[2])?);
                    if start < 0 || end < start {
                        return Err(bad(line_no, format!("invalid range {start}..={end}")));
                    }
                    entry.push((start as usize, end as usize));
                }
                AnnotationFormat::UcfTemporalTxt => {
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    if fields.len() < 4 || !fields.len().is_multiple_of(2) {
                        return Err(bad(
                            line_no,
                            "expected `<video> <class> <start> <end> ...`".into(),
                        ));
                    }
                    let entry = ranges.entry(video_key(fields[0]).to_string()).or_default();
                    for pair in fields[2..].chunks(2) {
                        let (start, end) = (number(line_no, pair[0])?, number(line_no, pair[1])?);
                        if start == -1 && end == -1 {
                            continue;
                        }
                        if start < 0 || end < start {
                            return Err(bad(line_no, format!("invalid range {start}..={end}")));
                        }
                        entry.push((start as usize, end as usize));
                    }
                }
            }
        }
        Ok(Self { ranges })
    }

    pub fn load(path: &Path, format: AnnotationFormat) -> Result<Self, EvalError> {
        Self::parse(
            &fs::read_to_string(path)?,
            format,
            &path.display().to_string(),
        )
    }

    pub fn contains(&self, video_id: &str) -> bool {
        self.ranges.contains_key(video_key(video_id))
    }

    pub fn video_ids(&self) -> impl Iterator<Item = &str> {
        self.ranges.keys().map(String::as_str)
    }

    /// 0/1 labels over `n` frames; overlapping ranges are unioned. Videos
    /// without annotations are all normal.
    pub fn labels_for(&self, video_id: &str, n: usize) -> Result<FrameLabels, EvalError> {
        let mut labels = vec![0u8; n];
        for &(start, end) in self.ranges.get(video_key(video_id)).into_iter().flatten() {
            if end >= n {
                return Err(EvalError::RangeOutOfBounds {
                    video_id: video_id.to_string(),
                    start,
                    end,
                    frames: n,
                });
            }
            labels[start..=end].iter_mut().for_each(|l| *l = 1);
        }
        Ok(FrameLabels {
            video_id: video_id.to_string(),
            labels,
        })
    }
}

/// Scores and labels of one video, ready for metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSeries {
    pub video_id: String,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub frames: usize,
    /// Absent when the video's labels hold a single class.
    pub auc: Option<f64>,
    /// Absent when the video has no anomalous frames.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_video: BTreeMap<String, VideoMetrics>,
    /// Over the concatenated frames of every video.
    pub aggregate_auc: Option<f64>,
    pub aggregate_ap: Option<f64>,
    pub config_digest: String,
    pub smoothing_window: Option<usize>,
}

pub fn evaluate(
    series: &[EvalSeries],
    config_digest: &str,
    smoothing_window: Option<usize>,
) -> Result<EvalReport, EvalError> {
    let mut per_video = BTreeMap::new();
    let mut all_labels = Vec::new();
    let mut all_scores = Vec::new();
    for s in series {
        check_lengths(&s.labels, &s.scores)?;
        per_video.insert(
            s.video_id.clone(),
            VideoMetrics {
                frames: s.scores.len(),
                auc: roc_auc(&s.labels, &s.scores).ok(),
                ap: average_precision(&s.labels, &s.scores).ok(),
            },
        );
        all_labels.extend_from_slice(&s.labels);
        all_scores.extend_from_slice(&s.scores);
    }
    Ok(EvalReport {
        per_video,
        aggregate_auc: roc_auc(&all_labels, &all_scores).ok(),
        aggregate_ap: average_precision(&all_labels, &all_scores).ok(),
        config_digest: config_digest.to_string(),
        smoothing_window,
    })
}

pub fn series_csv(series: &EvalSeries) -> String {
    let mut out = String::from("frame_index,score,label\n");
    for (i, (score, label)) in series.scores.iter().zip(&series.labels).enumerate() {
        let _ = writeln!(out, "{i},{score:.6},{label}");
    }
    out
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 200.0;

/// Score curve as a polyline over shaded anomalous frame runs.
pub fn series_svg(series: &EvalSeries) -> String {
    let n = series.scores.len();
    let x = |i: f64| {
        if n > 1 {
            i * SVG_W / (n - 1) as f64
        } else {
            0.0
        }
    };
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"200\" viewBox=\"0 0 800 200\">\n\
         <title>{}</title>\n<rect width=\"800\" height=\"200\" fill=\"#ffffff\"/>\n",
        xml_escape(&series.video_id)
    );
    let mut i = 0;
    while i < n {
        if series.labels[i] == 0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && series.labels[i] != 0 {
            i += 1;
        }
        let (x0, x1) = (
            x(start as f64),
            x((i - 1) as f64).max(x(start as f64) + 1.0),
        );
        let _ = writeln!(
            out,
            "<rect x=\"{x0:.2}\" y=\"0\" width=\"{:.2}\" height=\"200\" fill=\"#f4cccc\"/>",
            x1 - x0
        );
    }
    let points: Vec<String> = series
        .scores
        .iter()
        .enumerate()
        .map(|(i, s)| {
            format!(
                "{:.2},{:.2}",
                x(i as f64),
                SVG_H - s.clamp(0.0, 1.0) * SVG_H
            )
        })
        .collect();
    let _ = writeln!(
        out,
        "<polyline fill=\"none\" stroke=\"#1f4e79\" stroke-width=\"1.5\" points=\"{}\"/>",
        points.join(" ")
    );
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes `report.json` plus a CSV and an SVG per video; returns the paths.
pub fn emit_report(
    report: &EvalReport,
    series: &[EvalSeries],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, EvalError> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let json_path = out_dir.join("report.json");
    fs::write(&json_path, to_canonical_json(report) + "\n")?;
    written.push(json_path);
    for s in series {
        let csv = out_dir.join(format!("{}.csv", s.video_id));
        fs::write(&csv, series_csv(s))?;
        let svg = out_dir.join(format!("{}.svg", s.video_id));
        fs::write(&svg, series_svg(s))?;
        written.extend([csv, svg]);
    }
    Ok(written)
}
