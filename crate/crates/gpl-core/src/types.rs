//! Domain types shared across the pipeline: clip spans, per-video features,
//! ground-truth annotations and the task manifest.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame sampling parameters. A video is subsampled by taking every
/// `sigma`-th frame, then a window of `psi` sampled frames slides by
/// `omega` sampled frames to produce one clip per placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub sigma: u32,
    pub omega: u32,
    pub psi: u32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { sigma: 1, omega: 10, psi: 10 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 1 || self.omega < 1 || self.psi < 1 {
            return Err(Error::Config(format!(
                "sampler parameters must be >= 1 (sigma={}, omega={}, psi={})",
                self.sigma, self.omega, self.psi
            )));
        }
        Ok(())
    }
}

/// Half-open frame range `[start_frame, end_frame)` covered by one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipSpan {
    /// Index of the clip within its video, before any filtering.
    pub clip_index: u32,
    pub start_frame: u32,
    /// Exclusive.
    pub end_frame: u32,
    /// Midpoint frame, `floor((start + end - 1) / 2)`.
    pub mid_frame: u32,
}

impl ClipSpan {
    pub fn new(clip_index: u32, start_frame: u32, end_frame: u32) -> Self {
        debug_assert!(start_frame < end_frame);
        let mid_frame = (start_frame + end_frame - 1) / 2;
        ClipSpan { clip_index, start_frame, end_frame, mid_frame }
    }

    pub fn len(&self) -> u32 {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.start_frame >= self.end_frame
    }
}

/// Slice an `m`-frame video into clip spans.
///
/// With `F = floor(m / sigma)` sampled frames there are
/// `z = floor((F - psi) / omega) + 1` window placements (zero when `F < psi`);
/// clip `i` covers raw frames `[i*omega*sigma, i*omega*sigma + psi*sigma)`,
/// clamped to `m`.
pub fn compute_clip_spans(m: u32, cfg: &SamplerConfig) -> Result<Vec<ClipSpan>> {
    cfg.validate()?;
    if m < 1 {
        return Err(Error::Range("video has zero frames".into()));
    }
    let sampled = m / cfg.sigma;
    if sampled < cfg.psi {
        return Err(Error::ZeroClips(format!(
            "{} sampled frames < window size {}",
            sampled, cfg.psi
        )));
    }
    let z = (sampled - cfg.psi) / cfg.omega + 1;
    let mut spans = Vec::with_capacity(z as usize);
    for i in 0..z {
        let start = i * cfg.omega * cfg.sigma;
        let end = (start + cfg.psi * cfg.sigma).min(m);
        spans.push(ClipSpan::new(i, start, end));
    }
    Ok(spans)
}

/// Clip midpoint as a fraction of the full video, in `[0, 1)`.
pub fn normalized_time(span: &ClipSpan, m: u32) -> f64 {
    debug_assert!(m >= 1 && span.end_frame <= m);
    f64::from(span.mid_frame) / f64::from(m)
}

/// One video's clip-level embeddings plus frame metadata.
///
/// `embeddings` is row-major `z x d`; row `i` belongs to `spans[i]`.
/// After background filtering `spans[i].clip_index` keeps the original
/// clip index, so `clip_index` values need not be contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    pub video_id: String,
    pub m: u32,
    pub fps: f32,
    pub d: u32,
    pub spans: Vec<ClipSpan>,
    pub embeddings: Vec<f32>,
}

impl VideoFeatures {
    /// Number of clips currently held.
    pub fn z(&self) -> usize {
        self.spans.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.d as usize;
        &self.embeddings[i * d..(i + 1) * d]
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::Format("embedding dimension must be >= 1".into()));
        }
        if self.spans.is_empty() {
            return Err(Error::Format(format!("video {} has no clips", self.video_id)));
        }
        if self.fps <= 0.0 || !self.fps.is_finite() {
            return Err(Error::Format(format!("video {} has invalid fps", self.video_id)));
        }
        if self.embeddings.len() != self.spans.len() * self.d as usize {
            return Err(Error::Dimension(format!(
                "video {}: {} embedding values, expected {} ({} clips x {} dims)",
                self.video_id,
                self.embeddings.len(),
                self.spans.len() * self.d as usize,
                self.spans.len(),
                self.d
            )));
        }
        let mut prev_start: Option<u32> = None;
        for span in &self.spans {
            if span.start_frame >= span.end_frame || span.end_frame > self.m {
                return Err(Error::Format(format!(
                    "video {}: clip {} span [{}, {}) invalid for m={}",
                    self.video_id, span.clip_index, span.start_frame, span.end_frame, self.m
                )));
            }
            if span.mid_frame != (span.start_frame + span.end_frame - 1) / 2 {
                return Err(Error::Format(format!(
                    "video {}: clip {} has inconsistent mid frame",
                    self.video_id, span.clip_index
                )));
            }
            if let Some(p) = prev_start {
                if span.start_frame <= p {
                    return Err(Error::Format(format!(
                        "video {}: clip start frames must strictly increase",
                        self.video_id
                    )));
                }
            }
            prev_start = Some(span.start_frame);
        }
        for (i, _) in self.spans.iter().enumerate() {
            let row = self.row(i);
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format(format!(
                    "video {}: embedding row {} has non-finite values",
                    self.video_id, i
                )));
            }
            if row.iter().all(|&x| x == 0.0) {
                return Err(Error::ZeroVector(i));
            }
        }
        Ok(())
    }

    /// Normalized time of the i-th held clip.
    pub fn time(&self, i: usize) -> f64 {
        normalized_time(&self.spans[i], self.m)
    }
}

/// One annotated interval, frames `[start_frame, end_frame)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start_frame: u32,
    pub end_frame: u32,
    /// 1-based; 0 is reserved for background and never appears here.
    pub keystep_id: u32,
    pub keystep_name: String,
}

/// Ground-truth key-step segments for one video. Frames not covered by any
/// segment are background (label 0).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub video_id: String,
    pub segments: Vec<Segment>,
}

impl GroundTruth {
    /// Sorts by start frame and rejects overlaps and degenerate ranges.
    pub fn normalize(&mut self) -> Result<()> {
        for seg in &self.segments {
            if seg.end_frame <= seg.start_frame {
                return Err(Error::Range(format!(
                    "segment [{}, {}) is empty or reversed",
                    seg.start_frame, seg.end_frame
                )));
            }
            if seg.keystep_id < 1 {
                return Err(Error::Range("keystep_id must be >= 1 (0 is background)".into()));
            }
        }
        self.segments.sort_by_key(|s| (s.start_frame, s.end_frame));
        for pair in self.segments.windows(2) {
            if pair[1].start_frame < pair[0].end_frame {
                return Err(Error::Overlap(format!(
                    "segments [{}, {}) and [{}, {}) overlap",
                    pair[0].start_frame, pair[0].end_frame, pair[1].start_frame, pair[1].end_frame
                )));
            }
        }
        Ok(())
    }

    /// Checks all segments fit within an `m`-frame video.
    pub fn check_bounds(&self, m: u32) -> Result<()> {
        for seg in &self.segments {
            if seg.end_frame > m {
                return Err(Error::Range(format!(
                    "video {}: segment end {} exceeds frame count {}",
                    self.video_id, seg.end_frame, m
                )));
            }
        }
        Ok(())
    }

    /// Per-frame labels: 0 background, segment keystep ids elsewhere.
    pub fn frame_labels(&self, m: u32) -> Vec<u32> {
        let mut labels = vec![0u32; m as usize];
        for seg in &self.segments {
            for f in seg.start_frame..seg.end_frame.min(m) {
                labels[f as usize] = seg.keystep_id;
            }
        }
        labels
    }
}

/// One video entry in a task manifest. Paths are resolved relative to the
/// manifest file location.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

/// Declares one task: its videos, the hypothesized key-step count and the
/// sampling geometry the feature files were produced with.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TaskManifest {
    pub task_name: String,
    pub k: u32,
    #[serde(default)]
    pub egocentric: bool,
    pub sampler: SamplerConfig,
    pub videos: Vec<ManifestEntry>,
}

impl TaskManifest {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("manifest k must be >= 1".into()));
        }
        self.sampler.validate()?;
        if self.videos.is_empty() {
            return Err(Error::Config("manifest lists no videos".into()));
        }
        if self.videos.len() == 1 {
            log::warn!(
                "task {}: single video, the graph will only contain temporal edges",
                self.task_name
            );
        }
        Ok(())
    }
}
