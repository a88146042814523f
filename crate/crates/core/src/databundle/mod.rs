//! Query events: videos, web-images, text metadata and reference summaries.

mod format;
mod synthetic;

pub use format::{load_bundle, load_dataset, save_bundle, FORMAT_VERSION};
pub use synthetic::{generate_synthetic, generate_synthetic_detailed, SyntheticEvent, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Address of one frame: `(video index, frame index)`.
pub type FrameRef = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoTrack {
    pub video_id: String,
    /// Visual embeddings in temporal order.
    pub frames: Vec<Vec<f64>>,
    /// Title/description embedding.
    pub text: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBundle {
    pub event_id: String,
    pub d_visual: usize,
    pub d_text: usize,
    pub videos: Vec<VideoTrack>,
    pub images: Vec<Vec<f64>>,
    pub query: Vec<f64>,
    pub ground_truth: Option<Vec<FrameRef>>,
}

impl EpisodeBundle {
    pub fn total_frames(&self) -> usize {
        self.videos.iter().map(|v| v.frames.len()).sum()
    }

    pub fn frame(&self, (v, f): FrameRef) -> &[f64] {
        &self.videos[v].frames[f]
    }

    /// All frames in (video, frame) order.
    pub fn all_frames(&self) -> Vec<&[f64]> {
        self.videos
            .iter()
            .flat_map(|v| v.frames.iter().map(Vec::as_slice))
            .collect()
    }

    /// Checks dimensions, nonempty videos, and ground-truth ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Contract(format!("bundle {}: {what}", self.event_id)));
        if self.videos.is_empty() {
            return bad("no videos".into());
        }
        if self.query.len() != self.d_text {
            return bad(format!("query has length {} (d_text {})", self.query.len(), self.d_text));
        }
        for (vi, v) in self.videos.iter().enumerate() {
            if v.frames.is_empty() {
                return bad(format!("video {vi} has no frames"));
            }
            if v.text.len() != self.d_text {
                return bad(format!("video {vi} text has length {}", v.text.len()));
            }
            if let Some(fi) = v.frames.iter().position(|f| f.len() != self.d_visual) {
                return bad(format!("video {vi} frame {fi} has wrong length"));
            }
        }
        if let Some(ii) = self.images.iter().position(|i| i.len() != self.d_visual) {
            return bad(format!("image {ii} has wrong length"));
        }
        if let Some(gt) = &self.ground_truth {
            let mut seen = std::collections::HashSet::new();
            for &(v, f) in gt {
                if v >= self.videos.len() || f >= self.videos[v].frames.len() {
                    return bad(format!("ground truth ({v}, {f}) out of range"));
                }
                if !seen.insert((v, f)) {
                    return bad(format!("ground truth ({v}, {f}) duplicated"));
                }
            }
        }
        Ok(())
    }

    /// Returns a copy with every embedding scaled to unit L2 norm.
    pub fn normalize(&self) -> Result<EpisodeBundle> {
        let mut out = self.clone();
        for (vi, v) in out.videos.iter_mut().enumerate() {
            for (fi, f) in v.frames.iter_mut().enumerate() {
                normalize_in_place(f).map_err(|_| degenerate(&self.event_id, &format!("video {vi} frame {fi}")))?;
            }
            normalize_in_place(&mut v.text).map_err(|_| degenerate(&self.event_id, &format!("video {vi} text")))?;
        }
        for (ii, img) in out.images.iter_mut().enumerate() {
            normalize_in_place(img).map_err(|_| degenerate(&self.event_id, &format!("image {ii}")))?;
        }
        normalize_in_place(&mut out.query).map_err(|_| degenerate(&self.event_id, "query"))?;
        Ok(out)
    }

    /// Sub-event restricted to the given videos (in the given order). Ground
    /// truth entries from dropped videos are removed, the rest re-indexed.
    pub fn select_videos(&self, indices: &[usize]) -> EpisodeBundle {
        let videos = indices.iter().map(|&i| self.videos[i].clone()).collect();
        let ground_truth = self.ground_truth.as_ref().map(|gt| {
            gt.iter()
                .filter_map(|&(v, f)| indices.iter().position(|&i| i == v).map(|nv| (nv, f)))
                .collect()
        });
        EpisodeBundle {
            event_id: self.event_id.clone(),
            d_visual: self.d_visual,
            d_text: self.d_text,
            videos,
            images: self.images.clone(),
            query: self.query.clone(),
            ground_truth,
        }
    }
}

fn degenerate(event: &str, what: &str) -> Error {
    Error::Degenerate(format!("bundle {event}: zero-norm embedding at {what}"))
}

/// Scales `v` to unit norm; fails on a zero (or non-finite) vector.
pub fn normalize_in_place(v: &mut [f64]) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Degenerate("zero-norm vector".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
