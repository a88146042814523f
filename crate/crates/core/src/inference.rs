//! Greedy and sampled decoding into a [`Summary`].

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::databundle::{EpisodeBundle, FrameRef};
use crate::diffcore::Graph;
use crate::error::{Error, Result};
use crate::policy::{
    advance_decoder, argmax, encode_frames, init_decoder, model_hash, policy_step, EpisodeContext, PolicyParams,
};
use crate::rewards::{RewardReport, RewardWeights};
use crate::trainer::{sample_index, score_actions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub video_id: String,
    pub frame_idx: usize,
    pub step: usize,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub event_id: String,
    #[serde(rename = "L")]
    pub len: usize,
    pub model_hash: String,
    /// Input dimensions the model was built for.
    pub d_visual: usize,
    pub d_text: usize,
    pub entries: Vec<SummaryEntry>,
    pub rewards: RewardReport,
}

impl Summary {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("summary serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Summary> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, "summary", e.to_string()))
    }

    /// Resolves entries to frame references in `bundle` by video id.
    pub fn frame_refs(&self, bundle: &EpisodeBundle) -> Result<Vec<FrameRef>> {
        self.entries
            .iter()
            .map(|e| {
                let v = bundle
                    .videos
                    .iter()
                    .position(|t| t.video_id == e.video_id)
                    .ok_or_else(|| Error::Contract(format!("summary video {:?} not in bundle", e.video_id)))?;
                if e.frame_idx >= bundle.videos[v].frames.len() {
                    return Err(Error::Contract(format!(
                        "summary frame {} out of range for video {:?}",
                        e.frame_idx, e.video_id
                    )));
                }
                Ok((v, e.frame_idx))
            })
            .collect()
    }
}

enum Mode<'r> {
    Greedy,
    Sample(&'r mut ChaCha8Rng),
}

fn decode(b: &EpisodeBundle, params: &PolicyParams, len: usize, mut mode: Mode) -> Result<Summary> {
    let bundle = b.normalize()?;
    let total = bundle.total_frames();
    if len == 0 || len > total {
        return Err(Error::Contract(format!(
            "summary length {len} must be in 1..={total} (frames available)"
        )));
    }
    let mut g = Graph::new();
    let enc = encode_frames(&mut g, &bundle, params)?;
    let ctx = EpisodeContext::new(&mut g, &bundle, params, enc)?;
    let mut state = init_decoder(&mut g, params)?;
    let mut actions = Vec::with_capacity(len);
    let mut entries = Vec::with_capacity(len);
    for step in 0..len {
        let dist = policy_step(&mut g, &ctx, &state)?;
        let probs = dist.probs(&g);
        let idx = match &mut mode {
            Mode::Greedy => argmax(probs),
            Mode::Sample(rng) => sample_index(probs, rng.random()),
        };
        let prob = probs[idx];
        let frame = ctx.frame_ref(idx);
        entries.push(SummaryEntry {
            video_id: bundle.videos[frame.0].video_id.clone(),
            frame_idx: frame.1,
            step,
            prob,
        });
        actions.push(frame);
        if step + 1 < len {
            state = advance_decoder(&mut g, &state, frame, ctx.encoding(frame), params)?;
        }
    }
    let rewards = score_actions(&bundle, &actions, &RewardWeights::phase_two())?;
    Ok(Summary {
        event_id: bundle.event_id.clone(),
        len,
        model_hash: model_hash(params),
        d_visual: params.config.d_visual,
        d_text: params.config.d_text,
        entries,
        rewards,
    })
}

/// Picks the most probable frame at every step; ties go to the lowest
/// (video, frame) index.
pub fn greedy_summarize(b: &EpisodeBundle, params: &PolicyParams, len: usize) -> Result<Summary> {
    decode(b, params, len, Mode::Greedy)
}

/// Samples every step from the policy with a generator seeded by `seed`.
pub fn sample_summarize(b: &EpisodeBundle, params: &PolicyParams, len: usize, seed: u64) -> Result<Summary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    decode(b, params, len, Mode::Sample(&mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::databundle::{generate_synthetic, SyntheticSpec};
    use crate::policy::PolicyConfig;

    fn small() -> (EpisodeBundle, PolicyParams) {
        let spec = SyntheticSpec {
            n_events: 1,
            n_videos: 2,
            frames_per_video: 4,
            n_images: 2,
            ..SyntheticSpec::default()
        };
        let b = generate_synthetic(&spec).unwrap().remove(0);
        let p = PolicyParams::init(PolicyConfig::desk(b.d_visual, b.d_text), 3).unwrap();
        (b, p)
    }

    #[test]
    fn greedy_is_deterministic_and_exhaustive() {
        let (b, p) = small();
        let s = greedy_summarize(&b, &p, 8).unwrap();
        assert_eq!(s, greedy_summarize(&b, &p, 8).unwrap());
        let mut seen: Vec<FrameRef> = s.frame_refs(&b).unwrap();
        seen.sort();
        let all: Vec<FrameRef> = (0..2).flat_map(|v| (0..4).map(move |f| (v, f))).collect();
        assert_eq!(seen, all);
        assert!(s.entries.iter().all(|e| e.prob > 0.0 && e.prob <= 1.0));
    }

    #[test]
    fn too_long_rejected() {
        let (b, p) = small();
        assert!(matches!(greedy_summarize(&b, &p, 9), Err(Error::Contract(_))));
    }

    #[test]
    fn sampling_is_seeded() {
        let (b, p) = small();
        assert_eq!(sample_summarize(&b, &p, 3, 5).unwrap(), sample_summarize(&b, &p, 3, 5).unwrap());
        let distinct: std::collections::BTreeSet<Vec<FrameRef>> = (0..40)
            .map(|s| sample_summarize(&b, &p, 3, s).unwrap().frame_refs(&b).unwrap())
            .collect();
        assert!(distinct.len() >= 2);
    }
}
