//! One decoding step: the three attention heads over the remaining frames
//! and their learned interpolation.

use super::{AttentionHead, DecoderState, Encodings, PolicyParams};
use crate::databundle::{EpisodeBundle, FrameRef};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Per-episode graph state that does not change between steps.
#[derive(Clone, Debug)]
pub struct EpisodeContext {
    pub enc: Encodings,
    pub lengths: Vec<usize>,
    pub offsets: Vec<usize>,
    pub total: usize,
    /// All frame encodings stacked in flat (video, frame) order.
    pub all_frames: Var,
    pub has_images: bool,
    frame_head: AttentionHead,
    video_head: AttentionHead,
    image_head: AttentionHead,
    text_head: AttentionHead,
    mix_head: AttentionHead,
    frame_projected: Vec<Var>,
    image_projected: Option<Var>,
    text_inputs: Var,
    text_projected: Var,
    adapter: [Var; 4],
    zero_model: Var,
}

impl EpisodeContext {
    pub fn new(g: &mut Graph, b: &EpisodeBundle, params: &PolicyParams, enc: Encodings) -> Result<Self> {
        let store = &params.store;
        let n_h = params.config.n_h;
        let frame_head = AttentionHead::load(g, store, "att.frame", n_h)?;
        let video_head = AttentionHead::load(g, store, "att.video", n_h)?;
        let image_head = AttentionHead::load(g, store, "att.image", n_h)?;
        let text_head = AttentionHead::load(g, store, "att.text", n_h)?;
        let mix_head = AttentionHead::load(g, store, "att.mix", n_h)?;

        let lengths: Vec<usize> = b.videos.iter().map(|v| v.frames.len()).collect();
        let offsets: Vec<usize> = lengths
            .iter()
            .scan(0, |acc, &n| {
                let o = *acc;
                *acc += n;
                Some(o)
            })
            .collect();
        let total = lengths.iter().sum();
        let rows: Vec<Var> = enc.frame_rows.iter().flatten().copied().collect();
        let all_frames = g.stack(&rows)?;
        let frame_projected = enc
            .videos
            .iter()
            .map(|&m| frame_head.project_inputs(g, m))
            .collect::<Result<Vec<_>>>()?;
        let image_projected = match enc.images {
            Some(m) => Some(image_head.project_inputs(g, m)?),
            None => None,
        };

        // (q·d_v) d_v per video
        let text_rows: Vec<Vec<f64>> = b
            .videos
            .iter()
            .map(|v| {
                let sim: f64 = b.query.iter().zip(&v.text).map(|(q, d)| q * d).sum();
                v.text.iter().map(|d| sim * d).collect()
            })
            .collect();
        let text_inputs = g.constant(Tensor::from_rows(&text_rows)?);
        let text_projected = text_head.project_inputs(g, text_inputs)?;
        let adapter = [
            g.param(store, "adapter.w1")?,
            g.param(store, "adapter.b1")?,
            g.param(store, "adapter.w2")?,
            g.param(store, "adapter.b2")?,
        ];
        let zero_model = g.constant(Tensor::zeros(&[params.config.d_e]));
        Ok(EpisodeContext {
            has_images: enc.images.is_some(),
            enc,
            lengths,
            offsets,
            total,
            all_frames,
            frame_head,
            video_head,
            image_head,
            text_head,
            mix_head,
            frame_projected,
            image_projected,
            text_inputs,
            text_projected,
            adapter,
            zero_model,
        })
    }

    pub fn n_videos(&self) -> usize {
        self.lengths.len()
    }

    pub fn flat_index(&self, (v, f): FrameRef) -> usize {
        self.offsets[v] + f
    }

    pub fn frame_ref(&self, flat: usize) -> FrameRef {
        let v = self.offsets.partition_point(|&o| o <= flat) - 1;
        (v, flat - self.offsets[v])
    }

    pub fn encoding(&self, (v, f): FrameRef) -> Var {
        self.enc.frame_rows[v][f]
    }

    fn frame_mask(&self, v: usize, s: &DecoderState) -> Vec<bool> {
        (0..self.lengths[v]).map(|f| !s.is_selected((v, f))).collect()
    }

    fn remaining(&self, v: usize, s: &DecoderState) -> usize {
        self.lengths[v] - s.selected.range((v, 0)..(v + 1, 0)).count()
    }

    /// Videos that still have unselected frames.
    pub fn live_videos(&self, s: &DecoderState) -> Vec<bool> {
        (0..self.n_videos()).map(|v| self.remaining(v, s) > 0).collect()
    }

    /// `true` for every unselected frame, flat order.
    pub fn action_mask(&self, s: &DecoderState) -> Vec<bool> {
        (0..self.n_videos()).flat_map(|v| self.frame_mask(v, s)).collect()
    }
}

/// Handles to every intermediate distribution of one step.
#[derive(Clone, Debug)]
pub struct Heads {
    /// Head 1, video-then-frame attention, flat over all frames.
    pub pi_video: Var,
    /// Head 2, image-guided; absent without images.
    pub pi_image: Option<Var>,
    /// Head 3, query/text-guided.
    pub pi_text: Var,
    /// Per-video distribution of head 1.
    pub p_video: Var,
    /// Per-video distribution of head 3.
    pub p_text: Var,
    /// Per-video frame distributions (absent for exhausted videos).
    pub p_frames: Vec<Option<Var>>,
}

#[derive(Clone, Debug)]
pub struct StepDistribution {
    /// Mixture over all frames in flat order; zero on selected frames.
    pub probs: Var,
    pub mu: Var,
    pub c_video: Var,
    pub c_image: Option<Var>,
    pub c_text: Var,
    pub heads: Heads,
}

impl StepDistribution {
    pub fn probs<'g>(&self, g: &'g Graph) -> &'g [f64] {
        g.value(self.probs).data()
    }

    pub fn mu(&self, g: &Graph) -> [f64; 3] {
        let m = g.value(self.mu).data();
        [m[0], m[1], m[2]]
    }
}

/// `p(a | v)` and `c^(v)` for one video restricted to its unselected frames.
pub fn frame_attention(g: &mut Graph, ctx: &EpisodeContext, v: usize, s: &DecoderState) -> Result<(Var, Var)> {
    let mask = ctx.frame_mask(v, s);
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptySupport(format!("video {v} has no remaining frames")));
    }
    ctx.frame_head
        .attend_projected(g, ctx.frame_projected[v], ctx.enc.videos[v], s.h, &mask)
}

/// Attention over the per-video contexts. Exhausted videos (`None`) are masked
/// out. Returns `p(v)`, `c_t` and the flat head distribution `p(v)·p(a|v)`.
pub fn video_attention(
    g: &mut Graph,
    ctx: &EpisodeContext,
    frames: &[Option<(Var, Var)>],
    s: &DecoderState,
) -> Result<(Var, Var, Var)> {
    let mask: Vec<bool> = frames.iter().map(Option::is_some).collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptySupport("every video is exhausted".into()));
    }
    let contexts: Vec<Var> = frames
        .iter()
        .map(|f| f.map(|(_, c)| c).unwrap_or(ctx.zero_model))
        .collect();
    let stacked = g.stack(&contexts)?;
    let (p_video, c_t) = ctx.video_head.attend(g, stacked, s.h, &mask)?;
    let mut parts = Vec::with_capacity(frames.len());
    for (v, f) in frames.iter().enumerate() {
        match f {
            Some((p_frame, _)) => {
                let pv = g.index(p_video, v)?;
                parts.push(g.scale_by(*p_frame, pv)?);
            }
            None => parts.push(g.constant(Tensor::zeros(&[ctx.lengths[v]]))),
        }
    }
    let pi = g.concat(&parts)?;
    Ok((p_video, c_t, pi))
}

/// Image context `ĉ_t` and the head distribution `softmax(ĉ_t · enc(a))` over
/// unselected frames. `None` when the bundle has no images.
pub fn image_attention(g: &mut Graph, ctx: &EpisodeContext, s: &DecoderState) -> Result<Option<(Var, Var)>> {
    let (Some(images), Some(projected)) = (ctx.enc.images, ctx.image_projected) else {
        return Ok(None);
    };
    let n_images = g.value(images).shape()[0];
    let (_, c_image) = ctx
        .image_head
        .attend_projected(g, projected, images, s.h, &vec![true; n_images])?;
    let scores = g.matmul(ctx.all_frames, c_image)?;
    let pi = g.masked_softmax(scores, &ctx.action_mask(s))?;
    Ok(Some((pi, c_image)))
}

/// Text context `c̃_t` from attention over `(q·d_v) d_v` of live videos; each
/// video's mass is spread evenly over its remaining frames. Returns
/// `(pi, p_text, c_text)`.
pub fn query_attention(g: &mut Graph, ctx: &EpisodeContext, s: &DecoderState) -> Result<(Var, Var, Var)> {
    let live = ctx.live_videos(s);
    let (p_text, c_text) = ctx
        .text_head
        .attend_projected(g, ctx.text_projected, ctx.text_inputs, s.h, &live)?;
    let mut parts = Vec::with_capacity(ctx.n_videos());
    for v in 0..ctx.n_videos() {
        let mask = ctx.frame_mask(v, s);
        let remaining = mask.iter().filter(|&&m| m).count();
        if remaining == 0 {
            parts.push(g.constant(Tensor::zeros(&[ctx.lengths[v]])));
            continue;
        }
        let spread: Vec<f64> = mask
            .iter()
            .map(|&m| if m { 1.0 / remaining as f64 } else { 0.0 })
            .collect();
        let spread = g.constant(Tensor::vector(spread));
        let pv = g.index(p_text, v)?;
        parts.push(g.scale_by(spread, pv)?);
    }
    let pi = g.concat(&parts)?;
    Ok((pi, p_text, c_text))
}

/// Mixture weights `μ` from attention over `{c_t, ĉ_t, MLP(c̃_t)}`. Without
/// images the second slot is masked, forcing `μ₂ = 0`.
pub fn interpolation_weights(
    g: &mut Graph,
    ctx: &EpisodeContext,
    c_video: Var,
    c_image: Option<Var>,
    c_text: Var,
    s: &DecoderState,
) -> Result<Var> {
    let [w1, b1, w2, b2] = ctx.adapter;
    let hidden = g.matmul(c_text, w1)?;
    let hidden = g.add(hidden, b1)?;
    let hidden = g.tanh(hidden);
    let adapted = g.matmul(hidden, w2)?;
    let adapted = g.add(adapted, b2)?;
    let stacked = g.stack(&[c_video, c_image.unwrap_or(ctx.zero_model), adapted])?;
    let (mu, _) = ctx
        .mix_head
        .attend(g, stacked, s.h, &[true, c_image.is_some(), true])?;
    Ok(mu)
}

/// `π = μ₁π₁ + μ₂π₂ + μ₃π₃` over the unselected frames.
pub fn policy_step(g: &mut Graph, ctx: &EpisodeContext, s: &DecoderState) -> Result<StepDistribution> {
    if s.selected.len() >= ctx.total {
        return Err(Error::EmptySupport("episode complete: no frames left to select".into()));
    }
    let mut frames = Vec::with_capacity(ctx.n_videos());
    for v in 0..ctx.n_videos() {
        frames.push(if ctx.remaining(v, s) > 0 {
            Some(frame_attention(g, ctx, v, s)?)
        } else {
            None
        });
    }
    let (p_video, c_video, pi_video) = video_attention(g, ctx, &frames, s)?;
    let image = image_attention(g, ctx, s)?;
    let (pi_text, p_text, c_text) = query_attention(g, ctx, s)?;
    let c_image = image.map(|(_, c)| c);
    let mu = interpolation_weights(g, ctx, c_video, c_image, c_text, s)?;

    let mu1 = g.index(mu, 0)?;
    let mu3 = g.index(mu, 2)?;
    let a = g.scale_by(pi_video, mu1)?;
    let c = g.scale_by(pi_text, mu3)?;
    let mut probs = g.add(a, c)?;
    if let Some((pi_image, _)) = image {
        let mu2 = g.index(mu, 1)?;
        let b = g.scale_by(pi_image, mu2)?;
        probs = g.add(probs, b)?;
    }
    Ok(StepDistribution {
        probs,
        mu,
        c_video,
        c_image,
        c_text,
        heads: Heads {
            pi_video,
            pi_image: image.map(|(p, _)| p),
            pi_text,
            p_video,
            p_text,
            p_frames: frames.iter().map(|f| f.map(|(p, _)| p)).collect(),
        },
    })
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
