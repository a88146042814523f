use super::PolicyParams;
use crate::databundle::EpisodeBundle;
use crate::diffcore::nn::lstm_step_projected;
use crate::diffcore::{Graph, LstmWeights, Tensor, Var};
use crate::error::{Error, Result};

/// Graph handles for the encoded inputs of one episode.
#[derive(Clone, Debug)]
pub struct Encodings {
    /// Per video, a `[n_frames, d_e]` matrix of contextual frame encodings.
    pub videos: Vec<Var>,
    /// Per video, each frame's encoding as a vector node (rows of `videos`).
    pub frame_rows: Vec<Vec<Var>>,
    /// `[n_images, d_e]`, absent when the bundle has no images.
    pub images: Option<Var>,
}

/// Affine projection of raw visual embeddings into the model space, then a
/// bidirectional recurrence within each video. Images share the projection
/// but skip the recurrence.
pub fn encode_frames(g: &mut Graph, b: &EpisodeBundle, params: &PolicyParams) -> Result<Encodings> {
    let cfg = &params.config;
    if b.d_visual != cfg.d_visual || b.d_text != cfg.d_text {
        return Err(Error::Dimension {
            op: "encode_frames",
            lhs: vec![b.d_visual, b.d_text],
            rhs: vec![cfg.d_visual, cfg.d_text],
        });
    }
    let store = &params.store;
    let proj_w = g.param(store, "enc.proj.w")?;
    let proj_b = g.param(store, "enc.proj.b")?;
    let fwd = LstmWeights::load(g, store, "enc.fwd")?;
    let bwd = LstmWeights::load(g, store, "enc.bwd")?;
    let zero = g.constant(Tensor::zeros(&[cfg.bilstm_h]));

    let mut videos = Vec::with_capacity(b.videos.len());
    let mut frame_rows = Vec::with_capacity(b.videos.len());
    for video in &b.videos {
        let raw = g.constant(Tensor::from_rows(&video.frames)?);
        let projected = g.matmul(raw, proj_w)?;
        let projected = g.add_row(projected, proj_b)?;
        let n = video.frames.len();
        let fwd_states = run_direction(g, projected, &fwd, zero, (0..n).collect())?;
        let mut bwd_states = run_direction(g, projected, &bwd, zero, (0..n).rev().collect())?;
        bwd_states.reverse();
        let rows = fwd_states
            .into_iter()
            .zip(bwd_states)
            .map(|(f, r)| g.concat(&[f, r]))
            .collect::<Result<Vec<_>>>()?;
        videos.push(g.stack(&rows)?);
        frame_rows.push(rows);
    }
    let images = if b.images.is_empty() {
        None
    } else {
        let raw = g.constant(Tensor::from_rows(&b.images)?);
        let projected = g.matmul(raw, proj_w)?;
        Some(g.add_row(projected, proj_b)?)
    };
    Ok(Encodings {
        videos,
        frame_rows,
        images,
    })
}

/// Hidden states of one recurrence pass, in visiting order.
fn run_direction(g: &mut Graph, projected: Var, w: &LstmWeights, zero: Var, order: Vec<usize>) -> Result<Vec<Var>> {
    let inputs = g.matmul(projected, w.wx)?;
    let (mut h, mut c) = (zero, zero);
    let mut out = Vec::with_capacity(order.len());
    for t in order {
        let xw = g.row(inputs, t)?;
        (h, c) = lstm_step_projected(g, xw, h, c, w)?;
        out.push(h);
    }
    Ok(out)
}
