use super::{advance_decoder, encode_frames, init_decoder, policy_step, EpisodeContext, PolicyConfig, PolicyParams};
use crate::databundle::{generate_synthetic, EpisodeBundle, FrameRef, SyntheticSpec};
use crate::diffcore::{grad_check, GradReport, Graph, ParamStore, Var};
use crate::error::Result;

/// Finite-difference step used by [`policy_gradcheck`].
pub const GRADCHECK_STEP: f64 = 1e-4;

/// Two videos of three frames, two images.
pub fn gradcheck_bundle(d_visual: usize, d_text: usize, seed: u64) -> Result<EpisodeBundle> {
    let spec = SyntheticSpec {
        n_events: 1,
        n_videos: 2,
        frames_per_video: 3,
        n_images: 2,
        d_visual,
        d_text,
        n_concepts: 3,
        seed,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec)?.remove(0).normalize()
}

/// Sum of the log-probabilities of `actions` taken in order.
pub fn sequence_log_prob(
    g: &mut Graph,
    bundle: &EpisodeBundle,
    params: &PolicyParams,
    actions: &[FrameRef],
) -> Result<Var> {
    let enc = encode_frames(g, bundle, params)?;
    let ctx = EpisodeContext::new(g, bundle, params, enc)?;
    let mut state = init_decoder(g, params)?;
    let mut terms = Vec::with_capacity(actions.len());
    for (t, &a) in actions.iter().enumerate() {
        let dist = policy_step(g, &ctx, &state)?;
        let p = g.index(dist.probs, ctx.flat_index(a))?;
        terms.push(g.log(p)?);
        if t + 1 < actions.len() {
            state = advance_decoder(g, &state, a, ctx.encoding(a), params)?;
        }
    }
    let joint = g.concat(&terms)?;
    Ok(g.sum(joint))
}

/// Checks every policy parameter on the log-probability of a fixed
/// three-step episode at `d_e = n_h = dim`.
pub fn policy_gradcheck(dim: usize, tol: f64, seed: u64) -> Result<GradReport> {
    let d_text = (dim / 2).max(1);
    let bundle = gradcheck_bundle(dim, d_text, seed)?;
    let params = PolicyParams::init(PolicyConfig::toy(dim, d_text, dim), seed)?;
    let actions = [(0, 1), (1, 2), (0, 0)];
    let config = params.config;
    let f = |g: &mut Graph, store: &ParamStore| {
        let p = PolicyParams {
            config,
            store: store.clone(),
        };
        sequence_log_prob(g, &bundle, &p, &actions)
    };
    grad_check(f, &params.store, GRADCHECK_STEP, tol)
}
