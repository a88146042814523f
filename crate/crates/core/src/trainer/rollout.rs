use rand::Rng;

use crate::databundle::{EpisodeBundle, FrameRef};
use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};
use crate::policy::{advance_decoder, init_decoder, policy_step, EpisodeContext, PolicyParams};
use crate::rewards::{self, RewardReport, RewardWeights};

/// One sampled episode. `log_probs` live on the graph the rollout ran on.
#[derive(Clone, Debug)]
pub struct RolloutTrace {
    pub actions: Vec<FrameRef>,
    pub log_probs: Vec<Var>,
    pub reward: RewardReport,
}

/// First index whose cumulative mass exceeds `u` times the total mass.
/// Zero-probability entries are never returned.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = i;
        if acc > target {
            return i;
        }
    }
    last_positive
}

/// Samples `len` actions from the policy, one uniform draw per step.
pub fn sample_actions<R: Rng + ?Sized>(
    g: &mut Graph,
    ctx: &EpisodeContext,
    params: &PolicyParams,
    len: usize,
    rng: &mut R,
) -> Result<(Vec<FrameRef>, Vec<Var>)> {
    if len > ctx.total {
        return Err(Error::Contract(format!(
            "summary length {len} exceeds the {} available frames",
            ctx.total
        )));
    }
    let mut state = init_decoder(g, params)?;
    let mut actions = Vec::with_capacity(len);
    let mut log_probs = Vec::with_capacity(len);
    for t in 0..len {
        let dist = policy_step(g, ctx, &state)?;
        let u: f64 = rng.random();
        let idx = sample_index(dist.probs(g), u);
        let p = g.index(dist.probs, idx)?;
        log_probs.push(g.log(p)?);
        let frame = ctx.frame_ref(idx);
        actions.push(frame);
        if t + 1 < len {
            state = advance_decoder(g, &state, frame, ctx.encoding(frame), params)?;
        }
    }
    Ok((actions, log_probs))
}

/// Rewards of an ordered selection from `bundle` (normalized embeddings).
pub fn score_actions(bundle: &EpisodeBundle, actions: &[FrameRef], weights: &RewardWeights) -> Result<RewardReport> {
    let summary: Vec<&[f64]> = actions.iter().map(|&a| bundle.frame(a)).collect();
    let all = bundle.all_frames();
    let images: Vec<&[f64]> = bundle.images.iter().map(Vec::as_slice).collect();
    rewards::evaluate(&summary, &all, &images, weights)
}

/// Samples an episode and scores it with the composite reward.
pub fn rollout<R: Rng + ?Sized>(
    g: &mut Graph,
    ctx: &EpisodeContext,
    bundle: &EpisodeBundle,
    params: &PolicyParams,
    len: usize,
    weights: &RewardWeights,
    rng: &mut R,
) -> Result<RolloutTrace> {
    let (actions, log_probs) = sample_actions(g, ctx, params, len, rng)?;
    let reward = score_actions(bundle, &actions, weights)?;
    Ok(RolloutTrace {
        actions,
        log_probs,
        reward,
    })
}
