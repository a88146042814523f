//! REINFORCE training with a moving-average baseline.

mod rollout;

pub use rollout::{rollout, sample_actions, sample_index, score_actions, RolloutTrace};

use std::collections::BTreeSet;
use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::databundle::EpisodeBundle;
use crate::diffcore::{adam_step, AdamConfig, Graph, Var};
use crate::error::{Error, Result};
use crate::policy::{encode_frames, EpisodeContext, PolicyConfig, PolicyParams};
use crate::rewards::RewardWeights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub summary_len: usize,
    pub episodes_per_item: usize,
    pub batch_size: usize,
    pub videos_per_item: usize,
    /// Items drawn per event per epoch; `None` walks the whole combination pool.
    pub items_per_event: Option<usize>,
    pub max_combinations: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub baseline_decay: f64,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub seed: u64,
    pub workers: usize,
    /// Policy sizes; `None` picks the desk-scale sizes for the dataset's dimensions.
    pub policy: Option<PolicyConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            summary_len: 10,
            episodes_per_item: 5,
            batch_size: 8,
            videos_per_item: 4,
            items_per_event: None,
            max_combinations: 4000,
            lr: 0.01,
            weight_decay: 1e-5,
            baseline_decay: 0.9,
            phase1_epochs: 20,
            phase2_epochs: 10,
            seed: 42,
            workers: 1,
            policy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("summary_len", self.summary_len),
            ("episodes_per_item", self.episodes_per_item),
            ("batch_size", self.batch_size),
            ("videos_per_item", self.videos_per_item),
            ("items_per_event", self.items_per_event.unwrap_or(1)),
            ("max_combinations", self.max_combinations),
            ("workers", self.workers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Contract(format!("train config: {name} must be positive")));
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Contract("train config: lr and weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Contract("train config: baseline_decay must be in [0, 1)".into()));
        }
        if self.phase1_epochs + self.phase2_epochs == 0 {
            return Err(Error::Contract("train config: no epochs".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn weights_for_epoch(&self, epoch: usize) -> (u8, RewardWeights) {
        if epoch < self.phase1_epochs {
            (1, RewardWeights::phase_one())
        } else {
            (2, RewardWeights::phase_two())
        }
    }
}

/// Moving average of episode rewards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub b: f64,
    pub initialized: bool,
}

/// First call adopts `mean_reward`; later calls blend `b ← α b + (1 − α) R̄`.
pub fn baseline_update(s: BaselineState, mean_reward: f64, alpha: f64) -> BaselineState {
    if s.initialized {
        BaselineState {
            b: alpha * s.b + (1.0 - alpha) * mean_reward,
            initialized: true,
        }
    } else {
        BaselineState {
            b: mean_reward,
            initialized: true,
        }
    }
}

/// `-(1/M) Σ_m (R_m − b) Σ_t log π(a_t)` on the traces' graph. The advantage
/// is a constant; gradients flow only through the log-probabilities.
pub fn reinforce_loss(g: &mut Graph, traces: &[RolloutTrace], baseline: f64) -> Result<Var> {
    if traces.is_empty() {
        return Err(Error::Contract("reinforce loss over no traces".into()));
    }
    let scale = -1.0 / traces.len() as f64;
    let mut terms = Vec::with_capacity(traces.len());
    for t in traces {
        if t.log_probs.is_empty() {
            return Err(Error::Contract("trace without log-probabilities".into()));
        }
        if let Some(lp) = t.log_probs.iter().find(|&&lp| !g.requires_grad(lp)) {
            return Err(Error::Contract(format!("log-probability node {} is detached", lp.index())));
        }
        let joint = g.concat(&t.log_probs)?;
        let joint = g.sum(joint);
        terms.push(g.scale(joint, scale * (t.reward.composite - baseline)));
    }
    let stacked = g.concat(&terms)?;
    Ok(g.sum(stacked))
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: u8,
    pub mean_r_div: f64,
    pub mean_r_rep: f64,
    pub mean_r_query: f64,
    pub mean_r_coh: f64,
    pub mean_composite: f64,
    pub baseline: f64,
}

impl EpochMetrics {
    /// Mean composite recomputed from the mean parts under other weights.
    pub fn composite_under(&self, w: &RewardWeights) -> f64 {
        let [b1, b2, b3, b4] = w.beta;
        b1 * self.mean_r_div + b2 * self.mean_r_rep + b3 * self.mean_r_query + b4 * self.mean_r_coh
    }
}

pub fn write_metrics<W: Write>(out: &mut W, log: &[EpochMetrics]) -> std::io::Result<()> {
    for m in log {
        serde_json::to_writer(&mut *out, m)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub metrics: Vec<EpochMetrics>,
    pub baseline: BaselineState,
}

/// Video-index combinations per event, at most `max` distinct ones.
fn combination_pool<R: Rng>(n_videos: usize, k: usize, max: usize, rng: &mut R) -> Vec<Vec<usize>> {
    if k >= n_videos {
        return vec![(0..n_videos).collect()];
    }
    let mut all = Vec::new();
    let mut current = Vec::with_capacity(k);
    enumerate_combinations(n_videos, k, 0, &mut current, &mut all, max.saturating_mul(4).max(max));
    if all.len() <= max {
        return all;
    }
    // more combinations than allowed: keep a seeded random subset
    let mut pool = BTreeSet::new();
    while pool.len() < max {
        let mut idx: Vec<usize> = (0..n_videos).collect();
        idx.shuffle(rng);
        let mut c = idx[..k].to_vec();
        c.sort_unstable();
        pool.insert(c);
    }
    pool.into_iter().collect()
}

fn enumerate_combinations(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, cap: usize) {
    if out.len() > cap {
        return;
    }
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in start..n {
        if n - i < k - cur.len() {
            break;
        }
        cur.push(i);
        enumerate_combinations(n, k, i + 1, cur, out, cap);
        cur.pop();
    }
}

fn item_rng(seed: u64, epoch: usize, item: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + (epoch as u64) * 1_000_003 + item as u64);
    rng
}

struct ItemResult {
    graph: Graph,
    traces: Vec<RolloutTrace>,
}

fn run_item(
    bundle: &EpisodeBundle,
    params: &PolicyParams,
    cfg: &TrainConfig,
    weights: &RewardWeights,
    mut rng: ChaCha8Rng,
) -> Result<ItemResult> {
    let mut g = Graph::new();
    let enc = encode_frames(&mut g, bundle, params)?;
    let ctx = EpisodeContext::new(&mut g, bundle, params, enc)?;
    let traces = (0..cfg.episodes_per_item)
        .map(|_| rollout(&mut g, &ctx, bundle, params, cfg.summary_len, weights, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(ItemResult { graph: g, traces })
}

/// Trains a freshly initialized policy (seeded by `cfg.seed`).
pub fn train(dataset: &[EpisodeBundle], cfg: &TrainConfig) -> Result<TrainOutput> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Contract("training needs at least one event".into()))?;
    let policy = cfg
        .policy
        .unwrap_or_else(|| PolicyConfig::desk(first.d_visual, first.d_text));
    let params = PolicyParams::init(policy, cfg.seed)?;
    train_from(params, dataset, cfg, |_| {})
}

/// Trains `params` in place, calling `on_epoch` after every epoch.
pub fn train_from(
    mut params: PolicyParams,
    dataset: &[EpisodeBundle],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutput> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("training needs at least one event".into()));
    }
    let events = dataset
        .iter()
        .map(EpisodeBundle::normalize)
        .collect::<Result<Vec<_>>>()?;

    let mut pool_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pools: Vec<Vec<Vec<usize>>> = events
        .iter()
        .map(|e| {
            if e.videos.len() < cfg.videos_per_item {
                warn!(
                    "event {} has {} videos (< {}); using all of them",
                    e.event_id,
                    e.videos.len(),
                    cfg.videos_per_item
                );
            }
            combination_pool(e.videos.len(), cfg.videos_per_item, cfg.max_combinations, &mut pool_rng)
        })
        .collect();
    for (e, pool) in events.iter().zip(&pools) {
        let frames: usize = pool
            .iter()
            .map(|c| c.iter().map(|&v| e.videos[v].frames.len()).sum::<usize>())
            .min()
            .unwrap_or(0);
        if frames < cfg.summary_len {
            return Err(Error::Contract(format!(
                "event {}: an item has {frames} frames, fewer than summary length {}",
                e.event_id, cfg.summary_len
            )));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::State(format!("thread pool: {e}")))?;
    let adam = cfg.adam();
    let mut baseline = BaselineState::default();
    let mut metrics = Vec::new();
    let mut sched_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let total_epochs = cfg.phase1_epochs + cfg.phase2_epochs;

    for epoch in 0..total_epochs {
        let (phase, weights) = cfg.weights_for_epoch(epoch);
        let mut items: Vec<EpisodeBundle> = Vec::new();
        for (e, pool) in events.iter().zip(&pools) {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut sched_rng);
            let n = cfg.items_per_event.unwrap_or(pool.len());
            for i in 0..n {
                let combo = &pool[order[i % order.len()]];
                items.push(e.select_videos(combo));
            }
        }
        items.shuffle(&mut sched_rng);

        let mut sums = [0.0f64; 5];
        let mut count = 0usize;
        for (b_idx, batch) in items.chunks(cfg.batch_size).enumerate() {
            let snapshot = &params;
            let results: Vec<Result<ItemResult>> = pool.install(|| {
                batch
                    .par_iter()
                    .enumerate()
                    .map(|(i, item)| {
                        let rng = item_rng(cfg.seed, epoch, b_idx * cfg.batch_size + i);
                        run_item(item, snapshot, cfg, &weights, rng)
                    })
                    .collect()
            });
            params.store.zero_grads();
            let share = 1.0 / batch.len() as f64;
            for r in results {
                let ItemResult { mut graph, traces } = r?;
                let mean = traces.iter().map(|t| t.reward.composite).sum::<f64>() / traces.len() as f64;
                baseline = baseline_update(baseline, mean, cfg.baseline_decay);
                for t in &traces {
                    let r = &t.reward;
                    for (s, v) in sums.iter_mut().zip([r.r_div, r.r_rep, r.r_query, r.r_coh, r.composite]) {
                        *s += v;
                    }
                    count += 1;
                }
                let loss = reinforce_loss(&mut graph, &traces, baseline.b)?;
                let loss = graph.scale(loss, share);
                graph.backward(loss)?;
                graph.accumulate_param_grads(&mut params.store)?;
            }
            adam_step(&mut params.store, &adam)?;
        }
        if !params.store.all_finite() {
            return Err(Error::State(format!("non-finite parameters after epoch {epoch}")));
        }
        let n = count.max(1) as f64;
        let m = EpochMetrics {
            epoch,
            phase,
            mean_r_div: sums[0] / n,
            mean_r_rep: sums[1] / n,
            mean_r_query: sums[2] / n,
            mean_r_coh: sums[3] / n,
            mean_composite: sums[4] / n,
            baseline: baseline.b,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(TrainOutput {
        params,
        metrics,
        baseline,
    })
}
