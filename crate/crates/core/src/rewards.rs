//! Terminal rewards for a finished summary.
//!
//! All rewards take normalized bundle-space embeddings, never the policy's
//! learned encodings, so the objective does not move with the parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub beta: [f64; 4],
}

impl RewardWeights {
    pub fn new(beta: [f64; 4]) -> Result<Self> {
        if beta.iter().any(|b| !(*b >= 0.0)) || beta.iter().all(|b| *b == 0.0) {
            return Err(Error::Contract(format!("reward weights {beta:?} must be >= 0 with one positive")));
        }
        Ok(RewardWeights { beta })
    }

    /// Diversity, representativeness and query terms only.
    pub fn phase_one() -> Self {
        RewardWeights {
            beta: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0],
        }
    }

    /// All four terms equally.
    pub fn phase_two() -> Self {
        RewardWeights { beta: [0.25; 4] }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub r_div: f64,
    pub r_rep: f64,
    pub r_query: f64,
    pub r_coh: f64,
    pub composite: f64,
    /// Summary shorter than two frames; diversity defaulted to 0.
    #[serde(default)]
    pub degenerate_summary: bool,
    /// No web-images; query reward defaulted to 1.
    #[serde(default)]
    pub no_query_evidence: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn min_sq_dist(x: &[f64], set: &[&[f64]]) -> f64 {
    set.iter().map(|y| sq_dist(x, y)).fold(f64::INFINITY, f64::min)
}

/// Mean pairwise dissimilarity `1 - y_t·y_t'` over ordered pairs.
/// Returns `(value, degenerate)`; fewer than two frames give `(0, true)`.
pub fn r_div(summary: &[&[f64]]) -> (f64, bool) {
    let l = summary.len();
    if l < 2 {
        return (0.0, true);
    }
    let mut total = 0.0;
    for (i, a) in summary.iter().enumerate() {
        for (j, b) in summary.iter().enumerate() {
            if i != j {
                total += 1.0 - dot(a, b);
            }
        }
    }
    (total / (l * (l - 1)) as f64, false)
}

/// `exp(-mean over all frames of the squared distance to the nearest summary frame)`.
pub fn r_rep(summary: &[&[f64]], all_frames: &[&[f64]]) -> Result<f64> {
    if summary.is_empty() {
        return Err(Error::Contract("representativeness of an empty summary".into()));
    }
    if all_frames.is_empty() {
        return Err(Error::Contract("representativeness over no frames".into()));
    }
    let mean = all_frames.iter().map(|x| min_sq_dist(x, summary)).sum::<f64>() / all_frames.len() as f64;
    Ok((-mean).exp())
}

/// `exp(-mean over summary frames of the squared distance to the nearest image)`.
/// Returns `(value, no_evidence)`; without images the reward is `(1, true)`.
pub fn r_query(summary: &[&[f64]], images: &[&[f64]]) -> Result<(f64, bool)> {
    if images.is_empty() {
        return Ok((1.0, true));
    }
    if summary.is_empty() {
        return Err(Error::Contract("query reward of an empty summary".into()));
    }
    let mean = summary.iter().map(|y| min_sq_dist(y, images)).sum::<f64>() / summary.len() as f64;
    Ok(((-mean).exp(), false))
}

/// Mean neighbour correlation; each frame scores half the dot products with
/// its predecessor and successor, a missing neighbour counting as 0.
pub fn r_coh(summary: &[&[f64]]) -> Result<f64> {
    let l = summary.len();
    if l == 0 {
        return Err(Error::Contract("coherence of an empty summary".into()));
    }
    let mut total = 0.0;
    for t in 0..l {
        let mut rho = 0.0;
        if t > 0 {
            rho += dot(summary[t], summary[t - 1]);
        }
        if t + 1 < l {
            rho += dot(summary[t], summary[t + 1]);
        }
        total += 0.5 * rho;
    }
    Ok(total / l as f64)
}

pub fn composite(report: &RewardReport, w: &RewardWeights) -> f64 {
    let [b1, b2, b3, b4] = w.beta;
    b1 * report.r_div + b2 * report.r_rep + b3 * report.r_query + b4 * report.r_coh
}

/// All four rewards and their weighted sum for one ordered summary.
pub fn evaluate(
    summary: &[&[f64]],
    all_frames: &[&[f64]],
    images: &[&[f64]],
    w: &RewardWeights,
) -> Result<RewardReport> {
    let (r_div, degenerate_summary) = r_div(summary);
    let (r_query, no_query_evidence) = r_query(summary, images)?;
    let mut report = RewardReport {
        r_div,
        r_rep: r_rep(summary, all_frames)?,
        r_query,
        r_coh: r_coh(summary)?,
        composite: 0.0,
        degenerate_summary,
        no_query_evidence,
    };
    report.composite = composite(&report, w);
    Ok(report)
}
