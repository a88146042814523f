//! F1 against reference summaries, the random baseline and the runtime
//! benchmark.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::databundle::{generate_synthetic, EpisodeBundle, FrameRef, SyntheticSpec};
use crate::error::{Error, Result};
use crate::inference::{greedy_summarize, Summary};
use crate::policy::PolicyParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Euclidean distance below which two normalized embeddings match.
    pub match_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { match_threshold: 0.6 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.match_threshold > 0.0 && self.match_threshold.is_finite() {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "match threshold must be positive, got {}",
                self.match_threshold
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub summary: usize,
    pub truth: usize,
    pub distance: f64,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Greedy one-to-one matching: candidate pairs closer than `threshold`,
/// taken in ascending distance, each side used at most once.
pub fn match_frames(s: &[&[f64]], g: &[&[f64]], threshold: f64) -> Vec<Match> {
    let mut pairs = Vec::new();
    for (i, a) in s.iter().enumerate() {
        for (j, b) in g.iter().enumerate() {
            let d = distance(a, b);
            if d < threshold {
                pairs.push(Match {
                    summary: i,
                    truth: j,
                    distance: d,
                });
            }
        }
    }
    pairs.sort_by(|x, y| {
        x.distance
            .total_cmp(&y.distance)
            .then(x.summary.cmp(&y.summary))
            .then(x.truth.cmp(&y.truth))
    });
    let mut used_s = vec![false; s.len()];
    let mut used_g = vec![false; g.len()];
    let mut out = Vec::new();
    for p in pairs {
        if !used_s[p.summary] && !used_g[p.truth] {
            used_s[p.summary] = true;
            used_g[p.truth] = true;
            out.push(p);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// The summary was empty; precision is undefined and scored 0.
    pub empty_summary: bool,
}

pub fn f1_score(s: &[&[f64]], g: &[&[f64]], threshold: f64) -> Result<F1Score> {
    if g.is_empty() {
        return Err(Error::Contract("reference summary is empty".into()));
    }
    if s.is_empty() {
        return Ok(F1Score {
            empty_summary: true,
            ..F1Score::default()
        });
    }
    let m = match_frames(s, g, threshold).len() as f64;
    let precision = m / s.len() as f64;
    let recall = m / g.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(F1Score {
        precision,
        recall,
        f1,
        empty_summary: false,
    })
}

/// Scores averaged over several reference summaries.
pub fn f1_multi(s: &[&[f64]], refs: &[Vec<&[f64]>], threshold: f64) -> Result<(Vec<F1Score>, F1Score)> {
    if refs.is_empty() {
        return Err(Error::Contract("no reference summaries".into()));
    }
    let per = refs
        .iter()
        .map(|g| f1_score(s, g, threshold))
        .collect::<Result<Vec<_>>>()?;
    let n = per.len() as f64;
    let mean = F1Score {
        precision: per.iter().map(|x| x.precision).sum::<f64>() / n,
        recall: per.iter().map(|x| x.recall).sum::<f64>() / n,
        f1: per.iter().map(|x| x.f1).sum::<f64>() / n,
        empty_summary: s.is_empty(),
    };
    Ok((per, mean))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub event_id: String,
    pub per_reference_f1: Vec<f64>,
    pub mean_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
}

fn ground_truth(bundle: &EpisodeBundle) -> Result<&[FrameRef]> {
    match bundle.ground_truth.as_deref() {
        Some(gt) if !gt.is_empty() => Ok(gt),
        _ => Err(Error::Contract(format!("event {} has no ground truth", bundle.event_id))),
    }
}

/// F1 of an ordered frame selection against the bundle's ground truth.
pub fn evaluate_frames(bundle: &EpisodeBundle, frames: &[FrameRef], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let b = bundle.normalize()?;
    let gt = ground_truth(&b)?;
    let s: Vec<&[f64]> = frames.iter().map(|&f| b.frame(f)).collect();
    let refs = vec![gt.iter().map(|&f| b.frame(f)).collect::<Vec<_>>()];
    let (per, mean) = f1_multi(&s, &refs, cfg.match_threshold)?;
    Ok(EvalReport {
        event_id: b.event_id.clone(),
        per_reference_f1: per.iter().map(|x| x.f1).collect(),
        mean_f1: mean.f1,
        precision: mean.precision,
        recall: mean.recall,
        threshold: cfg.match_threshold,
    })
}

pub fn evaluate_summary(summary: &Summary, bundle: &EpisodeBundle, cfg: &EvalConfig) -> Result<EvalReport> {
    let frames = summary.frame_refs(bundle)?;
    evaluate_frames(bundle, &frames, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub mean_f1: f64,
    pub std_f1: f64,
    pub scores: Vec<f64>,
}

/// F1 of uniformly random `len`-frame summaries, one per seed `0..n_seeds`.
pub fn random_baseline(b: &EpisodeBundle, len: usize, n_seeds: u64, cfg: &EvalConfig) -> Result<BaselineStats> {
    let total = b.total_frames();
    if len == 0 || len > total {
        return Err(Error::Contract(format!("summary length {len} must be in 1..={total}")));
    }
    if n_seeds == 0 {
        return Err(Error::Contract("random baseline needs at least one seed".into()));
    }
    let flat: Vec<FrameRef> = (0..b.videos.len())
        .flat_map(|v| (0..b.videos[v].frames.len()).map(move |f| (v, f)))
        .collect();
    let scores = (0..n_seeds)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames: Vec<FrameRef> = sample(&mut rng, total, len).into_iter().map(|i| flat[i]).collect();
            evaluate_frames(b, &frames, cfg).map(|r| r.mean_f1)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scores.len() as f64;
    let mean_f1 = scores.iter().sum::<f64>() / n;
    // shifted by the first score so identical scores give exactly zero
    let shift = scores[0];
    let m1 = scores.iter().map(|x| x - shift).sum::<f64>() / n;
    let m2 = scores.iter().map(|x| (x - shift).powi(2)).sum::<f64>() / n;
    let std_f1 = (m2 - m1 * m1).max(0.0).sqrt();
    Ok(BaselineStats { mean_f1, std_f1, scores })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub frames: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    #[serde(rename = "L")]
    pub len: usize,
    pub rows: Vec<BenchRow>,
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    /// `t(2n) / t(n)` for every pair of counts that differ by exactly 2×.
    pub doubling_ratios: Vec<f64>,
}

/// Least-squares line through `(x, y)`: `(intercept, slope, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (intercept, slope, r2)
}

/// Frames of the benchmark bundles are spread over this many videos.
pub const BENCH_VIDEOS: usize = 10;
const BENCH_MIN_RUNS: usize = 5;
/// Each size is repeated until this much wall time has been spent on it.
const BENCH_MIN_SECONDS: f64 = 0.3;

/// Synthetic bundle with `frames` frames matching the model's input sizes.
pub fn bench_bundle(params: &PolicyParams, frames: usize, seed: u64) -> Result<EpisodeBundle> {
    let videos = BENCH_VIDEOS.min(frames);
    if frames % videos != 0 {
        return Err(Error::Contract(format!(
            "frame count {frames} is not a multiple of {videos} videos"
        )));
    }
    let spec = SyntheticSpec {
        n_events: 1,
        n_videos: videos,
        frames_per_video: frames / videos,
        d_visual: params.config.d_visual,
        d_text: params.config.d_text,
        seed,
        ..SyntheticSpec::default()
    };
    Ok(generate_synthetic(&spec)?.remove(0))
}

/// Fastest observed wall-clock of greedy decoding at each frame count.
pub fn bench_linear(params: &PolicyParams, frame_counts: &[usize], len: usize) -> Result<BenchReport> {
    let mut sorted = frame_counts.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() < 4 || sorted[sorted.len() - 1] < 4 * sorted[0] {
        return Err(Error::Contract(
            "benchmark needs at least 4 frame counts spanning 4x".into(),
        ));
    }
    let mut rows = Vec::new();
    for &n in &sorted {
        let bundle = bench_bundle(params, n, n as u64)?;
        // warm-up run, not timed
        greedy_summarize(&bundle, params, len)?;
        // fastest run: interference from other processes only adds time
        let mut best = f64::INFINITY;
        let (mut runs, mut spent) = (0, 0.0);
        while runs < BENCH_MIN_RUNS || spent < BENCH_MIN_SECONDS {
            let start = Instant::now();
            greedy_summarize(&bundle, params, len)?;
            let t = start.elapsed().as_secs_f64();
            best = best.min(t);
            spent += t;
            runs += 1;
        }
        rows.push(BenchRow {
            frames: n,
            seconds: best,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.frames as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    let (intercept, slope, r_squared) = linear_fit(&x, &y);
    let mut doubling_ratios = Vec::new();
    for a in &rows {
        if let Some(b) = rows.iter().find(|b| b.frames == 2 * a.frames) {
            doubling_ratios.push(b.seconds / a.seconds);
        }
    }
    Ok(BenchReport {
        len,
        rows,
        intercept,
        slope,
        r_squared,
        doubling_ratios,
    })
}
