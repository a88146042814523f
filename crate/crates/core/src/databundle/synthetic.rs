//! Seeded stand-in for real query events.
//!
//! Each event has a handful of latent concepts (sub-events). Videos wander
//! through 2-4 of them as smooth random walks; web-images only show the
//! query-relevant ones; video text leans toward the query in proportion to
//! how much relevant footage the video holds.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{normalize_in_place, EpisodeBundle, FrameRef, VideoTrack};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_events: usize,
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub n_images: usize,
    pub d_visual: usize,
    pub d_text: usize,
    pub n_concepts: usize,
    pub relevance_fraction: f64,
    /// Expected norm of the per-frame perturbation around its concept center.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_events: 8,
            n_videos: 6,
            frames_per_video: 20,
            n_images: 12,
            d_visual: 16,
            d_text: 8,
            n_concepts: 5,
            relevance_fraction: 0.8,
            noise_scale: 0.7,
            seed: 42,
        }
    }
}

/// Autocorrelation of the within-segment noise process.
const WALK_SMOOTHNESS: f64 = 0.8;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_events", self.n_events),
            ("n_videos", self.n_videos),
            ("frames_per_video", self.frames_per_video),
            ("n_images", self.n_images),
            ("d_visual", self.d_visual),
            ("d_text", self.d_text),
            ("n_concepts", self.n_concepts),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, c)| *c == 0) {
            return Err(Error::Contract(format!("synthetic spec: {name} must be positive")));
        }
        if !(self.relevance_fraction > 0.0 && self.relevance_fraction <= 1.0) {
            return Err(Error::Contract("synthetic spec: relevance_fraction must be in (0, 1]".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Contract("synthetic spec: noise_scale must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn n_relevant(&self) -> usize {
        ((self.relevance_fraction * self.n_concepts as f64).round() as usize).clamp(1, self.n_concepts)
    }
}

fn unit_gaussian<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if normalize_in_place(&mut v).is_ok() {
            return v;
        }
    }
}

fn to_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

/// Frame or image: center plus scaled noise, renormalized and rounded to `f32`.
fn perturbed(center: &[f64], noise: &[f64], scale: f64) -> Vec<f64> {
    let mut v: Vec<f64> = center.iter().zip(noise).map(|(c, n)| c + scale * n).collect();
    normalize_in_place(&mut v).expect("perturbation never cancels a unit center exactly");
    to_f32(&mut v);
    v
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Splits `total` into `parts` positive segment lengths.
fn segment_lengths<R: Rng>(rng: &mut R, total: usize, parts: usize) -> Vec<usize> {
    let parts = parts.min(total);
    let mut cuts: Vec<usize> = (1..total).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(parts - 1).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(total)) {
        out.push(c - prev);
        prev = c;
    }
    out
}

/// Generated events plus the latent concept centers (exposed for oracles).
#[derive(Clone, Debug)]
pub struct SyntheticEvent {
    pub bundle: EpisodeBundle,
    pub centers: Vec<Vec<f64>>,
    pub relevant: Vec<usize>,
    /// Concept index of every frame, per video.
    pub labels: Vec<Vec<usize>>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<EpisodeBundle>> {
    Ok(generate_synthetic_detailed(spec)?.into_iter().map(|e| e.bundle).collect())
}

pub fn generate_synthetic_detailed(spec: &SyntheticSpec) -> Result<Vec<SyntheticEvent>> {
    spec.validate()?;
    (0..spec.n_events)
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(e as u64);
            generate_event(spec, e, &mut rng)
        })
        .collect()
}

fn generate_event(spec: &SyntheticSpec, index: usize, rng: &mut ChaCha8Rng) -> Result<SyntheticEvent> {
    let d = spec.d_visual;
    let per_coord = spec.noise_scale / (d as f64).sqrt();
    let centers: Vec<Vec<f64>> = (0..spec.n_concepts)
        .map(|_| {
            let mut c = unit_gaussian(rng, d);
            to_f32(&mut c);
            c
        })
        .collect();
    let mut order: Vec<usize> = (0..spec.n_concepts).collect();
    order.shuffle(rng);
    let mut relevant: Vec<usize> = order[..spec.n_relevant()].to_vec();
    relevant.sort_unstable();
    let is_relevant = |k: usize| relevant.contains(&k);

    let mut videos = Vec::with_capacity(spec.n_videos);
    let mut labels = Vec::with_capacity(spec.n_videos);
    let query = {
        let mut q = unit_gaussian(rng, spec.d_text);
        to_f32(&mut q);
        q
    };
    for v in 0..spec.n_videos {
        let visits = rng.random_range(2..=4usize).min(spec.n_concepts).min(spec.frames_per_video);
        let mut walk: Vec<usize> = Vec::with_capacity(visits);
        while walk.len() < visits {
            let k = rng.random_range(0..spec.n_concepts);
            if walk.last() != Some(&k) || spec.n_concepts == 1 {
                walk.push(k);
            }
        }
        let lengths = segment_lengths(rng, spec.frames_per_video, walk.len());
        let mut frames = Vec::with_capacity(spec.frames_per_video);
        let mut frame_labels = Vec::with_capacity(spec.frames_per_video);
        for (&k, &len) in walk.iter().zip(&lengths) {
            let mut noise: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * per_coord).collect();
            for _ in 0..len {
                frames.push(perturbed(&centers[k], &noise, 1.0));
                frame_labels.push(k);
                let keep = WALK_SMOOTHNESS;
                let fresh = (1.0 - keep * keep).sqrt();
                for n in noise.iter_mut() {
                    *n = keep * *n + fresh * rng.sample::<f64, _>(StandardNormal) * per_coord;
                }
            }
        }
        let share = frame_labels.iter().filter(|&&k| is_relevant(k)).count() as f64 / frame_labels.len() as f64;
        let off_topic = unit_gaussian(rng, spec.d_text);
        let mut text: Vec<f64> = query
            .iter()
            .zip(&off_topic)
            .map(|(q, o)| share * q + (1.0 - share) * o)
            .collect();
        if normalize_in_place(&mut text).is_err() {
            text = off_topic;
        }
        to_f32(&mut text);
        videos.push(VideoTrack {
            video_id: format!("ev{index:03}_v{v:02}"),
            frames,
            text,
        });
        labels.push(frame_labels);
    }

    let images = (0..spec.n_images)
        .map(|j| {
            let k = relevant[j % relevant.len()];
            let noise: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * per_coord).collect();
            perturbed(&centers[k], &noise, 1.0)
        })
        .collect();

    let ground_truth: Vec<FrameRef> = relevant
        .iter()
        .filter_map(|&k| {
            let mut best: Option<(f64, FrameRef)> = None;
            for (vi, video) in videos.iter().enumerate() {
                for (fi, f) in video.frames.iter().enumerate() {
                    if labels[vi][fi] != k {
                        continue;
                    }
                    let dist = sq_dist(f, &centers[k]);
                    if best.is_none_or(|(b, _)| dist < b) {
                        best = Some((dist, (vi, fi)));
                    }
                }
            }
            best.map(|(_, r)| r)
        })
        .collect();

    let bundle = EpisodeBundle {
        event_id: format!("event_{index:03}"),
        d_visual: d,
        d_text: spec.d_text,
        videos,
        images,
        query,
        ground_truth: Some(ground_truth),
    };
    bundle.validate()?;
    Ok(SyntheticEvent {
        bundle,
        centers,
        relevant,
        labels,
    })
}
