#![allow(dead_code)]

use qamvs::databundle::{generate_synthetic, SyntheticSpec};
use qamvs::rewards::r_coh;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

/// One smooth synthetic video (a walk through a few concepts), normalized.
pub fn smooth_walk(seed: u64) -> Vec<Vec<f64>> {
    let spec = SyntheticSpec {
        n_events: 1,
        n_videos: 1,
        seed,
        ..SyntheticSpec::default()
    };
    let b = generate_synthetic(&spec).unwrap().remove(0).normalize().unwrap();
    b.videos.into_iter().next().unwrap().frames
}

/// Fraction of `trials` walks whose own order is at least as coherent as a
/// uniformly random permutation of the same frames.
pub fn coherence_ordering_rate(trials: u64) -> f64 {
    let mut wins = 0;
    for t in 0..trials {
        let walk = smooth_walk(t);
        let mut shuffled = walk.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(t ^ 0xc0e);
        shuffled.shuffle(&mut rng);
        if r_coh(&refs(&walk)).unwrap() >= r_coh(&refs(&shuffled)).unwrap() {
            wins += 1;
        }
    }
    wins as f64 / trials as f64
}

/// Random-summary reward invariants. Returns the number of checked summaries.
pub fn reward_invariants(n: usize, seed: u64) -> Result<usize, String> {
    use qamvs::rewards::{r_div, r_query, r_rep};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..n {
        let d = rng.random_range(2..=8);
        let l = rng.random_range(1..=10);
        let extra = rng.random_range(0..=10);
        let n_img = rng.random_range(1..=5);
        let y: Vec<Vec<f64>> = (0..l).map(|_| unit(&mut rng, d)).collect();
        let mut x = y.clone();
        x.extend((0..extra).map(|_| unit(&mut rng, d)));
        let imgs: Vec<Vec<f64>> = (0..n_img).map(|_| unit(&mut rng, d)).collect();
        let (yr, xr, ir) = (refs(&y), refs(&x), refs(&imgs));

        let (div, degenerate) = r_div(&yr);
        let rep = r_rep(&yr, &xr).map_err(|e| e.to_string())?;
        let (query, _) = r_query(&yr, &ir).map_err(|e| e.to_string())?;
        let coh = r_coh(&yr).map_err(|e| e.to_string())?;
        let eps = 1e-12;
        let fail = |what: &str| Err(format!("case {case}: {what}"));
        if !(-eps..=2.0 + eps).contains(&div) || degenerate != (l < 2) {
            return fail("r_div range");
        }
        if !(rep > 0.0 && rep <= 1.0 + eps) {
            return fail("r_rep range");
        }
        if !(query > 0.0 && query <= 1.0 + eps) {
            return fail("r_query range");
        }
        if !(-1.0 - eps..=1.0 + eps).contains(&coh) {
            return fail("r_coh range");
        }

        // permutation invariance
        let mut yp = y.clone();
        yp.shuffle(&mut rng);
        let mut xp = x.clone();
        xp.shuffle(&mut rng);
        let mut ip = imgs.clone();
        ip.shuffle(&mut rng);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        if !close(r_div(&refs(&yp)).0, div) {
            return fail("r_div permutation");
        }
        if !close(r_rep(&refs(&yp), &refs(&xp)).unwrap(), rep) {
            return fail("r_rep permutation");
        }
        if !close(r_query(&refs(&yp), &refs(&ip)).unwrap().0, query) {
            return fail("r_query permutation");
        }

        // duplicating a frame
        let central = most_central(&y);
        let mut yd = y.clone();
        yd.push(y[central].clone());
        if div > 1e-9 && r_div(&refs(&yd)).0 >= div {
            return fail("duplicating the most central frame did not lower r_div");
        }
        let mut yd = y.clone();
        yd.push(y[rng.random_range(0..l)].clone());
        if r_rep(&refs(&yd), &xr).unwrap() < rep - 1e-15 {
            return fail("duplicate lowered r_rep");
        }
        // adding any frame from X never lowers r_rep
        let mut ya = y.clone();
        ya.push(x[rng.random_range(0..x.len())].clone());
        if r_rep(&refs(&ya), &xr).unwrap() < rep - 1e-15 {
            return fail("added frame lowered r_rep");
        }
    }
    Ok(n)
}

/// Index of the frame with the smallest total dissimilarity to the rest.
/// Duplicating it always lowers a nonzero r_div; duplicating an outlier can
/// raise it.
pub fn most_central(y: &[Vec<f64>]) -> usize {
    let load = |k: usize| -> f64 {
        y.iter().map(|o| 1.0 - y[k].iter().zip(o).map(|(a, b)| a * b).sum::<f64>()).sum()
    };
    (0..y.len()).min_by(|&a, &b| load(a).total_cmp(&load(b))).unwrap()
}

/// r_div before and after duplicating the outlier of {e1, e1, e1, -e1}.
pub fn outlier_duplicate_counterexample() -> (f64, f64) {
    use qamvs::rewards::r_div;
    let a = vec![1.0, 0.0];
    let b = vec![-1.0, 0.0];
    let before = r_div(&[&a, &a, &a, &b]).0;
    let after = r_div(&[&a, &a, &a, &b, &b]).0;
    (before, after)
}

/// The three closed-form reward values, as (got, expected).
pub fn closed_forms() -> [(f64, f64); 3] {
    use qamvs::rewards::{r_query, r_rep};
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    let rep = r_rep(&[&e1], &[&e1, &e2]).unwrap();
    let query = r_query(&[&e1], &[&e2]).unwrap().0;
    let coh = r_coh(&[&e1, &e1, &e1]).unwrap();
    [(rep, (-1.0f64).exp()), (query, (-2.0f64).exp()), (coh, 2.0 / 3.0)]
}
