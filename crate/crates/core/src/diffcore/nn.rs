use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Graph handles for one LSTM cell.
///
/// `wx` is `[d_in, 4n]`, `wh` is `[n, 4n]` and `b` is `[4n]`; the gate
/// blocks are laid out as (input, forget, cell, output).
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

impl LstmWeights {
    pub fn load(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(LstmWeights {
            wx: g.param(store, &format!("{prefix}.wx"))?,
            wh: g.param(store, &format!("{prefix}.wh"))?,
            b: g.param(store, &format!("{prefix}.b"))?,
        })
    }
}

/// Registers LSTM parameters under `prefix`.
pub fn init_lstm<R: rand::Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    d_in: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<()> {
    let fan_in = d_in + hidden;
    store.insert_uniform(format!("{prefix}.b"), &[4 * hidden], fan_in, rng)?;
    store.insert_uniform(format!("{prefix}.wh"), &[hidden, 4 * hidden], fan_in, rng)?;
    store.insert_uniform(format!("{prefix}.wx"), &[d_in, 4 * hidden], fan_in, rng)?;
    Ok(())
}

/// One gated-recurrence step; returns `(h', c')`.
pub fn lstm_step(g: &mut Graph, x: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let xw = g.matmul(x, w.wx)?;
    lstm_step_projected(g, xw, h, c, w)
}

/// As [`lstm_step`] with the input projection `x·wx` already computed.
pub fn lstm_step_projected(g: &mut Graph, xw: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let n = g.value(h).len();
    if g.value(c).len() != n || g.value(xw).len() != 4 * n {
        return Err(Error::Dimension {
            op: "lstm_step",
            lhs: g.value(xw).shape().to_vec(),
            rhs: vec![4 * n],
        });
    }
    let hw = g.matmul(h, w.wh)?;
    let pre = g.add(xw, hw)?;
    let pre = g.add(pre, w.b)?;
    let i = g.slice(pre, 0, n)?;
    let f = g.slice(pre, n, n)?;
    let cand = g.slice(pre, 2 * n, n)?;
    let o = g.slice(pre, 3 * n, n)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::graph::sigmoid;
    use crate::diffcore::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights(g: &mut Graph, d_in: usize, n: usize, wx: Vec<f64>, wh: Vec<f64>, b: Vec<f64>) -> LstmWeights {
        LstmWeights {
            wx: g.variable(Tensor::matrix(d_in, 4 * n, wx).unwrap()),
            wh: g.variable(Tensor::matrix(n, 4 * n, wh).unwrap()),
            b: g.variable(Tensor::vector(b)),
        }
    }

    #[test]
    fn all_zero_gives_zero() {
        let mut g = Graph::new();
        let w = weights(&mut g, 2, 3, vec![0.0; 24], vec![0.0; 36], vec![0.0; 12]);
        let x = g.constant(Tensor::vector(vec![0.0; 2]));
        let h = g.constant(Tensor::vector(vec![0.0; 3]));
        let (h2, c2) = lstm_step(&mut g, x, h, h, &w).unwrap();
        assert_eq!(g.value(h2).data(), &[0.0; 3]);
        assert_eq!(g.value(c2).data(), &[0.0; 3]);
    }

    #[test]
    fn saturated_forget_keeps_cell() {
        let n = 2;
        let mut b = vec![0.0; 4 * n];
        b[n..2 * n].iter_mut().for_each(|v| *v = 20.0);
        let mut g = Graph::new();
        let w = weights(&mut g, 1, n, vec![0.0; 4 * n], vec![0.0; 4 * n * n], b);
        let x = g.constant(Tensor::vector(vec![0.0]));
        let h = g.constant(Tensor::vector(vec![0.0; n]));
        let c = g.constant(Tensor::vector(vec![0.7, -1.3]));
        let (_, c2) = lstm_step(&mut g, x, h, c, &w).unwrap();
        for (a, b) in g.value(c2).data().iter().zip([0.7, -1.3]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn matches_scalar_loop() {
        let (d, n) = (3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut r = |k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (wx, wh, b, x, h0, c0) = (r(d * 4 * n), r(n * 4 * n), r(4 * n), r(d), r(n), r(n));

        // independent straight-line evaluation of the gates
        let pre = |gate: usize, j: usize| {
            let col = gate * n + j;
            let mut s = b[col];
            for k in 0..d {
                s += x[k] * wx[k * 4 * n + col];
            }
            for k in 0..n {
                s += h0[k] * wh[k * 4 * n + col];
            }
            s
        };
        let mut h_ref = vec![0.0; n];
        let mut c_ref = vec![0.0; n];
        for j in 0..n {
            let i = sigmoid(pre(0, j));
            let f = sigmoid(pre(1, j));
            let gg = pre(2, j).tanh();
            let o = sigmoid(pre(3, j));
            c_ref[j] = f * c0[j] + i * gg;
            h_ref[j] = o * c_ref[j].tanh();
        }

        let mut g = Graph::new();
        let w = weights(&mut g, d, n, wx.clone(), wh.clone(), b.clone());
        let xv = g.constant(Tensor::vector(x.clone()));
        let hv = g.constant(Tensor::vector(h0.clone()));
        let cv = g.constant(Tensor::vector(c0.clone()));
        let (h1, c1) = lstm_step(&mut g, xv, hv, cv, &w).unwrap();
        for j in 0..n {
            assert!((g.value(h1).data()[j] - h_ref[j]).abs() < 1e-14);
            assert!((g.value(c1).data()[j] - c_ref[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut g = Graph::new();
        let w = weights(&mut g, 2, 3, vec![0.0; 24], vec![0.0; 36], vec![0.0; 12]);
        let x = g.constant(Tensor::vector(vec![0.0; 5]));
        let h = g.constant(Tensor::vector(vec![0.0; 3]));
        assert!(matches!(lstm_step(&mut g, x, h, h, &w), Err(Error::Dimension { .. })));
    }
}
