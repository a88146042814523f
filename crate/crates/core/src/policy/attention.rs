use crate::diffcore::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Additive attention: `e_i = w1 · tanh(W2 [u_i; h])`, `p = softmax(e)`,
/// `c = Σ p_i u_i`.
///
/// `W2` is stored as one `[m + n_h, a_dim]` parameter and split into the
/// input rows and the hidden-state rows, so the input half can be projected
/// once per episode and reused at every decoding step.
#[derive(Clone, Copy, Debug)]
pub struct AttentionHead {
    pub w1: Var,
    pub w2_input: Var,
    pub w2_hidden: Var,
    pub input_dim: usize,
}

impl AttentionHead {
    pub fn load(g: &mut Graph, store: &ParamStore, prefix: &str, n_h: usize) -> Result<Self> {
        let w1 = g.param(store, &format!("{prefix}.w1"))?;
        let w2 = g.param(store, &format!("{prefix}.w2"))?;
        let (rows, a_dim) = match g.value(w2).shape() {
            [r, a] => (*r, *a),
            s => {
                return Err(Error::Dimension {
                    op: "attention.w2",
                    lhs: s.to_vec(),
                    rhs: vec![],
                })
            }
        };
        if g.value(w1).shape() != [a_dim] {
            return Err(Error::Dimension {
                op: "attention.w1",
                lhs: g.value(w1).shape().to_vec(),
                rhs: vec![a_dim],
            });
        }
        if rows <= n_h {
            return Err(Error::Dimension {
                op: "attention.w2",
                lhs: vec![rows, a_dim],
                rhs: vec![n_h],
            });
        }
        let input_dim = rows - n_h;
        let w2_input = g.rows(w2, 0, input_dim)?;
        let w2_hidden = g.rows(w2, input_dim, n_h)?;
        Ok(AttentionHead {
            w1,
            w2_input,
            w2_hidden,
            input_dim,
        })
    }

    /// `U · W2_input` for a stacked `[k, m]` input matrix.
    pub fn project_inputs(&self, g: &mut Graph, inputs: Var) -> Result<Var> {
        g.matmul(inputs, self.w2_input)
    }

    /// Attention over pre-projected inputs. Masked rows get probability 0.
    pub fn attend_projected(
        &self,
        g: &mut Graph,
        projected: Var,
        inputs: Var,
        h: Var,
        mask: &[bool],
    ) -> Result<(Var, Var)> {
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptySupport("attention over an empty input set".into()));
        }
        let hidden = g.matmul(h, self.w2_hidden)?;
        let pre = g.add_row(projected, hidden)?;
        let act = g.tanh(pre);
        let logits = g.matmul(act, self.w1)?;
        let p = g.masked_softmax(logits, mask)?;
        let c = g.matmul(p, inputs)?;
        Ok((p, c))
    }

    /// Full attention over a stacked `[k, m]` input matrix.
    pub fn attend(&self, g: &mut Graph, inputs: Var, h: Var, mask: &[bool]) -> Result<(Var, Var)> {
        let projected = self.project_inputs(g, inputs)?;
        self.attend_projected(g, projected, inputs, h, mask)
    }
}

/// Attention over a list of equal-length vectors, all of them live.
pub fn attention_op(g: &mut Graph, inputs: &[Var], h: Var, head: &AttentionHead) -> Result<(Var, Var)> {
    if inputs.is_empty() {
        return Err(Error::EmptySupport("attention over an empty input set".into()));
    }
    let stacked = g.stack(inputs)?;
    head.attend(g, stacked, h, &vec![true; inputs.len()])
}
