//! Hierarchical-attention pointer network.
//!
//! At each step the policy mixes three distributions over the unselected
//! frames: a two-level video/frame attention, an image-guided head and a
//! text/query head, weighted by a learned interpolation attention.

mod attention;
mod check;
mod decoder;
mod encoder;
mod modelfile;
mod step;

pub use attention::{attention_op, AttentionHead};
pub use check::{gradcheck_bundle, policy_gradcheck, sequence_log_prob, GRADCHECK_STEP};
pub use decoder::{advance_decoder, init_decoder, DecoderState};
pub use encoder::{encode_frames, Encodings};
pub use modelfile::{load_model, model_bytes, model_hash, parse_model, save_model, MODEL_MAGIC};
pub use step::{
    frame_attention, image_attention, interpolation_weights, policy_step, query_attention, video_attention,
    argmax, EpisodeContext, Heads, StepDistribution,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{init_lstm, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Input visual embedding size.
    pub d_visual: usize,
    /// Model embedding size (frame encodings, image encodings, contexts).
    pub d_e: usize,
    /// Summary recurrence hidden size.
    pub n_h: usize,
    /// Attention projection size.
    pub a_dim: usize,
    /// Per-direction encoder hidden size; two directions make `d_e`.
    pub bilstm_h: usize,
    pub d_text: usize,
    /// Hidden width of the text-context adapter.
    pub mlp_hidden: usize,
}

impl PolicyConfig {
    /// Full-scale sizes for the given input dimensions.
    pub fn full(d_visual: usize, d_text: usize) -> Self {
        PolicyConfig {
            d_visual,
            d_e: 256,
            n_h: 256,
            a_dim: 32,
            bilstm_h: 128,
            d_text,
            mlp_hidden: 64,
        }
    }

    /// Small sizes for desk-scale runs.
    pub fn desk(d_visual: usize, d_text: usize) -> Self {
        PolicyConfig {
            d_visual,
            d_e: 16,
            n_h: 16,
            a_dim: 8,
            bilstm_h: 8,
            d_text,
            mlp_hidden: 16,
        }
    }

    /// Uniform sizes for gradient checks: `d_e = n_h = dim`, `a_dim = dim / 2`.
    pub fn toy(d_visual: usize, d_text: usize, dim: usize) -> Self {
        PolicyConfig {
            d_visual,
            d_e: dim,
            n_h: dim,
            a_dim: (dim / 2).max(1),
            bilstm_h: dim / 2,
            d_text,
            mlp_hidden: dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_visual,
            self.d_e,
            self.n_h,
            self.a_dim,
            self.bilstm_h,
            self.d_text,
            self.mlp_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Contract(format!("policy config {self:?} has a zero dimension")));
        }
        if 2 * self.bilstm_h != self.d_e {
            return Err(Error::Contract(format!(
                "policy config: 2 * bilstm_h ({}) must equal d_e ({})",
                self.bilstm_h, self.d_e
            )));
        }
        Ok(())
    }
}

/// Attention heads and their input widths.
pub(crate) const HEADS: [(&str, Head); 5] = [
    ("att.frame", Head::Model),
    ("att.image", Head::Model),
    ("att.mix", Head::Model),
    ("att.text", Head::Text),
    ("att.video", Head::Model),
];

#[derive(Clone, Copy)]
pub(crate) enum Head {
    Model,
    Text,
}

/// Every learnable tensor of the policy plus the sizes they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub store: ParamStore,
}

impl PolicyParams {
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        s.insert_uniform("enc.proj.w", &[c.d_visual, c.d_e], c.d_visual, &mut rng)?;
        s.insert_uniform("enc.proj.b", &[c.d_e], c.d_visual, &mut rng)?;
        init_lstm(&mut s, "enc.fwd", c.d_e, c.bilstm_h, &mut rng)?;
        init_lstm(&mut s, "enc.bwd", c.d_e, c.bilstm_h, &mut rng)?;
        init_lstm(&mut s, "dec.lstm", c.d_e, c.n_h, &mut rng)?;
        s.insert_uniform("dec.start", &[c.d_e], c.d_e, &mut rng)?;
        for (name, head) in HEADS {
            let m = match head {
                Head::Model => c.d_e,
                Head::Text => c.d_text,
            };
            s.insert_uniform(format!("{name}.w1"), &[c.a_dim], c.a_dim, &mut rng)?;
            s.insert_uniform(format!("{name}.w2"), &[m + c.n_h, c.a_dim], m + c.n_h, &mut rng)?;
        }
        s.insert_uniform("adapter.w1", &[c.d_text, c.mlp_hidden], c.d_text, &mut rng)?;
        s.insert_uniform("adapter.b1", &[c.mlp_hidden], c.d_text, &mut rng)?;
        s.insert_uniform("adapter.w2", &[c.mlp_hidden, c.d_e], c.mlp_hidden, &mut rng)?;
        s.insert_uniform("adapter.b2", &[c.d_e], c.mlp_hidden, &mut rng)?;
        Ok(PolicyParams { config, store: s })
    }

    /// Parameter names grouped by module prefix (`enc.fwd`, `att.frame`, ...).
    pub fn groups(&self) -> Vec<String> {
        let mut groups: Vec<String> = self
            .store
            .names()
            .map(|n| n.rsplit_once('.').map(|(g, _)| g.to_string()).unwrap_or_default())
            .collect();
        groups.dedup();
        groups
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, p) in self.store.iter_mut() {
            if name.starts_with(prefix) {
                p.value.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
}
