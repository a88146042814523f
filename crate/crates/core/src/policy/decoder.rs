use std::collections::BTreeSet;

use super::PolicyParams;
use crate::databundle::FrameRef;
use crate::diffcore::{lstm_step, Graph, LstmWeights, Tensor, Var};
use crate::error::{Error, Result};

/// Summary recurrence state: `h` embeds the frames chosen so far.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    pub selected: BTreeSet<FrameRef>,
    /// Frames in the order they were chosen.
    pub order: Vec<FrameRef>,
    pub step: usize,
}

impl DecoderState {
    pub fn is_selected(&self, f: FrameRef) -> bool {
        self.selected.contains(&f)
    }
}

/// Empty summary. The recurrence starts from a zero carry and immediately
/// consumes the learned start vector, so `h` is ready for the first step.
pub fn init_decoder(g: &mut Graph, params: &PolicyParams) -> Result<DecoderState> {
    let n_h = params.config.n_h;
    let zero = g.constant(Tensor::zeros(&[n_h]));
    let start = g.param(&params.store, "dec.start")?;
    let w = LstmWeights::load(g, &params.store, "dec.lstm")?;
    let (h, c) = lstm_step(g, start, zero, zero, &w)?;
    Ok(DecoderState {
        h,
        c,
        selected: BTreeSet::new(),
        order: Vec::new(),
        step: 0,
    })
}

/// Feeds the chosen frame's encoding through the recurrence.
pub fn advance_decoder(
    g: &mut Graph,
    s: &DecoderState,
    frame: FrameRef,
    encoding: Var,
    params: &PolicyParams,
) -> Result<DecoderState> {
    if s.selected.contains(&frame) {
        return Err(Error::Contract(format!("frame {frame:?} already selected")));
    }
    let w = LstmWeights::load(g, &params.store, "dec.lstm")?;
    let (h, c) = lstm_step(g, encoding, s.h, s.c, &w)?;
    let mut selected = s.selected.clone();
    selected.insert(frame);
    let mut order = s.order.clone();
    order.push(frame);
    Ok(DecoderState {
        h,
        c,
        selected,
        order,
        step: s.step + 1,
    })
}
