use rand::Rng;

use super::cells::INIT_SCALE;
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Additive attention `e_t = vᵀ tanh(W_a s + U_a h_t)`.
#[derive(Debug, Clone)]
pub struct Attention {
    w: ParamId,
    u: ParamId,
    v: ParamId,
}

/// Keys projected once per encoded batch and reused at every decoder step.
#[derive(Debug, Clone, Copy)]
pub struct AttentionKeys {
    projected: Var,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        query: usize,
        key: usize,
        size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(
                format!("{prefix}.w"),
                Tensor::uniform(&[query, size], INIT_SCALE, rng),
            )?,
            u: store.add(
                format!("{prefix}.u"),
                Tensor::uniform(&[key, size], INIT_SCALE, rng),
            )?,
            v: store.add(
                format!("{prefix}.v"),
                Tensor::uniform(&[size, 1], INIT_SCALE, rng),
            )?,
        })
    }

    /// `states` is `(B·T)×key` with each batch row's T states contiguous.
    pub fn keys(&self, tape: &mut Tape, store: &ParamStore, states: Var) -> Result<AttentionKeys> {
        let u = tape.param(store, self.u);
        Ok(AttentionKeys {
            projected: tape.matmul(states, u)?,
        })
    }

    /// Returns `(context B×key, weights B×T)`; weights are zero at positions
    /// `t >= lengths[b]`.
    pub fn attend(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: Var,
        keys: AttentionKeys,
        states: Var,
        lengths: &[usize],
    ) -> Result<(Var, Var)> {
        let b = lengths.len();
        let (rows, _) = tape.dims(states);
        let t = rows / b;
        let w = tape.param(store, self.w);
        let v = tape.param(store, self.v);
        let ws = tape.matmul(query, w)?;
        let pre = tape.repeat_add(keys.projected, ws, t)?;
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, v)?;
        let scores = tape.reshape(scores, b, t)?;
        let weights = tape.masked_softmax(scores, Some(lengths))?;
        let context = tape.weighted_rows(weights, states)?;
        Ok((context, weights))
    }
}
