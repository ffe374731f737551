//! Convolutional LSTM cell with a single fused gate convolution over `[x ‖ h]`.
//!
//! The gate convolution produces `4·C` channels split as input, forget,
//! output and candidate gates, in that order. No peephole connections.

use crate::{invalid, Element, Result, Tape, Tensor, Var};

/// Index of the forget gate slice in the fused gate channels.
pub const FORGET_GATE: usize = 1;
pub const GATE_COUNT: usize = 4;

/// Hidden and cell state of one conv-LSTM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Element> ConvLstmState<T> {
    pub fn zeros(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        let shape = [batch, height, width, channels];
        ConvLstmState { h: Tensor::zeros(&shape), c: Tensor::zeros(&shape) }
    }

    pub fn record(&self, tape: &mut Tape<T>) -> LstmVars {
        LstmVars { h: tape.leaf(self.h.clone()), c: tape.leaf(self.c.clone()) }
    }
}

/// A conv-LSTM state recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmVars {
    pub h: Var,
    pub c: Var,
}

impl LstmVars {
    pub fn read<T: Element>(&self, tape: &Tape<T>) -> ConvLstmState<T> {
        ConvLstmState { h: tape.value(self.h).clone(), c: tape.value(self.c).clone() }
    }
}

/// One step of the cell. `w` is `k × k × (Cx + C) × 4C`, `b` is `4C`.
///
/// ```text
/// [i f o g] = conv([x ‖ h], w) + b
/// c' = σ(f) ⊙ c + σ(i) ⊙ tanh(g)
/// h' = σ(o) ⊙ tanh(c')
/// ```
pub fn conv_lstm_cell<T: Element>(tape: &mut Tape<T>, x: Var, state: LstmVars, w: Var, b: Var) -> Result<LstmVars> {
    let [n, h, wd, _] = tape.value(x).dims4()?;
    let [sn, sh, sw, channels] = tape.value(state.h).dims4()?;
    if (n, h, wd) != (sn, sh, sw) || tape.value(state.c).shape() != tape.value(state.h).shape() {
        return invalid(format!(
            "conv-LSTM input {:?} does not match state {:?} / {:?}",
            tape.value(x).shape(),
            tape.value(state.h).shape(),
            tape.value(state.c).shape()
        ));
    }
    let gate_out = tape.value(w).shape().get(3).copied().unwrap_or(0);
    if gate_out != GATE_COUNT * channels {
        return invalid(format!("conv-LSTM kernel has {gate_out} outputs, expected {}", GATE_COUNT * channels));
    }

    let xh = tape.concat_channels(x, state.h)?;
    let gates = tape.conv2d(xh, w, b, 1)?;
    let i = tape.slice_channels(gates, 0, channels)?;
    let f = tape.slice_channels(gates, FORGET_GATE * channels, channels)?;
    let o = tape.slice_channels(gates, 2 * channels, channels)?;
    let g = tape.slice_channels(gates, 3 * channels, channels)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let o = tape.sigmoid(o);
    let g = tape.tanh(g);

    let keep = tape.mul(f, state.c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let squashed = tape.tanh(c);
    let h = tape.mul(o, squashed)?;
    Ok(LstmVars { h, c })
}
