//! Composite layers built from tape primitives.

use crate::error::{Error, Result};
use crate::tape::{Adjacency, Tape, Var};

/// LeakyReLU slope used throughout the models.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Parameters of one LSTM cell. Gates are packed column-wise in the order
/// input, forget, cell candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `I × 4H`
    pub w_ih: Var,
    /// `H × 4H`
    pub w_hh: Var,
    /// `4H`
    pub bias: Var,
}

/// One LSTM step over a batch: `x: B×I`, `h, c: B×H`. Returns `(h', c')`.
///
/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')` with sigmoid gates `i, f, o` and a
/// tanh candidate `g`.
pub fn lstm_cell(tape: &mut Tape, x: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let hidden = tape.value(h).shape().last().copied().unwrap_or(0);
    let gates_w = tape.value(w.w_hh).shape().get(1).copied().unwrap_or(0);
    if gates_w != 4 * hidden || tape.value(c).shape() != tape.value(h).shape() {
        return Err(Error::Shape(format!(
            "lstm_cell: hidden {:?}, cell {:?}, recurrent weights {:?}",
            tape.value(h).shape(),
            tape.value(c).shape(),
            tape.value(w.w_hh).shape()
        )));
    }
    let zx = tape.matmul(x, w.w_ih)?;
    let zh = tape.matmul(h, w.w_hh)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_bias(z, w.bias)?;
    let zi = tape.slice_cols(z, 0, hidden)?;
    let zf = tape.slice_cols(z, hidden, 2 * hidden)?;
    let zg = tape.slice_cols(z, 2 * hidden, 3 * hidden)?;
    let zo = tape.slice_cols(z, 3 * hidden, 4 * hidden)?;
    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let g = tape.tanh(zg)?;
    let o = tape.sigmoid(zo)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Weisfeiler-Lehman style graph convolution: sum aggregation with a
/// trainable self weight `ε`, followed by one dense sublayer.
pub fn graph_conv(tape: &mut Tape, h: Var, adj: &Adjacency, eps: Var, w: Var, b: Var) -> Result<Var> {
    let a = tape.graph_aggregate(h, eps, adj)?;
    tape.dense(a, w, b)
}
