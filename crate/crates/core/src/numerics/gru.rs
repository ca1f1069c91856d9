//! Recurrent cells (GRU / LSTM) composed on the tape, plus the length-aware
//! bidirectional multi-layer wrapper used by the decoder head.
//!
//! The backward direction of a sequence with true length `len < T` starts at
//! frame `len - 1`, never at `T - 1`, and all output rows at positions
//! `>= len` are exactly zero. That makes the output over real frames
//! independent of how much padding follows.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::tape::{Tape, Var};
use super::{ParamBuilder, ParamVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RnnKind {
    Gru,
    Lstm,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RnnSpec {
    pub kind: RnnKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
}

impl RnnSpec {
    pub fn output_dim(&self) -> usize {
        self.hidden * if self.bidirectional { 2 } else { 1 }
    }

    fn gate_names(&self) -> &'static [&'static str] {
        match self.kind {
            RnnKind::Gru => &["r", "z", "n"],
            RnnKind::Lstm => &["i", "f", "g", "o"],
        }
    }

    fn directions(&self) -> &'static [&'static str] {
        if self.bidirectional {
            &["fwd", "bwd"]
        } else {
            &["fwd"]
        }
    }

    /// Register all weights under `prefix`.
    pub fn init_params<S: Scalar>(&self, prefix: &str, builder: &mut ParamBuilder<'_, S>) {
        for layer in 0..self.layers {
            let in_dim = if layer == 0 {
                self.input_dim
            } else {
                self.output_dim()
            };
            for dir in self.directions() {
                for gate in self.gate_names() {
                    let base = format!("{prefix}.l{layer}.{dir}");
                    builder.weight(&format!("{base}.w_i{gate}"), &[self.hidden, in_dim], in_dim);
                    builder.weight(
                        &format!("{base}.w_h{gate}"),
                        &[self.hidden, self.hidden],
                        self.hidden,
                    );
                    builder.zeros(&format!("{base}.b_i{gate}"), &[self.hidden]);
                    builder.zeros(&format!("{base}.b_h{gate}"), &[self.hidden]);
                }
            }
        }
    }
}

struct GateVars {
    w_i: Var,
    w_h: Var,
    b_i: Var,
    b_h: Var,
}

fn gate_vars(pv: &ParamVars, base: &str, gate: &str) -> GateVars {
    GateVars {
        w_i: pv.var(&format!("{base}.w_i{gate}")),
        w_h: pv.var(&format!("{base}.w_h{gate}")),
        b_i: pv.var(&format!("{base}.b_i{gate}")),
        b_h: pv.var(&format!("{base}.b_h{gate}")),
    }
}

fn gate_preact<S: Scalar>(tape: &mut Tape<S>, g: &GateVars, x: Var, h: Var) -> Var {
    let xi = tape.linear(x, g.w_i, Some(g.b_i));
    let hh = tape.linear(h, g.w_h, Some(g.b_h));
    tape.add(xi, hh)
}

/// One GRU step. Gate equations:
///   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
///   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
fn gru_step<S: Scalar>(
    tape: &mut Tape<S>,
    pv: &ParamVars,
    base: &str,
    x: Var,
    h: Var,
) -> Var {
    let gr = gate_vars(pv, base, "r");
    let gz = gate_vars(pv, base, "z");
    let gn = gate_vars(pv, base, "n");
    let r_pre = gate_preact(tape, &gr, x, h);
    let r = tape.sigmoid(r_pre);
    let z_pre = gate_preact(tape, &gz, x, h);
    let z = tape.sigmoid(z_pre);
    let n_x = tape.linear(x, gn.w_i, Some(gn.b_i));
    let n_h = tape.linear(h, gn.w_h, Some(gn.b_h));
    let rn_h = tape.mul(r, n_h);
    let n_pre = tape.add(n_x, rn_h);
    let n = tape.tanh(n_pre);
    // h' = n - z*n + z*h
    let zn = tape.mul(z, n);
    let zh = tape.mul(z, h);
    let n_minus_zn = tape.sub(n, zn);
    tape.add(n_minus_zn, zh)
}

/// One LSTM step with the standard gate equations.
fn lstm_step<S: Scalar>(
    tape: &mut Tape<S>,
    pv: &ParamVars,
    base: &str,
    x: Var,
    state: (Var, Var),
) -> (Var, Var) {
    let (h, c) = state;
    let gi = gate_vars(pv, base, "i");
    let gf = gate_vars(pv, base, "f");
    let gg = gate_vars(pv, base, "g");
    let go = gate_vars(pv, base, "o");
    let i_pre = gate_preact(tape, &gi, x, h);
    let i = tape.sigmoid(i_pre);
    let f_pre = gate_preact(tape, &gf, x, h);
    let f = tape.sigmoid(f_pre);
    let g_pre = gate_preact(tape, &gg, x, h);
    let g = tape.tanh(g_pre);
    let o_pre = gate_preact(tape, &go, x, h);
    let o = tape.sigmoid(o_pre);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_next = tape.add(fc, ig);
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc);
    (h_next, c_next)
}

/// Run one direction of one layer over `xs[0..len]`, returning one hidden
/// vector per timestep in input order (positions >= len get zero rows later).
fn run_direction<S: Scalar>(
    tape: &mut Tape<S>,
    spec: &RnnSpec,
    pv: &ParamVars,
    base: &str,
    xs: &[Var],
    len: usize,
    reverse: bool,
) -> Vec<Option<Var>> {
    let mut out: Vec<Option<Var>> = vec![None; xs.len()];
    let mut h = tape.leaf(Tensor::zeros(&[spec.hidden]));
    let mut c = tape.leaf(Tensor::zeros(&[spec.hidden]));
    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    for t in order {
        match spec.kind {
            RnnKind::Gru => {
                h = gru_step(tape, pv, base, xs[t], h);
            }
            RnnKind::Lstm => {
                let (hn, cn) = lstm_step(tape, pv, base, xs[t], (h, c));
                h = hn;
                c = cn;
            }
        }
        out[t] = Some(h);
    }
    out
}

/// Length-aware (bidirectional) RNN over a (T, D) input. Returns (T, H*dirs)
/// with rows at positions >= `len` exactly zero.
pub fn rnn_forward<S: Scalar>(
    tape: &mut Tape<S>,
    spec: &RnnSpec,
    prefix: &str,
    pv: &ParamVars,
    input: Var,
    len: usize,
) -> Result<Var> {
    let t = tape.value(input).shape()[0];
    if len > t {
        return Err(Error::Shape(format!(
            "rnn: true length {len} exceeds padded length {t}"
        )));
    }
    if len == 0 {
        return Err(Error::Shape("rnn: true length must be >= 1".into()));
    }
    let mut xs: Vec<Var> = (0..t).map(|ti| tape.row(input, ti)).collect();
    for layer in 0..spec.layers {
        let fwd_base = format!("{prefix}.l{layer}.fwd");
        let fwd = run_direction(tape, spec, pv, &fwd_base, &xs, len, false);
        let combined: Vec<Var> = if spec.bidirectional {
            let bwd_base = format!("{prefix}.l{layer}.bwd");
            let bwd = run_direction(tape, spec, pv, &bwd_base, &xs, len, true);
            (0..t)
                .map(|ti| match (fwd[ti], bwd[ti]) {
                    (Some(f), Some(b)) => tape.concat_last(f, b),
                    _ => tape.leaf(Tensor::zeros(&[spec.output_dim()])),
                })
                .collect()
        } else {
            (0..t)
                .map(|ti| match fwd[ti] {
                    Some(f) => f,
                    None => tape.leaf(Tensor::zeros(&[spec.hidden])),
                })
                .collect()
        };
        xs = combined;
    }
    Ok(tape.stack_rows(&xs))
}
