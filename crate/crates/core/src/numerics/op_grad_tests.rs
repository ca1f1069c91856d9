//! Finite-difference audits for every differentiable tape operation.
//!
//! Each case builds a small randomized graph ending in a weighted sum (fixed
//! pseudo-random weights so no backward path degenerates to a constant) and
//! compares the tape gradient against central differences.

use rand::Rng;

use crate::rng;
use crate::tensor::Tensor;

use super::gradcheck::grad_check;
use super::gru::{rnn_forward, RnnKind, RnnSpec};
use super::tape::{Tape, Var};
use super::{ParamBuilder, ParamSet, ParamVars};

fn rand_tensor(shape: &[usize], tag: &str) -> Tensor<f64> {
    let mut r = rng::stream(7, tag);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
}

/// Weighted scalar readout so every output element matters differently.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, tag: &str) -> Var {
    let w = tape.leaf(rand_tensor(tape.value(out).shape(), tag));
    let prod = tape.mul(out, w);
    tape.sum_all(prod)
}

fn check(
    params: ParamSet<f64>,
    build: impl Fn(&mut Tape<f64>, &ParamVars) -> Var,
) {
    let eval = |p: &ParamSet<f64>| {
        let mut tape = Tape::new();
        let pv = ParamVars::bind(&mut tape, p);
        let loss = build(&mut tape, &pv);
        tape.value(loss).data()[0]
    };
    let analytic = |p: &ParamSet<f64>| {
        let mut tape = Tape::new();
        let pv = ParamVars::bind(&mut tape, p);
        let loss = build(&mut tape, &pv);
        let grads = tape.backward(loss);
        pv.collect_grads(p, &grads)
    };
    let report = grad_check(&params, &eval, &analytic, 1e-5, 1e-7).unwrap();
    assert!(
        report.passes(1e-7),
        "gradient check failed: {:?}",
        report.worst()
    );
}

#[test]
fn grad_linear() {
    let mut params = ParamSet::new();
    params.insert("x", rand_tensor(&[3, 4], "x"));
    params.insert("w", rand_tensor(&[5, 4], "w"));
    params.insert("b", rand_tensor(&[5], "b"));
    check(params, |tape, pv| {
        let y = tape.linear(pv.var("x"), pv.var("w"), Some(pv.var("b")));
        weighted_sum(tape, y, "ws")
    });
}

#[test]
fn grad_conv1d() {
    let mut params = ParamSet::new();
    params.insert("x", rand_tensor(&[2, 7], "x"));
    params.insert("w", rand_tensor(&[3, 2, 3], "w"));
    params.insert("b", rand_tensor(&[3], "b"));
    check(params, |tape, pv| {
        let y = tape
            .conv1d(pv.var("x"), pv.var("w"), Some(pv.var("b")), 2, 1)
            .unwrap();
        weighted_sum(tape, y, "ws")
    });
}

#[test]
fn grad_conv2d() {
    let mut params = ParamSet::new();
    params.insert("x", rand_tensor(&[2, 3, 5, 4], "x"));
    params.insert("w", rand_tensor(&[4, 3, 3, 3], "w"));
    params.insert("b", rand_tensor(&[4], "b"));
    check(params, |tape, pv| {
        let y = tape
            .conv2d(pv.var("x"), pv.var("w"), Some(pv.var("b")), (2, 1), (1, 1))
            .unwrap();
        weighted_sum(tape, y, "ws")
    });
}

#[test]
fn grad_conv3d() {
    let mut params = ParamSet::new();
    params.insert("x", rand_tensor(&[2, 7, 3, 4], "x"));
    params.insert("w", rand_tensor(&[2, 2, 3, 1, 1], "w"));
    params.insert("b", rand_tensor(&[2], "b"));
    check(params, |tape, pv| {
        let y = tape
            .conv3d(
                pv.var("x"),
                pv.var("w"),
                Some(pv.var("b")),
                (2, 1, 1),
                (0, 0, 0),
            )
            .unwrap();
        weighted_sum(tape, y, "ws")
    });
}

#[test]
fn grad_conv1d_time_and_depthwise() {
    let mut params = ParamSet::new();
    params.insert("x", rand_tensor(&[6, 3], "x"));
    params.insert("w", rand_tensor(&[4, 3, 3], "w"));
    params.insert("b", rand_tensor(&[4], "b"));
    params.insert("dw", rand_tensor(&[4, 5], "dw"));
    params.insert("db", rand_tensor(&[4], "db"));
    check(params, |tape, pv| {
        let y = tape.conv1d_time(pv.var("x"), pv.var("w"), Some(pv.var("b")));
        let z = tape.depthwise_conv1d(y, pv.var("dw"), Some(pv.var("db")));
        weighted_sum(tape, z, "ws")
    });
}

#[test]
fn grad_activations_chain() {
    let mut params = ParamSet::new();
    params.insert("x", rand_tensor(&[11], "x"));
    check(params, |tape, pv| {
        let a = tape.sigmoid(pv.var("x"));
        let b = tape.tanh(a);
        let c = tape.swish(b);
        // relu checked on a shifted copy to keep away from the kink
        let half = tape.scale(pv.var("x"), 0.5);
        let shifted = tape.add(c, half);
        let d = tape.relu(shifted);
        weighted_sum(tape, d, "ws")
    });
}

#[test]
fn grad_log_softmax() {
    let mut params = ParamSet::new();
    params.insert("x", rand_tensor(&[3, 5], "x"));
    check(params, |tape, pv| {
        let y = tape.log_softmax(pv.var("x"));
        weighted_sum(tape, y, "ws")
    });
}

#[test]
fn grad_layernorm_rows() {
    let mut params = ParamSet::new();
    params.insert("x", rand_tensor(&[4, 6], "x"));
    params.insert("g", rand_tensor(&[6], "g"));
    params.insert("b", rand_tensor(&[6], "b"));
    check(params, |tape, pv| {
        let y = tape.layernorm_rows(pv.var("x"), pv.var("g"), pv.var("b"), 1e-5);
        weighted_sum(tape, y, "ws")
    });
}

#[test]
fn grad_frame_norm() {
    let mut params = ParamSet::new();
    params.insert("x", rand_tensor(&[3, 2, 3, 3], "x"));
    params.insert("g", rand_tensor(&[2], "g"));
    params.insert("b", rand_tensor(&[2], "b"));
    check(params, |tape, pv| {
        let y = tape.frame_norm(pv.var("x"), pv.var("g"), pv.var("b"), 1e-5);
        weighted_sum(tape, y, "ws")
    });
}

#[test]
fn grad_glu() {
    let mut params = ParamSet::new();
    params.insert("x", rand_tensor(&[3, 8], "x"));
    check(params, |tape, pv| {
        let y = tape.glu(pv.var("x"));
        weighted_sum(tape, y, "ws")
    });
}

#[test]
fn grad_temporal_shift_and_mean_spatial() {
    let mut params = ParamSet::new();
    params.insert("x", rand_tensor(&[4, 4, 2, 2], "x"));
    check(params, |tape, pv| {
        let y = tape.temporal_shift(pv.var("x"), 1, 1);
        let z = tape.mean_spatial(y);
        weighted_sum(tape, z, "ws")
    });
}

#[test]
fn grad_concat_zero_from_reshape() {
    let mut params = ParamSet::new();
    params.insert("a", rand_tensor(&[3, 2], "a"));
    params.insert("b", rand_tensor(&[3, 4], "b"));
    check(params, |tape, pv| {
        let c = tape.concat_last(pv.var("a"), pv.var("b"));
        let m = tape.zero_from(c, 0, 2);
        let r = tape.reshape(m, &[2, 9]);
        weighted_sum(tape, r, "ws")
    });
}

#[test]
fn grad_bigru_two_layers() {
    let spec = RnnSpec {
        kind: RnnKind::Gru,
        input_dim: 3,
        hidden: 4,
        layers: 2,
        bidirectional: true,
    };
    let mut params = ParamSet::new();
    let mut b = ParamBuilder::new(&mut params, 11);
    spec.init_params("rnn", &mut b);
    params.insert("x", rand_tensor(&[5, 3], "x"));
    check(params, move |tape, pv| {
        let y = rnn_forward(tape, &spec, "rnn", pv, pv.var("x"), 4).unwrap();
        weighted_sum(tape, y, "ws")
    });
}

#[test]
fn grad_lstm_unidirectional() {
    let spec = RnnSpec {
        kind: RnnKind::Lstm,
        input_dim: 2,
        hidden: 3,
        layers: 1,
        bidirectional: false,
    };
    let mut params = ParamSet::new();
    let mut b = ParamBuilder::new(&mut params, 12);
    spec.init_params("rnn", &mut b);
    params.insert("x", rand_tensor(&[4, 2], "x"));
    check(params, move |tape, pv| {
        let y = rnn_forward(tape, &spec, "rnn", pv, pv.var("x"), 4).unwrap();
        weighted_sum(tape, y, "ws")
    });
}
