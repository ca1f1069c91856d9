//! Reverse-mode autodiff over a flat tape.
//!
//! Every operation appends one node (output value + parent ids + a backward
//! closure that maps the output gradient to per-parent gradient
//! contributions). Node ids grow monotonically, so a single reverse sweep is
//! a valid topological order. Tapes are built per sample and dropped after
//! the gradients are harvested.

use crate::scalar::Scalar;
use crate::tensor::{strides, Tensor};

use super::kernels;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn<S> = Box<dyn Fn(&Tensor<S>, &Tensor<S>, &[&Tensor<S>]) -> Vec<Tensor<S>>>;

struct Node<S: Scalar> {
    value: Tensor<S>,
    parents: Vec<usize>,
    back: Option<BackFn<S>>,
}

pub struct Grads<S: Scalar> {
    by_node: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn of(&self, v: Var) -> Option<&Tensor<S>> {
        self.by_node[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Input node: receives gradients but propagates nothing further.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(value, vec![], None)
    }

    /// Extension point for fused operations with bespoke backward passes.
    pub fn custom(&mut self, value: Tensor<S>, parents: Vec<Var>, back: BackFn<S>) -> Var {
        self.push(value, parents.into_iter().map(|v| v.0).collect(), Some(back))
    }

    fn push(&mut self, value: Tensor<S>, parents: Vec<usize>, back: Option<BackFn<S>>) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            back,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Grads<S> {
        assert_eq!(
            self.nodes[root.0].value.numel(),
            1,
            "backward root must be scalar"
        );
        let mut g: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[root.0] = Some(Tensor::full(self.nodes[root.0].value.shape(), S::one()));
        for id in (0..=root.0).rev() {
            let Some(grad) = g[id].take() else { continue };
            if let Some(back) = &self.nodes[id].back {
                let parent_vals: Vec<&Tensor<S>> = self.nodes[id]
                    .parents
                    .iter()
                    .map(|&p| &self.nodes[p].value)
                    .collect();
                let contribs = back(&grad, &self.nodes[id].value, &parent_vals);
                debug_assert_eq!(contribs.len(), self.nodes[id].parents.len());
                for (&p, c) in self.nodes[id].parents.iter().zip(contribs) {
                    match &mut g[p] {
                        Some(t) => t.add_assign(&c),
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            g[id] = Some(grad);
        }
        Grads { by_node: g }
    }

    // -- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = Tensor::zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, _, _| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = Tensor::zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, _, _| {
                vec![g.clone(), g.map(|x| -x)]
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = Tensor::zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, _, p| {
                vec![Tensor::zip(g, p[1], |x, y| x * y), Tensor::zip(g, p[0], |x, y| x * y)]
            })),
        )
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| vec![g.map(|x| x * c)])),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| (S::one() + (-x).exp()).recip());
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, out, _| {
                vec![Tensor::zip(g, out, |g, y| g * y * (S::one() - y))]
            })),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, out, _| {
                vec![Tensor::zip(g, out, |g, y| g * (S::one() - y * y))]
            })),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > S::zero() { x } else { S::zero() });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, p| {
                vec![Tensor::zip(g, p[0], |g, x| {
                    if x > S::zero() {
                        g
                    } else {
                        S::zero()
                    }
                })]
            })),
        )
    }

    /// x * sigmoid(x)
    pub fn swish(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map(|x| x * (S::one() + (-x).exp()).recip());
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, p| {
                vec![Tensor::zip(g, p[0], |g, x| {
                    let s = (S::one() + (-x).exp()).recip();
                    g * (s + x * s * (S::one() - s))
                })]
            })),
        )
    }

    // -- shape plumbing ----------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let in_shape = self.value(a).shape().to_vec();
        let value = self.value(a).clone().reshaped(shape);
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                vec![g.clone().reshaped(&in_shape)]
            })),
        )
    }

    /// Row `t` of a (T, D) tensor as a (D,) vector.
    pub fn row(&mut self, a: Var, t: usize) -> Var {
        let src = self.value(a);
        let d = src.shape()[1];
        let value = Tensor::from_vec(&[d], src.data()[t * d..(t + 1) * d].to_vec());
        let full_shape = src.shape().to_vec();
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let mut dx = Tensor::zeros(&full_shape);
                dx.data_mut()[t * full_shape[1]..(t + 1) * full_shape[1]]
                    .copy_from_slice(g.data());
                vec![dx]
            })),
        )
    }

    /// Stack equal-length vectors into a (T, D) matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows: empty");
        let d = self.value(rows[0]).numel();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            assert_eq!(self.value(r).numel(), d, "stack_rows: ragged rows");
            data.extend_from_slice(self.value(r).data());
        }
        let value = Tensor::from_vec(&[rows.len(), d], data);
        self.push(
            value,
            rows.iter().map(|v| v.0).collect(),
            Some(Box::new(move |g, _, p| {
                let gd = g.data();
                p.iter()
                    .enumerate()
                    .map(|(i, pv)| {
                        Tensor::from_vec(pv.shape(), gd[i * d..(i + 1) * d].to_vec())
                    })
                    .collect()
            })),
        )
    }

    /// Concatenate along the last axis; leading dims must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let la = *va.shape().last().unwrap();
        let lb = *vb.shape().last().unwrap();
        assert_eq!(
            &va.shape()[..va.rank() - 1],
            &vb.shape()[..vb.rank() - 1],
            "concat_last: leading dims differ"
        );
        let rows = va.numel() / la;
        let mut shape = va.shape().to_vec();
        *shape.last_mut().unwrap() = la + lb;
        let mut data = Vec::with_capacity(rows * (la + lb));
        for r in 0..rows {
            data.extend_from_slice(&va.data()[r * la..(r + 1) * la]);
            data.extend_from_slice(&vb.data()[r * lb..(r + 1) * lb]);
        }
        let value = Tensor::from_vec(&shape, data);
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(move |g, _, p| {
                let gd = g.data();
                let mut da = Tensor::zeros(p[0].shape());
                let mut db = Tensor::zeros(p[1].shape());
                for r in 0..rows {
                    da.data_mut()[r * la..(r + 1) * la]
                        .copy_from_slice(&gd[r * (la + lb)..r * (la + lb) + la]);
                    db.data_mut()[r * lb..(r + 1) * lb]
                        .copy_from_slice(&gd[r * (la + lb) + la..(r + 1) * (la + lb)]);
                }
                vec![da, db]
            })),
        )
    }

    /// Reorder axes; `perm[i]` is the source axis of output axis `i`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let src = self.value(a);
        assert_eq!(perm.len(), src.rank(), "permute: rank mismatch");
        let in_shape = src.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let perm_owned = perm.to_vec();
        let value = permute_copy(src, &perm_owned, &out_shape);
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                // inverse permutation
                let mut inv = vec![0usize; perm_owned.len()];
                for (i, &p) in perm_owned.iter().enumerate() {
                    inv[p] = i;
                }
                let back_shape: Vec<usize> = inv.iter().map(|&p| g.shape()[p]).collect();
                vec![permute_copy(g, &inv, &back_shape)]
            })),
        )
    }

    /// Zero every slice whose index along `axis` is >= `from`.
    pub fn zero_from(&mut self, a: Var, axis: usize, from: usize) -> Var {
        let src = self.value(a);
        let shape = src.shape().to_vec();
        let st = strides(&shape);
        let mask = move |flat: usize| (flat / st[axis]) % shape[axis] >= from;
        let mut value = src.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            if mask(i) {
                *v = S::zero();
            }
        }
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let mut dg = g.clone();
                for (i, v) in dg.data_mut().iter_mut().enumerate() {
                    if mask(i) {
                        *v = S::zero();
                    }
                }
                vec![dg]
            })),
        )
    }

    // -- reductions --------------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut acc = S::zero();
        for &v in self.value(a).data() {
            acc = acc + v;
        }
        let in_shape = self.value(a).shape().to_vec();
        self.push(
            Tensor::scalar(acc),
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                vec![Tensor::full(&in_shape, g.data()[0])]
            })),
        )
    }

    /// (T, C, H, W) -> (T, C) spatial average.
    pub fn mean_spatial(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let (t, c, h, w) = (src.shape()[0], src.shape()[1], src.shape()[2], src.shape()[3]);
        let hw = h * w;
        let inv = S::from_f(1.0 / hw as f64);
        let mut value = Tensor::zeros(&[t, c]);
        {
            let vd = value.data_mut();
            let xd = src.data();
            for ti in 0..t {
                for ch in 0..c {
                    let base = (ti * c + ch) * hw;
                    let mut acc = S::zero();
                    for &v in &xd[base..base + hw] {
                        acc = acc + v;
                    }
                    vd[ti * c + ch] = acc * inv;
                }
            }
        }
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let mut dx = Tensor::zeros(&[t, c, h, w]);
                let gd = g.data();
                let dd = dx.data_mut();
                for ti in 0..t {
                    for ch in 0..c {
                        let gv = gd[ti * c + ch] * inv;
                        let base = (ti * c + ch) * hw;
                        for v in &mut dd[base..base + hw] {
                            *v = gv;
                        }
                    }
                }
                vec![dx]
            })),
        )
    }

    // -- linear / softmax / norms -------------------------------------------

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let value = kernels::linear_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
        );
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            parents.push(b.0);
        }
        let has_bias = b.is_some();
        self.push(
            value,
            parents,
            Some(Box::new(move |g, _, p| {
                let (dx, dw, db) = kernels::linear_backward(p[0], p[1], g);
                if has_bias {
                    vec![dx, dw, db]
                } else {
                    vec![dx, dw]
                }
            })),
        )
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let value = kernels::log_softmax_forward(self.value(x));
        self.push(
            value,
            vec![x.0],
            Some(Box::new(|g, out, _| {
                vec![kernels::log_softmax_backward(out, g)]
            })),
        )
    }

    pub fn layernorm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let value =
            kernels::layernorm_rows_forward(self.value(x), self.value(gain), self.value(bias), eps);
        self.push(
            value,
            vec![x.0, gain.0, bias.0],
            Some(Box::new(move |g, _, p| {
                let (dx, dg, db) = kernels::layernorm_rows_backward(p[0], p[1], g, eps);
                vec![dx, dg, db]
            })),
        )
    }

    pub fn frame_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let value =
            kernels::frame_norm_forward(self.value(x), self.value(gain), self.value(bias), eps);
        self.push(
            value,
            vec![x.0, gain.0, bias.0],
            Some(Box::new(move |g, _, p| {
                let (dx, dg, db) = kernels::frame_norm_backward(p[0], p[1], g, eps);
                vec![dx, dg, db]
            })),
        )
    }

    /// Gated linear unit over the last axis: [a; b] -> a * sigmoid(b).
    pub fn glu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let last = *src.shape().last().unwrap();
        assert_eq!(last % 2, 0, "glu: last axis must be even");
        let f = last / 2;
        let rows = src.numel() / last;
        let mut shape = src.shape().to_vec();
        *shape.last_mut().unwrap() = f;
        let mut value = Tensor::zeros(&shape);
        {
            let xd = src.data();
            let vd = value.data_mut();
            for r in 0..rows {
                for i in 0..f {
                    let a = xd[r * last + i];
                    let b = xd[r * last + f + i];
                    vd[r * f + i] = a * (S::one() + (-b).exp()).recip();
                }
            }
        }
        self.push(
            value,
            vec![x.0],
            Some(Box::new(move |g, _, p| {
                let xd = p[0].data();
                let gd = g.data();
                let mut dx = Tensor::zeros(p[0].shape());
                let dd = dx.data_mut();
                for r in 0..rows {
                    for i in 0..f {
                        let a = xd[r * last + i];
                        let b = xd[r * last + f + i];
                        let s = (S::one() + (-b).exp()).recip();
                        let gv = gd[r * f + i];
                        dd[r * last + i] = gv * s;
                        dd[r * last + f + i] = gv * a * s * (S::one() - s);
                    }
                }
                vec![dx]
            })),
        )
    }

    // -- convolutions --------------------------------------------------------

    /// Frame-batched 2D convolution: x (T, Cin, H, W), w (Cout, Cin, kh, kw).
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> crate::error::Result<Var> {
        let value = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            parents.push(b.0);
        }
        let has_bias = b.is_some();
        Ok(self.push(
            value,
            parents,
            Some(Box::new(move |g, _, p| {
                let (dx, dw, db) = kernels::conv2d_backward(p[0], p[1], g, stride, pad);
                if has_bias {
                    vec![dx, dw, db]
                } else {
                    vec![dx, dw]
                }
            })),
        ))
    }

    /// Channel-first 1D convolution: x (Cin, L), w (Cout, Cin, k).
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> crate::error::Result<Var> {
        let value = kernels::conv1d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            parents.push(b.0);
        }
        let has_bias = b.is_some();
        Ok(self.push(
            value,
            parents,
            Some(Box::new(move |g, _, p| {
                let (dx, dw, db) = kernels::conv1d_backward(p[0], p[1], g, stride, pad);
                if has_bias {
                    vec![dx, dw, db]
                } else {
                    vec![dx, dw]
                }
            })),
        ))
    }

    /// Channel-first 3D convolution: x (Cin, D, H, W), w (Cout, Cin, kd, kh, kw).
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> crate::error::Result<Var> {
        let value = kernels::conv3d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            parents.push(b.0);
        }
        let has_bias = b.is_some();
        Ok(self.push(
            value,
            parents,
            Some(Box::new(move |g, _, p| {
                let (dx, dw, db) = kernels::conv3d_backward(p[0], p[1], g, stride, pad);
                if has_bias {
                    vec![dx, dw, db]
                } else {
                    vec![dx, dw]
                }
            })),
        ))
    }

    /// Temporal 1D convolution over (T, C) rows with same padding.
    pub fn conv1d_time(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let value = kernels::conv1d_time_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
        );
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            parents.push(b.0);
        }
        let has_bias = b.is_some();
        self.push(
            value,
            parents,
            Some(Box::new(move |g, _, p| {
                let (dx, dw, db) = kernels::conv1d_time_backward(p[0], p[1], g);
                if has_bias {
                    vec![dx, dw, db]
                } else {
                    vec![dx, dw]
                }
            })),
        )
    }

    /// Depthwise temporal convolution over (T, C) rows with same padding.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let value = kernels::depthwise_conv1d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
        );
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            parents.push(b.0);
        }
        let has_bias = b.is_some();
        self.push(
            value,
            parents,
            Some(Box::new(move |g, _, p| {
                let (dx, dw, db) = kernels::depthwise_conv1d_backward(p[0], p[1], g);
                if has_bias {
                    vec![dx, dw, db]
                } else {
                    vec![dx, dw]
                }
            })),
        )
    }

    pub fn temporal_shift(&mut self, x: Var, n_fwd: usize, n_bwd: usize) -> Var {
        let value = kernels::temporal_shift_kernel(self.value(x), n_fwd, n_bwd, false);
        self.push(
            value,
            vec![x.0],
            Some(Box::new(move |g, _, _| {
                vec![kernels::temporal_shift_kernel(g, n_fwd, n_bwd, true)]
            })),
        )
    }
}

fn permute_copy<S: Scalar>(src: &Tensor<S>, perm: &[usize], out_shape: &[usize]) -> Tensor<S> {
    let in_strides = strides(src.shape());
    let out_strides = strides(out_shape);
    let mut out = Tensor::zeros(out_shape);
    let n = src.numel();
    {
        let od = out.data_mut();
        let sd = src.data();
        for flat in 0..n {
            // decompose output flat index, map back through perm
            let mut rem = flat;
            let mut src_flat = 0;
            for (axis, &os) in out_strides.iter().enumerate() {
                let idx = rem / os;
                rem %= os;
                src_flat += idx * in_strides[perm[axis]];
            }
            od[flat] = sd[src_flat];
        }
    }
    out
}
