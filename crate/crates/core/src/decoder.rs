//! Decoder head and CTC machinery: length-aware recurrent head producing
//! per-frame log-posteriors, the log-space CTC forward recursion with an
//! exact alpha-beta gradient, an enumeration oracle, and greedy / prefix-beam
//! decoding.

use std::collections::BTreeMap;

use crate::datamodel::{FeatureSequence, LabelSequence, BLANK};
use crate::error::{Error, Result};
use crate::numerics::gru::{rnn_forward, RnnKind, RnnSpec};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::{ParamBuilder, ParamSet, ParamVars};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// decoder head
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RnnChoice {
    Gru,
    Lstm,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    pub rnn: RnnChoice,
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            rnn: RnnChoice::Gru,
            hidden: 96,
            layers: 2,
            bidirectional: true,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rnn != RnnChoice::None && self.layers == 0 {
            return Err(Error::Config(
                "decoder: layers must be >= 1 when an RNN is enabled".into(),
            ));
        }
        if self.rnn != RnnChoice::None && self.hidden == 0 {
            return Err(Error::Config("decoder: hidden size must be >= 1".into()));
        }
        Ok(())
    }

    fn rnn_spec(&self, in_dim: usize) -> Option<RnnSpec> {
        let kind = match self.rnn {
            RnnChoice::Gru => RnnKind::Gru,
            RnnChoice::Lstm => RnnKind::Lstm,
            RnnChoice::None => return None,
        };
        Some(RnnSpec {
            kind,
            input_dim: in_dim,
            hidden: self.hidden,
            layers: self.layers,
            bidirectional: self.bidirectional,
        })
    }

    fn head_in_dim(&self, in_dim: usize) -> usize {
        match self.rnn_spec(in_dim) {
            Some(spec) => spec.output_dim(),
            None => in_dim,
        }
    }

    pub fn init_params<S: Scalar>(
        &self,
        prefix: &str,
        in_dim: usize,
        num_classes: usize,
        b: &mut ParamBuilder<'_, S>,
    ) {
        if let Some(spec) = self.rnn_spec(in_dim) {
            spec.init_params(&format!("{prefix}.rnn"), b);
        }
        let head_in = self.head_in_dim(in_dim);
        b.weight(&format!("{prefix}.out.w"), &[num_classes, head_in], head_in);
        b.zeros(&format!("{prefix}.out.b"), &[num_classes]);
    }
}

/// Features (T, F) with true length `len` to per-frame log-posteriors (T, V).
pub fn decode_head_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    features: Var,
    len: usize,
    cfg: &DecoderConfig,
    prefix: &str,
    pv: &ParamVars,
) -> Result<Var> {
    let in_dim = tape.value(features).shape()[1];
    let h = match cfg.rnn_spec(in_dim) {
        Some(spec) => rnn_forward(tape, &spec, &format!("{prefix}.rnn"), pv, features, len)?,
        None => features,
    };
    let logits = tape.linear(
        h,
        pv.var(&format!("{prefix}.out.w")),
        Some(pv.var(&format!("{prefix}.out.b"))),
    );
    Ok(tape.log_softmax(logits))
}

/// Per-frame log-probabilities (T, V); column `BLANK` = 0 is the blank.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLogProbs<S> {
    pub log_probs: Tensor<S>,
}

impl<S: Scalar> FrameLogProbs<S> {
    pub fn new(log_probs: Tensor<S>) -> Result<Self> {
        if log_probs.rank() != 2 || log_probs.shape()[1] < 2 {
            return Err(Error::Shape(format!(
                "frame log-probs must be (T, V >= 2), got {:?}",
                log_probs.shape()
            )));
        }
        let v = log_probs.shape()[1];
        for (r, row) in log_probs.data().chunks(v).enumerate() {
            let lse = log_sum_exp_slice(row);
            if lse.abs().to_f() > 1e-5 {
                return Err(Error::Numeric(format!(
                    "frame log-probs row {r} is not normalized (logsumexp = {lse})"
                )));
            }
        }
        Ok(FrameLogProbs { log_probs })
    }

    pub fn len(&self) -> usize {
        self.log_probs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.log_probs.shape()[1]
    }
}

/// Pure decoder head: length-aware RNN, linear to V classes, log-softmax.
pub fn decode_head<S: Scalar>(
    features: &FeatureSequence<S>,
    cfg: &DecoderConfig,
    prefix: &str,
    params: &ParamSet<S>,
) -> Result<FrameLogProbs<S>> {
    let mut tape = Tape::new();
    let pv = ParamVars::bind(&mut tape, params);
    let x = tape.leaf(features.features.clone());
    let y = decode_head_on_tape(&mut tape, x, features.len(), cfg, prefix, &pv)?;
    FrameLogProbs::new(tape.value(y).clone())
}

// ---------------------------------------------------------------------------
// CTC loss
// ---------------------------------------------------------------------------

fn lse2<S: Scalar>(a: S, b: S) -> S {
    let m = a.max(b);
    if m == S::neg_infinity() {
        return S::neg_infinity();
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_sum_exp_slice<S: Scalar>(xs: &[S]) -> S {
    let mut m = S::neg_infinity();
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == S::neg_infinity() {
        return m;
    }
    let mut acc = S::zero();
    for &x in xs {
        acc = acc + (x - m).exp();
    }
    m + acc.ln()
}

/// Blank-interleaved label: [blank, l1, blank, l2, ..., blank].
fn extended_label(label: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * label.len() + 1);
    ext.push(BLANK);
    for &c in label {
        ext.push(c);
        ext.push(BLANK);
    }
    ext
}

fn adjacent_repeats(label: &[usize]) -> usize {
    label.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Minimum frame count able to emit `label`.
pub fn ctc_min_frames(label: &[usize]) -> usize {
    label.len() + adjacent_repeats(label)
}

fn validate_ctc_inputs<S: Scalar>(lp: &Tensor<S>, label: &[usize]) -> Result<()> {
    if lp.rank() != 2 {
        return Err(Error::Shape(format!(
            "ctc: log-probs must be (T, V), got {:?}",
            lp.shape()
        )));
    }
    let v = lp.shape()[1];
    for &c in label {
        if c == BLANK || c >= v {
            return Err(Error::Data(format!(
                "ctc: label index {c} invalid for {v} classes"
            )));
        }
    }
    let required = ctc_min_frames(label);
    let frames = lp.shape()[0];
    if frames < required.max(1) {
        return Err(Error::LabelTooLong {
            required: required.max(1),
            frames,
        });
    }
    Ok(())
}

/// CTC negative log-likelihood of `label` under frame log-probs `lp` (T, V),
/// with the exact gradient d loss / d lp. An instance whose label cannot fit
/// in T frames is an error, never an infinite loss value.
pub fn ctc_loss<S: Scalar>(lp: &Tensor<S>, label: &[usize]) -> Result<(S, Tensor<S>)> {
    validate_ctc_inputs(lp, label)?;
    let t_len = lp.shape()[0];
    let v = lp.shape()[1];
    let ext = extended_label(label);
    let s_len = ext.len();
    let ninf = S::neg_infinity();
    let at = |t: usize, s: usize| t * s_len + s;
    let lp_at = |t: usize, k: usize| lp.data()[t * v + k];

    // can alpha skip from s-2 to s?
    let can_skip: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2])
        .collect();

    // forward variables (include the emission at t)
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[at(0, 0)] = lp_at(0, ext[0]);
    if s_len > 1 {
        alpha[at(0, 1)] = lp_at(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut best = alpha[at(t - 1, s)];
            if s >= 1 {
                best = lse2(best, alpha[at(t - 1, s - 1)]);
            }
            if can_skip[s] {
                best = lse2(best, alpha[at(t - 1, s - 2)]);
            }
            if best != ninf {
                alpha[at(t, s)] = best + lp_at(t, ext[s]);
            }
        }
    }
    let log_p = if s_len > 1 {
        lse2(alpha[at(t_len - 1, s_len - 1)], alpha[at(t_len - 1, s_len - 2)])
    } else {
        alpha[at(t_len - 1, 0)]
    };
    if log_p == ninf {
        // unreachable given the frame-count check, but never emit a non-number
        return Err(Error::Numeric("ctc: no feasible path".into()));
    }
    let loss = -log_p;

    // backward variables (also include the emission at t)
    let mut beta = vec![ninf; t_len * s_len];
    beta[at(t_len - 1, s_len - 1)] = lp_at(t_len - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[at(t_len - 1, s_len - 2)] = lp_at(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut best = beta[at(t + 1, s)];
            if s + 1 < s_len {
                best = lse2(best, beta[at(t + 1, s + 1)]);
            }
            if s + 2 < s_len && can_skip[s + 2] {
                best = lse2(best, beta[at(t + 1, s + 2)]);
            }
            if best != ninf {
                beta[at(t, s)] = best + lp_at(t, ext[s]);
            }
        }
    }

    // d loss / d lp[t, k] = -exp(LSE_{s: ext[s]=k}(alpha + beta) - lp[t,k] - logP)
    let mut grad = Tensor::zeros(lp.shape());
    {
        let gd = grad.data_mut();
        for t in 0..t_len {
            let mut acc = vec![ninf; v];
            for s in 0..s_len {
                let a = alpha[at(t, s)];
                let b = beta[at(t, s)];
                if a != ninf && b != ninf {
                    acc[ext[s]] = lse2(acc[ext[s]], a + b);
                }
            }
            for k in 0..v {
                if acc[k] != ninf {
                    gd[t * v + k] = -(acc[k] - lp_at(t, k) - log_p).exp();
                }
            }
        }
    }
    Ok((loss, grad))
}

/// CTC loss as a tape node (scalar output).
pub fn ctc_loss_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    lp: Var,
    label: &[usize],
) -> Result<Var> {
    let (loss, grad) = ctc_loss(tape.value(lp), label)?;
    Ok(tape.custom(
        Tensor::scalar(loss),
        vec![lp],
        Box::new(move |g, _, _| {
            let scale = g.data()[0];
            vec![grad.map(|x| x * scale)]
        }),
    ))
}

/// Enumeration oracle: sum of the probabilities of all length-T frame paths
/// whose collapse (drop repeats, then blanks) equals `label`. Independent of
/// the forward-recursion implementation.
pub fn ctc_loss_bruteforce<S: Scalar>(lp: &Tensor<S>, label: &[usize]) -> Result<S> {
    if lp.rank() != 2 {
        return Err(Error::Shape("ctc oracle: log-probs must be (T, V)".into()));
    }
    let t_len = lp.shape()[0];
    let v = lp.shape()[1];
    let paths = (v as f64).powi(t_len as i32);
    if paths > 2e7 {
        return Err(Error::Data(format!(
            "ctc oracle: instance too large ({v}^{t_len} paths)"
        )));
    }
    let mut total = S::zero();
    let mut path = vec![0usize; t_len];
    loop {
        // collapse: remove consecutive repeats, then blanks
        let mut collapsed = Vec::new();
        let mut prev = usize::MAX;
        for &p in &path {
            if p != prev {
                if p != BLANK {
                    collapsed.push(p);
                }
                prev = p;
            }
        }
        if collapsed == label {
            let mut logp = S::zero();
            for (t, &p) in path.iter().enumerate() {
                logp = logp + lp.data()[t * v + p];
            }
            total = total + logp.exp();
        }
        // next path in odometer order
        let mut i = t_len;
        loop {
            if i == 0 {
                return Ok(total);
            }
            i -= 1;
            path[i] += 1;
            if path[i] < v {
                break;
            }
            path[i] = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// decoding
// ---------------------------------------------------------------------------

/// Best-path decoding: per-frame argmax (ties to the smallest index),
/// collapse consecutive repeats, drop blanks.
pub fn greedy_decode<S: Scalar>(lp: &FrameLogProbs<S>) -> LabelSequence {
    let v = lp.num_classes();
    let d = lp.log_probs.data();
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for t in 0..lp.len() {
        let row = &d[t * v..(t + 1) * v];
        let mut best = 0usize;
        for (k, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = k;
            }
        }
        if best != prev && best != BLANK {
            out.push(best);
        }
        prev = best;
    }
    LabelSequence::from_indices_unchecked(out)
}

/// Prefix beam search over collapsed label prefixes. Each prefix carries the
/// probability of emitting exactly that label so far, split by whether the
/// last frame was a blank; with an unbounded width this computes exact label
/// posteriors, so the return value converges to the max-probability label.
/// Equal scores break toward the lexicographically smaller label.
pub fn beam_decode<S: Scalar>(lp: &FrameLogProbs<S>, width: usize) -> Result<LabelSequence> {
    if width < 1 {
        return Err(Error::Data("beam width must be >= 1".into()));
    }
    let v = lp.num_classes();
    let d = lp.log_probs.data();
    let ninf = S::neg_infinity();
    // prefix -> (log p ending in blank, log p ending in its last symbol)
    let mut beam: BTreeMap<Vec<usize>, (S, S)> = BTreeMap::new();
    beam.insert(Vec::new(), (S::zero(), ninf));
    for t in 0..lp.len() {
        let row = &d[t * v..(t + 1) * v];
        let mut next: BTreeMap<Vec<usize>, (S, S)> = BTreeMap::new();
        let mut bump = |key: Vec<usize>, blank_part: S, nonblank_part: S| {
            let e = next.entry(key).or_insert((ninf, ninf));
            e.0 = lse2(e.0, blank_part);
            e.1 = lse2(e.1, nonblank_part);
        };
        for (prefix, &(pb, pnb)) in &beam {
            let total = lse2(pb, pnb);
            // emit blank: prefix unchanged, now ending in blank
            bump(prefix.clone(), total + row[BLANK], ninf);
            for c in 1..v {
                let lpc = row[c];
                if prefix.last() == Some(&c) {
                    // same symbol continues the run (no new emission)
                    bump(prefix.clone(), ninf, pnb + lpc);
                    // a fresh occurrence needs a blank in between
                    let mut ext = prefix.clone();
                    ext.push(c);
                    bump(ext, ninf, pb + lpc);
                } else {
                    let mut ext = prefix.clone();
                    ext.push(c);
                    bump(ext, ninf, total + lpc);
                }
            }
        }
        // prune to width: by score descending, ties to the smaller label
        let mut candidates: Vec<(Vec<usize>, (S, S))> = next.into_iter().collect();
        candidates.sort_by(|a, b| {
            let sa = lse2(a.1 .0, a.1 .1);
            let sb = lse2(b.1 .0, b.1 .1);
            sb.partial_cmp(&sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        candidates.truncate(width);
        beam = candidates.into_iter().collect();
    }
    let best = beam
        .iter()
        .max_by(|a, b| {
            let sa = lse2(a.1 .0, a.1 .1);
            let sb = lse2(b.1 .0, b.1 .1);
            sa.partial_cmp(&sb)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| b.0.cmp(a.0))
        })
        .map(|(prefix, _)| prefix.clone())
        .unwrap_or_default();
    Ok(LabelSequence::from_indices_unchecked(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn lp_from_probs(rows: &[Vec<f64>]) -> Tensor<f64> {
        let v = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().map(|p| p.ln())).collect();
        Tensor::from_vec(&[rows.len(), v], data)
    }

    fn random_logprobs(t: usize, v: usize, tag: &str) -> Tensor<f64> {
        let mut r = crate::rng::stream(31, tag);
        let mut data = Vec::with_capacity(t * v);
        for _ in 0..t {
            let logits: Vec<f64> = (0..v).map(|_| r.gen_range(-2.0..2.0)).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            data.extend(logits.iter().map(|x| x - lse));
        }
        Tensor::from_vec(&[t, v], data)
    }

    #[test]
    fn single_frame_single_symbol() {
        // T = 1, label "a", p(a) = 0.6 -> loss = -ln 0.6
        let lp = lp_from_probs(&[vec![0.4, 0.6]]);
        let (loss, _) = ctc_loss(&lp, &[1]).unwrap();
        assert!((loss - 0.5108256237659907).abs() < 1e-12);
        let p = ctc_loss_bruteforce(&lp, &[1]).unwrap();
        assert!(((-loss).exp() - p).abs() < 1e-12);
    }

    #[test]
    fn two_frames_uniform() {
        // T = 2, label "a", uniform 0.5: paths {aa, a-, -a} -> -ln 0.75
        let lp = lp_from_probs(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let (loss, _) = ctc_loss(&lp, &[1]).unwrap();
        assert!((loss - 0.2876820724517809).abs() < 1e-12);
        let p = ctc_loss_bruteforce(&lp, &[1]).unwrap();
        assert!((p - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_label_is_all_blanks_path() {
        let lp = random_logprobs(4, 3, "e");
        let (loss, _) = ctc_loss(&lp, &[]).unwrap();
        let expect: f64 = -(0..4).map(|t| lp.data()[t * 3]).sum::<f64>();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn label_too_long_is_an_error() {
        let lp = random_logprobs(2, 3, "x");
        match ctc_loss(&lp, &[1, 1]) {
            Err(Error::LabelTooLong { required, frames }) => {
                assert_eq!(required, 3);
                assert_eq!(frames, 2);
            }
            other => panic!("expected LabelTooLong, got {other:?}"),
        }
        // oracle view: probability of an impossible label is zero
        assert_eq!(ctc_loss_bruteforce(&lp, &[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn oracle_equivalence_randomized() {
        let mut r = crate::rng::stream(77, "cases");
        for case in 0..60 {
            let t = r.gen_range(1..=5usize);
            let v = r.gen_range(2..=4usize);
            let max_label = t.min(3);
            let label: Vec<usize> = (0..r.gen_range(0..=max_label))
                .map(|_| r.gen_range(1..v))
                .collect();
            if ctc_min_frames(&label) > t {
                continue;
            }
            let lp = random_logprobs(t, v, &format!("c{case}"));
            let (loss, _) = ctc_loss(&lp, &label).unwrap();
            let p = ctc_loss_bruteforce(&lp, &label).unwrap();
            assert!(
                ((-loss).exp() - p).abs() <= 1e-9,
                "case {case}: exp(-{loss}) vs {p}"
            );
            assert!(loss >= 0.0 || loss.abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = crate::rng::stream(78, "grad");
        for case in 0..10 {
            let t = r.gen_range(2..=5usize);
            let v = 3;
            let label: Vec<usize> = (0..r.gen_range(1..=2usize)).map(|_| r.gen_range(1..v)).collect();
            if ctc_min_frames(&label) > t {
                continue;
            }
            let lp = random_logprobs(t, v, &format!("g{case}"));
            let (_, grad) = ctc_loss(&lp, &label).unwrap();
            let eps = 1e-6;
            for i in 0..lp.numel() {
                let mut plus = lp.clone();
                plus.data_mut()[i] += eps;
                let mut minus = lp.clone();
                minus.data_mut()[i] -= eps;
                let lp1 = ctc_loss(&plus, &label).unwrap().0;
                let lp2 = ctc_loss(&minus, &label).unwrap().0;
                let numeric = (lp1 - lp2) / (2.0 * eps);
                let a = grad.data()[i];
                assert!(
                    (a - numeric).abs() / f64::max(1.0, a.abs().max(numeric.abs())) < 1e-4,
                    "case {case} entry {i}: {a} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn zero_loss_only_for_certain_path() {
        // a label emitted with probability 1 at every frame
        let lp = lp_from_probs(&[vec![1e-300, 1.0 - 1e-300]]);
        let (loss, _) = ctc_loss(&lp, &[1]).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn greedy_collapse_rules() {
        // frame argmaxes [a, a, blank, b, b] -> "ab"
        let lp = lp_from_probs(&[
            vec![0.1, 0.8, 0.1],
            vec![0.2, 0.7, 0.1],
            vec![0.9, 0.05, 0.05],
            vec![0.1, 0.1, 0.8],
            vec![0.1, 0.2, 0.7],
        ]);
        let lp = FrameLogProbs::new(lp).unwrap();
        assert_eq!(greedy_decode(&lp).indices(), &[1, 2]);
        // all blank -> empty
        let blank_row = vec![0.9, 0.05, 0.05];
        let lp = FrameLogProbs::new(lp_from_probs(&[
            blank_row.clone(),
            blank_row.clone(),
            blank_row,
        ]))
        .unwrap();
        assert!(greedy_decode(&lp).is_empty());
        // [a, blank, a] -> "aa": blank separates repeats
        let lp = FrameLogProbs::new(lp_from_probs(&[
            vec![0.1, 0.9],
            vec![0.9, 0.1],
            vec![0.1, 0.9],
        ]))
        .unwrap();
        assert_eq!(greedy_decode(&lp).indices(), &[1, 1]);
    }

    #[test]
    fn greedy_never_emits_blank_or_exceeds_t() {
        let mut r = crate::rng::stream(5, "greedy");
        for case in 0..50 {
            let t = r.gen_range(1..8usize);
            let lp = FrameLogProbs::new(random_logprobs(t, 4, &format!("gd{case}"))).unwrap();
            let out = greedy_decode(&lp);
            assert!(out.len() <= t);
            assert!(out.indices().iter().all(|&c| c != BLANK));
        }
    }

    #[test]
    fn beam_matches_exhaustive_max_probability_label() {
        // T = 3, |A| = 2: enumerate all 27 paths, sum per collapsed label,
        // compare against an unpruned beam
        for seed in 0..20 {
            let lp = random_logprobs(3, 3, &format!("beam{seed}"));
            let flp = FrameLogProbs::new(lp.clone()).unwrap();
            let mut totals: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
            for p0 in 0..3usize {
                for p1 in 0..3usize {
                    for p2 in 0..3usize {
                        let path = [p0, p1, p2];
                        let mut collapsed = Vec::new();
                        let mut prev = usize::MAX;
                        for &s in &path {
                            if s != prev {
                                if s != BLANK {
                                    collapsed.push(s);
                                }
                                prev = s;
                            }
                        }
                        let logp: f64 =
                            (0..3).map(|t| lp.data()[t * 3 + path[t]]).sum();
                        *totals.entry(collapsed).or_insert(0.0) += logp.exp();
                    }
                }
            }
            let best = totals
                .iter()
                .max_by(|a, b| {
                    a.1.partial_cmp(b.1)
                        .unwrap()
                        .then_with(|| b.0.cmp(a.0))
                })
                .unwrap()
                .0
                .clone();
            let decoded = beam_decode(&flp, 1000).unwrap();
            assert_eq!(decoded.indices(), best.as_slice(), "seed {seed}");
        }
    }

    #[test]
    fn beam_single_frame_and_width_validation() {
        let lp = FrameLogProbs::new(lp_from_probs(&[vec![0.2, 0.5, 0.3]])).unwrap();
        assert_eq!(beam_decode(&lp, 4).unwrap().indices(), &[1]);
        let lp2 = FrameLogProbs::new(lp_from_probs(&[vec![0.6, 0.2, 0.2]])).unwrap();
        assert!(beam_decode(&lp2, 4).unwrap().is_empty());
        assert!(beam_decode(&lp, 0).is_err());
    }

    #[test]
    fn beam_tie_break_is_lexicographic() {
        // labels "a" and "b" tie exactly at the top; "a" wins
        let lp = FrameLogProbs::new(lp_from_probs(&[vec![0.2, 0.4, 0.4]])).unwrap();
        assert_eq!(beam_decode(&lp, 10).unwrap().indices(), &[1]);
    }

    #[test]
    fn ctc_on_tape_backpropagates_through_log_softmax() {
        // chain: logits -> log_softmax -> ctc; finite differences on logits
        let mut params = ParamSet::<f64>::new();
        params.insert("logits", random_logprobs(4, 3, "chain"));
        let label = vec![1usize, 2];
        let eval = |p: &ParamSet<f64>| {
            let mut tape = Tape::new();
            let pv = ParamVars::bind(&mut tape, p);
            let lp = tape.log_softmax(pv.var("logits"));
            let loss = ctc_loss_on_tape(&mut tape, lp, &label).unwrap();
            tape.value(loss).data()[0]
        };
        let analytic = |p: &ParamSet<f64>| {
            let mut tape = Tape::new();
            let pv = ParamVars::bind(&mut tape, p);
            let lp = tape.log_softmax(pv.var("logits"));
            let loss = ctc_loss_on_tape(&mut tape, lp, &label).unwrap();
            let grads = tape.backward(loss);
            pv.collect_grads(p, &grads)
        };
        let report =
            crate::numerics::grad_check(&params, &eval, &analytic, 1e-6, 1e-7).unwrap();
        assert!(report.passes(1e-7), "{:?}", report.worst());
    }

    #[test]
    fn decode_head_shapes_and_normalization() {
        let cfg = DecoderConfig {
            hidden: 5,
            ..DecoderConfig::default()
        };
        let mut params = ParamSet::<f64>::new();
        let mut b = ParamBuilder::new(&mut params, 3);
        cfg.init_params("dec", 4, 3, &mut b);
        for t in [1usize, 2, 9] {
            let feats = FeatureSequence::new(random_logprobs(t, 4, &format!("f{t}"))).unwrap();
            let lp = decode_head(&feats, &cfg, "dec", &params).unwrap();
            assert_eq!(lp.log_probs.shape(), &[t, 3]);
            for r in 0..t {
                let s: f64 = lp.log_probs.data()[r * 3..(r + 1) * 3]
                    .iter()
                    .map(|v| v.exp())
                    .sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn decode_head_rnn_none_and_unidirectional_toggles() {
        let feats = FeatureSequence::new(random_logprobs(4, 4, "tog")).unwrap();
        for (rnn, bidi) in [
            (RnnChoice::None, true),
            (RnnChoice::Gru, false),
            (RnnChoice::Lstm, true),
        ] {
            let cfg = DecoderConfig {
                rnn,
                hidden: 3,
                layers: 2,
                bidirectional: bidi,
            };
            cfg.validate().unwrap();
            let mut params = ParamSet::<f64>::new();
            let mut b = ParamBuilder::new(&mut params, 3);
            cfg.init_params("dec", 4, 3, &mut b);
            let lp = decode_head(&feats, &cfg, "dec", &params).unwrap();
            assert_eq!(lp.log_probs.shape(), &[4, 3]);
        }
    }
}
