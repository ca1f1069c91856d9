//! Edit-distance decomposition and letter accuracy.

use crate::datamodel::LabelSequence;
use crate::error::{Error, Result};

/// Substitution / deletion / insertion counts of a minimal-cost alignment
/// against a reference of length `reference_len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditCounts {
    pub fn total_edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Unit-cost Levenshtein alignment with a deterministic backtrace preferring
/// substitution over insertion over deletion among equal-cost moves.
pub fn edit_counts(reference: &LabelSequence, hypothesis: &LabelSequence) -> EditCounts {
    edit_counts_slices(reference.indices(), hypothesis.indices())
}

pub fn edit_counts_slices<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let n = reference.len();
    let m = hypothesis.len();
    let mut cost = vec![0usize; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        cost[at(i, 0)] = i;
    }
    for j in 0..=m {
        cost[at(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = cost[at(i - 1, j - 1)] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = cost[at(i, j - 1)] + 1;
            let del = cost[at(i - 1, j)] + 1;
            cost[at(i, j)] = sub.min(ins).min(del);
        }
    }
    // backtrace: diagonal (match/substitution) first, then insertion, then deletion
    let (mut i, mut j) = (n, m);
    let (mut s, mut d, mut ins) = (0usize, 0usize, 0usize);
    while i > 0 || j > 0 {
        let c = cost[at(i, j)];
        if i > 0 && j > 0 {
            let matched = reference[i - 1] == hypothesis[j - 1];
            if cost[at(i - 1, j - 1)] + usize::from(!matched) == c {
                if !matched {
                    s += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && cost[at(i, j - 1)] + 1 == c {
            ins += 1;
            j -= 1;
            continue;
        }
        d += 1;
        i -= 1;
    }
    EditCounts {
        substitutions: s,
        deletions: d,
        insertions: ins,
        reference_len: n,
    }
}

/// 1 - (S + D + I) / N; negative when insertions dominate. An empty
/// reference is rejected.
pub fn letter_accuracy(reference: &LabelSequence, hypothesis: &LabelSequence) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Data(
            "letter accuracy undefined for an empty reference".into(),
        ));
    }
    let c = edit_counts(reference, hypothesis);
    Ok(accuracy_from_counts(c.total_edits(), c.reference_len))
}

fn accuracy_from_counts(edits: usize, reference_len: usize) -> f64 {
    // single rounding: (N - E) / N, exact for small integer ratios
    (reference_len as f64 - edits as f64) / reference_len as f64
}

/// Pooled corpus accuracy: 1 - (sum S + sum D + sum I) / (sum N).
pub fn corpus_accuracy(pairs: &[(LabelSequence, LabelSequence)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("corpus accuracy of an empty corpus".into()));
    }
    let mut edits = 0usize;
    let mut total_n = 0usize;
    for (reference, hypothesis) in pairs {
        let c = edit_counts(reference, hypothesis);
        edits += c.total_edits();
        total_n += c.reference_len;
    }
    if total_n == 0 {
        return Err(Error::Data(
            "corpus accuracy undefined: all references empty".into(),
        ));
    }
    Ok(accuracy_from_counts(edits, total_n))
}

/// Alternative aggregation: mean of per-sample letter accuracies.
pub fn corpus_accuracy_sample_mean(pairs: &[(LabelSequence, LabelSequence)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("corpus accuracy of an empty corpus".into()));
    }
    let mut acc = 0.0;
    for (reference, hypothesis) in pairs {
        acc += letter_accuracy(reference, hypothesis)?;
    }
    Ok(acc / pairs.len() as f64)
}
