//! Fused softmax cross-entropy with log-sum-exp stabilization.

use crate::scalar::Scalar;

/// Mean cross-entropy over the batch plus the softmax probabilities
/// (saved for backward).
pub fn softmax_xent_forward<S: Scalar>(
    logits: &[S],
    labels: &[u32],
    classes: usize,
) -> (S, Vec<S>) {
    let batch = labels.len();
    let mut probs = vec![S::zero(); logits.len()];
    let mut loss = S::zero();
    for (i, (row, out)) in logits
        .chunks_exact(classes)
        .zip(probs.chunks_exact_mut(classes))
        .enumerate()
    {
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut denom = S::zero();
        for (o, &v) in out.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            denom = denom + e;
        }
        let inv = S::one() / denom;
        out.iter_mut().for_each(|o| *o = *o * inv);
        let lse = max + denom.ln();
        loss = loss + lse - row[labels[i] as usize];
    }
    (loss / S::from_f64(batch as f64), probs)
}

/// dlogits += upstream · (softmax − one_hot)/batch.
pub fn softmax_xent_backward<S: Scalar>(
    probs: &[S],
    labels: &[u32],
    classes: usize,
    upstream: S,
    dlogits: &mut [S],
) {
    let scale = upstream / S::from_f64(labels.len() as f64);
    for (i, (p_row, d_row)) in probs
        .chunks_exact(classes)
        .zip(dlogits.chunks_exact_mut(classes))
        .enumerate()
    {
        for (j, (d, &p)) in d_row.iter_mut().zip(p_row).enumerate() {
            let indicator = if j == labels[i] as usize { S::one() } else { S::zero() };
            *d = *d + scale * (p - indicator);
        }
    }
}

/// Fraction of rows whose argmax matches the label. Ties break toward the
/// lowest class index.
pub fn accuracy<S: Scalar>(logits: &[S], labels: &[u32], classes: usize) -> f64 {
    let mut hits = 0usize;
    for (row, &label) in logits.chunks_exact(classes).zip(labels) {
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        if best == label as usize {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}
