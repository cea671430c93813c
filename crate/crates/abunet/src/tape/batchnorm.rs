//! Per-channel batch normalization numerics (channels-last layout).

use crate::scalar::Scalar;

/// Population mean and variance per channel over all leading positions.
pub fn channel_stats<S: Scalar>(x: &[S], channels: usize) -> (Vec<S>, Vec<S>) {
    let rows = x.len() / channels;
    let inv = S::one() / S::from_f64(rows as f64);
    let mut mean = vec![S::zero(); channels];
    for row in x.chunks_exact(channels) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m * inv);
    let mut var = vec![S::zero(); channels];
    for row in x.chunks_exact(channels) {
        for ((vv, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *vv = *vv + d * d;
        }
    }
    var.iter_mut().for_each(|v| *v = *v * inv);
    (mean, var)
}

/// y = γ·(x − μ)·istd + β, elementwise per channel.
pub fn bn_apply<S: Scalar>(
    x: &[S],
    mean: &[S],
    inv_std: &[S],
    gamma: &[S],
    beta: &[S],
    y: &mut [S],
) {
    let c = mean.len();
    for (yr, xr) in y.chunks_exact_mut(c).zip(x.chunks_exact(c)) {
        for ch in 0..c {
            yr[ch] = gamma[ch] * (xr[ch] - mean[ch]) * inv_std[ch] + beta[ch];
        }
    }
}

/// Backward through train-mode normalization (batch statistics are part of
/// the graph). Accumulates into dx, dgamma, dbeta.
#[allow(clippy::too_many_arguments)]
pub fn bn_backward_train<S: Scalar>(
    x: &[S],
    dy: &[S],
    mean: &[S],
    inv_std: &[S],
    gamma: &[S],
    dx: &mut [S],
    dgamma: &mut [S],
    dbeta: &mut [S],
) {
    let c = mean.len();
    let rows = x.len() / c;
    let inv_rows = S::one() / S::from_f64(rows as f64);
    let mut sum_dxhat = vec![S::zero(); c];
    let mut sum_dxhat_xhat = vec![S::zero(); c];
    for (xr, dyr) in x.chunks_exact(c).zip(dy.chunks_exact(c)) {
        for ch in 0..c {
            let xhat = (xr[ch] - mean[ch]) * inv_std[ch];
            let dxhat = dyr[ch] * gamma[ch];
            sum_dxhat[ch] = sum_dxhat[ch] + dxhat;
            sum_dxhat_xhat[ch] = sum_dxhat_xhat[ch] + dxhat * xhat;
            dgamma[ch] = dgamma[ch] + dyr[ch] * xhat;
            dbeta[ch] = dbeta[ch] + dyr[ch];
        }
    }
    for ((xr, dyr), dxr) in x
        .chunks_exact(c)
        .zip(dy.chunks_exact(c))
        .zip(dx.chunks_exact_mut(c))
    {
        for ch in 0..c {
            let xhat = (xr[ch] - mean[ch]) * inv_std[ch];
            let dxhat = dyr[ch] * gamma[ch];
            dxr[ch] = dxr[ch]
                + inv_std[ch]
                    * (dxhat - (sum_dxhat[ch] + xhat * sum_dxhat_xhat[ch]) * inv_rows);
        }
    }
}

/// Backward through eval-mode normalization (running statistics are constants).
#[allow(clippy::too_many_arguments)]
pub fn bn_backward_eval<S: Scalar>(
    x: &[S],
    dy: &[S],
    mean: &[S],
    inv_std: &[S],
    gamma: &[S],
    dx: &mut [S],
    dgamma: &mut [S],
    dbeta: &mut [S],
) {
    let c = mean.len();
    for ((xr, dyr), dxr) in x
        .chunks_exact(c)
        .zip(dy.chunks_exact(c))
        .zip(dx.chunks_exact_mut(c))
    {
        for ch in 0..c {
            let xhat = (xr[ch] - mean[ch]) * inv_std[ch];
            dxr[ch] = dxr[ch] + dyr[ch] * gamma[ch] * inv_std[ch];
            dgamma[ch] = dgamma[ch] + dyr[ch] * xhat;
            dbeta[ch] = dbeta[ch] + dyr[ch];
        }
    }
}
