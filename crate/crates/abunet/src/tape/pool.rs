//! Same-padded max and average pooling over batch-height-width-channel
//! tensors. Padding cells never participate: max ignores them, average
//! divides by the count of in-frame cells.

use crate::scalar::Scalar;

/// Output extent for same-padded pooling: ceil(n / stride).
pub fn pooled_extent(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

/// Leading pad for same-padded pooling (trailing pad absorbs the remainder).
fn pad_beg(n: usize, win: usize, stride: usize) -> usize {
    let out = pooled_extent(n, stride);
    let needed = ((out - 1) * stride + win).saturating_sub(n);
    needed / 2
}

#[allow(clippy::too_many_arguments)]
pub fn maxpool_forward<S: Scalar>(
    x: &[S],
    y: &mut [S],
    argmax: &mut [u32],
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    win: usize,
    stride: usize,
) {
    let (oh, ow) = (pooled_extent(h, stride), pooled_extent(w, stride));
    let (py, px) = (pad_beg(h, win, stride), pad_beg(w, win, stride));
    debug_assert_eq!(y.len(), batch * oh * ow * c);
    for b in 0..batch {
        for ou in 0..oh {
            for ov in 0..ow {
                let y0 = ou as isize * stride as isize - py as isize;
                let x0 = ov as isize * stride as isize - px as isize;
                for ch in 0..c {
                    let mut best = S::neg_infinity();
                    let mut best_idx = 0u32;
                    for ky in 0..win {
                        let iy = y0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..win {
                            let ix = x0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = ((b * h + iy as usize) * w + ix as usize) * c + ch;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx as u32;
                            }
                        }
                    }
                    let out = ((b * oh + ou) * ow + ov) * c + ch;
                    y[out] = best;
                    argmax[out] = best_idx;
                }
            }
        }
    }
}

pub fn maxpool_backward<S: Scalar>(dy: &[S], argmax: &[u32], dx: &mut [S]) {
    for (g, &idx) in dy.iter().zip(argmax) {
        dx[idx as usize] = dx[idx as usize] + *g;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn avgpool_forward<S: Scalar>(
    x: &[S],
    y: &mut [S],
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    win: usize,
    stride: usize,
) {
    avgpool_impl(Some(x), None::<(&[S], &mut [S])>, y, batch, h, w, c, win, stride);
}

#[allow(clippy::too_many_arguments)]
pub fn avgpool_backward<S: Scalar>(
    dy: &[S],
    dx: &mut [S],
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    win: usize,
    stride: usize,
) {
    let mut unused = vec![S::zero(); dy.len()];
    avgpool_impl(None, Some((dy, dx)), &mut unused, batch, h, w, c, win, stride);
}

/// Shared window walk: forward averages valid cells, backward spreads dy/count.
#[allow(clippy::too_many_arguments)]
fn avgpool_impl<S: Scalar>(
    x: Option<&[S]>,
    mut back: Option<(&[S], &mut [S])>,
    y: &mut [S],
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    win: usize,
    stride: usize,
) {
    let (oh, ow) = (pooled_extent(h, stride), pooled_extent(w, stride));
    let (py, px) = (pad_beg(h, win, stride), pad_beg(w, win, stride));
    for b in 0..batch {
        for ou in 0..oh {
            for ov in 0..ow {
                let y0 = ou as isize * stride as isize - py as isize;
                let x0 = ov as isize * stride as isize - px as isize;
                let mut cells: Vec<usize> = Vec::with_capacity(win * win);
                for ky in 0..win {
                    let iy = y0 + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..win {
                        let ix = x0 + kx as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cells.push(((b * h + iy as usize) * w + ix as usize) * c);
                    }
                }
                let inv_count = S::one() / S::from_f64(cells.len() as f64);
                for ch in 0..c {
                    let out = ((b * oh + ou) * ow + ov) * c + ch;
                    match &mut back {
                        None => {
                            let x = x.unwrap();
                            let mut acc = S::zero();
                            for &base in &cells {
                                acc = acc + x[base + ch];
                            }
                            y[out] = acc * inv_count;
                        }
                        Some((dy, dx)) => {
                            let g = dy[out] * inv_count;
                            for &base in &cells {
                                dx[base + ch] = dx[base + ch] + g;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_extents() {
        assert_eq!(pooled_extent(32, 2), 16);
        assert_eq!(pooled_extent(16, 2), 8);
        assert_eq!(pooled_extent(5, 2), 3);
    }

    #[test]
    fn maxpool_picks_window_maxima() {
        // 1 image, 4x4, 1 channel, window 3 stride 2 -> 2x2 output
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let mut y = vec![0.0; 4];
        let mut arg = vec![0u32; 4];
        maxpool_forward(&x, &mut y, &mut arg, 1, 4, 4, 1, 3, 2);
        // pad_beg = 0, windows start at (0,0),(0,2),(2,0),(2,2) clipped at 4
        assert_eq!(y, vec![10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn avgpool_border_counts() {
        let x = vec![1.0f64; 9]; // 3x3 ones, window 3 stride 2 -> 2x2
        let mut y = vec![0.0; 4];
        avgpool_forward(&x, &mut y, 1, 3, 3, 1, 3, 2);
        // every window averages only in-frame ones
        assert_eq!(y, vec![1.0; 4]);
    }
}
