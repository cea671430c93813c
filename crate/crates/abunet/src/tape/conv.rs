//! Stride-1 same-padded 2D convolution over batch-height-width-channel
//! tensors, via per-image patch expansion (im2col) feeding the matmul kernel.

use super::linalg::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc};
use crate::scalar::Scalar;

/// Expand one [h,w,cin] image into [h·w, kh·kw·cin] patch rows, zero padding
/// outside the frame. pad_top = (kh-1)/2, pad_left = (kw-1)/2.
fn im2col<S: Scalar>(img: &[S], h: usize, w: usize, cin: usize, kh: usize, kw: usize, cols: &mut [S]) {
    let patch = kh * kw * cin;
    debug_assert_eq!(cols.len(), h * w * patch);
    let pad_top = (kh - 1) / 2;
    let pad_left = (kw - 1) / 2;
    cols.iter_mut().for_each(|v| *v = S::zero());
    for oy in 0..h {
        for ox in 0..w {
            let row = &mut cols[(oy * w + ox) * patch..(oy * w + ox + 1) * patch];
            for ky in 0..kh {
                let iy = (oy + ky) as isize - pad_top as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox + kx) as isize - pad_left as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = ((iy as usize * w) + ix as usize) * cin;
                    let dst = (ky * kw + kx) * cin;
                    row[dst..dst + cin].copy_from_slice(&img[src..src + cin]);
                }
            }
        }
    }
}

/// Scatter [h·w, kh·kw·cin] patch-row gradients back onto a [h,w,cin] image.
fn col2im_acc<S: Scalar>(
    cols: &[S],
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    img: &mut [S],
) {
    let patch = kh * kw * cin;
    let pad_top = (kh - 1) / 2;
    let pad_left = (kw - 1) / 2;
    for oy in 0..h {
        for ox in 0..w {
            let row = &cols[(oy * w + ox) * patch..(oy * w + ox + 1) * patch];
            for ky in 0..kh {
                let iy = (oy + ky) as isize - pad_top as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox + kx) as isize - pad_left as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = ((iy as usize * w) + ix as usize) * cin;
                    let src = (ky * kw + kx) * cin;
                    for c in 0..cin {
                        img[dst + c] = img[dst + c] + row[src + c];
                    }
                }
            }
        }
    }
}

/// y[b,h,w,cout] = x[b,h,w,cin] ⊛ kernel[kh,kw,cin,cout].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<S: Scalar>(
    x: &[S],
    kernel: &[S],
    y: &mut [S],
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
) {
    let patch = kh * kw * cin;
    let mut cols = vec![S::zero(); h * w * patch];
    let img_len = h * w * cin;
    let out_len = h * w * cout;
    for b in 0..batch {
        im2col(&x[b * img_len..(b + 1) * img_len], h, w, cin, kh, kw, &mut cols);
        matmul_acc(
            &cols,
            kernel,
            &mut y[b * out_len..(b + 1) * out_len],
            h * w,
            patch,
            cout,
        );
    }
}

/// Accumulates input and kernel gradients for conv2d_forward.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<S: Scalar>(
    x: &[S],
    kernel: &[S],
    dy: &[S],
    dx: &mut [S],
    dkernel: &mut [S],
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
) {
    let patch = kh * kw * cin;
    let mut cols = vec![S::zero(); h * w * patch];
    let mut dcols = vec![S::zero(); h * w * patch];
    let img_len = h * w * cin;
    let out_len = h * w * cout;
    for b in 0..batch {
        let x_img = &x[b * img_len..(b + 1) * img_len];
        let dy_img = &dy[b * out_len..(b + 1) * out_len];
        im2col(x_img, h, w, cin, kh, kw, &mut cols);
        // dK += colsᵀ @ dy
        matmul_at_b_acc(&cols, dy_img, dkernel, h * w, patch, cout);
        // dcols = dy @ Kᵀ, scattered back through the patch map
        dcols.iter_mut().for_each(|v| *v = S::zero());
        matmul_a_bt_acc(dy_img, kernel, &mut dcols, h * w, cout, patch);
        col2im_acc(&dcols, h, w, cin, kh, kw, &mut dx[b * img_len..(b + 1) * img_len]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an independent reference.
    #[allow(clippy::too_many_arguments)]
    fn conv2d_naive(
        x: &[f64],
        kernel: &[f64],
        batch: usize,
        h: usize,
        w: usize,
        cin: usize,
        kh: usize,
        kw: usize,
        cout: usize,
    ) -> Vec<f64> {
        let pad_top = (kh - 1) / 2;
        let pad_left = (kw - 1) / 2;
        let mut y = vec![0.0; batch * h * w * cout];
        for b in 0..batch {
            for oy in 0..h {
                for ox in 0..w {
                    for co in 0..cout {
                        let mut acc = 0.0;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as isize + ky as isize - pad_top as isize;
                                let ix = ox as isize + kx as isize - pad_left as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xi = ((b * h + iy as usize) * w + ix as usize) * cin + ci;
                                    let ki = ((ky * kw + kx) * cin + ci) * cout + co;
                                    acc += x[xi] * kernel[ki];
                                }
                            }
                        }
                        y[((b * h + oy) * w + ox) * cout + co] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn im2col_path_matches_naive_convolution() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (b, h, w, cin, kh, kw, cout) = (2, 5, 4, 3, 3, 3, 2);
        let x: Vec<f64> = (0..b * h * w * cin).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..kh * kw * cin * cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; b * h * w * cout];
        conv2d_forward(&x, &k, &mut y, b, h, w, cin, kh, kw, cout);
        let want = conv2d_naive(&x, &k, b, h, w, cin, kh, kw, cout);
        for (a, e) in y.iter().zip(&want) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }
}
