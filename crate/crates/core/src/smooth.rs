//! Region-aware Gaussian smoothing and image gradients.

use crate::field::{Grid2D, RegionMask, ScalarField};

/// Sampled Gaussian weights on `[-r, r]` with `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Convolution of `f` with a Gaussian of width `sigma`, restricted to `mask`.
///
/// The kernel is truncated at 3σ and renormalised over the in-mask part of
/// its support, so constants are reproduced exactly. Values outside `mask`
/// are ignored on input and `NaN` on output. `sigma = 0` returns `f`
/// restricted to `mask`.
pub fn gaussian_smooth_on_region(f: &ScalarField, sigma: f64, mask: &RegionMask) -> ScalarField {
    assert!(sigma >= 0.0, "negative smoothing width");
    let grid = f.grid();
    if sigma == 0.0 {
        return f.restricted(mask);
    }
    let k = gaussian_kernel(sigma);
    let ch = f.channels();
    // numerator and weight sum are both separable
    let mut num = vec![0.0; grid.len() * ch];
    let mut den = vec![0.0; grid.len()];
    for i in mask.indices() {
        den[i] = 1.0;
        for c in 0..ch {
            num[i * ch + c] = f.get(i, c);
        }
    }
    let num = convolve_separable(grid, &num, ch, &k);
    let den = convolve_separable(grid, &den, 1, &k);
    let mut out = ScalarField::undefined(grid, ch);
    for i in mask.indices() {
        for c in 0..ch {
            out.set(i, c, num[i * ch + c] / den[i]);
        }
    }
    out
}

/// Whole-grid Gaussian blur with clamped-edge renormalisation (every pixel
/// treated as in the mask).
pub fn gaussian_blur(f: &ScalarField, sigma: f64) -> ScalarField {
    gaussian_smooth_on_region(f, sigma, &RegionMask::full(f.grid()))
}

fn convolve_separable(grid: Grid2D, data: &[f64], ch: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let (w, h) = (grid.width() as isize, grid.height() as isize);
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let o = ((y * w + x) as usize) * ch;
            for (ki, &kv) in k.iter().enumerate() {
                let xx = x + ki as isize - r;
                if xx < 0 || xx >= w {
                    continue;
                }
                let s = ((y * w + xx) as usize) * ch;
                for c in 0..ch {
                    tmp[o + c] += kv * data[s + c];
                }
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let o = ((y * w + x) as usize) * ch;
            for (ki, &kv) in k.iter().enumerate() {
                let yy = y + ki as isize - r;
                if yy < 0 || yy >= h {
                    continue;
                }
                let s = ((yy * w + x) as usize) * ch;
                for c in 0..ch {
                    out[o + c] += kv * tmp[s + c];
                }
            }
        }
    }
    out
}

/// Per-channel spatial gradient over the whole grid: central differences,
/// one-sided on the grid border. Indexed `[pixel * channels + c]`.
pub fn image_gradient(f: &ScalarField) -> Vec<[f64; 2]> {
    let grid = f.grid();
    let ch = f.channels();
    let mut out = vec![[0.0; 2]; grid.len() * ch];
    for i in 0..grid.len() {
        for (axis, (dx, dy)) in [(0usize, (1isize, 0isize)), (1, (0, 1))] {
            let fwd = grid.offset(i, dx, dy);
            let bwd = grid.offset(i, -dx, -dy);
            for c in 0..ch {
                out[i * ch + c][axis] = match (fwd, bwd) {
                    (Some(a), Some(b)) => (f.get(a, c) - f.get(b, c)) / 2.0,
                    (Some(a), None) => f.get(a, c) - f.get(i, c),
                    (None, Some(b)) => f.get(i, c) - f.get(b, c),
                    (None, None) => 0.0,
                };
            }
        }
    }
    out
}
