//! Detection of newly visible object parts next to the propagated region.
//!
//! A pixel near `R′` is scored by how much better a local foreground
//! appearance model explains its intensity than a local background model,
//! weighted by its distance to `R′`.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::distance::closest_point_map;
use crate::error::{Error, Result};
use crate::field::{Grid2D, RegionMask, ScalarField};
use crate::smooth::gaussian_smooth_on_region;

/// Bins per bandwidth in the binned kernel sums.
const BINS_PER_BANDWIDTH: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowShape {
    Disk,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisocclusionParams {
    /// Band thickness `ε` around `R′`.
    pub eps: f64,
    /// Sample window radius; `None` means `3ε`.
    pub radius: Option<f64>,
    pub sigma_d: f64,
    pub beta_d: f64,
    /// Smoothing of the likelihood before thresholding.
    pub sigma: f64,
    /// Parzen bandwidth in intensity levels.
    pub bandwidth: f64,
    pub window: WindowShape,
}

impl Default for DisocclusionParams {
    fn default() -> Self {
        Self {
            eps: 30.0,
            radius: None,
            sigma_d: 100.0,
            beta_d: 0.5,
            sigma: 5.0,
            bandwidth: 10.0,
            window: WindowShape::Disk,
        }
    }
}

impl DisocclusionParams {
    pub fn window_radius(&self) -> f64 {
        self.radius.unwrap_or(3.0 * self.eps)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.eps > 0.0
            && self.window_radius() > 0.0
            && self.sigma_d > 0.0
            && self.sigma >= 0.0
            && self.bandwidth > 0.0
            && self.beta_d.is_finite();
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid dis-occlusion parameters {self:?}")));
        }
        Ok(())
    }
}

/// Product of per-channel Gaussian kernel density estimates.
///
/// Samples are linearly binned on a grid of `bandwidth / 32`. The relative
/// density error grows like `z²/8192` at `z` bandwidths from the samples,
/// and the evaluation cost no longer depends on the sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct ParzenModel {
    bandwidth: f64,
    count: usize,
    channels: Vec<Bins>,
}

#[derive(Debug, Clone, PartialEq)]
struct Bins {
    origin: f64,
    weights: Vec<f64>,
}

impl ParzenModel {
    /// Builds from `samples`, each of length `channels`. `None` without
    /// samples.
    pub fn new<'a>(samples: impl IntoIterator<Item = &'a [f64]>, channels: usize, bandwidth: f64) -> Option<Self> {
        let step = bandwidth / BINS_PER_BANDWIDTH;
        let samples: Vec<&[f64]> = samples.into_iter().collect();
        if samples.is_empty() {
            return None;
        }
        let channels = (0..channels)
            .map(|c| {
                let (lo, hi) = samples
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s[c]), hi.max(s[c])));
                let origin = (lo / step).floor() * step;
                let mut weights = vec![0.0; ((hi - origin) / step) as usize + 2];
                for s in &samples {
                    let u = (s[c] - origin) / step;
                    let k = (u.floor() as usize).min(weights.len() - 2);
                    let t = u - k as f64;
                    weights[k] += 1.0 - t;
                    weights[k + 1] += t;
                }
                Bins { origin, weights }
            })
            .collect();
        Some(Self {
            bandwidth,
            count: samples.len(),
            channels,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.count
    }

    /// Density of channel `c` at `v`.
    pub fn channel_density(&self, c: usize, v: f64) -> f64 {
        let h = self.bandwidth;
        let bins = &self.channels[c];
        let step = h / BINS_PER_BANDWIDTH;
        let mut sum = 0.0;
        for (k, &w) in bins.weights.iter().enumerate() {
            if w > 0.0 {
                let z = (v - bins.origin - k as f64 * step) / h;
                sum += w * (-0.5 * z * z).exp();
            }
        }
        sum / (self.count as f64 * h * (2.0 * PI).sqrt())
    }

    /// `Σ_c log p_c(v_c)`, floored so that the result stays finite.
    pub fn log_density(&self, v: &[f64]) -> f64 {
        v.iter()
            .enumerate()
            .map(|(c, &x)| self.channel_density(c, x).max(f64::MIN_POSITIVE).ln())
            .sum()
    }
}

/// `exp(−d²/(2σ_d²)) · e^{L_f} / (e^{L_f} + e^{L_b})`.
pub fn likelihood_value(d: f64, log_fg: f64, log_bg: f64, sigma_d: f64) -> f64 {
    let prior = (-d * d / (2.0 * sigma_d * sigma_d)).exp();
    prior / (1.0 + (log_bg - log_fg).exp())
}

fn window_offsets(radius: f64, shape: WindowShape) -> Vec<(isize, isize)> {
    let r = radius.floor() as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if shape == WindowShape::Square || ((dx * dx + dy * dy) as f64) <= radius * radius {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn window_pixels<'a>(grid: Grid2D, centre: usize, offsets: &'a [(isize, isize)]) -> impl Iterator<Item = usize> + 'a {
    offsets.iter().filter_map(move |&(dx, dy)| grid.offset(centre, dx, dy))
}

/// Band `{0 < d_{R′} ≤ ε}` around `r_prime`.
pub fn band(r_prime: &RegionMask, eps: f64) -> Result<RegionMask> {
    Ok(closest_point_map(r_prime, eps)?.band())
}

/// The likelihood `p` on the band around `r_prime`, undefined elsewhere.
pub fn likelihood_map(image: &ScalarField, r_prime: &RegionMask, params: &DisocclusionParams) -> Result<ScalarField> {
    params.validate()?;
    image.grid().ensure_same(&r_prime.grid())?;
    let cpm = closest_point_map(r_prime, params.eps)?;
    let band = cpm.band();
    if band.is_empty() {
        return Err(Error::DegenerateRegion("empty dis-occlusion band"));
    }
    let grid = image.grid();
    let k = image.channels();
    let background = cpm.beyond();
    let offsets = window_offsets(params.window_radius(), params.window);
    let uniform = -(k as f64) * 256f64.ln();

    let mut models: HashMap<usize, (ParzenModel, Option<ParzenModel>)> = HashMap::new();
    let mut out = ScalarField::undefined(grid, 1);
    for x in band.indices() {
        let cl = cpm.closest(x).expect("band pixels have a closest point");
        let (fg, bg) = models.entry(cl).or_insert_with(|| {
            let fg = ParzenModel::new(
                window_pixels(grid, cl, &offsets)
                    .filter(|&j| r_prime.get(j))
                    .map(|j| image.pixel(j)),
                k,
                params.bandwidth,
            )
            .expect("window contains its centre");
            let bg = ParzenModel::new(
                window_pixels(grid, cl, &offsets)
                    .filter(|&j| background.get(j))
                    .map(|j| image.pixel(j)),
                k,
                params.bandwidth,
            );
            (fg, bg)
        });
        let v = image.pixel(x);
        let lf = fg.log_density(v);
        let lb = bg.as_ref().map_or(uniform, |m| m.log_density(v));
        out.set(x, 0, likelihood_value(cpm.distance(x), lf, lb, params.sigma_d));
    }
    Ok(out)
}

/// `{x ∈ band : (G_σ ∗ p)(x) > β_d}`.
///
/// Before smoothing, `p` is continued into `r_prime` by copying the value
/// of the nearest band pixel, so that the kernel does not lose the mass on
/// the region side of the band; the outer edge of the band is handled by
/// renormalisation.
pub fn threshold_likelihood(p: &ScalarField, band: &RegionMask, r_prime: &RegionMask, sigma: f64, beta_d: f64) -> RegionMask {
    let grid = band.grid();
    let smooth = if sigma > 0.0 && !band.is_empty() {
        let reach = (3.0 * sigma).ceil() + 1.0;
        let cpm = closest_point_map(band, reach).expect("band is non-empty");
        let mut q = p.restricted(band);
        let mut domain = band.clone();
        for i in r_prime.indices() {
            if let Some(j) = cpm.closest(i) {
                q.set(i, 0, p.get(j, 0));
                domain.set(i, true);
            }
        }
        gaussian_smooth_on_region(&q, sigma, &domain)
    } else {
        p.clone()
    };
    let bits = (0..grid.len())
        .map(|i| band.get(i) && smooth.get(i, 0) > beta_d)
        .collect();
    RegionMask::from_bits(grid, bits).expect("sizes agree")
}

/// The dis-occlusion `D`, disjoint from `r_prime`. Empty when there is no
/// band (the region covers the grid).
pub fn detect(image: &ScalarField, r_prime: &RegionMask, params: &DisocclusionParams) -> Result<RegionMask> {
    let band = band(r_prime, params.eps)?;
    if band.is_empty() {
        return Ok(band);
    }
    let p = likelihood_map(image, r_prime, params)?;
    Ok(threshold_likelihood(&p, &band, r_prime, params.sigma, params.beta_d))
}

/// `E_d(D) = −Σ_D p + β_d |D|`.
pub fn disocclusion_energy(p: &ScalarField, d: &RegionMask, beta_d: f64) -> f64 {
    d.indices().map(|i| beta_d - p.get(i, 0)).sum()
}
