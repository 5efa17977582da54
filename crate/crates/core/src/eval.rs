//! Region accuracy against ground truth, and threshold sweeps.

use crate::descent::{TargetImage, Template};
use crate::disocclusion::{band, detect, likelihood_map, threshold_likelihood};
use crate::error::{Error, Result};
use crate::field::{RegionMask, ScalarField};
use crate::occlusion::{joint_descent, threshold};
use crate::smooth::gaussian_smooth_on_region;
use crate::tracker::TrackerConfig;

/// Threshold samples per sweep.
pub const SWEEP_SAMPLES: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FMeasure {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Precision, recall and their harmonic mean; a ratio with an empty
/// denominator is 0, as is `F` when `P + R = 0`.
pub fn f_measure(pred: &RegionMask, truth: &RegionMask) -> FMeasure {
    let hit = pred.intersection(truth).count() as f64;
    let ratio = |n: usize| if n == 0 { 0.0 } else { hit / n as f64 };
    let precision = ratio(pred.count());
    let recall = ratio(truth.count());
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    FMeasure { precision, recall, f }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub frames: Vec<FMeasure>,
}

impl EvalReport {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a RegionMask, &'a RegionMask)>) -> Self {
        Self {
            frames: pairs.into_iter().map(|(p, t)| f_measure(p, t)).collect(),
        }
    }

    fn mean(&self, f: impl Fn(&FMeasure) -> f64) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(f).sum::<f64>() / self.frames.len() as f64
    }

    pub fn mean_precision(&self) -> f64 {
        self.mean(|m| m.precision)
    }

    pub fn mean_recall(&self) -> f64 {
        self.mean(|m| m.recall)
    }

    pub fn mean_f(&self) -> f64 {
        self.mean(|m| m.f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    BetaO,
    BetaD,
}

/// Ground truth for the second frame of a sweep pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTruth {
    pub region: RegionMask,
    /// Part of the warped template hidden in the second frame.
    pub occlusion: RegionMask,
    /// Part of the region newly visible in the second frame.
    pub disocclusion: RegionMask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSample {
    pub threshold: f64,
    /// The resulting region against the true region.
    pub region: FMeasure,
    /// The swept stage's own output (occlusion or dis-occlusion) against
    /// its truth.
    pub stage: FMeasure,
}

/// Uniform samples over `[lo, hi]`, endpoints included.
pub fn sweep_thresholds(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Runs the occlusion and dis-occlusion stages on one frame pair while
/// varying one threshold over its range and holding the other at its
/// configured value.
///
/// The warp is estimated once with the configured parameters and reused
/// for every sample. `β_o` ranges over the smoothed residual on the warped
/// region, `β_d` over the likelihood on the band.
pub fn pr_sweep(
    first: &ScalarField,
    mask: &RegionMask,
    second: &ScalarField,
    truth: &SweepTruth,
    cfg: &TrackerConfig,
    param: SweepParam,
    samples: usize,
) -> Result<Vec<SweepSample>> {
    cfg.validate()?;
    if samples == 0 {
        return Err(Error::InvalidParameter("sweep needs at least one sample".into()));
    }
    let template = Template::new(mask.clone(), &first.restricted(mask))?;
    let target = TargetImage::new(second.clone(), cfg.descent.gradient_sigma);
    let joint = joint_descent(&template, &target, &cfg.descent, &cfg.occlusion)?;
    let region = &joint.state.region;
    let mut out = Vec::with_capacity(samples);
    match param {
        SweepParam::BetaO => {
            let smooth = gaussian_smooth_on_region(&joint.occlusion.residual, cfg.occlusion.sigma, region);
            let (lo, hi) = smooth.min_max_on(region).ok_or(Error::DegenerateRegion("empty warped region"))?;
            for t in sweep_thresholds(lo, hi, samples) {
                let occ = threshold(&smooth, region, t);
                let r_prime = region.difference(&occ);
                let pred = if r_prime.is_empty() {
                    r_prime
                } else {
                    r_prime.union(&detect(second, &r_prime, &cfg.disocclusion)?)
                };
                out.push(SweepSample {
                    threshold: t,
                    region: f_measure(&pred, &truth.region),
                    stage: f_measure(&occ, &truth.occlusion),
                });
            }
        }
        SweepParam::BetaD => {
            let r_prime = region.difference(&joint.state.warped_occlusion);
            let b = band(&r_prime, cfg.disocclusion.eps)?;
            let p = likelihood_map(second, &r_prime, &cfg.disocclusion)?;
            let (lo, hi) = p.min_max_on(&b).ok_or(Error::DegenerateRegion("empty dis-occlusion band"))?;
            for t in sweep_thresholds(lo, hi, samples) {
                let d = threshold_likelihood(&p, &b, &r_prime, cfg.disocclusion.sigma, t);
                out.push(SweepSample {
                    threshold: t,
                    region: f_measure(&r_prime.union(&d), &truth.region),
                    stage: f_measure(&d, &truth.disocclusion),
                });
            }
        }
    }
    Ok(out)
}
