//! Self-occlusion estimation given the current warp.
//!
//! With the warp fixed the occlusion energy separates per pixel: a pixel
//! pays either its data residual or the area cost `β_o`, so thresholding
//! the residual at `β_o` is the global minimiser.

use crate::descent::{descend, descend_from, no_occlusion, squared_residual, DescentConfig, DescentReport, Penalty, TargetImage, Template, WarpState};
use crate::error::{Error, Result};
use crate::field::{RegionMask, ScalarField};
use crate::smooth::gaussian_smooth_on_region;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionParams {
    /// Position of `β_o` between the smoothed residual's min and max.
    pub factor: f64,
    /// Smoothing of the residual for the final estimate and for `β_o`.
    pub sigma: f64,
    /// Lower bound on `β_o`, as a per-channel intensity gap: `β_o` is never
    /// below `ρ(k · gap²)` for `k` channels.
    pub min_gap: f64,
}

impl Default for OcclusionParams {
    fn default() -> Self {
        Self {
            factor: 0.3,
            sigma: 5.0,
            min_gap: 20.0,
        }
    }
}

impl OcclusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.factor) || self.sigma < 0.0 || self.min_gap < 0.0 {
            return Err(Error::InvalidParameter(format!("invalid occlusion parameters {self:?}")));
        }
        Ok(())
    }

    /// `ρ(k · gap²)`.
    pub fn floor(&self, penalty: Penalty, channels: usize) -> f64 {
        penalty.rho(channels as f64 * self.min_gap * self.min_gap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionEstimate {
    pub warped_mask: RegionMask,
    pub residual: ScalarField,
    pub beta_o: f64,
}

/// `Res(x) = ρ(‖I(x) − a_τ(x)‖²)` on `R_τ`.
pub fn residual(state: &WarpState, image: &ScalarField, penalty: Penalty) -> ScalarField {
    let mut r = squared_residual(state, image);
    for i in state.region.indices() {
        r.set(i, 0, penalty.rho(r.get(i, 0)));
    }
    r
}

/// `min + factor · (max − min)` of a residual over `mask`.
pub fn beta_o_from_range(min: f64, max: f64, factor: f64) -> f64 {
    min + factor * (max - min)
}

/// The threshold rule applied to `res` smoothed with `sigma` on `mask`,
/// raised to at least `floor`.
pub fn beta_o_from_residual(res: &ScalarField, mask: &RegionMask, sigma: f64, factor: f64, floor: f64) -> Result<f64> {
    let smooth = gaussian_smooth_on_region(res, sigma, mask);
    let (lo, hi) = smooth
        .min_max_on(mask)
        .ok_or(Error::DegenerateRegion("empty residual domain"))?;
    Ok(beta_o_from_range(lo, hi, factor).max(floor))
}

/// `{x ∈ R_τ : Res(x) > β_o}`.
pub fn threshold(res: &ScalarField, region: &RegionMask, beta_o: f64) -> RegionMask {
    let bits = (0..region.grid().len())
        .map(|i| region.get(i) && res.get(i, 0) > beta_o)
        .collect();
    RegionMask::from_bits(region.grid(), bits).expect("sizes agree")
}

/// The occlusion minimising the energy for the state's warp.
pub fn update_occlusion(state: &WarpState, image: &ScalarField, beta_o: f64, penalty: Penalty) -> RegionMask {
    threshold(&residual(state, image, penalty), &state.region, beta_o)
}

/// `{x ∈ R_τ : (G_σ ∗ Res)(x) > β_o}` with region-renormalised smoothing.
pub fn final_occlusion(
    state: &WarpState,
    image: &ScalarField,
    beta_o: f64,
    sigma: f64,
    penalty: Penalty,
) -> OcclusionEstimate {
    let res = residual(state, image, penalty);
    let smooth = gaussian_smooth_on_region(&res, sigma, &state.region);
    OcclusionEstimate {
        warped_mask: threshold(&smooth, &state.region, beta_o),
        residual: res,
        beta_o,
    }
}

/// Result of [`joint_descent`]. `state.warped_occlusion` holds the final
/// smoothed occlusion.
#[derive(Debug, Clone)]
pub struct JointResult {
    pub state: WarpState,
    pub occlusion: OcclusionEstimate,
    /// Descent without occlusion, then descent with occlusion updates.
    pub reports: [DescentReport; 2],
}

/// Warp and occlusion estimation for one frame pair.
///
/// A first descent without occlusion gives the residual from which `β_o` is
/// set; a second descent continues from there, re-assigning the occlusion
/// by thresholding before every energy comparison. The returned occlusion
/// is the smoothed estimate at convergence.
pub fn joint_descent(
    template: &Template,
    target: &TargetImage,
    cfg: &DescentConfig,
    params: &OcclusionParams,
) -> Result<JointResult> {
    params.validate()?;
    let penalty = cfg.penalty;
    let (first, r1) = descend(template, target, 0.0, cfg, &mut no_occlusion)?;
    let res = residual(&first, &target.image, penalty);
    let floor = params.floor(penalty, template.channels());
    let beta_o = beta_o_from_residual(&res, &first.region, params.sigma, params.factor, floor)?;
    let mut update = |s: &WarpState, img: &ScalarField| update_occlusion(s, img, beta_o, penalty);
    let (mut state, r2) = descend_from(first, template, target, beta_o, cfg, &mut update)?;
    let occlusion = final_occlusion(&state, &target.image, beta_o, params.sigma, penalty);
    state.warped_occlusion = occlusion.warped_mask.clone();
    Ok(JointResult {
        state,
        occlusion,
        reports: [r1, r2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descent::{energy, Template};
    use crate::field::Grid2D;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inner(g: Grid2D) -> RegionMask {
        RegionMask::from_fn(g, |x, y| x > 0 && y > 0 && x + 1 < g.width() && y + 1 < g.height())
    }

    fn state_with(region: RegionMask, a: &ScalarField) -> WarpState {
        let t = Template::new(region, a).unwrap();
        WarpState::initial(&t).unwrap()
    }

    #[test]
    fn residual_examples() {
        let g = Grid2D::new(5, 5).unwrap();
        let m = inner(g);
        let a = ScalarField::new(g, 3, 100.0);
        let s = state_with(m, &a);
        let same = residual(&s, &a, Penalty::Quadratic);
        assert!(s.region.indices().all(|i| same.get(i, 0) == 0.0));
        let img = ScalarField::new(g, 3, 110.0);
        assert_eq!(residual(&s, &img, Penalty::Quadratic).get(g.index(1, 1), 0), 300.0);
        let r = residual(&s, &a, Penalty::Robust { eps: 0.01 });
        assert!((r.get(g.index(2, 2), 0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn beta_rule_examples() {
        assert_eq!(beta_o_from_range(0.0, 100.0, 0.3), 30.0);
        assert_eq!(beta_o_from_range(2.0, 2.0, 0.3), 2.0);
        assert!((beta_o_from_range(1.0, 11.0, 0.3) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_extremes() {
        let g = Grid2D::new(6, 6).unwrap();
        let m = inner(g);
        let a = ScalarField::new(g, 1, 0.0);
        let s = state_with(m, &a);
        let img = ScalarField::from_fn(g, |x, y| (x + y) as f64);
        assert!(update_occlusion(&s, &img, 1e9, Penalty::Quadratic).is_empty());
        assert_eq!(update_occlusion(&s, &img, -1.0, Penalty::Quadratic), s.region);
    }

    #[test]
    fn optimal_against_random_and_exhaustive_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Grid2D::new(12, 12).unwrap();
        let m = inner(g);
        let a = ScalarField::from_fn(g, |_, _| rng.random_range(0.0..255.0));
        let img = ScalarField::from_fn(g, |_, _| rng.random_range(0.0..255.0));
        let mut s = state_with(m, &a);
        let beta = 4000.0;
        let res = residual(&s, &img, Penalty::Quadratic);
        let o = update_occlusion(&s, &img, beta, Penalty::Quadratic);
        for i in s.region.indices() {
            assert_eq!(o.get(i), res.get(i, 0) > beta);
        }
        s.warped_occlusion = o;
        let best = energy(&s, &img, beta, Penalty::Quadratic);
        for _ in 0..1000 {
            let bits = (0..g.len()).map(|_| rng.random_bool(0.5)).collect();
            s.warped_occlusion = RegionMask::from_bits(g, bits).unwrap();
            assert!(best <= energy(&s, &img, beta, Penalty::Quadratic) + 1e-9);
        }

        // exhaustive lattice on a 12-pixel region
        let small = RegionMask::from_fn(g, |x, y| (2..6).contains(&x) && (3..6).contains(&y));
        let mut s = state_with(small.clone(), &a);
        s.warped_occlusion = update_occlusion(&s, &img, beta, Penalty::Quadratic);
        let best = energy(&s, &img, beta, Penalty::Quadratic);
        let idx: Vec<usize> = small.indices().collect();
        for bits in 0u32..(1 << idx.len()) {
            let mut o = RegionMask::empty(g);
            for (k, &i) in idx.iter().enumerate() {
                o.set(i, bits >> k & 1 == 1);
            }
            s.warped_occlusion = o;
            assert!(best <= energy(&s, &img, beta, Penalty::Quadratic) + 1e-9);
        }
    }

    #[test]
    fn isolated_spike_is_smoothed_away() {
        let g = Grid2D::new(31, 31).unwrap();
        let m = inner(g);
        let a = ScalarField::new(g, 1, 0.0);
        let s = state_with(m, &a);
        let mut img = ScalarField::new(g, 1, 0.0);
        img.set(g.index(15, 15), 0, 30.0);
        let beta = 100.0;
        assert!(update_occlusion(&s, &img, beta, Penalty::Quadratic).get(g.index(15, 15)));
        let est = final_occlusion(&s, &img, beta, 5.0, Penalty::Quadratic);
        // 900 spread over a σ = 5 kernel peaks at 900 / Σw ≈ 900 / 157
        assert!(est.warped_mask.is_empty());
    }

    #[test]
    fn wide_stripe_survives_smoothing() {
        let g = Grid2D::new(60, 40).unwrap();
        let m = inner(g);
        let a = ScalarField::new(g, 1, 0.0);
        let s = state_with(m, &a);
        let img = ScalarField::from_fn(g, |x, _| if (20..40).contains(&x) { 50.0 } else { 0.0 });
        // the 30% level of a σ = 5 blurred step sits 5·Φ⁻¹(0.7) ≈ 2.6 px outside it
        let beta = beta_o_from_range(0.0, 2500.0, 0.3);
        let raw = update_occlusion(&s, &img, beta, Penalty::Quadratic);
        let est = final_occlusion(&s, &img, beta, 5.0, Penalty::Quadratic);
        for y in 0..40 {
            for x in 0..60 {
                let i = g.index(x, y);
                if est.warped_mask.get(i) != raw.get(i) {
                    let edge = (x as i64 - 20).abs().min((x as i64 - 39).abs());
                    assert!(edge <= 3, "x={x}");
                }
            }
        }
    }

    #[test]
    fn zero_sigma_matches_unsmoothed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Grid2D::new(10, 10).unwrap();
        let m = inner(g);
        let a = ScalarField::new(g, 1, 0.0);
        let s = state_with(m, &a);
        let img = ScalarField::from_fn(g, |_, _| rng.random_range(0.0..50.0));
        let est = final_occlusion(&s, &img, 600.0, 0.0, Penalty::Quadratic);
        assert_eq!(est.warped_mask, update_occlusion(&s, &img, 600.0, Penalty::Quadratic));
    }

    proptest::proptest! {
        #[test]
        fn larger_threshold_gives_smaller_occlusion(b1 in 0.0f64..3000.0, d in 0.0f64..3000.0, seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Grid2D::new(12, 12).unwrap();
            let m = inner(g);
            let a = ScalarField::new(g, 1, 0.0);
            let s = state_with(m, &a);
            let img = ScalarField::from_fn(g, |_, _| rng.random_range(0.0..60.0));
            let b2 = b1 + d;
            proptest::prop_assert!(update_occlusion(&s, &img, b2, Penalty::Quadratic)
                .is_subset_of(&update_occlusion(&s, &img, b1, Penalty::Quadratic)));
            proptest::prop_assert!(final_occlusion(&s, &img, b2, 3.0, Penalty::Quadratic).warped_mask
                .is_subset_of(&final_occlusion(&s, &img, b1, 3.0, Penalty::Quadratic).warped_mask));
        }

        #[test]
        fn constant_residual_smoothing_is_neutral(v in 0.0f64..100.0, beta in 0.0f64..10000.0) {
            let g = Grid2D::new(9, 9).unwrap();
            let m = RegionMask::from_fn(g, |x, y| x + y < 12);
            let a = ScalarField::new(g, 1, 0.0);
            let s = state_with(m, &a);
            let img = ScalarField::new(g, 1, v);
            proptest::prop_assert_eq!(
                final_occlusion(&s, &img, beta, 5.0, Penalty::Quadratic).warped_mask,
                update_occlusion(&s, &img, beta, Penalty::Quadratic)
            );
        }
    }
}
