//! Frame-to-frame recursion: warp and occlusion, dis-occlusion, composition
//! of the new region and radiance filtering.

use crate::descent::{DescentConfig, DescentReport, TargetImage, Template};
use crate::disocclusion::{detect, DisocclusionParams};
use crate::error::{Error, Result};
use crate::field::{RegionMask, ScalarField, VectorField};
use crate::occlusion::{joint_descent, OcclusionParams};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Gain of the radiance filter, in `[0, 1]`.
    pub k_a: f64,
    pub descent: DescentConfig,
    pub occlusion: OcclusionParams,
    pub disocclusion: DisocclusionParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            k_a: 0.8,
            descent: DescentConfig::default(),
            occlusion: OcclusionParams::default(),
            disocclusion: DisocclusionParams::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.k_a) {
            return Err(Error::InvalidParameter(format!("k_a = {} not in [0, 1]", self.k_a)));
        }
        self.descent.validate()?;
        self.occlusion.validate()?;
        self.disocclusion.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub frame_index: usize,
    pub region: RegionMask,
    /// Defined exactly on `region`.
    pub radiance: ScalarField,
    /// Occlusion found when warping into this frame, in this frame's
    /// coordinates.
    pub last_occlusion: RegionMask,
    pub last_disocclusion: RegionMask,
}

/// Everything computed while stepping into a frame.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    /// `w(R)`.
    pub warped_region: RegionMask,
    /// `x − φ⁻¹(x)` on `w(R)`.
    pub displacement: VectorField,
    pub beta_o: f64,
    pub reports: [DescentReport; 2],
    /// Some descent hit its iteration cap before converging.
    pub stalled: bool,
}

pub fn init(image: &ScalarField, mask: &RegionMask) -> Result<TrackerState> {
    image.grid().ensure_same(&mask.grid())?;
    if mask.is_empty() {
        return Err(Error::DegenerateRegion("empty initial mask"));
    }
    Ok(TrackerState {
        frame_index: 0,
        region: mask.clone(),
        radiance: image.restricted(mask),
        last_occlusion: RegionMask::empty(mask.grid()),
        last_disocclusion: RegionMask::empty(mask.grid()),
    })
}

/// `(1 − K_a) a′ + K_a I` on `R′`, `I` on `D`, undefined elsewhere.
pub fn update_radiance(a_prime: &ScalarField, image: &ScalarField, r_prime: &RegionMask, d: &RegionMask, k_a: f64) -> ScalarField {
    let mut out = ScalarField::undefined(image.grid(), image.channels());
    for i in r_prime.indices() {
        for c in 0..image.channels() {
            out.set(i, c, (1.0 - k_a) * a_prime.get(i, c) + k_a * image.get(i, c));
        }
    }
    for i in d.indices() {
        out.pixel_mut(i).copy_from_slice(image.pixel(i));
    }
    out
}

pub fn step(state: &TrackerState, next: &ScalarField, cfg: &TrackerConfig) -> Result<TrackerState> {
    step_with_diagnostics(state, next, cfg).map(|(s, _)| s)
}

/// One frame of tracking. Errors are tagged with the index of `next`.
pub fn step_with_diagnostics(
    state: &TrackerState,
    next: &ScalarField,
    cfg: &TrackerConfig,
) -> Result<(TrackerState, StepDiagnostics)> {
    let frame = state.frame_index + 1;
    let tag = |e: Error| e.at_frame(frame);
    cfg.validate()?;
    let template = Template::new(state.region.clone(), &state.radiance).map_err(tag)?;
    let target = TargetImage::new(next.clone(), cfg.descent.gradient_sigma);
    let joint = joint_descent(&template, &target, &cfg.descent, &cfg.occlusion).map_err(tag)?;
    let warped = &joint.state;
    let r_prime = warped.region.difference(&warped.warped_occlusion);
    if r_prime.is_empty() {
        return Err(tag(Error::TrackingFailure { pixels: 0 }));
    }
    let d = detect(next, &r_prime, &cfg.disocclusion).map_err(tag)?;
    let region = r_prime.union(&d);
    let radiance = update_radiance(&warped.warped_radiance, next, &r_prime, &d, cfg.k_a);
    let stalled = joint.reports.iter().any(|r| !r.converged);
    let diag = StepDiagnostics {
        warped_region: warped.region.clone(),
        displacement: warped.backward.displacement(&warped.region),
        beta_o: joint.occlusion.beta_o,
        reports: joint.reports,
        stalled,
    };
    let next_state = TrackerState {
        frame_index: frame,
        region,
        radiance,
        last_occlusion: joint.state.warped_occlusion,
        last_disocclusion: d,
    };
    Ok((next_state, diag))
}

/// Receives each state as soon as it is known, with the diagnostics of the
/// step that produced it (none for the initial state).
pub type Sink<'a> = &'a mut dyn FnMut(&TrackerState, Option<&StepDiagnostics>) -> Result<()>;

/// Tracks through `frames` from `mask0` on the first frame. On failure the
/// states already handed to `sink` stay valid; the error names the frame.
pub fn run(frames: &[ScalarField], mask0: &RegionMask, cfg: &TrackerConfig, sink: Sink<'_>) -> Result<Vec<TrackerState>> {
    if frames.len() < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 frames, got {}", frames.len())));
    }
    cfg.validate()?;
    let mut state = init(&frames[0], mask0).map_err(|e| e.at_frame(0))?;
    sink(&state, None)?;
    let mut out = vec![state.clone()];
    for next in &frames[1..] {
        let (s, diag) = step_with_diagnostics(&state, next, cfg)?;
        sink(&s, Some(&diag))?;
        out.push(s.clone());
        state = s;
    }
    Ok(out)
}
