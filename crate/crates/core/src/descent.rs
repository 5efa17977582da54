//! Warp descent: energy, transport of the region and backward map, and the
//! α-free translation/deformation alternation.
//!
//! The region moves with velocity `−G`. Both the level set and the backward
//! map obey `∂τ u = G · ∇u`, discretised with upwind differences taken on
//! the side the information comes from (forward where `Gʲ > 0`).

use crate::distance::{extend_to_narrowband, signed_distance, LevelSet};
use crate::error::{Error, Result};
use crate::field::{
    bilinear_sample_into, jacobian_det, masked_diff, BackwardWarp, Grid2D, RegionMask, ScalarField,
    VectorField,
};
use crate::smooth::{gaussian_blur, image_gradient};
use crate::sobolev::{assemble_gradient, SobolevGradient, SolverOptions};

/// Regions smaller than this are treated as lost.
pub const MIN_REGION_PIXELS: usize = 4;

/// Extent (px) to which the level set is kept an accurate distance.
pub const LEVEL_SET_EXTENT: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Quadratic,
    /// `ρ(r²) = √(r² + ε)`.
    Robust { eps: f64 },
}

impl Penalty {
    #[inline]
    pub fn rho(&self, r2: f64) -> f64 {
        match *self {
            Penalty::Quadratic => r2,
            Penalty::Robust { eps } => (r2 + eps).sqrt(),
        }
    }

    #[inline]
    pub fn rho_prime(&self, r2: f64) -> f64 {
        match *self {
            Penalty::Quadratic => 1.0,
            Penalty::Robust { eps } => 0.5 / (r2 + eps).sqrt(),
        }
    }
}

/// How pixels newly covered by the region get their backward-map value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillRule {
    /// Average of the previous-region 8-neighbours, weighted by the distance
    /// from the pixel to the zero crossing towards each neighbour.
    Average,
    /// Same weights, but each neighbour's value is first extrapolated to the
    /// pixel with its own one-sided Jacobian (exact for affine maps).
    Extrapolate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentConfig {
    pub cfl_factor: f64,
    /// Translation phase ends when `|⟨G⟩|` or the accepted displacement of a
    /// translation step (px) falls below this.
    pub translation_tol: f64,
    pub energy_rel_tol: f64,
    pub stall_window: usize,
    /// Cap on accepted steps of either kind.
    pub max_iters: usize,
    pub reinit_every: usize,
    pub penalty: Penalty,
    pub max_halvings: usize,
    /// Presmoothing of the image before taking its gradient.
    pub gradient_sigma: f64,
    pub fill: FillRule,
    pub solver: SolverOptions,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            cfl_factor: 0.5,
            translation_tol: 1e-3,
            energy_rel_tol: 1e-4,
            stall_window: 5,
            max_iters: 2000,
            reinit_every: 20,
            penalty: Penalty::Quadratic,
            max_halvings: 8,
            gradient_sigma: 1.0,
            fill: FillRule::Extrapolate,
            solver: SolverOptions::default(),
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_factor > 0.0 && self.cfl_factor <= 1.0) {
            return Err(Error::InvalidParameter(format!("cfl_factor {} not in (0, 1]", self.cfl_factor)));
        }
        if !(self.translation_tol > 0.0 && self.energy_rel_tol > 0.0) {
            return Err(Error::InvalidParameter("descent tolerances must be positive".into()));
        }
        if self.stall_window == 0 || self.reinit_every == 0 {
            return Err(Error::InvalidParameter("stall_window and reinit_every must be at least 1".into()));
        }
        if let Penalty::Robust { eps } = self.penalty {
            if !(eps > 0.0) {
                return Err(Error::InvalidParameter("robust penalty needs eps > 0".into()));
            }
        }
        if self.gradient_sigma < 0.0 {
            return Err(Error::InvalidParameter("gradient_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// The region and radiance being matched.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub region: RegionMask,
    /// Radiance on `region`, `NaN` elsewhere.
    pub radiance: ScalarField,
    // pixel-centre bounding box of the region: [xmin, ymin, xmax, ymax]
    bbox: [f64; 4],
}

impl Template {
    pub fn new(region: RegionMask, radiance: &ScalarField) -> Result<Self> {
        region.grid().ensure_same(&radiance.grid())?;
        if region.is_empty() {
            return Err(Error::DegenerateRegion("empty template region"));
        }
        let grid = region.grid();
        let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for i in region.indices() {
            let c = grid.center(i);
            bbox[0] = bbox[0].min(c[0]);
            bbox[1] = bbox[1].min(c[1]);
            bbox[2] = bbox[2].max(c[0]);
            bbox[3] = bbox[3].max(c[1]);
        }
        let radiance = radiance.restricted(&region);
        Ok(Self {
            region,
            radiance,
            bbox,
        })
    }

    pub fn grid(&self) -> Grid2D {
        self.region.grid()
    }

    pub fn channels(&self) -> usize {
        self.radiance.channels()
    }

    fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0].clamp(self.bbox[0], self.bbox[2]), p[1].clamp(self.bbox[1], self.bbox[3])]
    }

    /// `a ∘ φ⁻¹` on `region`.
    pub fn sample(&self, bw: &BackwardWarp, region: &RegionMask) -> ScalarField {
        let grid = region.grid();
        let ch = self.channels();
        let mut out = ScalarField::undefined(grid, ch);
        let mut buf = vec![0.0; ch];
        for i in region.indices() {
            bilinear_sample_into(&self.radiance, bw.coords.get(i), &mut buf);
            out.pixel_mut(i).copy_from_slice(&buf);
        }
        out
    }
}

/// The image a template is matched to, with its presmoothed gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetImage {
    pub image: ScalarField,
    grad: Vec<[f64; 2]>,
}

impl TargetImage {
    pub fn new(image: ScalarField, gradient_sigma: f64) -> Self {
        let grad = if gradient_sigma > 0.0 {
            image_gradient(&gaussian_blur(&image, gradient_sigma))
        } else {
            image_gradient(&image)
        };
        Self { image, grad }
    }

    pub fn grid(&self) -> Grid2D {
        self.image.grid()
    }

    /// `∇I_c` at pixel `i`.
    #[inline]
    pub fn gradient(&self, i: usize, c: usize) -> [f64; 2] {
        self.grad[i * self.image.channels() + c]
    }
}

/// Everything that evolves during one descent.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpState {
    pub levelset: LevelSet,
    pub backward: BackwardWarp,
    /// `{ψ < 0}`.
    pub region: RegionMask,
    pub warped_occlusion: RegionMask,
    pub warped_radiance: ScalarField,
    pub tau: f64,
    steps_since_reinit: usize,
}

impl WarpState {
    /// `ψ₀ = d_R`, `φ₀⁻¹ = id`, `R₀ = R`, `Õ₀ = ∅`.
    pub fn initial(template: &Template) -> Result<Self> {
        let region = template.region.clone();
        let levelset = signed_distance(&region, LEVEL_SET_EXTENT)?;
        let backward = BackwardWarp::identity(&region);
        let warped_radiance = template.radiance.restricted(&region);
        Ok(Self {
            levelset,
            warped_occlusion: RegionMask::empty(region.grid()),
            backward,
            region,
            warped_radiance,
            tau: 0.0,
            steps_since_reinit: 0,
        })
    }

    pub fn grid(&self) -> Grid2D {
        self.region.grid()
    }

    /// `R_τ \ Õ_τ`.
    pub fn visible(&self) -> RegionMask {
        self.region.difference(&self.warped_occlusion)
    }

    pub fn jac_det(&self) -> ScalarField {
        jacobian_det(&self.backward, &self.region)
    }

    /// Smallest `det ∇φ⁻¹` over interior region pixels.
    pub fn min_interior_jacobian(&self) -> f64 {
        let j = self.jac_det();
        self.region
            .interior()
            .indices()
            .map(|i| j.get(i, 0))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Squared residual norm `‖I(x) − a_τ(x)‖²` per region pixel.
pub(crate) fn squared_residual(state: &WarpState, image: &ScalarField) -> ScalarField {
    let grid = state.grid();
    let mut out = ScalarField::undefined(grid, 1);
    for i in state.region.indices() {
        let a = state.warped_radiance.pixel(i);
        let s: f64 = image.pixel(i).iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum();
        out.set(i, 0, s);
    }
    out
}

/// `Σ_{R_τ\Õ_τ} ρ(‖I − a_τ‖²) J + β_o Σ_{Õ_τ} J` with `J = det ∇φ_τ⁻¹`.
pub fn energy(state: &WarpState, image: &ScalarField, beta_o: f64, penalty: Penalty) -> f64 {
    let jac = state.jac_det();
    let r2 = squared_residual(state, image);
    let mut e = 0.0;
    for i in state.region.indices() {
        let j = jac.get(i, 0);
        if state.warped_occlusion.get(i) {
            e += beta_o * j;
        } else {
            e += penalty.rho(r2.get(i, 0)) * j;
        }
    }
    e
}

/// `f₁(x) = 2 ρ′(‖I − a_τ‖²) Σ_c (I_c − a_τ,c) ∇I_c` on `R_τ \ Õ_τ`, zero on
/// `Õ_τ`: the integrand of the first variation of [`energy`].
pub fn f1_field(state: &WarpState, target: &TargetImage, penalty: Penalty) -> VectorField {
    let grid = state.grid();
    let image = &target.image;
    let mut out = VectorField::undefined(grid);
    for i in state.region.indices() {
        if state.warped_occlusion.get(i) {
            out.set(i, [0.0, 0.0]);
            continue;
        }
        let a = state.warped_radiance.pixel(i);
        let mut r2 = 0.0;
        let mut v = [0.0, 0.0];
        for (c, (&ic, &ac)) in image.pixel(i).iter().zip(a).enumerate() {
            let d = ic - ac;
            r2 += d * d;
            let g = target.gradient(i, c);
            v[0] += d * g[0];
            v[1] += d * g[1];
        }
        let w = 2.0 * penalty.rho_prime(r2);
        out.set(i, [w * v[0], w * v[1]]);
    }
    out
}

/// `Δt = cfl · 0.5 / max |Gʲ|` over `mask`; `None` when `G` vanishes there.
pub fn cfl_timestep(g: &VectorField, mask: &RegionMask, cfl_factor: f64) -> Option<f64> {
    let m = g.max_component_on(mask);
    (m > 0.0 && m.is_finite()).then(|| cfl_factor * 0.5 / m)
}

#[inline]
fn upwind_term(
    grid: Grid2D,
    i: usize,
    axis: usize,
    g: f64,
    value: impl Fn(usize) -> Option<f64>,
    here: f64,
) -> f64 {
    let (dx, dy) = if axis == 0 { (1, 0) } else { (0, 1) };
    let d = if g > 0.0 {
        grid.offset(i, dx, dy).and_then(&value).map_or(0.0, |v| v - here)
    } else {
        grid.offset(i, -dx, -dy).and_then(&value).map_or(0.0, |v| here - v)
    };
    g * d
}

/// One explicit upwind step of `∂τψ = G · ∇ψ` wherever `G` is defined.
pub fn upwind_advect_levelset(ls: &LevelSet, g: &VectorField, dt: f64) -> LevelSet {
    let grid = ls.grid();
    let psi = ls.psi();
    let mut out = psi.to_vec();
    for i in 0..grid.len() {
        if !g.is_defined(i) {
            continue;
        }
        let v = g.get(i);
        let here = psi[i];
        let t = upwind_term(grid, i, 0, v[0], |j| Some(psi[j]), here)
            + upwind_term(grid, i, 1, v[1], |j| Some(psi[j]), here);
        out[i] = here + dt * t;
    }
    LevelSet::from_values(grid, out, ls.extent()).expect("same grid")
}

/// One step of `∂τφ⁻¹ = G · ∇φ⁻¹` from `region_old` to `region_new`.
///
/// Pixels in both regions take the upwind update, with differences towards
/// neighbours outside `region_old` set to zero. Newly covered pixels are
/// filled from their `region_old` 8-neighbours according to `fill`.
pub fn transport_backward_map(
    bw: &BackwardWarp,
    g: &VectorField,
    dt: f64,
    region_old: &RegionMask,
    region_new: &RegionMask,
    ls_old: &LevelSet,
    fill: FillRule,
) -> Result<BackwardWarp> {
    let grid = region_old.grid();
    let coords = &bw.coords;
    let mut out = VectorField::undefined(grid);
    for i in region_new.indices() {
        if region_old.get(i) {
            let v = g.get(i);
            let here = coords.get(i);
            let mut p = here;
            for comp in 0..2 {
                let val = |j: usize| region_old.get(j).then(|| coords.get(j)[comp]);
                let t = upwind_term(grid, i, 0, v[0], val, here[comp])
                    + upwind_term(grid, i, 1, v[1], val, here[comp]);
                p[comp] = here[comp] + dt * t;
            }
            out.set(i, p);
        }
    }
    let psi = ls_old.psi();
    let id = [[1.0, 0.0], [0.0, 1.0]];
    for i in region_new.difference(region_old).indices() {
        let c = grid.center(i);
        let mut acc = [0.0, 0.0];
        let mut wsum = 0.0;
        let mut plain = [0.0, 0.0];
        let mut n = 0usize;
        for j in grid.neighbors8(i) {
            if !region_old.get(j) {
                continue;
            }
            let cj = grid.center(j);
            let len = ((cj[0] - c[0]).powi(2) + (cj[1] - c[1]).powi(2)).sqrt();
            // ψ_old(i) ≥ 0 > ψ_old(j)
            let (a, b) = (psi[i], psi[j]);
            let w = if a - b > 0.0 { len * a / (a - b) } else { 0.0 };
            let val = match fill {
                FillRule::Average => coords.get(j),
                FillRule::Extrapolate => {
                    let jac = crate::field::masked_jacobian(coords, region_old, j, id);
                    let d = [c[0] - cj[0], c[1] - cj[1]];
                    let base = coords.get(j);
                    [
                        base[0] + jac[0][0] * d[0] + jac[0][1] * d[1],
                        base[1] + jac[1][0] * d[0] + jac[1][1] * d[1],
                    ]
                }
            };
            acc[0] += w * val[0];
            acc[1] += w * val[1];
            wsum += w;
            plain[0] += val[0];
            plain[1] += val[1];
            n += 1;
        }
        if n == 0 {
            return Err(Error::TransportFailure { pixel: i });
        }
        let p = if wsum > 0.0 {
            [acc[0] / wsum, acc[1] / wsum]
        } else {
            [plain[0] / n as f64, plain[1] / n as f64]
        };
        out.set(i, p);
    }
    Ok(BackwardWarp { coords: out })
}

/// Moves the state by `−G Δt`: extends `G` to the narrowband, advects the
/// level set, transports the backward map and refreshes `a_τ`. The
/// occlusion estimate is only restricted to the new region.
pub fn advance(
    state: &WarpState,
    template: &Template,
    g: &VectorField,
    dt: f64,
    cfg: &DescentConfig,
) -> Result<WarpState> {
    let g_ext = extend_to_narrowband(g, &state.levelset)?;
    let mut ls = upwind_advect_levelset(&state.levelset, &g_ext, dt);
    let region = ls.region();
    let n = region.count();
    if n < MIN_REGION_PIXELS {
        return Err(Error::TrackingFailure { pixels: n });
    }
    if region.is_full() {
        return Err(Error::DegenerateRegion("region grew over the whole grid"));
    }
    let mut backward =
        transport_backward_map(&state.backward, &g_ext, dt, &state.region, &region, &state.levelset, cfg.fill)?;
    for i in region.indices() {
        backward.coords.set(i, template.clamp(backward.coords.get(i)));
    }
    let mut steps_since_reinit = state.steps_since_reinit + 1;
    let distorted = ls
        .gradient_norm_range()
        .is_some_and(|(lo, hi)| lo < 0.8 || hi > 1.2);
    if steps_since_reinit >= cfg.reinit_every || distorted {
        ls = ls.reinitialize()?;
        steps_since_reinit = 0;
    }
    let warped_radiance = template.sample(&backward, &region);
    let warped_occlusion = state.warped_occlusion.intersection(&region);
    Ok(WarpState {
        levelset: ls,
        backward,
        region,
        warped_occlusion,
        warped_radiance,
        tau: state.tau + dt,
        steps_since_reinit,
    })
}

/// Sobolev gradient of [`energy`] at `state`.
pub fn sobolev_gradient(
    state: &WarpState,
    target: &TargetImage,
    cfg: &DescentConfig,
    warm: Option<&VectorField>,
) -> Result<SobolevGradient> {
    let f1 = f1_field(state, target, cfg.penalty);
    assemble_gradient(&f1, &state.jac_det(), &state.region, cfg.solver, warm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Translation,
    Deformation,
    HornSchunck,
}

impl Phase {
    pub fn tag(&self) -> &'static str {
        match self {
            Phase::Translation => "translation",
            Phase::Deformation => "deformation",
            Phase::HornSchunck => "horn_schunck",
        }
    }
}

/// One accepted step of a descent.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub phase: Phase,
    pub energy: f64,
    pub mean_grad_norm: f64,
    pub deform_grad_inf: f64,
    pub dt: f64,
    /// Largest pixel displacement of the step, `‖G‖∞ Δt`.
    pub max_displacement: f64,
    pub min_jacobian: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescentReport {
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
    pub translation_steps: usize,
    pub deformation_steps: usize,
    pub rejected_steps: usize,
    /// Number of translation phases run.
    pub outer_iterations: usize,
    /// State at the end of the first translation phase.
    pub first_translation: Option<WarpState>,
    /// True when no deformation step ran before a translation phase had
    /// converged.
    pub translation_first: bool,
    pub min_jacobian: f64,
    pub energy_monotone: bool,
}

/// Re-estimates `Õ` for a state; called after every trial step.
pub type OcclusionUpdate<'a> = &'a mut dyn FnMut(&WarpState, &ScalarField) -> RegionMask;

struct Trial {
    state: WarpState,
    energy: f64,
    dt: f64,
}

/// Tries `−G Δt` and halves `Δt` until the energy does not increase.
#[allow(clippy::too_many_arguments)]
fn try_step(
    state: &WarpState,
    e0: f64,
    template: &Template,
    target: &TargetImage,
    g: &VectorField,
    dt: f64,
    beta_o: f64,
    cfg: &DescentConfig,
    occ: &mut OcclusionUpdate<'_>,
    rejected: &mut usize,
) -> Result<Option<Trial>> {
    let mut dt = dt;
    for _ in 0..=cfg.max_halvings {
        let mut s = advance(state, template, g, dt, cfg)?;
        s.warped_occlusion = occ(&s, &target.image).intersection(&s.region);
        let e = energy(&s, &target.image, beta_o, cfg.penalty);
        if e <= e0 {
            return Ok(Some(Trial { state: s, energy: e, dt }));
        }
        *rejected += 1;
        dt *= 0.5;
    }
    Ok(None)
}

/// Occlusion callback that never marks anything occluded.
pub fn no_occlusion(state: &WarpState, _: &ScalarField) -> RegionMask {
    RegionMask::empty(state.grid())
}

/// Runs the α-free descent from the initial state of `template`.
pub fn descend(
    template: &Template,
    target: &TargetImage,
    beta_o: f64,
    cfg: &DescentConfig,
    occlusion_update: OcclusionUpdate<'_>,
) -> Result<(WarpState, DescentReport)> {
    let state = WarpState::initial(template)?;
    descend_from(state, template, target, beta_o, cfg, occlusion_update)
}

/// Runs the α-free descent from `state`: translation phases alternate with
/// single deformation steps until the energy stops decreasing.
pub fn descend_from(
    mut state: WarpState,
    template: &Template,
    target: &TargetImage,
    beta_o: f64,
    cfg: &DescentConfig,
    mut occ: OcclusionUpdate<'_>,
) -> Result<(WarpState, DescentReport)> {
    cfg.validate()?;
    template.grid().ensure_same(&target.grid())?;
    state.warped_occlusion = occ(&state, &target.image).intersection(&state.region);
    let mut e = energy(&state, &target.image, beta_o, cfg.penalty);
    let mut report = DescentReport {
        min_jacobian: state.min_interior_jacobian(),
        energy_monotone: true,
        translation_first: true,
        ..Default::default()
    };
    let mut outer_energies = vec![e];
    let mut warm: Option<VectorField> = None;
    let mut trans_disp = cfg.cfl_factor * 0.5;
    let mut iter = 0usize;
    let push = |report: &mut DescentReport, rec: TraceRecord, prev: f64| {
        if rec.energy > prev + 1e-12 {
            report.energy_monotone = false;
        }
        report.min_jacobian = report.min_jacobian.min(rec.min_jacobian);
        report.trace.push(rec);
    };
    'outer: loop {
        report.outer_iterations += 1;
        // translation phase
        let trans_converged;
        loop {
            if iter >= cfg.max_iters {
                break 'outer;
            }
            let gr = sobolev_gradient(&state, target, cfg, warm.as_ref())?;
            let deform_inf = gr.deform.max_component_on(&state.region);
            warm = Some(gr.deform.clone());
            let gm = gr.translation_norm();
            if gm <= cfg.translation_tol {
                trans_converged = true;
                break;
            }
            let g = gr.translation(&state.region);
            let gmax = gr.translation_max_component();
            let full = cfg.cfl_factor * 0.5 / gmax;
            // start from twice the last accepted displacement, capped by CFL
            let dt0 = full.min(2.0 * trans_disp / gmax);
            match try_step(&state, e, template, target, &g, dt0, beta_o, cfg, &mut occ, &mut report.rejected_steps)? {
                Some(t) => {
                    iter += 1;
                    report.translation_steps += 1;
                    let disp = gmax * t.dt;
                    trans_disp = disp;
                    let rec = TraceRecord {
                        iter,
                        phase: Phase::Translation,
                        energy: t.energy,
                        mean_grad_norm: gm,
                        deform_grad_inf: deform_inf,
                        dt: t.dt,
                        max_displacement: disp,
                        min_jacobian: t.state.min_interior_jacobian(),
                    };
                    push(&mut report, rec, e);
                    state = t.state;
                    e = t.energy;
                    if disp < cfg.translation_tol {
                        trans_converged = true;
                        break;
                    }
                }
                None => {
                    trans_converged = true;
                    trans_disp = cfg.cfl_factor * 0.5;
                    break;
                }
            }
        }
        if report.first_translation.is_none() {
            report.first_translation = Some(state.clone());
        }
        report.translation_first &= trans_converged;
        // one deformation step
        if iter >= cfg.max_iters {
            break;
        }
        let gr = sobolev_gradient(&state, target, cfg, warm.as_ref())?;
        warm = Some(gr.deform.clone());
        let deform_inf = gr.deform.max_component_on(&state.region);
        let mut deformed = false;
        if let Some(dt) = cfl_timestep(&gr.deform, &state.region, cfg.cfl_factor) {
            if let Some(t) =
                try_step(&state, e, template, target, &gr.deform, dt, beta_o, cfg, &mut occ, &mut report.rejected_steps)?
            {
                iter += 1;
                report.deformation_steps += 1;
                let rec = TraceRecord {
                    iter,
                    phase: Phase::Deformation,
                    energy: t.energy,
                    mean_grad_norm: gr.translation_norm(),
                    deform_grad_inf: deform_inf,
                    dt: t.dt,
                    max_displacement: deform_inf * t.dt,
                    min_jacobian: t.state.min_interior_jacobian(),
                };
                push(&mut report, rec, e);
                state = t.state;
                e = t.energy;
                deformed = true;
            }
        }
        outer_energies.push(e);
        if !deformed {
            // neither kind of step can lower the energy any more
            report.converged = true;
            break;
        }
        let k = outer_energies.len() - 1;
        if k >= cfg.stall_window {
            let before = outer_energies[k - cfg.stall_window];
            let rel = if before > 0.0 { (before - e) / before } else { 0.0 };
            if rel < cfg.energy_rel_tol {
                report.converged = true;
                break 'outer;
            }
        }
    }
    Ok((state, report))
}

/// Minimiser of the linearised Horn–Schunck energy
/// `Σ (I − a_τ + ∇a_τ · v)² + γ Σ_{x∼y} ‖v(y) − v(x)‖²` over `R_τ`.
///
/// `v` is the motion of the region (the region moves by `+v`). Solved by
/// Jacobi-preconditioned conjugate gradients on the normal equations.
pub fn horn_schunck_step(state: &WarpState, image: &ScalarField, gamma: f64, opts: SolverOptions) -> Result<VectorField> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    let grid = state.grid();
    let region = &state.region;
    let idx: Vec<usize> = region.indices().collect();
    let n = idx.len();
    let mut pos = vec![usize::MAX; grid.len()];
    for (k, &i) in idx.iter().enumerate() {
        pos[i] = k;
    }
    let ch = image.channels();
    // per pixel: Σ_c b bᵀ (3 entries) and rhs −Σ_c b r
    let mut bb = vec![[0.0; 3]; n];
    let mut rhs = vec![0.0; 2 * n];
    for (k, &i) in idx.iter().enumerate() {
        for c in 0..ch {
            let b = [0usize, 1].map(|axis| {
                masked_diff(grid, region, i, axis, |j| state.warped_radiance.get(j, c)).unwrap_or(0.0)
            });
            let r = image.get(i, c) - state.warped_radiance.get(i, c);
            bb[k][0] += b[0] * b[0];
            bb[k][1] += b[0] * b[1];
            bb[k][2] += b[1] * b[1];
            rhs[2 * k] -= b[0] * r;
            rhs[2 * k + 1] -= b[1] * r;
        }
    }
    let nbrs: Vec<Vec<usize>> = idx
        .iter()
        .map(|&i| grid.neighbors4(i).filter(|&j| region.get(j)).map(|j| pos[j]).collect())
        .collect();
    let apply = |v: &[f64], out: &mut [f64]| {
        for k in 0..n {
            let (vx, vy) = (v[2 * k], v[2 * k + 1]);
            let mut lx = 0.0;
            let mut ly = 0.0;
            for &j in &nbrs[k] {
                lx += vx - v[2 * j];
                ly += vy - v[2 * j + 1];
            }
            out[2 * k] = bb[k][0] * vx + bb[k][1] * vy + gamma * lx;
            out[2 * k + 1] = bb[k][1] * vx + bb[k][2] * vy + gamma * ly;
        }
    };
    let diag: Vec<f64> = (0..2 * n)
        .map(|m| {
            let k = m / 2;
            let d = if m % 2 == 0 { bb[k][0] } else { bb[k][2] };
            (d + gamma * nbrs[k].len() as f64).max(1e-12)
        })
        .collect();
    let sol = conjugate_gradient(apply, &rhs, &diag, opts, 20 * ((2 * n) as f64).sqrt().ceil() as usize + 1000)?;
    let mut out = VectorField::undefined(grid);
    for (k, &i) in idx.iter().enumerate() {
        out.set(i, [sol[2 * k], sol[2 * k + 1]]);
    }
    Ok(out)
}

fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    diag: &[f64],
    opts: SolverOptions,
    default_cap: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let cap = opts.max_iter.unwrap_or(default_cap);
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = 1.0;
    for _ in 0..cap {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let a = rz / pap;
        for k in 0..n {
            x[k] += a * p[k];
            r[k] -= a * ap[k];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= opts.tol {
            return Ok(x);
        }
        for k in 0..n {
            z[k] = r[k] / diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::SolverFailure {
        iterations: cap,
        residual: rel,
    })
}

/// Iterated Horn–Schunck baseline at a fixed `γ`: solve for `v`, move the
/// region along it with the same transport, repeat until `‖v‖∞` drops below
/// `cfg.translation_tol · 10` or `max_steps` is reached.
pub fn horn_schunck_descend(
    template: &Template,
    target: &TargetImage,
    gamma: f64,
    cfg: &DescentConfig,
    max_steps: usize,
) -> Result<(WarpState, DescentReport)> {
    let mut state = WarpState::initial(template)?;
    let mut report = DescentReport {
        min_jacobian: state.min_interior_jacobian(),
        energy_monotone: true,
        ..Default::default()
    };
    for iter in 1..=max_steps {
        let v = horn_schunck_step(&state, &target.image, gamma, cfg.solver)?;
        let vmax = v.max_component_on(&state.region);
        if vmax < 10.0 * cfg.translation_tol {
            report.converged = true;
            break;
        }
        let dt = (cfg.cfl_factor * 0.5 / vmax).min(1.0);
        let g = v.scaled(-1.0);
        state = advance(&state, template, &g, dt, cfg)?;
        let e = energy(&state, &target.image, f64::INFINITY, cfg.penalty);
        let mj = state.min_interior_jacobian();
        report.min_jacobian = report.min_jacobian.min(mj);
        report.trace.push(TraceRecord {
            iter,
            phase: Phase::HornSchunck,
            energy: e,
            mean_grad_norm: 0.0,
            deform_grad_inf: vmax,
            dt,
            max_displacement: vmax * dt,
            min_jacobian: mj,
        });
    }
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::signed_distance;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(w: usize, h: usize) -> Grid2D {
        Grid2D::new(w, h).unwrap()
    }

    fn disk(g: Grid2D, cx: f64, cy: f64, r: f64) -> RegionMask {
        RegionMask::from_fn(g, |x, y| {
            (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) <= r * r
        })
    }

    fn texture(x: f64, y: f64) -> f64 {
        128.0 + 50.0 * (x * 0.45).sin() * (y * 0.38).cos() + 30.0 * ((x + 2.0 * y) * 0.21).sin()
    }

    /// Template = textured disk; image = same texture shifted by `s`.
    fn shifted_pair(n: usize, r: f64, s: [f64; 2]) -> (Template, TargetImage) {
        let g = grid(n, n);
        let c = n as f64 / 2.0;
        let region = disk(g, c, c, r);
        let inside = |x: f64, y: f64, cx: f64, cy: f64| (x - cx).powi(2) + (y - cy).powi(2) <= r * r;
        let a = ScalarField::from_fn(g, |x, y| texture(x as f64 + 0.5, y as f64 + 0.5));
        let img = ScalarField::from_fn(g, |x, y| {
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            if inside(u, v, c + s[0], c + s[1]) {
                texture(u - s[0], v - s[1])
            } else {
                20.0
            }
        });
        (Template::new(region, &a).unwrap(), TargetImage::new(img, 1.0))
    }

    #[test]
    fn penalty_values() {
        assert_eq!(Penalty::Quadratic.rho(4.0), 4.0);
        assert_eq!(Penalty::Quadratic.rho_prime(4.0), 1.0);
        let r = Penalty::Robust { eps: 0.01 };
        assert!((r.rho(0.0) - 0.1).abs() < 1e-15);
        for x in [0.1, 1.0, 10.0] {
            let h = 1e-6;
            let fd = (r.rho(x + h) - r.rho(x - h)) / (2.0 * h);
            assert!((fd - r.rho_prime(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn cfl_examples() {
        let g = grid(3, 3);
        let m = RegionMask::full(g);
        let mut f = VectorField::zeros(g);
        f.set(4, [0.5, -2.0]);
        assert_eq!(cfl_timestep(&f, &m, 1.0), Some(0.25));
        assert_eq!(cfl_timestep(&f, &m, 0.5), Some(0.125));
        f.set(4, [0.5, 0.0]);
        assert_eq!(cfl_timestep(&f, &m, 1.0), Some(1.0));
        assert_eq!(cfl_timestep(&VectorField::zeros(g), &m, 1.0), None);
    }

    #[test]
    fn zero_velocity_changes_nothing() {
        let (t, _) = shifted_pair(24, 7.0, [0.0, 0.0]);
        let s = WarpState::initial(&t).unwrap();
        let z = VectorField::zeros(t.grid());
        let ls = upwind_advect_levelset(&s.levelset, &z, 0.3);
        assert_eq!(ls, s.levelset);
        let bw = transport_backward_map(&s.backward, &z, 0.3, &s.region, &s.region, &s.levelset, FillRule::Average)
            .unwrap();
        for i in s.region.indices() {
            assert_eq!(bw.coords.get(i), s.backward.coords.get(i));
        }
    }

    #[test]
    fn planar_front_shifts_by_dt() {
        let g = grid(20, 6);
        let c = 9.0;
        let psi: Vec<f64> = (0..g.len()).map(|i| g.center(i)[0] - c).collect();
        let ls = LevelSet::from_values(g, psi, 6.0).unwrap();
        let v = VectorField::new(g, [1.0, 0.0]);
        let out = upwind_advect_levelset(&ls, &v, 0.25);
        for i in 0..g.len() {
            let (x, _) = g.coords(i);
            if x + 1 < 20 {
                assert!((out.value(i) - (g.center(i)[0] - c + 0.25)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_map_transported_by_constant_velocity() {
        let g = grid(24, 24);
        let m = disk(g, 12.0, 12.0, 8.0);
        let ls = signed_distance(&m, 6.0).unwrap();
        let bw = BackwardWarp::identity(&m);
        let v = VectorField::new(g, [0.8, 0.0]);
        let dt = 0.3;
        let out = transport_backward_map(&bw, &v, dt, &m, &m, &ls, FillRule::Average).unwrap();
        for i in m.interior().indices() {
            let c = g.center(i);
            let p = out.coords.get(i);
            assert!((p[0] - (c[0] + dt * 0.8)).abs() < 1e-12 && (p[1] - c[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn disk_translation_follows_integrated_velocity() {
        let (t, _) = shifted_pair(40, 8.0, [0.0, 0.0]);
        let cfg = DescentConfig::default();
        let mut s = WarpState::initial(&t).unwrap();
        let c0 = s.region.centroid().unwrap();
        let g = VectorField::new(t.grid(), [-1.0, 0.5]).restricted(&s.region);
        let mut travelled = [0.0, 0.0];
        for _ in 0..8 {
            let g = VectorField::new(t.grid(), [-1.0, 0.5]).restricted(&s.region);
            let dt = cfl_timestep(&g, &s.region, 0.5).unwrap();
            s = advance(&s, &t, &g, dt, &cfg).unwrap();
            travelled[0] += dt;
            travelled[1] -= 0.5 * dt;
        }
        let _ = g;
        let c1 = s.region.centroid().unwrap();
        assert!((c1[0] - c0[0] - travelled[0]).abs() <= 0.5);
        assert!((c1[1] - c0[1] - travelled[1]).abs() <= 0.5);
        assert_eq!(s.region, s.levelset.region());
    }

    #[test]
    fn energy_of_perfect_match_and_full_occlusion() {
        let (t, _) = shifted_pair(24, 7.0, [0.0, 0.0]);
        let mut s = WarpState::initial(&t).unwrap();
        let img = t.radiance.clone();
        assert_eq!(energy(&s, &img, 5.0, Penalty::Quadratic), 0.0);
        s.warped_occlusion = s.region.clone();
        let e = energy(&s, &img, 5.0, Penalty::Quadratic);
        assert!((e - 5.0 * s.region.count() as f64).abs() < 1e-9);
    }

    #[test]
    fn f1_vanishes_on_match_and_occlusion() {
        let (t, target) = shifted_pair(24, 7.0, [2.0, 0.0]);
        let mut s = WarpState::initial(&t).unwrap();
        let perfect = TargetImage::new(ScalarField::from_fn(t.grid(), |x, y| texture(x as f64 + 0.5, y as f64 + 0.5)), 1.0);
        let f = f1_field(&s, &perfect, Penalty::Quadratic);
        for i in s.region.indices() {
            assert_eq!(f.get(i), [0.0, 0.0]);
        }
        let k = s.region.indices().next().unwrap();
        s.warped_occlusion.set(k, true);
        let f = f1_field(&s, &target, Penalty::Quadratic);
        assert_eq!(f.get(k), [0.0, 0.0]);
    }

    #[test]
    fn aligned_template_converges_at_once() {
        let (t, _) = shifted_pair(32, 9.0, [0.0, 0.0]);
        let img = ScalarField::from_fn(t.grid(), |x, y| {
            if t.region.contains(x, y) {
                texture(x as f64 + 0.5, y as f64 + 0.5)
            } else {
                20.0
            }
        });
        let target = TargetImage::new(img, 1.0);
        let cfg = DescentConfig::default();
        let (s, rep) = descend(&t, &target, f64::INFINITY, &cfg, &mut no_occlusion).unwrap();
        assert!(rep.outer_iterations <= 2);
        assert!(rep.converged);
        assert_eq!(s.region, t.region);
    }

    #[test]
    fn pure_shift_is_recovered() {
        let (t, target) = shifted_pair(48, 11.0, [3.0, 2.0]);
        let cfg = DescentConfig::default();
        let (s, rep) = descend(&t, &target, f64::INFINITY, &cfg, &mut no_occlusion).unwrap();
        assert!(rep.energy_monotone);
        assert!(rep.min_jacobian > 0.0);
        let first = rep.first_translation.as_ref().unwrap();
        let inner = first.region.eroded(2);
        let disp = first.backward.displacement(&inner);
        let good = inner
            .indices()
            .filter(|&i| (disp.get(i)[0] - 3.0).abs() <= 0.5 && (disp.get(i)[1] - 2.0).abs() <= 0.5)
            .count();
        assert!(good as f64 >= 0.95 * inner.count() as f64, "{good}/{}", inner.count());
        assert_eq!(s.region, s.levelset.region());
    }

    #[test]
    fn alpha_rescaling_is_a_time_reparameterisation() {
        let (t, target) = shifted_pair(32, 9.0, [1.0, 0.5]);
        let cfg = DescentConfig::default();
        let s = WarpState::initial(&t).unwrap();
        let gr = sobolev_gradient(&s, &target, &cfg, None).unwrap();
        let dt = cfl_timestep(&gr.deform, &s.region, cfg.cfl_factor).unwrap();
        let base = advance(&s, &t, &gr.deform, dt, &cfg).unwrap();
        for c in [0.1, 10.0] {
            let g = gr.deform.scaled(c);
            let dtc = cfl_timestep(&g, &s.region, cfg.cfl_factor).unwrap();
            assert!((dtc * c - dt).abs() <= 1e-12 * dt);
            let other = advance(&s, &t, &g, dtc, &cfg).unwrap();
            assert_eq!(other.region, base.region);
            for i in 0..t.grid().len() {
                assert!((other.levelset.value(i) - base.levelset.value(i)).abs() <= 1e-10);
            }
            for i in base.region.indices() {
                let (p, q) = (other.backward.coords.get(i), base.backward.coords.get(i));
                assert!((p[0] - q[0]).abs() <= 1e-10 && (p[1] - q[1]).abs() <= 1e-10);
            }
        }
    }

    /// Dense normal equations of the Horn–Schunck energy.
    fn dense_hs(state: &WarpState, image: &ScalarField, gamma: f64) -> Vec<f64> {
        let g = state.grid();
        let m = &state.region;
        let idx: Vec<usize> = m.indices().collect();
        let n = idx.len();
        let mut pos = vec![usize::MAX; g.len()];
        for (k, &i) in idx.iter().enumerate() {
            pos[i] = k;
        }
        let mut a = DMatrix::<f64>::zeros(2 * n, 2 * n);
        let mut rhs = DVector::<f64>::zeros(2 * n);
        for (k, &i) in idx.iter().enumerate() {
            let b = [0usize, 1].map(|ax| masked_diff(g, m, i, ax, |j| state.warped_radiance.get(j, 0)).unwrap_or(0.0));
            let r = image.get(i, 0) - state.warped_radiance.get(i, 0);
            for p in 0..2 {
                for q in 0..2 {
                    a[(2 * k + p, 2 * k + q)] += b[p] * b[q];
                }
                rhs[2 * k + p] -= b[p] * r;
            }
            // each undirected edge once
            for j in [g.offset(i, 1, 0), g.offset(i, 0, 1)].into_iter().flatten() {
                if !m.get(j) {
                    continue;
                }
                let l = pos[j];
                for p in 0..2 {
                    a[(2 * k + p, 2 * k + p)] += gamma;
                    a[(2 * l + p, 2 * l + p)] += gamma;
                    a[(2 * k + p, 2 * l + p)] -= gamma;
                    a[(2 * l + p, 2 * k + p)] -= gamma;
                }
            }
        }
        a.lu().solve(&rhs).unwrap().iter().copied().collect()
    }

    #[test]
    fn horn_schunck_matches_dense_solve() {
        let g = grid(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let region = disk(g, 8.0, 8.0, 6.5);
        let a = ScalarField::from_fn(g, |_, _| rng.random_range(0.0..255.0));
        let t = Template::new(region, &a).unwrap();
        let s = WarpState::initial(&t).unwrap();
        let img = ScalarField::from_fn(g, |_, _| rng.random_range(0.0..255.0));
        let opts = SolverOptions { tol: 1e-12, max_iter: None };
        let v = horn_schunck_step(&s, &img, 50.0, opts).unwrap();
        let d = dense_hs(&s, &img, 50.0);
        for (k, i) in s.region.indices().enumerate() {
            assert!((v.get(i)[0] - d[2 * k]).abs() < 1e-6);
            assert!((v.get(i)[1] - d[2 * k + 1]).abs() < 1e-6);
        }
    }

    #[test]
    fn horn_schunck_limits() {
        let (t, target) = shifted_pair(24, 7.0, [1.0, 0.0]);
        let s = WarpState::initial(&t).unwrap();
        let same = horn_schunck_step(&s, &t.radiance, 10.0, SolverOptions::default()).unwrap();
        for i in s.region.indices() {
            assert_eq!(same.get(i), [0.0, 0.0]);
        }
        let stiff = horn_schunck_step(&s, &target.image, 1e8, SolverOptions { tol: 1e-12, max_iter: None }).unwrap();
        let mean = stiff.mean_on(&s.region);
        let spread = s
            .region
            .indices()
            .map(|i| (stiff.get(i)[0] - mean[0]).abs().max((stiff.get(i)[1] - mean[1]).abs()))
            .fold(0.0, f64::max);
        assert!(spread <= 1e-3 * mean[0].abs().max(mean[1].abs()).max(1e-12));
    }
}
