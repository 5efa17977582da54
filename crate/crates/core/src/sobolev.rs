//! The Sobolev-type metric on region perturbations and the gradient it
//! induces.
//!
//! A perturbation `h` of the current region is paired with another through
//!
//! ```text
//! ⟨h₁, h₂⟩ = Σ_k (|R_k| / |R|) h̄₁ₖ · h̄₂ₖ + α Σ_R tr(∇h₁ᵀ ∇h₂)
//! ```
//!
//! where `R_k` are the 4-connected components of the region and `h̄ₖ` the
//! average over `R_k`. On a connected region the first term is the product
//! of region averages. Weighting each component's mean keeps the metric
//! non-degenerate when the region splits, so that the pieces can translate
//! independently.
//!
//! The gradient of an energy whose first variation is `Σ_R q · h` splits
//! into a translation, constant `(|R| / |R_k|) Σ_{R_k} q` on each component,
//! and a deformation `G̃`, mean-zero on each component, with
//! `−ΔG̃ = q − q̄ₖ` under zero-Neumann boundary conditions;
//! `G = ⟨G⟩ + G̃ / α`.

use crate::error::{Error, Result};
use crate::field::{RegionMask, ScalarField, VectorField};

/// Stopping rule for the conjugate-gradient Poisson solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual `‖b − Ax‖ / ‖b‖` to reach.
    pub tol: f64,
    /// Iteration cap; `None` means `10·√n + 500` for an `n`-pixel component.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
        }
    }
}

/// Gradient split into translation and deformation.
#[derive(Debug, Clone, PartialEq)]
pub struct SobolevGradient {
    /// `Σ_R q`: the area-weighted average of the component translations,
    /// and the translation itself on a connected region.
    pub mean: [f64; 2],
    /// Translation per component, in pixels per unit descent time.
    pub translations: Vec<[f64; 2]>,
    /// Component label per pixel, `usize::MAX` off the region.
    labels: Vec<usize>,
    /// `G̃`, defined on the region and mean-zero on each of its components.
    pub deform: VectorField,
}

impl SobolevGradient {
    /// `⟨G⟩ + G̃ / α` on `mask`.
    pub fn combined(&self, alpha: f64, mask: &RegionMask) -> VectorField {
        let mut out = VectorField::undefined(self.deform.grid());
        for i in mask.indices() {
            let d = self.deform.get(i);
            let t = self.translation_at(i);
            out.set(i, [t[0] + d[0] / alpha, t[1] + d[1] / alpha]);
        }
        out
    }

    fn translation_at(&self, i: usize) -> [f64; 2] {
        self.translations.get(self.labels[i]).copied().unwrap_or([0.0, 0.0])
    }

    /// The piecewise-constant field `⟨G⟩` on `mask`.
    pub fn translation(&self, mask: &RegionMask) -> VectorField {
        let mut out = VectorField::undefined(self.deform.grid());
        for i in mask.indices() {
            out.set(i, self.translation_at(i));
        }
        out
    }

    /// Largest translation speed over the components.
    pub fn translation_norm(&self) -> f64 {
        self.translations.iter().map(|t| t[0].hypot(t[1])).fold(0.0, f64::max)
    }

    /// Largest translation component over the components.
    pub fn translation_max_component(&self) -> f64 {
        self.translations.iter().map(|t| t[0].abs().max(t[1].abs())).fold(0.0, f64::max)
    }
}

/// Pixels of one 4-connected component and their in-component neighbours.
struct Component {
    pixels: Vec<usize>,
    // local neighbour lists, at most 4 each
    nbrs: Vec<Vec<usize>>,
}

fn components_of(mask: &RegionMask) -> Vec<Component> {
    let grid = mask.grid();
    let (label, n) = mask.components();
    let mut comps: Vec<Component> = (0..n)
        .map(|_| Component {
            pixels: Vec::new(),
            nbrs: Vec::new(),
        })
        .collect();
    let mut local = vec![usize::MAX; grid.len()];
    for i in mask.indices() {
        let c = &mut comps[label[i]];
        local[i] = c.pixels.len();
        c.pixels.push(i);
    }
    for c in comps.iter_mut() {
        c.nbrs = c
            .pixels
            .iter()
            .map(|&i| grid.neighbors4(i).filter(|&j| mask.get(j)).map(|j| local[j]).collect())
            .collect();
    }
    comps
}

fn apply_laplacian(c: &Component, u: &[f64], out: &mut [f64]) {
    for (k, nb) in c.nbrs.iter().enumerate() {
        let mut s = 0.0;
        for &j in nb {
            s += u[k] - u[j];
        }
        out[k] = s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn subtract_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Jacobi-preconditioned CG for `A u = b` on one component, `b` mean-zero.
fn pcg(c: &Component, b: &[f64], x0: Option<Vec<f64>>, opts: SolverOptions) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 || n < 2 {
        return Ok(vec![0.0; n]);
    }
    let max_iter = opts
        .max_iter
        .unwrap_or(10 * (n as f64).sqrt().ceil() as usize + 500);
    let diag: Vec<f64> = c.nbrs.iter().map(|nb| nb.len().max(1) as f64).collect();
    let mut x = x0.unwrap_or_else(|| vec![0.0; n]);
    subtract_mean(&mut x);
    let mut ax = vec![0.0; n];
    apply_laplacian(c, &x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    let mut it = 0;
    while rel > opts.tol {
        if it == max_iter {
            return Err(Error::SolverFailure {
                iterations: it,
                residual: rel,
            });
        }
        apply_laplacian(c, &p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let a = rz / pap;
        for k in 0..n {
            x[k] += a * p[k];
            r[k] -= a * ap[k];
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
        rel = dot(&r, &r).sqrt() / bnorm;
        it += 1;
    }
    if rel > opts.tol {
        return Err(Error::SolverFailure {
            iterations: it,
            residual: rel,
        });
    }
    subtract_mean(&mut x);
    Ok(x)
}

/// Solves `−Δ_h G̃ = F` on `mask` with zero-Neumann boundary conditions, each
/// vector component separately.
///
/// The discrete Laplacian at `x` is `Σ_{y∼x, y∈R} (G̃(y) − G̃(x))`: an
/// out-of-region neighbour is reflected onto `x` and drops out. On each
/// 4-connected component of the mask the source is first made mean-zero
/// and the solution is returned mean-zero. `warm`, if given, seeds the
/// iteration.
pub fn solve_neumann_poisson(
    src: &VectorField,
    mask: &RegionMask,
    opts: SolverOptions,
    warm: Option<&VectorField>,
) -> Result<VectorField> {
    let grid = mask.grid();
    grid.ensure_same(&src.grid())?;
    let mut out = VectorField::undefined(grid);
    for c in components_of(mask) {
        let mut sol = [Vec::new(), Vec::new()];
        for (comp, s) in sol.iter_mut().enumerate() {
            let mut b: Vec<f64> = c.pixels.iter().map(|&i| src.get(i)[comp]).collect();
            subtract_mean(&mut b);
            let x0 = warm.map(|w| {
                c.pixels
                    .iter()
                    .map(|&i| {
                        let v = w.get(i)[comp];
                        if v.is_finite() {
                            v
                        } else {
                            0.0
                        }
                    })
                    .collect()
            });
            *s = pcg(&c, &b, x0, opts)?;
        }
        for (k, &i) in c.pixels.iter().enumerate() {
            out.set(i, [sol[0][k], sol[1][k]]);
        }
    }
    Ok(out)
}

/// Sobolev gradient of an energy with first variation `Σ_R f1 · h · J`.
///
/// With `q = f1 · J` on `mask`, the translation on component `R_k` is
/// `(|R| / |R_k|) Σ_{R_k} q` and `G̃` solves the Neumann problem with source
/// `q − q̄ₖ`.
pub fn assemble_gradient(
    f1: &VectorField,
    jac_det: &ScalarField,
    mask: &RegionMask,
    opts: SolverOptions,
    warm: Option<&VectorField>,
) -> Result<SobolevGradient> {
    let grid = mask.grid();
    let mut q = VectorField::undefined(grid);
    let mut mean = [0.0, 0.0];
    for i in mask.indices() {
        let j = jac_det.get(i, 0);
        let f = f1.get(i);
        let v = [f[0] * j, f[1] * j];
        mean[0] += v[0];
        mean[1] += v[1];
        q.set(i, v);
    }
    let deform = solve_neumann_poisson(&q, mask, opts, warm)?;
    let (labels, n) = mask.components();
    let mut sums = vec![([0.0, 0.0], 0usize); n];
    for i in mask.indices() {
        let v = q.get(i);
        let s = &mut sums[labels[i]];
        s.0[0] += v[0];
        s.0[1] += v[1];
        s.1 += 1;
    }
    let total = mask.count() as f64;
    let translations = sums
        .iter()
        .map(|(s, k)| {
            let w = total / *k as f64;
            [w * s[0], w * s[1]]
        })
        .collect();
    Ok(SobolevGradient {
        mean,
        translations,
        labels,
        deform,
    })
}

/// The metric `Σ_k (|R_k|/|R|) h̄₁ₖ·h̄₂ₖ + α Σ tr(∇h₁ᵀ∇h₂)` on `mask`.
///
/// The Jacobian term is summed over the region's 4-neighbour edges with
/// one-sided differences, `Σ_{x∼y} (h₁(y) − h₁(x)) · (h₂(y) − h₂(x))`. This
/// is the quadratic form of the Neumann stencil used by
/// [`solve_neumann_poisson`], so the gradient it returns is the exact dual of
/// the pairing `Σ q · h`.
pub fn inner_product(h1: &VectorField, h2: &VectorField, mask: &RegionMask, alpha: f64) -> f64 {
    let grid = mask.grid();
    let (labels, n) = mask.components();
    let mut sums = vec![([0.0; 2], [0.0; 2], 0usize); n];
    for i in mask.indices() {
        let e = &mut sums[labels[i]];
        let (a, b) = (h1.get(i), h2.get(i));
        e.0[0] += a[0];
        e.0[1] += a[1];
        e.1[0] += b[0];
        e.1[1] += b[1];
        e.2 += 1;
    }
    let total = mask.count() as f64;
    let means: f64 = sums
        .iter()
        .map(|(a, b, k)| {
            let k = *k as f64;
            (a[0] * b[0] + a[1] * b[1]) / (k * total)
        })
        .sum();
    let mut s = 0.0;
    for i in mask.indices() {
        for j in [grid.offset(i, 1, 0), grid.offset(i, 0, 1)].into_iter().flatten() {
            if !mask.get(j) {
                continue;
            }
            let (a1, b1) = (h1.get(i), h1.get(j));
            let (a2, b2) = (h2.get(i), h2.get(j));
            s += (b1[0] - a1[0]) * (b2[0] - a2[0]) + (b1[1] - a1[1]) * (b2[1] - a2[1]);
        }
    }
    means + alpha * s
}
