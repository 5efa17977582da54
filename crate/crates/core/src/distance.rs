//! Signed distance, closest points and narrowbands by fast marching.
//!
//! Fronts are propagated with the first-order upwind eikonal update on the
//! 4-neighbourhood and a binary-heap front. Alongside the arrival time each
//! accepted pixel carries the region pixel it is closest to; the candidate is
//! chosen among the closest points already attached to its accepted
//! 8-neighbours, keeping the one at the smallest Euclidean distance. The
//! nearest sub-pixel crossing point is carried the same way, and the
//! arrival time is capped by the straight distance to it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::field::{Grid2D, RegionMask, VectorField};

/// Half-width of the narrowband `{|ψ| ≤ 2}`.
pub const NARROWBAND_RADIUS: f64 = 2.0;

const NONE: usize = usize::MAX;

/// Signed distance representation of a region: `ψ < 0` inside.
///
/// Values are exact to first order within `extent` of the zero level set;
/// further away they are clamped to `±(extent + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    grid: Grid2D,
    psi: Vec<f64>,
    extent: f64,
}

impl LevelSet {
    pub fn from_values(grid: Grid2D, psi: Vec<f64>, extent: f64) -> Result<Self> {
        if psi.len() != grid.len() {
            return Err(Error::InvalidParameter("level set size mismatch".into()));
        }
        Ok(Self { grid, psi, extent })
    }

    #[inline]
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        self.psi[i]
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// `{ψ < 0}`.
    pub fn region(&self) -> RegionMask {
        let bits = self.psi.iter().map(|&v| v < 0.0).collect();
        RegionMask::from_bits(self.grid, bits).expect("sizes agree")
    }

    /// Pixels with `|ψ| ≤ 2`.
    pub fn narrowband(&self) -> RegionMask {
        let bits = self.psi.iter().map(|&v| v.abs() <= NARROWBAND_RADIUS).collect();
        RegionMask::from_bits(self.grid, bits).expect("sizes agree")
    }

    /// Range of `|∇ψ|` (central differences) over narrowband pixels whose
    /// four neighbours are all inside the narrowband. Pixels where `ψ` has a
    /// kink along an axis (both one-sided differences of opposite sign, as on
    /// a skeleton or at a one-pixel notch) are skipped: there the distance is
    /// not differentiable and central differences say nothing.
    pub fn gradient_norm_range(&self) -> Option<(f64, f64)> {
        let band = self.narrowband();
        let g = self.grid;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        'pixels: for i in band.indices() {
            let mut grad = [0.0; 2];
            for (axis, (dx, dy)) in [(0usize, (1isize, 0isize)), (1, (0, 1))] {
                let (Some(f), Some(b)) = (g.offset(i, dx, dy), g.offset(i, -dx, -dy)) else {
                    continue 'pixels;
                };
                if !band.get(f) || !band.get(b) {
                    continue 'pixels;
                }
                let df = self.psi[f] - self.psi[i];
                let db = self.psi[i] - self.psi[b];
                if df * db < 0.0 {
                    continue 'pixels;
                }
                grad[axis] = (df + db) / 2.0;
            }
            let m = grad[0].hypot(grad[1]);
            lo = lo.min(m);
            hi = hi.max(m);
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// Rebuilds `ψ` as a signed distance while keeping the sign of every
    /// pixel and the sub-pixel position of the zero crossing.
    pub fn reinitialize(&self) -> Result<LevelSet> {
        let region = self.region();
        check_nondegenerate(&region)?;
        let (inside_seeds, outside_seeds) = crossing_seeds(self.grid, &self.psi);
        let extent = self.extent;
        let outside = march(self.grid, &outside_seeds, |i| !region.get(i), extent);
        let inside = march(self.grid, &inside_seeds, |i| region.get(i), extent);
        Ok(LevelSet {
            grid: self.grid,
            psi: combine(&region, &inside.dist, &outside.dist, extent),
            extent,
        })
    }
}

/// Outward distance and closest region pixel for pixels near a region.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosestPointMap {
    grid: Grid2D,
    eps: f64,
    distance: Vec<f64>,
    closest: Vec<usize>,
}

impl ClosestPointMap {
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `d_R(x)`: zero on the region, the first-order distance in the band,
    /// `+∞` beyond `eps`.
    #[inline]
    pub fn distance(&self, i: usize) -> f64 {
        self.distance[i]
    }

    /// Closest region pixel of `i`, for region pixels (themselves) and band
    /// pixels.
    #[inline]
    pub fn closest(&self, i: usize) -> Option<usize> {
        (self.closest[i] != NONE).then_some(self.closest[i])
    }

    /// Band `{0 < d ≤ eps}`.
    pub fn band(&self) -> RegionMask {
        let bits = self
            .distance
            .iter()
            .map(|&d| d > 0.0 && d <= self.eps)
            .collect();
        RegionMask::from_bits(self.grid, bits).expect("sizes agree")
    }

    /// Pixels farther than `eps` from the region.
    pub fn beyond(&self) -> RegionMask {
        let bits = self.distance.iter().map(|&d| d > self.eps).collect();
        RegionMask::from_bits(self.grid, bits).expect("sizes agree")
    }
}

#[derive(Debug, Clone, Copy)]
struct Seed {
    idx: usize,
    dist: f64,
    closest: usize,
    /// Nearest zero-crossing point.
    foot: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    idx: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties broken by index for determinism
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct MarchResult {
    dist: Vec<f64>,
    closest: Vec<usize>,
}

/// Fast marching from `seeds` over pixels satisfying `domain`, stopping once
/// the front passes `cutoff`.
fn march(grid: Grid2D, seeds: &[Seed], domain: impl Fn(usize) -> bool, cutoff: f64) -> MarchResult {
    let n = grid.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut closest = vec![NONE; n];
    let mut foot = vec![[f64::NAN; 2]; n];
    let mut accepted = vec![false; n];
    let mut heap = BinaryHeap::new();
    for s in seeds {
        if s.dist < dist[s.idx] {
            dist[s.idx] = s.dist;
            closest[s.idx] = s.closest;
            foot[s.idx] = s.foot;
            heap.push(HeapItem { dist: s.dist, idx: s.idx });
        }
    }
    while let Some(HeapItem { dist: d, idx }) = heap.pop() {
        if accepted[idx] || d > dist[idx] {
            continue;
        }
        if d > cutoff {
            break;
        }
        accepted[idx] = true;
        if closest[idx] == NONE {
            closest[idx] = best_closest(grid, idx, &accepted, &closest);
        }
        if foot[idx][0].is_nan() {
            foot[idx] = best_foot(grid, idx, &accepted, &foot);
        }
        // the straight-line distance to a crossing bounds the first-order
        // arrival time, which drifts upward far from the front
        let c = grid.center(idx);
        let f = foot[idx];
        if !f[0].is_nan() {
            dist[idx] = dist[idx].min((f[0] - c[0]).hypot(f[1] - c[1]));
        }
        for j in grid.neighbors4(idx) {
            if accepted[j] || !domain(j) {
                continue;
            }
            let t = eikonal_update(grid, j, &dist, &accepted);
            if t < dist[j] {
                dist[j] = t;
                closest[j] = NONE;
                foot[j] = [f64::NAN; 2];
                heap.push(HeapItem { dist: t, idx: j });
            }
        }
    }
    for i in 0..n {
        if !accepted[i] {
            dist[i] = f64::INFINITY;
            closest[i] = NONE;
        }
    }
    MarchResult { dist, closest }
}

fn eikonal_update(grid: Grid2D, i: usize, dist: &[f64], accepted: &[bool]) -> f64 {
    let along = |dx: isize, dy: isize| {
        [grid.offset(i, dx, dy), grid.offset(i, -dx, -dy)]
            .into_iter()
            .flatten()
            .filter(|&j| accepted[j])
            .map(|j| dist[j])
            .fold(f64::INFINITY, f64::min)
    };
    let a = along(1, 0);
    let b = along(0, 1);
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if !hi.is_finite() || hi - lo >= 1.0 {
        lo + 1.0
    } else {
        0.5 * (lo + hi + (2.0 - (hi - lo) * (hi - lo)).sqrt())
    }
}

fn best_closest(grid: Grid2D, i: usize, accepted: &[bool], closest: &[usize]) -> usize {
    let c = grid.center(i);
    let mut best = (f64::INFINITY, NONE);
    for j in grid.neighbors8(i) {
        if !accepted[j] || closest[j] == NONE {
            continue;
        }
        let cand = closest[j];
        let p = grid.center(cand);
        let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
        if d < best.0 || (d == best.0 && cand < best.1) {
            best = (d, cand);
        }
    }
    best.1
}

fn best_foot(grid: Grid2D, i: usize, accepted: &[bool], foot: &[[f64; 2]]) -> [f64; 2] {
    let c = grid.center(i);
    let mut best = (f64::INFINITY, [f64::NAN; 2]);
    for j in grid.neighbors8(i) {
        let f = foot[j];
        if !accepted[j] || f[0].is_nan() {
            continue;
        }
        let d = (f[0] - c[0]).powi(2) + (f[1] - c[1]).powi(2);
        if d < best.0 {
            best = (d, f);
        }
    }
    best.1
}

fn check_nondegenerate(mask: &RegionMask) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::DegenerateRegion("empty region"));
    }
    if mask.is_full() {
        return Err(Error::DegenerateRegion("region covers the whole grid"));
    }
    Ok(())
}

/// Seeds on both sides of the zero crossing of `psi`. Along each axis the
/// crossing is located by linear interpolation; a pixel with crossings on
/// both axes starts at the distance to the line through them. Outside seeds
/// remember the inside pixel across their nearest crossing.
fn crossing_seeds(grid: Grid2D, psi: &[f64]) -> (Vec<Seed>, Vec<Seed>) {
    let mut inside_seeds = Vec::new();
    let mut outside_seeds = Vec::new();
    for i in 0..grid.len() {
        let inside = psi[i] < 0.0;
        let mut axis_d = [f64::INFINITY; 2];
        let mut across = (f64::INFINITY, NONE);
        let mut foot = [f64::NAN; 2];
        for (axis, (dx, dy)) in [(0usize, (1isize, 0isize)), (1, (0, 1))] {
            for s in [-1isize, 1] {
                let Some(j) = grid.offset(i, s * dx, s * dy) else {
                    continue;
                };
                if (psi[j] < 0.0) == inside {
                    continue;
                }
                let a = psi[i].abs();
                let b = psi[j].abs();
                let t = if a + b > 0.0 { a / (a + b) } else { 0.5 };
                axis_d[axis] = axis_d[axis].min(t);
                if t < across.0 || (t == across.0 && j < across.1) {
                    across = (t, j);
                    let (ci, cj) = (grid.center(i), grid.center(j));
                    foot = [ci[0] + t * (cj[0] - ci[0]), ci[1] + t * (cj[1] - ci[1])];
                }
            }
        }
        let d = match (axis_d[0].is_finite(), axis_d[1].is_finite()) {
            (false, false) => continue,
            (true, false) => axis_d[0],
            (false, true) => axis_d[1],
            (true, true) => {
                let (a, b) = (axis_d[0], axis_d[1]);
                a * b / (a * a + b * b).sqrt()
            }
        };
        let d = d.max(1e-9);
        if inside {
            inside_seeds.push(Seed { idx: i, dist: d, closest: i, foot });
        } else {
            outside_seeds.push(Seed { idx: i, dist: d, closest: across.1, foot });
        }
    }
    (inside_seeds, outside_seeds)
}

fn mask_psi(mask: &RegionMask) -> Vec<f64> {
    mask.bits().iter().map(|&b| if b { -0.5 } else { 0.5 }).collect()
}

fn combine(region: &RegionMask, inside: &[f64], outside: &[f64], extent: f64) -> Vec<f64> {
    let far = extent + 1.0;
    (0..inside.len())
        .map(|i| {
            if region.get(i) {
                -inside[i].min(far)
            } else {
                outside[i].min(far)
            }
        })
        .collect()
}

/// Signed distance to `mask` (negative inside), accurate within
/// `band_radius` of the boundary.
pub fn signed_distance(mask: &RegionMask, band_radius: f64) -> Result<LevelSet> {
    check_nondegenerate(mask)?;
    let grid = mask.grid();
    let (in_seeds, out_seeds) = crossing_seeds(grid, &mask_psi(mask));
    let outside = march(grid, &out_seeds, |i| !mask.get(i), band_radius);
    let inside = march(grid, &in_seeds, |i| mask.get(i), band_radius);
    Ok(LevelSet {
        grid,
        psi: combine(mask, &inside.dist, &outside.dist, band_radius),
        extent: band_radius,
    })
}

/// Distance to `mask` and the closest mask pixel for every pixel within
/// `eps` outside it. The distances are those of [`signed_distance`] on the
/// outside.
pub fn closest_point_map(mask: &RegionMask, eps: f64) -> Result<ClosestPointMap> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("band thickness must be positive, got {eps}")));
    }
    if mask.is_empty() {
        return Err(Error::DegenerateRegion("empty region"));
    }
    let grid = mask.grid();
    let (_, out_seeds) = crossing_seeds(grid, &mask_psi(mask));
    let outside = march(grid, &out_seeds, |i| !mask.get(i), eps);
    let mut distance = outside.dist;
    let mut closest = outside.closest;
    for i in mask.indices() {
        distance[i] = 0.0;
        closest[i] = i;
    }
    Ok(ClosestPointMap {
        grid,
        eps,
        distance,
        closest,
    })
}

/// Extends a field defined on the level set's region to the narrowband
/// around it: each outside band pixel copies the value at its closest region
/// pixel.
pub fn extend_to_narrowband(g: &VectorField, ls: &LevelSet) -> Result<VectorField> {
    let region = ls.region();
    let cpm = closest_point_map(&region, NARROWBAND_RADIUS + 1.0)?;
    let mut out = g.restricted(&region);
    for i in cpm.band().indices() {
        if let Some(c) = cpm.closest(i) {
            out.set(i, g.get(c));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize) -> Grid2D {
        Grid2D::new(w, h).unwrap()
    }

    fn disk(g: Grid2D, cx: f64, cy: f64, r: f64) -> RegionMask {
        RegionMask::from_fn(g, |x, y| {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            dx * dx + dy * dy <= r * r
        })
    }

    /// Brute-force signed distance: centre-to-centre distance to the nearest
    /// pixel on the other side, minus half a pixel.
    fn brute_signed(mask: &RegionMask) -> Vec<f64> {
        let g = mask.grid();
        (0..g.len())
            .map(|i| {
                let c = g.center(i);
                let m = mask.get(i);
                let d = (0..g.len())
                    .filter(|&j| mask.get(j) != m)
                    .map(|j| {
                        let p = g.center(j);
                        ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
                    - 0.5;
                if m {
                    -d
                } else {
                    d
                }
            })
            .collect()
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        let g = grid(6, 6);
        assert!(matches!(
            signed_distance(&RegionMask::empty(g), 3.0),
            Err(Error::DegenerateRegion(_))
        ));
        assert!(matches!(
            signed_distance(&RegionMask::full(g), 3.0),
            Err(Error::DegenerateRegion(_))
        ));
    }

    #[test]
    fn half_plane_is_exact() {
        let g = grid(20, 10);
        let c = 7usize;
        let m = RegionMask::from_fn(g, |x, _| x < c);
        let ls = signed_distance(&m, 30.0).unwrap();
        for i in 0..g.len() {
            let (x, _) = g.coords(i);
            assert!((ls.value(i) - (x as f64 - c as f64 + 0.5)).abs() < 1e-12, "x={x}");
        }
        assert_eq!(ls.region(), m);
    }

    #[test]
    fn single_pixel_distance_is_radial() {
        let g = grid(21, 21);
        let m = RegionMask::from_fn(g, |x, y| x == 10 && y == 10);
        let ls = signed_distance(&m, 30.0).unwrap();
        for i in 0..g.len() {
            let c = g.center(i);
            let r = ((c[0] - 10.5).powi(2) + (c[1] - 10.5).powi(2)).sqrt();
            if r > 0.0 {
                assert!((ls.value(i) - r).abs() <= 1.5, "r={r} psi={}", ls.value(i));
            }
        }
    }

    #[test]
    fn blob_matches_brute_force_and_sign() {
        let g = grid(40, 40);
        let m = disk(g, 15.0, 18.0, 9.0).union(&disk(g, 24.0, 22.0, 7.0));
        let ls = signed_distance(&m, 30.0).unwrap();
        let bf = brute_signed(&m);
        for i in 0..g.len() {
            assert!((ls.value(i) - bf[i]).abs() <= 1.5);
        }
        assert_eq!(ls.region(), m);
    }

    fn random_blob(g: Grid2D, seed: u64) -> RegionMask {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = RegionMask::empty(g);
        for _ in 0..5 {
            let cx = rng.random_range(20.0..44.0);
            let cy = rng.random_range(20.0..44.0);
            let r = rng.random_range(4.0..11.0);
            m = m.union(&disk(g, cx, cy, r));
        }
        m
    }

    #[test]
    fn random_blobs_match_brute_force() {
        let g = grid(64, 64);
        for seed in 0..3 {
            let m = random_blob(g, seed);
            let ls = signed_distance(&m, 12.0).unwrap();
            let bf = brute_signed(&m);
            for i in 0..g.len() {
                if bf[i].abs() <= 12.0 {
                    assert!((ls.value(i) - bf[i]).abs() <= 1.5, "seed {seed} pixel {i}");
                }
            }
            assert_eq!(ls.region(), m);
        }
    }

    #[test]
    fn random_blob_closest_points_match_argmin() {
        let g = grid(64, 64);
        let m = random_blob(g, 7);
        let cpm = closest_point_map(&m, 12.0).unwrap();
        let band: Vec<usize> = cpm.band().indices().collect();
        let mut hits = 0;
        for &i in &band {
            let c = g.center(i);
            let d2 = |j: usize| {
                let p = g.center(j);
                (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)
            };
            let best = m.indices().map(d2).fold(f64::INFINITY, f64::min);
            let cl = cpm.closest(i).unwrap();
            assert!(m.get(cl));
            if (d2(cl) - best).abs() < 1e-9 {
                hits += 1;
            } else {
                assert!((cpm.distance(i) - (best.sqrt() - 0.5)).abs() <= 1.5);
            }
        }
        assert!(hits as f64 >= 0.99 * band.len() as f64, "{hits}/{}", band.len());
    }

    #[test]
    fn reinitialized_smooth_level_set_is_eikonal() {
        let g = grid(64, 64);
        // badly scaled implicit function of a rotated ellipse with a bump
        let psi: Vec<f64> = (0..g.len())
            .map(|i| {
                let c = g.center(i);
                let (x, y) = (c[0] - 31.0, c[1] - 33.0);
                let (u, v) = (0.8 * x + 0.6 * y, -0.6 * x + 0.8 * y);
                let r = ((u / 20.0).powi(2) + (v / 12.0).powi(2)).sqrt();
                7.0 * (r - 1.0 - 0.1 * (3.0 * v.atan2(u)).sin())
            })
            .collect();
        let ls = LevelSet::from_values(g, psi, 6.0).unwrap();
        let r = ls.reinitialize().unwrap();
        assert_eq!(r.region(), ls.region());
        let (lo, hi) = r.gradient_norm_range().unwrap();
        assert!(lo >= 0.8 && hi <= 1.2, "gradient range {lo} {hi}");
    }

    #[test]
    fn closest_point_on_row_of_disk() {
        let g = grid(41, 41);
        let m = disk(g, 20.5, 20.5, 8.0);
        let cpm = closest_point_map(&m, 10.0).unwrap();
        let y = 20;
        let x = 33;
        let rightmost = (0..41).filter(|&xx| m.contains(xx, y)).max().unwrap();
        assert_eq!(cpm.closest(g.index(x, y)), Some(g.index(rightmost, y)));
        // region pixels are at distance 0 and not in the band
        let b = g.index(rightmost, y);
        assert_eq!(cpm.distance(b), 0.0);
        assert!(!cpm.band().get(b));
    }

    #[test]
    fn closest_map_agrees_with_signed_distance_outside() {
        let g = grid(30, 30);
        let m = disk(g, 12.0, 14.0, 6.0);
        let ls = signed_distance(&m, 8.0).unwrap();
        let cpm = closest_point_map(&m, 8.0).unwrap();
        for i in cpm.band().indices() {
            assert!((cpm.distance(i) - ls.value(i)).abs() < 1e-9);
        }
    }

    #[test]
    fn reinitialize_keeps_sign_and_subpixel_front() {
        let g = grid(30, 10);
        // planar front at x = 11.3 (continuous); psi = x_c - 11.3 scaled by 2
        let psi: Vec<f64> = (0..g.len()).map(|i| 2.0 * (g.center(i)[0] - 11.3)).collect();
        let ls = LevelSet::from_values(g, psi, 6.0).unwrap();
        let r = ls.reinitialize().unwrap();
        assert_eq!(r.region(), ls.region());
        for i in 0..g.len() {
            let d = g.center(i)[0] - 11.3;
            if d.abs() < 5.0 {
                assert!((r.value(i) - d).abs() < 1e-9, "d={d} got {}", r.value(i));
            }
        }
    }

    #[test]
    fn extension_of_constant_field_is_constant() {
        let g = grid(20, 20);
        let m = disk(g, 10.0, 10.0, 5.0);
        let f = VectorField::new(g, [1.0, 0.0]).restricted(&m);
        let ls = signed_distance(&m, 4.0).unwrap();
        let e = extend_to_narrowband(&f, &ls).unwrap();
        for i in ls.narrowband().indices() {
            assert_eq!(e.get(i), [1.0, 0.0]);
        }
    }

    #[test]
    fn extension_of_linear_field_uses_boundary_foot_point() {
        let g = grid(40, 40);
        let m = disk(g, 20.0, 20.0, 10.0);
        let f = VectorField::from_fn(g, |x, _| [x as f64 + 0.5, 0.0]).restricted(&m);
        let ls = signed_distance(&m, 4.0).unwrap();
        let e = extend_to_narrowband(&f, &ls).unwrap();
        for i in ls.narrowband().difference(&m).indices() {
            // brute-force closest region pixel
            let c = g.center(i);
            let foot = m
                .indices()
                .min_by(|&a, &b| {
                    let pa = g.center(a);
                    let pb = g.center(b);
                    let da = (pa[0] - c[0]).powi(2) + (pa[1] - c[1]).powi(2);
                    let db = (pb[0] - c[0]).powi(2) + (pb[1] - c[1]).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            assert!((e.get(i)[0] - g.center(foot)[0]).abs() <= 1.5);
        }
    }
}
