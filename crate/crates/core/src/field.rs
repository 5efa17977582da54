//! Pixel-grid fields restricted to regions.
//!
//! Pixel `(x, y)` covers the unit square `[x, x+1) × [y, y+1)` and its
//! centre sits at continuous coordinates `(x + 0.5, y + 0.5)`. Fields store
//! one value (or one vector) per pixel of the whole grid; pixels outside the
//! field's domain hold `NaN`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid2D {
    width: usize,
    height: usize,
}

impl Grid2D {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid { width, height });
        }
        Ok(Self { width, height })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.width, i / self.width)
    }

    /// Continuous coordinates of the centre of pixel `i`.
    #[inline]
    pub fn center(&self, i: usize) -> [f64; 2] {
        let (x, y) = self.coords(i);
        [x as f64 + 0.5, y as f64 + 0.5]
    }

    /// Index of pixel `(x + dx, y + dy)` if it lies on the grid.
    #[inline]
    pub fn offset(&self, i: usize, dx: isize, dy: isize) -> Option<usize> {
        let (x, y) = self.coords(i);
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        if nx < 0 || ny < 0 || nx >= self.width as isize || ny >= self.height as isize {
            None
        } else {
            Some(ny as usize * self.width + nx as usize)
        }
    }

    /// The up-to-four edge neighbours of pixel `i`.
    pub fn neighbors4(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        const OFFS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        OFFS.iter().filter_map(move |&(dx, dy)| self.offset(i, dx, dy))
    }

    /// The up-to-eight edge and corner neighbours of pixel `i`.
    pub fn neighbors8(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        const OFFS: [(isize, isize); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        OFFS.iter().filter_map(move |&(dx, dy)| self.offset(i, dx, dy))
    }

    pub fn ensure_same(&self, other: &Grid2D) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                expected: (self.width, self.height),
                found: (other.width, other.height),
            });
        }
        Ok(())
    }
}

/// Set of pixels on a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    grid: Grid2D,
    bits: Vec<bool>,
}

impl RegionMask {
    pub fn empty(grid: Grid2D) -> Self {
        Self {
            grid,
            bits: vec![false; grid.len()],
        }
    }

    pub fn full(grid: Grid2D) -> Self {
        Self {
            grid,
            bits: vec![true; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(grid.len());
        for y in 0..grid.height() {
            for x in 0..grid.width() {
                bits.push(f(x, y));
            }
        }
        Self { grid, bits }
    }

    pub fn from_bits(grid: Grid2D, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "mask has {} entries, grid needs {}",
                bits.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, bits })
    }

    #[inline]
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.bits[self.grid.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        self.bits[i] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| if b { Some(i) } else { None })
    }

    pub fn union(&self, other: &RegionMask) -> RegionMask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &RegionMask) -> RegionMask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &RegionMask) -> RegionMask {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> RegionMask {
        RegionMask {
            grid: self.grid,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn zip_with(&self, other: &RegionMask, f: impl Fn(bool, bool) -> bool) -> RegionMask {
        debug_assert_eq!(self.grid, other.grid);
        RegionMask {
            grid: self.grid,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// A pixel of the region with at least one 4-neighbour outside it (or on
    /// the grid border).
    pub fn is_boundary(&self, i: usize) -> bool {
        if !self.bits[i] {
            return false;
        }
        let (x, y) = self.grid.coords(i);
        if x == 0 || y == 0 || x + 1 == self.grid.width() || y + 1 == self.grid.height() {
            return true;
        }
        self.grid.neighbors4(i).any(|j| !self.bits[j])
    }

    /// Pixels whose eight neighbours all belong to the region.
    pub fn interior(&self) -> RegionMask {
        let mut out = RegionMask::empty(self.grid);
        for i in self.indices() {
            let (x, y) = self.grid.coords(i);
            if x == 0 || y == 0 || x + 1 == self.grid.width() || y + 1 == self.grid.height() {
                continue;
            }
            if self.grid.neighbors8(i).all(|j| self.bits[j]) {
                out.bits[i] = true;
            }
        }
        out
    }

    /// Morphological erosion by `r` steps of the 8-neighbourhood.
    pub fn eroded(&self, r: usize) -> RegionMask {
        let mut m = self.clone();
        for _ in 0..r {
            m = m.interior();
        }
        m
    }

    /// 4-connected component label per pixel (`usize::MAX` outside) and the
    /// number of components.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.grid.len()];
        let mut n = 0;
        let mut stack = Vec::new();
        for start in 0..self.grid.len() {
            if !self.bits[start] || label[start] != usize::MAX {
                continue;
            }
            label[start] = n;
            stack.push(start);
            while let Some(i) = stack.pop() {
                for j in self.grid.neighbors4(i) {
                    if self.bits[j] && label[j] == usize::MAX {
                        label[j] = n;
                        stack.push(j);
                    }
                }
            }
            n += 1;
        }
        (label, n)
    }

    pub fn centroid(&self) -> Option<[f64; 2]> {
        let mut s = [0.0, 0.0];
        let mut n = 0usize;
        for i in self.indices() {
            let c = self.grid.center(i);
            s[0] += c[0];
            s[1] += c[1];
            n += 1;
        }
        (n > 0).then(|| [s[0] / n as f64, s[1] / n as f64])
    }
}

/// Real-valued field with `k ≥ 1` channels per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    channels: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, channels: usize, fill: f64) -> Self {
        assert!(channels >= 1, "a field needs at least one channel");
        Self {
            grid,
            channels,
            data: vec![fill; grid.len() * channels],
        }
    }

    /// A field that is undefined (`NaN`) everywhere.
    pub fn undefined(grid: Grid2D, channels: usize) -> Self {
        Self::new(grid, channels, f64::NAN)
    }

    pub fn from_vec(grid: Grid2D, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() != grid.len() * channels {
            return Err(Error::InvalidParameter(format!(
                "field data has {} values, expected {} x {}",
                data.len(),
                grid.len(),
                channels
            )));
        }
        Ok(Self {
            grid,
            channels,
            data,
        })
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for y in 0..grid.height() {
            for x in 0..grid.width() {
                data.push(f(x, y));
            }
        }
        Self {
            grid,
            channels: 1,
            data,
        }
    }

    #[inline]
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, i: usize, c: usize, v: f64) {
        self.data[i * self.channels + c] = v;
    }

    #[inline]
    pub fn is_defined(&self, i: usize) -> bool {
        self.data[i * self.channels].is_finite()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// One channel as a single-channel field.
    pub fn channel(&self, c: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            channels: 1,
            data: (0..self.grid.len()).map(|i| self.get(i, c)).collect(),
        }
    }

    /// Copy of `self` with every pixel outside `mask` set to `NaN`.
    pub fn restricted(&self, mask: &RegionMask) -> ScalarField {
        let mut out = ScalarField::undefined(self.grid, self.channels);
        for i in mask.indices() {
            out.pixel_mut(i).copy_from_slice(self.pixel(i));
        }
        out
    }

    /// Pixels where the field is defined.
    pub fn domain(&self) -> RegionMask {
        let bits = (0..self.grid.len()).map(|i| self.is_defined(i)).collect();
        RegionMask {
            grid: self.grid,
            bits,
        }
    }

    /// Minimum and maximum of channel 0 over `mask` (ignoring `NaN`).
    pub fn min_max_on(&self, mask: &RegionMask) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in mask.indices() {
            let v = self.get(i, 0);
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }
}

/// Two-component field (pixels per unit, or source coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid2D,
    data: Vec<[f64; 2]>,
}

impl VectorField {
    pub fn new(grid: Grid2D, fill: [f64; 2]) -> Self {
        Self {
            grid,
            data: vec![fill; grid.len()],
        }
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::new(grid, [0.0, 0.0])
    }

    pub fn undefined(grid: Grid2D) -> Self {
        Self::new(grid, [f64::NAN, f64::NAN])
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(usize, usize) -> [f64; 2]) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for y in 0..grid.height() {
            for x in 0..grid.width() {
                data.push(f(x, y));
            }
        }
        Self { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    pub fn get(&self, i: usize) -> [f64; 2] {
        self.data[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: [f64; 2]) {
        self.data[i] = v;
    }

    #[inline]
    pub fn is_defined(&self, i: usize) -> bool {
        self.data[i][0].is_finite() && self.data[i][1].is_finite()
    }

    pub fn data(&self) -> &[[f64; 2]] {
        &self.data
    }

    pub fn restricted(&self, mask: &RegionMask) -> VectorField {
        let mut out = VectorField::undefined(self.grid);
        for i in mask.indices() {
            out.data[i] = self.data[i];
        }
        out
    }

    pub fn scaled(&self, s: f64) -> VectorField {
        VectorField {
            grid: self.grid,
            data: self.data.iter().map(|v| [v[0] * s, v[1] * s]).collect(),
        }
    }

    /// Largest absolute component over the defined pixels of `mask`.
    pub fn max_component_on(&self, mask: &RegionMask) -> f64 {
        mask.indices()
            .filter(|&i| self.is_defined(i))
            .map(|i| self.data[i][0].abs().max(self.data[i][1].abs()))
            .fold(0.0, f64::max)
    }

    /// Sum of the field over `mask`.
    pub fn sum_on(&self, mask: &RegionMask) -> [f64; 2] {
        let mut s = [0.0, 0.0];
        for i in mask.indices() {
            s[0] += self.data[i][0];
            s[1] += self.data[i][1];
        }
        s
    }

    /// Region average of the field.
    pub fn mean_on(&self, mask: &RegionMask) -> [f64; 2] {
        let n = mask.count().max(1) as f64;
        let s = self.sum_on(mask);
        [s[0] / n, s[1] / n]
    }
}

/// Backward map `φ⁻¹`: for every pixel of the current region, the continuous
/// template coordinates it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardWarp {
    pub coords: VectorField,
}

impl BackwardWarp {
    /// The identity map on `mask` (each pixel maps to its own centre).
    pub fn identity(mask: &RegionMask) -> Self {
        let grid = mask.grid();
        let mut coords = VectorField::undefined(grid);
        for i in mask.indices() {
            coords.set(i, grid.center(i));
        }
        Self { coords }
    }

    pub fn grid(&self) -> Grid2D {
        self.coords.grid()
    }

    /// Displacement `x - φ⁻¹(x)` (template-to-image motion) on `mask`.
    pub fn displacement(&self, mask: &RegionMask) -> VectorField {
        let grid = self.grid();
        let mut out = VectorField::undefined(grid);
        for i in mask.indices() {
            let c = grid.center(i);
            let s = self.coords.get(i);
            out.set(i, [c[0] - s[0], c[1] - s[1]]);
        }
        out
    }
}

/// Clamp a continuous point to the centres of the border pixels.
fn clamp_to_grid(grid: Grid2D, p: [f64; 2]) -> (f64, f64) {
    let u = (p[0] - 0.5).clamp(0.0, (grid.width() - 1) as f64);
    let v = (p[1] - 0.5).clamp(0.0, (grid.height() - 1) as f64);
    (u, v)
}

/// Bilinear interpolation of a multi-channel field at continuous point `p`,
/// written into `out`.
///
/// Nodes outside the field's domain (`NaN`) are dropped and the remaining
/// weights renormalised; when all four nodes are undefined the value of the
/// nearest defined pixel is returned. Points off the grid are clamped.
/// Returns `false` only if the field is undefined everywhere.
pub fn bilinear_sample_into(f: &ScalarField, p: [f64; 2], out: &mut [f64]) -> bool {
    debug_assert_eq!(out.len(), f.channels());
    bilinear_core(f.grid(), p, out, |i| f.is_defined(i), |i, c| f.get(i, c))
}

/// Convenience wrapper around [`bilinear_sample_into`] for one channel.
pub fn bilinear_sample(f: &ScalarField, p: [f64; 2]) -> f64 {
    let mut out = vec![0.0; f.channels()];
    bilinear_sample_into(f, p, &mut out);
    out[0]
}

/// Bilinear interpolation of a vector field (same rules as the scalar case).
pub fn bilinear_sample_vector(f: &VectorField, p: [f64; 2]) -> [f64; 2] {
    let mut out = [0.0; 2];
    bilinear_core(f.grid(), p, &mut out, |i| f.is_defined(i), |i, c| f.get(i)[c]);
    out
}

fn bilinear_core(
    grid: Grid2D,
    p: [f64; 2],
    out: &mut [f64],
    defined: impl Fn(usize) -> bool,
    value: impl Fn(usize, usize) -> f64,
) -> bool {
    let (u, v) = clamp_to_grid(grid, p);
    let x0 = (u.floor() as usize).min(grid.width() - 1);
    let y0 = (v.floor() as usize).min(grid.height() - 1);
    let x1 = (x0 + 1).min(grid.width() - 1);
    let y1 = (y0 + 1).min(grid.height() - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let nodes = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ];
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut wsum = 0.0;
    let mut nearest: Option<(f64, usize)> = None;
    for &(x, y, w) in &nodes {
        let i = grid.index(x, y);
        if !defined(i) {
            continue;
        }
        let d = (x as f64 - u).powi(2) + (y as f64 - v).powi(2);
        if nearest.is_none_or(|(bd, _)| d < bd) {
            nearest = Some((d, i));
        }
        if w > 0.0 {
            wsum += w;
            for (c, o) in out.iter_mut().enumerate() {
                *o += w * value(i, c);
            }
        }
    }
    if wsum > 0.0 {
        out.iter_mut().for_each(|o| *o /= wsum);
        return true;
    }
    let fallback = nearest.map(|(_, i)| i).or_else(|| nearest_defined(grid, &defined, u, v));
    match fallback {
        Some(i) => {
            for (c, o) in out.iter_mut().enumerate() {
                *o = value(i, c);
            }
            true
        }
        None => {
            out.iter_mut().for_each(|o| *o = f64::NAN);
            false
        }
    }
}

/// Nearest defined pixel to node coordinates `(u, v)`, searched in growing
/// square rings.
fn nearest_defined(grid: Grid2D, defined: impl Fn(usize) -> bool, u: f64, v: f64) -> Option<usize> {
    let cx = u.round() as isize;
    let cy = v.round() as isize;
    let max_r = grid.width().max(grid.height()) as isize;
    let mut best: Option<(f64, usize)> = None;
    for r in 0..=max_r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs() != r && dy.abs() != r {
                    continue;
                }
                let x = cx + dx;
                let y = cy + dy;
                if x < 0 || y < 0 || x >= grid.width() as isize || y >= grid.height() as isize {
                    continue;
                }
                let i = grid.index(x as usize, y as usize);
                if defined(i) {
                    let d = (x as f64 - u).powi(2) + (y as f64 - v).powi(2);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, i));
                    }
                }
            }
        }
        // a later ring can only be closer by less than one ring width
        if let Some((bd, _)) = best {
            if (r as f64) * (r as f64) >= bd {
                break;
            }
        }
    }
    best.map(|(_, i)| i)
}

/// Partial derivative of a per-pixel quantity along one axis, restricted to
/// `mask`: central difference where both neighbours are in the mask,
/// one-sided where only one is, zero where neither is.
#[inline]
pub(crate) fn masked_diff<T, F>(grid: Grid2D, mask: &RegionMask, i: usize, axis: usize, value: F) -> Option<T>
where
    F: Fn(usize) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Div<f64, Output = T>,
{
    let (dx, dy) = if axis == 0 { (1, 0) } else { (0, 1) };
    let fwd = grid.offset(i, dx, dy).filter(|&j| mask.get(j));
    let bwd = grid.offset(i, -dx, -dy).filter(|&j| mask.get(j));
    match (fwd, bwd) {
        (Some(f), Some(b)) => Some((value(f) - value(b)) / 2.0),
        (Some(f), None) => Some(value(f) - value(i)),
        (None, Some(b)) => Some(value(i) - value(b)),
        (None, None) => None,
    }
}

/// Spatial Jacobian of a vector field at pixel `i` as `[[∂₁h¹, ∂₂h¹], [∂₁h², ∂₂h²]]`,
/// using [`masked_diff`]; an axis with no in-mask neighbour contributes
/// `fallback` for that column.
pub(crate) fn masked_jacobian(
    h: &VectorField,
    mask: &RegionMask,
    i: usize,
    fallback: [[f64; 2]; 2],
) -> [[f64; 2]; 2] {
    let grid = h.grid();
    let mut j = [[0.0; 2]; 2];
    for axis in 0..2 {
        for comp in 0..2 {
            j[comp][axis] = masked_diff(grid, mask, i, axis, |k| h.get(k)[comp])
                .unwrap_or(fallback[comp][axis]);
        }
    }
    j
}

/// Determinant of the finite-difference Jacobian of the backward map at each
/// pixel of `mask`. Central differences inside, one-sided at the boundary; an
/// axis with no in-mask neighbour is treated as locally the identity.
pub fn jacobian_det(phi_inv: &BackwardWarp, mask: &RegionMask) -> ScalarField {
    let grid = mask.grid();
    let mut out = ScalarField::undefined(grid, 1);
    let id = [[1.0, 0.0], [0.0, 1.0]];
    for i in mask.indices() {
        let j = masked_jacobian(&phi_inv.coords, mask, i, id);
        out.set(i, 0, j[0][0] * j[1][1] - j[0][1] * j[1][0]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize) -> Grid2D {
        Grid2D::new(w, h).unwrap()
    }

    #[test]
    fn grid_rejects_zero_size() {
        assert!(Grid2D::new(0, 3).is_err());
        assert!(Grid2D::new(3, 0).is_err());
    }

    #[test]
    fn bilinear_on_node_is_exact() {
        let g = grid(8, 8);
        let f = ScalarField::from_fn(g, |x, y| (x * 10 + y) as f64);
        assert_eq!(bilinear_sample(&f, [3.5, 4.5]), 34.0);
    }

    #[test]
    fn bilinear_reproduces_linear() {
        let g = grid(10, 10);
        // value = x-coordinate of the pixel centre
        let f = ScalarField::from_fn(g, |x, _| x as f64 + 0.5);
        assert!((bilinear_sample(&f, [2.5, 7.0]) - 2.5).abs() < 1e-12);
        assert!((bilinear_sample(&f, [4.2, 3.3]) - 4.2).abs() < 1e-12);
    }

    #[test]
    fn bilinear_renormalises_over_domain() {
        let g = grid(4, 4);
        let mut f = ScalarField::from_fn(g, |_, _| 7.0);
        f.set(g.index(2, 1), 0, f64::NAN);
        assert_eq!(bilinear_sample(&f, [2.0, 2.0]), 7.0);
    }

    #[test]
    fn bilinear_falls_back_to_nearest_defined_pixel() {
        let g = grid(8, 8);
        let mut f = ScalarField::undefined(g, 1);
        f.set(g.index(6, 6), 0, 3.0);
        f.set(g.index(0, 0), 0, 9.0);
        assert_eq!(bilinear_sample(&f, [4.6, 4.6]), 3.0);
    }

    #[test]
    fn bilinear_clamps_off_grid_points() {
        let g = grid(4, 4);
        let f = ScalarField::from_fn(g, |x, _| x as f64);
        assert_eq!(bilinear_sample(&f, [-5.0, 1.5]), 0.0);
        assert_eq!(bilinear_sample(&f, [50.0, 1.5]), 3.0);
    }

    fn affine_warp(g: Grid2D, mask: &RegionMask, a: [[f64; 2]; 2], b: [f64; 2]) -> BackwardWarp {
        let mut coords = VectorField::undefined(g);
        for i in mask.indices() {
            let c = g.center(i);
            coords.set(
                i,
                [
                    a[0][0] * c[0] + a[0][1] * c[1] + b[0],
                    a[1][0] * c[0] + a[1][1] * c[1] + b[1],
                ],
            );
        }
        BackwardWarp { coords }
    }

    #[test]
    fn jacobian_of_identity_is_one() {
        let g = grid(12, 12);
        let m = RegionMask::from_fn(g, |x, y| (2..10).contains(&x) && (3..9).contains(&y));
        let j = jacobian_det(&BackwardWarp::identity(&m), &m);
        for i in m.indices() {
            assert!((j.get(i, 0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_of_scaling_and_rotation() {
        let g = grid(16, 16);
        let m = RegionMask::full(g);
        let s = affine_warp(g, &m, [[2.0, 0.0], [0.0, 2.0]], [0.0, 0.0]);
        let th = 30f64.to_radians();
        let r = affine_warp(g, &m, [[th.cos(), -th.sin()], [th.sin(), th.cos()]], [1.0, -2.0]);
        let js = jacobian_det(&s, &m);
        let jr = jacobian_det(&r, &m);
        for i in m.interior().indices() {
            assert!((js.get(i, 0) - 4.0).abs() < 1e-10);
            assert!((jr.get(i, 0) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn components_are_four_connected() {
        let g = grid(5, 5);
        // two diagonal touching pixels are separate components
        let m = RegionMask::from_fn(g, |x, y| (x, y) == (1, 1) || (x, y) == (2, 2) || (x, y) == (2, 3));
        let (_, n) = m.components();
        assert_eq!(n, 2);
    }

    #[test]
    fn boundary_includes_grid_border() {
        let g = grid(4, 4);
        let m = RegionMask::full(g);
        assert!(m.is_boundary(g.index(0, 2)));
        assert!(!m.is_boundary(g.index(1, 1)));
    }

    proptest::proptest! {
        #[test]
        fn bilinear_reproduces_affine_fields(
            a in -3.0f64..3.0, b in -3.0f64..3.0, c in -10.0f64..10.0,
            px in 0.5f64..15.5, py in 0.5f64..11.5,
        ) {
            let g = grid(16, 12);
            let f = ScalarField::from_fn(g, |x, y| a * (x as f64 + 0.5) + b * (y as f64 + 0.5) + c);
            let v = bilinear_sample(&f, [px, py]);
            proptest::prop_assert!((v - (a * px + b * py + c)).abs() < 1e-10);
        }

        #[test]
        fn jacobian_of_affine_maps_is_exact(
            a00 in -2.0f64..2.0, a01 in -2.0f64..2.0, a10 in -2.0f64..2.0, a11 in -2.0f64..2.0,
            b0 in -5.0f64..5.0, b1 in -5.0f64..5.0,
        ) {
            let g = grid(10, 10);
            let m = RegionMask::from_fn(g, |x, y| (x as i32 - 5).pow(2) + (y as i32 - 5).pow(2) <= 16);
            let w = affine_warp(g, &m, [[a00, a01], [a10, a11]], [b0, b1]);
            let j = jacobian_det(&w, &m);
            let det = a00 * a11 - a01 * a10;
            for i in m.interior().indices() {
                proptest::prop_assert!((j.get(i, 0) - det).abs() < 1e-10);
            }
        }
    }
}
