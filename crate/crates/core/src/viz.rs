//! RGB renderings of results and the Middlebury `.flo` flow format.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{Grid2D, RegionMask, ScalarField, VectorField};

pub const CONTOUR_COLOR: [u8; 3] = [255, 32, 32];
pub const OCCLUSION_COLOR: [u8; 3] = [40, 90, 255];
pub const DISOCCLUSION_COLOR: [u8; 3] = [40, 220, 60];

const FLO_MAGIC: f32 = 202021.25;
/// Components above this in a `.flo` file mark unknown flow.
const FLO_UNKNOWN: f32 = 1e10;

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb {
    pub fn pixel(&self, i: usize) -> [u8; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }
}

fn to_u8(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 255.0) as u8
    }
}

fn blend(base: [u8; 3], color: [u8; 3]) -> [u8; 3] {
    std::array::from_fn(|k| ((base[k] as u16 + color[k] as u16) / 2) as u8)
}

/// Draws the region boundary over the image, with occlusion and
/// dis-occlusion pixels tinted. Grey images are replicated to RGB.
pub fn render_overlay(
    image: &ScalarField,
    mask: &RegionMask,
    occlusion: Option<&RegionMask>,
    disocclusion: Option<&RegionMask>,
) -> Rgb {
    let grid = image.grid();
    let mut data = Vec::with_capacity(3 * grid.len());
    for i in 0..grid.len() {
        let px = image.pixel(i);
        let mut c = if px.len() >= 3 {
            [to_u8(px[0]), to_u8(px[1]), to_u8(px[2])]
        } else {
            [to_u8(px[0]); 3]
        };
        if occlusion.is_some_and(|o| o.get(i)) {
            c = blend(c, OCCLUSION_COLOR);
        }
        if disocclusion.is_some_and(|d| d.get(i)) {
            c = blend(c, DISOCCLUSION_COLOR);
        }
        if mask.is_boundary(i) {
            c = CONTOUR_COLOR;
        }
        data.extend_from_slice(&c);
    }
    Rgb {
        width: grid.width(),
        height: grid.height(),
        data,
    }
}

/// The Middlebury colour wheel: red–yellow–green–cyan–blue–magenta segments
/// of 15, 6, 4, 11, 13 and 6 hues.
fn color_wheel() -> Vec<[f64; 3]> {
    let segments = [(15, 0), (6, 1), (4, 2), (11, 3), (13, 4), (6, 5)];
    let mut wheel = Vec::new();
    for (n, seg) in segments {
        for k in 0..n {
            let t = k as f64 / n as f64;
            let c = match seg {
                0 => [1.0, t, 0.0],
                1 => [1.0 - t, 1.0, 0.0],
                2 => [0.0, 1.0, t],
                3 => [0.0, 1.0 - t, 1.0],
                4 => [t, 0.0, 1.0],
                _ => [1.0, 0.0, 1.0 - t],
            };
            wheel.push(c);
        }
    }
    wheel
}

/// Flow colour code on the Middlebury wheel, closed so that hue is
/// continuous across the negative x axis. Hue encodes direction and
/// saturation the magnitude relative to the largest defined vector. Zero
/// motion is white, undefined pixels black.
pub fn render_flow(flow: &VectorField) -> Rgb {
    let grid = flow.grid();
    let max = flow
        .data()
        .iter()
        .filter(|v| v[0].is_finite() && v[1].is_finite())
        .map(|v| v[0].hypot(v[1]))
        .fold(0.0f64, f64::max);
    let wheel = color_wheel();
    let n = wheel.len() as f64;
    let mut data = Vec::with_capacity(3 * grid.len());
    for v in flow.data() {
        if !(v[0].is_finite() && v[1].is_finite()) {
            data.extend_from_slice(&[0, 0, 0]);
            continue;
        }
        let rad = if max > 0.0 { v[0].hypot(v[1]) / max } else { 0.0 };
        let a = (-v[1]).atan2(-v[0]) / PI;
        let fk = (a + 1.0) / 2.0 * n;
        let k0 = (fk.floor() as usize) % wheel.len();
        let k1 = (k0 + 1) % wheel.len();
        let f = fk - fk.floor();
        for ch in 0..3 {
            let col = (1.0 - f) * wheel[k0][ch] + f * wheel[k1][ch];
            data.push(to_u8(255.0 * (1.0 - rad * (1.0 - col))));
        }
    }
    Rgb {
        width: grid.width(),
        height: grid.height(),
        data,
    }
}

/// Encodes a flow field as `.flo`; undefined vectors become the unknown
/// marker.
pub fn encode_flo(flow: &VectorField) -> Vec<u8> {
    let grid = flow.grid();
    let mut out = Vec::with_capacity(12 + 8 * grid.len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(grid.width() as i32).to_le_bytes());
    out.extend_from_slice(&(grid.height() as i32).to_le_bytes());
    for v in flow.data() {
        for c in v {
            let x = if c.is_finite() { *c as f32 } else { FLO_UNKNOWN };
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<VectorField> {
    let bad = |msg: &str| Error::InvalidParameter(format!("not a .flo file: {msg}"));
    let word = |k: usize| -> Result<[u8; 4]> {
        bytes
            .get(4 * k..4 * k + 4)
            .map(|b| b.try_into().expect("four bytes"))
            .ok_or_else(|| bad("truncated"))
    };
    if f32::from_le_bytes(word(0)?) != FLO_MAGIC {
        return Err(bad("wrong magic number"));
    }
    let w = i32::from_le_bytes(word(1)?);
    let h = i32::from_le_bytes(word(2)?);
    if w <= 0 || h <= 0 {
        return Err(bad("non-positive size"));
    }
    let grid = Grid2D::new(w as usize, h as usize)?;
    if bytes.len() != 12 + 8 * grid.len() {
        return Err(bad("size does not match header"));
    }
    let mut flow = VectorField::undefined(grid);
    for i in 0..grid.len() {
        let u = f32::from_le_bytes(word(3 + 2 * i)?);
        let v = f32::from_le_bytes(word(4 + 2 * i)?);
        if u.abs() < 1e9 && v.abs() < 1e9 {
            flow.set(i, [u as f64, v as f64]);
        }
    }
    Ok(flow)
}
