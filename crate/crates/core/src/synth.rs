//! Seeded synthetic sequences with exact ground truth.
//!
//! A textured shape is carried through the frames by
//! `W_t(p) = c + (1 + s t) R(θ t) (p − c) + t·shift + wiggle_t(p)`, in front
//! of a static textured background, and vertical stripes moving
//! horizontally pass in front of both. Frames, masks and displacements are
//! all evaluated at pixel centres from the continuous model.
//!
//! Scripts are line-based `key = value` text with `#` comments:
//!
//! ```text
//! width = 128
//! height = 96
//! frames = 20
//! shape = ellipse 64 48 30 22     # or: blob cx cy r lobes amplitude
//! shift = 1.0 0.5                 # per frame
//! occluder = 10 12 4 230          # x0 width vx intensity, repeatable
//! ```

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::{Grid2D, RegionMask, ScalarField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    /// Radius `r (1 + amplitude cos(lobes θ))` around the centre.
    Blob { cx: f64, cy: f64, r: f64, lobes: u32, amplitude: f64 },
}

impl Shape {
    pub fn center(&self) -> [f64; 2] {
        match *self {
            Shape::Ellipse { cx, cy, .. } | Shape::Blob { cx, cy, .. } => [cx, cy],
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => ((p[0] - cx) / rx).powi(2) + ((p[1] - cy) / ry).powi(2) <= 1.0,
            Shape::Blob { cx, cy, r, lobes, amplitude } => {
                let (dx, dy) = (p[0] - cx, p[1] - cy);
                let rad = r * (1.0 + amplitude * (lobes as f64 * dy.atan2(dx)).cos());
                dx * dx + dy * dy <= rad * rad
            }
        }
    }
}

/// Vertical stripe `[x0 + vx t, x0 + vx t + width)` of constant intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occluder {
    pub x0: f64,
    pub width: f64,
    pub vx: f64,
    pub intensity: f64,
}

impl Occluder {
    pub fn covers(&self, x: f64, t: usize) -> bool {
        let left = self.x0 + self.vx * t as f64;
        x >= left && x < left + self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// 1 or 3.
    pub channels: usize,
    pub seed: u64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub shape: Shape,
    pub shift: [f64; 2],
    /// Radians per frame.
    pub rotation: f64,
    /// Relative growth per frame.
    pub scale: f64,
    /// Amplitude (px), spatial frequency (rad/px) and period (frames) of a
    /// sinusoidal non-rigid displacement.
    pub wiggle: [f64; 3],
    pub occluders: Vec<Occluder>,
    pub object_mean: f64,
    pub object_contrast: f64,
    pub background_mean: f64,
    pub background_contrast: f64,
}

impl Default for Script {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            frames: 2,
            channels: 1,
            seed: 0,
            noise: 0.0,
            shape: Shape::Ellipse {
                cx: 48.0,
                cy: 48.0,
                rx: 24.0,
                ry: 18.0,
            },
            shift: [0.0, 0.0],
            rotation: 0.0,
            scale: 0.0,
            wiggle: [0.0, 0.0, 1.0],
            occluders: Vec::new(),
            object_mean: 150.0,
            object_contrast: 45.0,
            background_mean: 45.0,
            background_contrast: 12.0,
        }
    }
}

fn parse_floats<const N: usize>(key: &str, v: &str) -> Result<[f64; N]> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() != N {
        return Err(Error::InvalidScript(format!("{key} expects {N} numbers, got {v:?}")));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|_| Error::InvalidScript(format!("{key}: {p:?} is not a number")))?;
    }
    Ok(out)
}

fn parse_int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::InvalidScript(format!("{key}: {v:?} is not a valid integer")))
}

impl Script {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Script::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidScript(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "width" => s.width = parse_int(key, value)?,
                "height" => s.height = parse_int(key, value)?,
                "frames" => s.frames = parse_int(key, value)?,
                "channels" => s.channels = parse_int(key, value)?,
                "seed" => s.seed = parse_int(key, value)?,
                "noise" => s.noise = parse_floats::<1>(key, value)?[0],
                "shape" => {
                    let (kind, rest) = value.split_once(char::is_whitespace).unwrap_or((value, ""));
                    s.shape = match kind {
                        "ellipse" => {
                            let [cx, cy, rx, ry] = parse_floats(key, rest)?;
                            Shape::Ellipse { cx, cy, rx, ry }
                        }
                        "blob" => {
                            let [cx, cy, r, lobes, amplitude] = parse_floats(key, rest)?;
                            Shape::Blob {
                                cx,
                                cy,
                                r,
                                lobes: lobes as u32,
                                amplitude,
                            }
                        }
                        other => return Err(Error::InvalidScript(format!("unknown shape {other:?}"))),
                    };
                }
                "shift" => s.shift = parse_floats(key, value)?,
                "rotation" => s.rotation = parse_floats::<1>(key, value)?[0],
                "scale" => s.scale = parse_floats::<1>(key, value)?[0],
                "wiggle" => s.wiggle = parse_floats(key, value)?,
                "occluder" => {
                    let [x0, width, vx, intensity] = parse_floats(key, value)?;
                    s.occluders.push(Occluder { x0, width, vx, intensity });
                }
                "object_mean" => s.object_mean = parse_floats::<1>(key, value)?[0],
                "object_contrast" => s.object_contrast = parse_floats::<1>(key, value)?[0],
                "background_mean" => s.background_mean = parse_floats::<1>(key, value)?[0],
                "background_contrast" => s.background_contrast = parse_floats::<1>(key, value)?[0],
                other => return Err(Error::InvalidScript(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "width = {}", self.width);
        let _ = writeln!(t, "height = {}", self.height);
        let _ = writeln!(t, "frames = {}", self.frames);
        let _ = writeln!(t, "channels = {}", self.channels);
        let _ = writeln!(t, "seed = {}", self.seed);
        let _ = writeln!(t, "noise = {}", self.noise);
        match self.shape {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let _ = writeln!(t, "shape = ellipse {cx} {cy} {rx} {ry}");
            }
            Shape::Blob { cx, cy, r, lobes, amplitude } => {
                let _ = writeln!(t, "shape = blob {cx} {cy} {r} {lobes} {amplitude}");
            }
        }
        let _ = writeln!(t, "shift = {} {}", self.shift[0], self.shift[1]);
        let _ = writeln!(t, "rotation = {}", self.rotation);
        let _ = writeln!(t, "scale = {}", self.scale);
        let _ = writeln!(t, "wiggle = {} {} {}", self.wiggle[0], self.wiggle[1], self.wiggle[2]);
        for o in &self.occluders {
            let _ = writeln!(t, "occluder = {} {} {} {}", o.x0, o.width, o.vx, o.intensity);
        }
        let _ = writeln!(t, "object_mean = {}", self.object_mean);
        let _ = writeln!(t, "object_contrast = {}", self.object_contrast);
        let _ = writeln!(t, "background_mean = {}", self.background_mean);
        let _ = writeln!(t, "background_contrast = {}", self.background_contrast);
        t
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScript(m.to_string()));
        if self.width < 3 || self.height < 3 {
            return bad("width and height must be at least 3");
        }
        if self.frames == 0 {
            return bad("frames must be at least 1");
        }
        if self.channels != 1 && self.channels != 3 {
            return bad("channels must be 1 or 3");
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative");
        }
        if self.wiggle[0] * self.wiggle[1] >= 0.5 || self.wiggle[2] <= 0.0 {
            return bad("wiggle needs amplitude × frequency < 0.5 and a positive period");
        }
        if 1.0 + self.scale * (self.frames as f64 - 1.0) <= 0.1 {
            return bad("scale shrinks the shape away");
        }
        match self.shape {
            Shape::Ellipse { rx, ry, .. } if rx <= 0.0 || ry <= 0.0 => return bad("ellipse radii must be positive"),
            Shape::Blob { r, amplitude, .. } if r <= 0.0 || !(0.0..1.0).contains(&amplitude) => {
                return bad("blob needs r > 0 and amplitude in [0, 1)")
            }
            _ => {}
        }
        if self.occluders.iter().any(|o| o.width <= 0.0) {
            return bad("occluder width must be positive");
        }
        Ok(())
    }

    fn wiggle_at(&self, p: [f64; 2], t: usize) -> [f64; 2] {
        let [amp, freq, period] = self.wiggle;
        if amp == 0.0 {
            return [0.0, 0.0];
        }
        let a = amp * (2.0 * std::f64::consts::PI * t as f64 / period).sin();
        [a * (freq * p[1]).sin(), a * (freq * p[0]).cos()]
    }

    /// `W_t(p)`: template point to frame-`t` position.
    pub fn forward(&self, p: [f64; 2], t: usize) -> [f64; 2] {
        let c = self.shape.center();
        let tf = t as f64;
        let k = 1.0 + self.scale * tf;
        let (s, co) = (self.rotation * tf).sin_cos();
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        let w = self.wiggle_at(p, t);
        [
            c[0] + k * (co * dx - s * dy) + self.shift[0] * tf + w[0],
            c[1] + k * (s * dx + co * dy) + self.shift[1] * tf + w[1],
        ]
    }

    /// `W_t⁻¹(x)` by fixed-point iteration on the wiggle term.
    pub fn inverse(&self, x: [f64; 2], t: usize) -> [f64; 2] {
        let c = self.shape.center();
        let tf = t as f64;
        let k = 1.0 + self.scale * tf;
        let (s, co) = (self.rotation * tf).sin_cos();
        let mut p = x;
        for _ in 0..60 {
            let w = self.wiggle_at(p, t);
            let qx = x[0] - self.shift[0] * tf - w[0] - c[0];
            let qy = x[1] - self.shift[1] * tf - w[1] - c[1];
            let next = [c[0] + (co * qx + s * qy) / k, c[1] + (-s * qx + co * qy) / k];
            let done = (next[0] - p[0]).abs() + (next[1] - p[1]).abs() < 1e-13;
            p = next;
            if done {
                break;
            }
        }
        p
    }
}

/// Sum of seeded sinusoids, one set per channel.
#[derive(Debug, Clone)]
struct Texture {
    waves: Vec<Vec<[f64; 4]>>,
    mean: f64,
    contrast: f64,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, channels: usize, mean: f64, contrast: f64, freq: (f64, f64)) -> Self {
        let waves = (0..channels)
            .map(|_| {
                (0..6)
                    .map(|_| {
                        let f = rng.random_range(freq.0..freq.1);
                        let a = rng.random_range(0.0..std::f64::consts::TAU);
                        [f * a.cos(), f * a.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.5..1.0)]
                    })
                    .collect()
            })
            .collect();
        Self { waves, mean, contrast }
    }

    fn eval(&self, p: [f64; 2], c: usize) -> f64 {
        let w = &self.waves[c];
        let norm: f64 = w.iter().map(|k| k[3]).sum();
        let s: f64 = w.iter().map(|k| k[3] * (k[0] * p[0] + k[1] * p[1] + k[2]).sin()).sum();
        self.mean + self.contrast * s / norm * 2.0
    }
}

/// Rendered sequence and its ground truth, per frame.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub frames: Vec<ScalarField>,
    /// Visible object pixels.
    pub masks: Vec<RegionMask>,
    /// Object pixels behind an occluder.
    pub occlusion: Vec<RegionMask>,
    /// Visible pixels that were hidden or outside the frame at `t − 1`
    /// (empty at `t = 0`).
    pub disocclusion: Vec<RegionMask>,
    /// Visible pixels that were visible at `t − 1` but whose `t` position is
    /// hidden, in frame `t` coordinates (empty at `t = 0`).
    pub newly_occluded: Vec<RegionMask>,
    /// `x − W_{t−1}(W_t⁻¹(x))` on the object at `t` (undefined at `t = 0`).
    pub displacement: Vec<VectorField>,
}

pub fn generate(script: &Script) -> Result<Sequence> {
    script.validate()?;
    let grid = Grid2D::new(script.width, script.height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let object = Texture::new(&mut rng, script.channels, script.object_mean, script.object_contrast, (0.25, 0.6));
    let background = Texture::new(
        &mut rng,
        script.channels,
        script.background_mean,
        script.background_contrast,
        (0.05, 0.2),
    );
    let noise = Normal::new(0.0, script.noise.max(f64::MIN_POSITIVE)).expect("valid deviation");
    let hidden = |x: f64, t: usize| script.occluders.iter().find(|o| o.covers(x, t));
    let in_grid = |p: [f64; 2]| p[0] >= 0.0 && p[1] >= 0.0 && p[0] < script.width as f64 && p[1] < script.height as f64;

    let mut seq = Sequence {
        frames: Vec::new(),
        masks: Vec::new(),
        occlusion: Vec::new(),
        disocclusion: Vec::new(),
        newly_occluded: Vec::new(),
        displacement: Vec::new(),
    };
    for t in 0..script.frames {
        let mut img = ScalarField::new(grid, script.channels, 0.0);
        let mut mask = RegionMask::empty(grid);
        let mut occ = RegionMask::empty(grid);
        let mut dis = RegionMask::empty(grid);
        let mut newly = RegionMask::empty(grid);
        let mut disp = VectorField::undefined(grid);
        for i in 0..grid.len() {
            let x = grid.center(i);
            let p = script.inverse(x, t);
            let on_object = script.shape.contains(p);
            let cover = hidden(x[0], t);
            for c in 0..script.channels {
                let v = match (cover, on_object) {
                    (Some(o), _) => o.intensity,
                    (None, true) => object.eval(p, c),
                    (None, false) => background.eval(x, c),
                };
                let n = if script.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                img.set(i, c, (v + n).clamp(0.0, 255.0));
            }
            if !on_object {
                continue;
            }
            if cover.is_some() {
                occ.set(i, true);
            } else {
                mask.set(i, true);
            }
            if t > 0 {
                let prev = script.forward(p, t - 1);
                disp.set(i, [x[0] - prev[0], x[1] - prev[1]]);
                let was_visible = in_grid(prev) && hidden(prev[0], t - 1).is_none();
                if cover.is_none() && !was_visible {
                    dis.set(i, true);
                }
                if cover.is_some() && was_visible {
                    newly.set(i, true);
                }
            }
        }
        seq.frames.push(img);
        seq.masks.push(mask);
        seq.occlusion.push(occ);
        seq.disocclusion.push(dis);
        seq.newly_occluded.push(newly);
        seq.displacement.push(disp);
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_script_repeats_frames() {
        let s = Script {
            frames: 3,
            ..Default::default()
        };
        let q = generate(&s).unwrap();
        assert_eq!(q.frames[0].data(), q.frames[2].data());
        assert_eq!(q.masks[0], q.masks[1]);
        assert!(q.disocclusion[1].is_empty());
        assert!(q.displacement[1].max_component_on(&q.masks[1]) == 0.0);
    }

    #[test]
    fn pure_shift_shifts_masks() {
        let s = Script {
            frames: 3,
            shift: [3.0, -2.0],
            ..Default::default()
        };
        let q = generate(&s).unwrap();
        let g = q.masks[0].grid();
        for y in 5..90 {
            for x in 5..90 {
                assert_eq!(q.masks[0].contains(x, y), q.masks[1].contains(x + 3, y - 2));
            }
        }
        for i in q.masks[2].indices() {
            let d = q.displacement[2].get(i);
            assert!((d[0] - 3.0).abs() < 1e-9 && (d[1] + 2.0).abs() < 1e-9);
        }
        let _ = g;
    }

    #[test]
    fn occluder_truth_is_overlap() {
        let s = Script {
            frames: 4,
            occluders: vec![Occluder {
                x0: 10.0,
                width: 12.0,
                vx: 9.0,
                intensity: 240.0,
            }],
            ..Default::default()
        };
        let q = generate(&s).unwrap();
        let g = q.masks[0].grid();
        for t in 0..4 {
            let object = q.masks[t].union(&q.occlusion[t]);
            for i in 0..g.len() {
                let cover = s.occluders[0].covers(g.center(i)[0], t);
                assert_eq!(q.occlusion[t].get(i), object.get(i) && cover);
                if cover {
                    assert_eq!(q.frames[t].get(i, 0), 240.0);
                }
            }
            assert!(q.masks[t].intersection(&q.occlusion[t]).is_empty());
            assert!(q.disocclusion[t].is_subset_of(&q.masks[t]));
        }
        assert!(!q.disocclusion[2].is_empty());
        assert!(!q.newly_occluded[2].is_empty());
    }

    #[test]
    fn inverse_undoes_forward() {
        let s = Script {
            rotation: 0.05,
            scale: 0.02,
            wiggle: [1.5, 0.15, 8.0],
            shift: [1.0, 0.5],
            frames: 10,
            ..Default::default()
        };
        for t in 0..10 {
            for p in [[10.0, 20.0], [48.0, 48.0], [70.5, 33.25]] {
                let q = s.inverse(s.forward(p, t), t);
                assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn seeded_and_text_round_trip() {
        let s = Script {
            frames: 2,
            noise: 3.0,
            channels: 3,
            seed: 42,
            shape: Shape::Blob {
                cx: 40.0,
                cy: 50.0,
                r: 20.0,
                lobes: 3,
                amplitude: 0.2,
            },
            occluders: vec![Occluder {
                x0: 1.0,
                width: 2.5,
                vx: -1.0,
                intensity: 9.0,
            }],
            ..Default::default()
        };
        assert_eq!(Script::parse(&s.to_text()).unwrap(), s);
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a.frames[1].data(), b.frames[1].data());
        assert!(a.frames[1].data().iter().all(|v| (0.0..=255.0).contains(v)));
    }

    #[test]
    fn invalid_scripts_are_rejected() {
        assert!(matches!(Script::parse("width = x"), Err(Error::InvalidScript(_))));
        assert!(Script::parse("colour = red").is_err());
        assert!(Script::parse("channels = 2").is_err());
        assert!(Script::parse("shape = star 1 2 3").is_err());
        assert!(Script::parse("wiggle = 5 0.5 10").is_err());
        let s = Script::parse("# comment\nwidth = 50 # trailing\n\nshift = 1 2\n").unwrap();
        assert_eq!((s.width, s.shift), (50, [1.0, 2.0]));
    }
}
