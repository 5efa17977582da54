//! Run configuration: line-based `key = value` text with `#` comments.
//!
//! Every tracking parameter has a command-line flag of the same name
//! (underscores become dashes). Values given on the command line override
//! those read from `--config`.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use sobolev_track::descent::{DescentConfig, FillRule, Penalty};
use sobolev_track::disocclusion::{DisocclusionParams, WindowShape};
use sobolev_track::occlusion::OcclusionParams;
use sobolev_track::sobolev::SolverOptions;
use sobolev_track::tracker::TrackerConfig;

use crate::error::CliError;

/// Tunable parameters, in file order, with their help text.
pub const PARAMS: &[(&str, &str)] = &[
    ("k_a", "radiance filter gain in [0, 1]"),
    ("sigma", "smoothing of the occlusion residual and the dis-occlusion likelihood (px)"),
    ("sigma_d", "decay of the dis-occlusion prior with distance from the region (px)"),
    ("eps", "width of the band searched for dis-occlusions (px)"),
    ("radius", "radius of the appearance sample window (px); auto means 3·eps"),
    ("window", "sample window shape: disk or square"),
    ("beta_d", "dis-occlusion likelihood threshold"),
    ("beta_o_factor", "occlusion threshold position between smoothed residual min and max"),
    ("min_gap", "smallest per-channel intensity gap that can mark a pixel occluded"),
    ("bandwidth", "Parzen kernel bandwidth (intensity levels)"),
    ("penalty", "residual penalty: quadratic or robust"),
    ("robust_eps", "smoothing constant of the robust penalty sqrt(r² + eps)"),
    ("cfl", "fraction of a pixel the region may move per step, in (0, 1]"),
    ("translation_tol", "translation phase stops below this speed or displacement (px)"),
    ("energy_rel_tol", "relative energy decrease below which the descent has converged"),
    ("stall_window", "deformation steps over which the energy decrease is measured"),
    ("max_iters", "cap on accepted descent steps per pass"),
    ("reinit_every", "accepted steps between level-set reinitialisations"),
    ("max_halvings", "step halvings tried before a step is rejected"),
    ("gradient_sigma", "presmoothing of the image before differentiation (px)"),
    ("fill", "values for pixels entering the region: extrapolate or average"),
    ("solver_tol", "relative residual of the Poisson solver"),
    ("solver_max_iter", "Poisson solver iteration cap; auto means 10·sqrt(n) + 500"),
];

/// Keys naming inputs and outputs rather than parameters.
pub const PATHS: &[(&str, &str)] = &[
    ("frames", "frame directory or numbered pattern such as seq/%04d.png"),
    ("mask", "initial mask for the first frame"),
    ("output", "output directory"),
    ("gt", "ground-truth mask directory or pattern (optional)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub frames: Option<String>,
    pub mask: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub gt: Option<String>,
    pub k_a: f64,
    pub sigma: f64,
    pub sigma_d: f64,
    pub eps: f64,
    pub radius: Option<f64>,
    pub window: WindowShape,
    pub beta_d: f64,
    pub beta_o_factor: f64,
    pub min_gap: f64,
    pub bandwidth: f64,
    pub robust: bool,
    pub robust_eps: f64,
    pub cfl: f64,
    pub translation_tol: f64,
    pub energy_rel_tol: f64,
    pub stall_window: usize,
    pub max_iters: usize,
    pub reinit_every: usize,
    pub max_halvings: usize,
    pub gradient_sigma: f64,
    pub fill: FillRule,
    pub solver_tol: f64,
    pub solver_max_iter: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DescentConfig::default();
        let o = OcclusionParams::default();
        let p = DisocclusionParams::default();
        Self {
            frames: None,
            mask: None,
            output: None,
            gt: None,
            k_a: TrackerConfig::default().k_a,
            sigma: p.sigma,
            sigma_d: p.sigma_d,
            eps: p.eps,
            radius: p.radius,
            window: p.window,
            beta_d: p.beta_d,
            beta_o_factor: o.factor,
            min_gap: o.min_gap,
            bandwidth: p.bandwidth,
            robust: false,
            robust_eps: 1.0,
            cfl: d.cfl_factor,
            translation_tol: d.translation_tol,
            energy_rel_tol: d.energy_rel_tol,
            stall_window: d.stall_window,
            max_iters: d.max_iters,
            reinit_every: d.reinit_every,
            max_halvings: d.max_halvings,
            gradient_sigma: d.gradient_sigma,
            fill: d.fill,
            solver_tol: d.solver.tol,
            solver_max_iter: d.solver.max_iter,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("{key}: cannot parse {v:?}")))
}

fn auto<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>, CliError> {
    if v == "auto" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn show<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let v = v.trim();
        match key {
            "frames" => self.frames = Some(v.to_string()),
            "mask" => self.mask = Some(v.into()),
            "output" => self.output = Some(v.into()),
            "gt" => self.gt = Some(v.to_string()),
            "k_a" => self.k_a = num(key, v)?,
            "sigma" => self.sigma = num(key, v)?,
            "sigma_d" => self.sigma_d = num(key, v)?,
            "eps" => self.eps = num(key, v)?,
            "radius" => self.radius = auto(key, v)?,
            "window" => {
                self.window = match v {
                    "disk" => WindowShape::Disk,
                    "square" => WindowShape::Square,
                    _ => return Err(CliError::Usage(format!("window: expected disk or square, got {v:?}"))),
                }
            }
            "beta_d" => self.beta_d = num(key, v)?,
            "beta_o_factor" => self.beta_o_factor = num(key, v)?,
            "min_gap" => self.min_gap = num(key, v)?,
            "bandwidth" => self.bandwidth = num(key, v)?,
            "penalty" => {
                self.robust = match v {
                    "quadratic" => false,
                    "robust" => true,
                    _ => return Err(CliError::Usage(format!("penalty: expected quadratic or robust, got {v:?}"))),
                }
            }
            "robust_eps" => self.robust_eps = num(key, v)?,
            "cfl" => self.cfl = num(key, v)?,
            "translation_tol" => self.translation_tol = num(key, v)?,
            "energy_rel_tol" => self.energy_rel_tol = num(key, v)?,
            "stall_window" => self.stall_window = num(key, v)?,
            "max_iters" => self.max_iters = num(key, v)?,
            "reinit_every" => self.reinit_every = num(key, v)?,
            "max_halvings" => self.max_halvings = num(key, v)?,
            "gradient_sigma" => self.gradient_sigma = num(key, v)?,
            "fill" => {
                self.fill = match v {
                    "extrapolate" => FillRule::Extrapolate,
                    "average" => FillRule::Average,
                    _ => return Err(CliError::Usage(format!("fill: expected extrapolate or average, got {v:?}"))),
                }
            }
            "solver_tol" => self.solver_tol = num(key, v)?,
            "solver_max_iter" => self.solver_max_iter = auto(key, v)?,
            _ => return Err(CliError::Usage(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Serialised value of a parameter key.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "frames" => self.frames.clone()?,
            "mask" => self.mask.as_ref()?.display().to_string(),
            "output" => self.output.as_ref()?.display().to_string(),
            "gt" => self.gt.clone()?,
            "k_a" => self.k_a.to_string(),
            "sigma" => self.sigma.to_string(),
            "sigma_d" => self.sigma_d.to_string(),
            "eps" => self.eps.to_string(),
            "radius" => show(&self.radius),
            "window" => match self.window {
                WindowShape::Disk => "disk".into(),
                WindowShape::Square => "square".into(),
            },
            "beta_d" => self.beta_d.to_string(),
            "beta_o_factor" => self.beta_o_factor.to_string(),
            "min_gap" => self.min_gap.to_string(),
            "bandwidth" => self.bandwidth.to_string(),
            "penalty" => if self.robust { "robust" } else { "quadratic" }.into(),
            "robust_eps" => self.robust_eps.to_string(),
            "cfl" => self.cfl.to_string(),
            "translation_tol" => self.translation_tol.to_string(),
            "energy_rel_tol" => self.energy_rel_tol.to_string(),
            "stall_window" => self.stall_window.to_string(),
            "max_iters" => self.max_iters.to_string(),
            "reinit_every" => self.reinit_every.to_string(),
            "max_halvings" => self.max_halvings.to_string(),
            "gradient_sigma" => self.gradient_sigma.to_string(),
            "fill" => match self.fill {
                FillRule::Extrapolate => "extrapolate".into(),
                FillRule::Average => "average".into(),
            },
            "solver_tol" => self.solver_tol.to_string(),
            "solver_max_iter" => show(&self.solver_max_iter),
            _ => return None,
        };
        Some(s)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| CliError::Usage(format!("config line {}: {}", n + 1, e.message())))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut t = String::new();
        for (k, _) in PATHS.iter().chain(PARAMS) {
            if let Some(v) = self.get(k) {
                let _ = writeln!(t, "{k} = {v}");
            }
        }
        t
    }

    pub fn tracker_config(&self) -> Result<TrackerConfig, CliError> {
        let cfg = TrackerConfig {
            k_a: self.k_a,
            descent: DescentConfig {
                cfl_factor: self.cfl,
                translation_tol: self.translation_tol,
                energy_rel_tol: self.energy_rel_tol,
                stall_window: self.stall_window,
                max_iters: self.max_iters,
                reinit_every: self.reinit_every,
                penalty: if self.robust {
                    Penalty::Robust { eps: self.robust_eps }
                } else {
                    Penalty::Quadratic
                },
                max_halvings: self.max_halvings,
                gradient_sigma: self.gradient_sigma,
                fill: self.fill,
                solver: SolverOptions {
                    tol: self.solver_tol,
                    max_iter: self.solver_max_iter,
                },
            },
            occlusion: OcclusionParams {
                factor: self.beta_o_factor,
                sigma: self.sigma,
                min_gap: self.min_gap,
            },
            disocclusion: DisocclusionParams {
                eps: self.eps,
                radius: self.radius,
                sigma_d: self.sigma_d,
                beta_d: self.beta_d,
                sigma: self.sigma,
                bandwidth: self.bandwidth,
                window: self.window,
            },
        };
        if !(self.solver_tol > 0.0) || self.robust_eps <= 0.0 {
            return Err(CliError::Usage("solver_tol and robust_eps must be positive".into()));
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// `--config` plus one flag per parameter.
#[derive(Debug, Clone, Default)]
pub struct ParamArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
}

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

impl ParamArgs {
    /// File values, then flag values, over the defaults.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

impl FromArgMatches for ParamArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = Self {
            config: m.get_one::<PathBuf>("config").cloned(),
            overrides: Vec::new(),
        };
        for (k, _) in PARAMS {
            if let Some(v) = m.get_one::<String>(k) {
                out.overrides.push((k.to_string(), v.clone()));
            }
        }
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ParamArgs {
    fn augment_args(cmd: Command) -> Command {
        let d = RunConfig::default();
        let mut cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value configuration file; flags override it")
                .help_heading("Parameters"),
        );
        for (k, help) in PARAMS {
            let default = d.get(k).expect("every parameter has a value");
            cmd = cmd.arg(
                Arg::new(*k)
                    .long(flag(k))
                    .value_name("V")
                    .help(format!("{help} [default: {default}]"))
                    .help_heading("Parameters"),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_published_values() {
        let c = RunConfig::default();
        assert_eq!((c.sigma, c.sigma_d, c.eps, c.beta_d, c.k_a, c.beta_o_factor), (5.0, 100.0, 30.0, 0.5, 0.8, 0.3));
        assert_eq!(c.radius, None);
        let t = c.tracker_config().unwrap();
        assert_eq!(t.disocclusion.window_radius(), 90.0);
        assert_eq!(t, TrackerConfig::default());
    }

    #[test]
    fn round_trip() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.to_text()).unwrap(), d);
        let mut c = d.clone();
        for (k, v) in [
            ("frames", "in/%03d.png"),
            ("mask", "m.png"),
            ("gt", "truth"),
            ("k_a", "0.65"),
            ("radius", "41.5"),
            ("window", "square"),
            ("penalty", "robust"),
            ("robust_eps", "0.1"),
            ("translation_tol", "0.000123"),
            ("fill", "average"),
            ("solver_max_iter", "77"),
            ("beta_d", "0.30000000000000004"),
        ] {
            c.set(k, v).unwrap();
        }
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.beta_d, 0.1 + 0.2);
    }

    #[test]
    fn comments_and_errors() {
        let c = RunConfig::parse("# header\n\nbeta_d = 0.25   # lower\n eps=12\n").unwrap();
        assert_eq!((c.beta_d, c.eps), (0.25, 12.0));
        assert!(RunConfig::parse("nonsense").is_err());
        assert!(RunConfig::parse("beta_q = 1").is_err());
        assert!(RunConfig::parse("eps = wide").is_err());
        let bad = RunConfig::parse("k_a = 2").unwrap();
        assert!(bad.tracker_config().is_err());
    }

    #[test]
    fn every_key_serialises() {
        let d = RunConfig::default();
        for (k, _) in PARAMS {
            let v = d.get(k).unwrap();
            let mut c = RunConfig::default();
            c.set(k, &v).unwrap();
            assert_eq!(c, d, "{k}");
        }
    }
}
