use std::fs::File;
use std::path::{Path, PathBuf};

use sobolev_track::descent::{DescentReport, TargetImage, Template};
use sobolev_track::disocclusion::{band, detect, likelihood_map};
use sobolev_track::eval::{f_measure, pr_sweep, EvalReport, SweepParam, SweepTruth};
use sobolev_track::occlusion::joint_descent;
use sobolev_track::synth::{generate, Script};
use sobolev_track::tracker::{init, step_with_diagnostics};
use sobolev_track::{viz, Grid2D, RegionMask, ScalarField, VectorField};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io;
use crate::SweepKind;

const ENERGY_HEADER: [&str; 6] = ["iter", "phase", "energy", "mean_grad_norm", "deform_grad_inf", "dt"];

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(format!("writing CSV: {e}"))
}

fn same_grid(what: &Path, a: Grid2D, b: Grid2D) -> Result<(), CliError> {
    if a == b {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{}: size {}x{} does not match the frames' {}x{}",
            what.display(),
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )))
    }
}

fn required<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

/// Appends trace rows with a running iteration count; returns the count
/// after the last row.
fn write_trace(w: &mut csv::Writer<File>, report: &DescentReport, mut iter: usize) -> Result<usize, CliError> {
    for r in &report.trace {
        w.write_record([
            iter.to_string(),
            r.phase.tag().to_string(),
            r.energy.to_string(),
            r.mean_grad_norm.to_string(),
            r.deform_grad_inf.to_string(),
            r.dt.to_string(),
        ])
        .map_err(csv_err)?;
        iter += 1;
    }
    Ok(iter)
}

fn save_flow(out: &Path, stem: &str, flow: &VectorField) -> Result<(), CliError> {
    io::save_rgb(&out.join(format!("{stem}.png")), &viz::render_flow(flow))?;
    io::write_bytes(&out.join(format!("{stem}.flo")), &viz::encode_flo(flow))
}

fn write_eval(w: &mut csv::Writer<impl std::io::Write>, frames: &[usize], report: &EvalReport) -> Result<(), CliError> {
    w.write_record(["frame", "precision", "recall", "f"]).map_err(csv_err)?;
    for (t, m) in frames.iter().zip(&report.frames) {
        w.write_record([t.to_string(), m.precision.to_string(), m.recall.to_string(), m.f.to_string()])
            .map_err(csv_err)?;
    }
    w.write_record([
        "mean".to_string(),
        report.mean_precision().to_string(),
        report.mean_recall().to_string(),
        report.mean_f().to_string(),
    ])
    .map_err(csv_err)?;
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

/// Full pipeline. Per-frame outputs are written as soon as each frame is
/// done, so a numerical failure leaves the frames before it on disk.
pub fn track(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = required(&cfg.frames, "--frames")?;
    let mask_path = required(&cfg.mask, "--mask (initial mask)")?;
    let out = required(&cfg.output, "--output")?;
    let tcfg = cfg.tracker_config()?;
    let mask0 = io::load_mask(mask_path)?;
    let frames = io::load_frames(spec)?;
    if frames.len() < 2 {
        return Err(CliError::Data(format!("{spec}: need at least 2 frames, found {}", frames.len())));
    }
    same_grid(mask_path, mask0.grid(), frames[0].grid())?;
    let truth = match &cfg.gt {
        Some(gt) => {
            let t = io::load_masks(gt)?;
            if t.len() < frames.len() {
                return Err(CliError::Data(format!("{gt}: {} masks for {} frames", t.len(), frames.len())));
            }
            same_grid(Path::new(gt), t[0].grid(), frames[0].grid())?;
            Some(t)
        }
        None => None,
    };
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    io::write_bytes(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    let mut energy = io::csv_writer(&out.join("energy.csv"))?;
    energy.write_record(ENERGY_HEADER).map_err(csv_err)?;
    let mut summary = io::csv_writer(&out.join("frames.csv"))?;
    summary
        .write_record([
            "frame",
            "first_iter",
            "occlusion_pass_iter",
            "end_iter",
            "beta_o",
            "region_pixels",
            "occluded_pixels",
            "disoccluded_pixels",
            "stalled",
        ])
        .map_err(csv_err)?;

    let write_state = |t: usize, region: &RegionMask, occ: &RegionMask, dis: &RegionMask| -> Result<(), CliError> {
        let name = format!("{t:04}.png");
        io::save_mask(&out.join("masks").join(&name), region)?;
        io::save_mask(&out.join("occlusion").join(&name), occ)?;
        io::save_mask(&out.join("disocclusion").join(&name), dis)?;
        let overlay = viz::render_overlay(&frames[t], region, Some(occ), Some(dis));
        io::save_rgb(&out.join("overlays").join(&name), &overlay)
    };

    let mut state = init(&frames[0], &mask0).map_err(|e| CliError::from_core(e, 0))?;
    write_state(0, &state.region, &state.last_occlusion, &state.last_disocclusion)?;
    let mut iter = 0;
    let mut report = EvalReport::default();
    let mut evaluated = Vec::new();
    for t in 1..frames.len() {
        let (next, diag) = step_with_diagnostics(&state, &frames[t], &tcfg).map_err(|e| CliError::from_core(e, t))?;
        write_state(t, &next.region, &next.last_occlusion, &next.last_disocclusion)?;
        save_flow(&out.join("flow"), &format!("{t:04}"), &diag.displacement)?;
        let first = iter;
        let mid = write_trace(&mut energy, &diag.reports[0], iter)?;
        iter = write_trace(&mut energy, &diag.reports[1], mid)?;
        energy.flush().map_err(|e| CliError::Data(e.to_string()))?;
        summary
            .write_record([
                t.to_string(),
                first.to_string(),
                mid.to_string(),
                iter.to_string(),
                diag.beta_o.to_string(),
                next.region.count().to_string(),
                next.last_occlusion.count().to_string(),
                next.last_disocclusion.count().to_string(),
                diag.stalled.to_string(),
            ])
            .map_err(csv_err)?;
        summary.flush().map_err(|e| CliError::Data(e.to_string()))?;
        let mut line = format!("frame {t}: {} px", next.region.count());
        if let Some(truth) = &truth {
            let m = f_measure(&next.region, &truth[t]);
            line.push_str(&format!(", F {:.3}", m.f));
            report.frames.push(m);
            evaluated.push(t);
        }
        if diag.stalled {
            line.push_str(" (iteration cap reached)");
        }
        println!("{line}");
        state = next;
    }
    if truth.is_some() {
        write_eval(&mut io::csv_writer(&out.join("eval.csv"))?, &evaluated, &report)?;
        println!("mean F {:.4}", report.mean_f());
    }
    Ok(())
}

fn template(first: &Path, mask: &Path) -> Result<(ScalarField, RegionMask, Template), CliError> {
    let img = io::load_image(first)?;
    let m = io::load_mask(mask)?;
    same_grid(mask, m.grid(), img.grid())?;
    let t = Template::new(m.clone(), &img.restricted(&m)).map_err(|e| CliError::from_core(e, 0))?;
    Ok((img, m, t))
}

pub fn match_pair(first: &Path, mask: &Path, second: &Path, out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let tcfg = cfg.tracker_config()?;
    let (img, _, tpl) = template(first, mask)?;
    let next = io::load_image(second)?;
    same_grid(second, next.grid(), img.grid())?;
    if next.channels() != img.channels() {
        return Err(CliError::Data(format!("{}: channel count differs from the first image", second.display())));
    }
    let target = TargetImage::new(next.clone(), tcfg.descent.gradient_sigma);
    let joint = joint_descent(&tpl, &target, &tcfg.descent, &tcfg.occlusion).map_err(|e| CliError::from_core(e, 1))?;
    let s = &joint.state;
    let covisible = s.region.difference(&s.warped_occlusion);
    io::save_mask(&out.join("warped.png"), &s.region)?;
    io::save_mask(&out.join("occlusion.png"), &s.warped_occlusion)?;
    io::save_mask(&out.join("covisible.png"), &covisible)?;
    io::save_rgb(
        &out.join("overlay.png"),
        &viz::render_overlay(&next, &s.region, Some(&s.warped_occlusion), None),
    )?;
    save_flow(out, "flow", &s.backward.displacement(&s.region))?;
    let mut energy = io::csv_writer(&out.join("energy.csv"))?;
    energy.write_record(ENERGY_HEADER).map_err(csv_err)?;
    let mid = write_trace(&mut energy, &joint.reports[0], 0)?;
    write_trace(&mut energy, &joint.reports[1], mid)?;
    energy.flush().map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "warped region {} px, occluded {} px, beta_o {}",
        s.region.count(),
        s.warped_occlusion.count(),
        joint.occlusion.beta_o
    );
    Ok(())
}

pub fn disocclude(image: &Path, region: &Path, out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let tcfg = cfg.tracker_config()?;
    let img = io::load_image(image)?;
    let r = io::load_mask(region)?;
    same_grid(region, r.grid(), img.grid())?;
    let params = &tcfg.disocclusion;
    let p = likelihood_map(&img, &r, params).map_err(|e| CliError::from_core(e, 1))?;
    let d = detect(&img, &r, params).map_err(|e| CliError::from_core(e, 1))?;
    let b = band(&r, params.eps).map_err(|e| CliError::from_core(e, 1))?;
    let mut scaled = ScalarField::undefined(img.grid(), 1);
    for i in b.indices() {
        scaled.set(i, 0, 255.0 * p.get(i, 0));
    }
    io::save_mask(&out.join("disocclusion.png"), &d)?;
    io::save_mask(&out.join("region.png"), &r.union(&d))?;
    io::save_field(&out.join("likelihood.png"), &scaled)?;
    io::save_rgb(&out.join("overlay.png"), &viz::render_overlay(&img, &r, None, Some(&d)))?;
    println!("dis-occluded {} px in a band of {} px", d.count(), b.count());
    Ok(())
}

pub fn eval(pred: &str, truth: &str, output: Option<&Path>, offset: usize) -> Result<(), CliError> {
    let p = io::load_masks(pred)?;
    let t = io::load_masks(truth)?;
    if t.len() < offset + p.len() {
        return Err(CliError::Data(format!(
            "{} predicted masks but only {} truth masks after skipping {offset}",
            p.len(),
            t.len().saturating_sub(offset)
        )));
    }
    let truth = &t[offset..offset + p.len()];
    for (k, (a, b)) in p.iter().zip(truth).enumerate() {
        if a.grid() != b.grid() {
            return Err(CliError::Data(format!("mask {k}: predicted and true sizes differ")));
        }
    }
    let report = EvalReport::from_pairs(p.iter().zip(truth));
    let frames: Vec<usize> = (offset..offset + p.len()).collect();
    match output {
        Some(path) => write_eval(&mut io::csv_writer(path)?, &frames, &report),
        None => write_eval(&mut csv::Writer::from_writer(std::io::stdout()), &frames, &report),
    }
}

pub struct SweepInputs {
    pub first: PathBuf,
    pub mask: PathBuf,
    pub second: PathBuf,
    pub truth: PathBuf,
    pub truth_occlusion: Option<PathBuf>,
    pub truth_disocclusion: Option<PathBuf>,
}

pub fn sweep(inp: &SweepInputs, kind: SweepKind, samples: usize, out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let tcfg = cfg.tracker_config()?;
    let first = io::load_image(&inp.first)?;
    let mask = io::load_mask(&inp.mask)?;
    let second = io::load_image(&inp.second)?;
    let region = io::load_mask(&inp.truth)?;
    let g = first.grid();
    for (p, m) in [(&inp.mask, mask.grid()), (&inp.second, second.grid()), (&inp.truth, region.grid())] {
        same_grid(p, m, g)?;
    }
    let optional = |p: &Option<PathBuf>| -> Result<RegionMask, CliError> {
        match p {
            Some(p) => {
                let m = io::load_mask(p)?;
                same_grid(p, m.grid(), g)?;
                Ok(m)
            }
            None => Ok(RegionMask::empty(g)),
        }
    };
    let truth = SweepTruth {
        region,
        occlusion: optional(&inp.truth_occlusion)?,
        disocclusion: optional(&inp.truth_disocclusion)?,
    };
    let param = match kind {
        SweepKind::BetaO => SweepParam::BetaO,
        SweepKind::BetaD => SweepParam::BetaD,
    };
    let rows = pr_sweep(&first, &mask, &second, &truth, &tcfg, param, samples).map_err(|e| CliError::from_core(e, 1))?;
    let mut w = io::csv_writer(out)?;
    w.write_record(["threshold", "precision", "recall", "stage_precision", "stage_recall"])
        .map_err(csv_err)?;
    for s in &rows {
        w.write_record([
            s.threshold.to_string(),
            s.region.precision.to_string(),
            s.region.recall.to_string(),
            s.stage.precision.to_string(),
            s.stage.recall.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

pub fn synth(script: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let s = match script {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Script::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => Script::default(),
    };
    let seq = generate(&s).map_err(|e| CliError::Data(e.to_string()))?;
    io::write_bytes(&out.join("script.txt"), s.to_text().as_bytes())?;
    for t in 0..seq.frames.len() {
        let name = format!("{t:04}.png");
        io::save_field(&out.join("frames").join(&name), &seq.frames[t])?;
        io::save_mask(&out.join("masks").join(&name), &seq.masks[t])?;
        io::save_mask(&out.join("occlusion").join(&name), &seq.occlusion[t])?;
        io::save_mask(&out.join("disocclusion").join(&name), &seq.disocclusion[t])?;
        io::save_mask(&out.join("newly_occluded").join(&name), &seq.newly_occluded[t])?;
        if t > 0 {
            io::write_bytes(
                &out.join("flow").join(format!("{t:04}.flo")),
                &viz::encode_flo(&seq.displacement[t]),
            )?;
        }
    }
    println!("{} frames written to {}", seq.frames.len(), out.display());
    Ok(())
}

pub fn flowviz(input: &Path, output: &Path) -> Result<(), CliError> {
    let flow = viz::decode_flo(&io::read_bytes(input)?).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    io::save_rgb(output, &viz::render_flow(&flow))
}
