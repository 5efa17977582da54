use sobolev_track::eval::{f_measure, pr_sweep, SweepParam, SweepTruth};
use sobolev_track::synth::{generate, Occluder, Script, Shape};
use sobolev_track::tracker::{run, TrackerConfig};

fn stripe_scene(frames: usize) -> Script {
    Script {
        width: 130,
        height: 100,
        frames,
        seed: 9,
        noise: 1.5,
        shape: Shape::Blob {
            cx: 62.0,
            cy: 50.0,
            r: 32.0,
            lobes: 3,
            amplitude: 0.1,
        },
        shift: [1.0, 0.5],
        occluders: vec![Occluder {
            x0: 36.0,
            width: 10.0,
            vx: 9.0,
            intensity: 0.0,
        }],
        ..Script::default()
    }
}

#[test]
fn tracks_through_a_passing_stripe() {
    let script = stripe_scene(5);
    let seq = generate(&script).unwrap();
    let cfg = TrackerConfig::default();
    let states = run(&seq.frames, &seq.masks[0], &cfg, &mut |_, _| Ok(())).unwrap();
    assert_eq!(states.len(), 5);
    let mut reappeared = 0;
    for t in 1..5 {
        let s = &states[t];
        let m = f_measure(&s.region, &seq.masks[t]);
        assert!(m.f >= 0.93, "frame {t}: F {:.3}", m.f);
        let hidden = s.region.intersection(&seq.occlusion[t]).count();
        assert!(hidden * 20 <= seq.occlusion[t].count().max(20), "frame {t}: {hidden} hidden pixels kept");
        assert_eq!(s.radiance.domain(), s.region);
        reappeared += seq.disocclusion[t].intersection(&s.region).count();
    }
    let total: usize = (1..5).map(|t| seq.disocclusion[t].count()).sum();
    assert!(total > 0);
    assert!(reappeared as f64 >= 0.8 * total as f64, "{reappeared} of {total}");
}

#[test]
fn likelihood_threshold_extremes() {
    let seq = generate(&stripe_scene(2)).unwrap();
    let truth = SweepTruth {
        region: seq.masks[1].clone(),
        occlusion: seq.newly_occluded[1].clone(),
        disocclusion: seq.disocclusion[1].clone(),
    };
    assert!(!truth.disocclusion.is_empty());
    let cfg = TrackerConfig::default();
    let s = pr_sweep(&seq.frames[0], &seq.masks[0], &seq.frames[1], &truth, &cfg, SweepParam::BetaD, 5).unwrap();
    assert_eq!(s.len(), 5);
    assert!(s.windows(2).all(|w| w[0].threshold < w[1].threshold));
    // lowest threshold takes the whole band
    assert_eq!(s[0].stage.recall, 1.0);
    // highest leaves nothing, and an empty prediction has precision 0
    let last = s.last().unwrap();
    assert_eq!((last.stage.precision, last.stage.recall), (0.0, 0.0));
    assert!(s.windows(2).all(|w| w[1].region.recall <= w[0].region.recall + 1e-12));
}

#[test]
fn occlusion_threshold_extremes() {
    let seq = generate(&stripe_scene(2)).unwrap();
    let truth = SweepTruth {
        region: seq.masks[1].clone(),
        occlusion: seq.newly_occluded[1].clone(),
        disocclusion: seq.disocclusion[1].clone(),
    };
    let cfg = TrackerConfig::default();
    let s = pr_sweep(&seq.frames[0], &seq.masks[0], &seq.frames[1], &truth, &cfg, SweepParam::BetaO, 5).unwrap();
    assert!(s.windows(2).all(|w| w[1].stage.recall <= w[0].stage.recall));
    assert!(s[0].stage.recall > 0.0);
    // nothing exceeds the maximum: the whole warped region is kept
    let last = s.last().unwrap();
    assert_eq!((last.stage.precision, last.stage.recall), (0.0, 0.0));
    assert!(last.region.recall > 0.95, "{last:?}");
}
