use hopose::filter::*;
use hopose::geometry::{bbox_of_points, iou, project_weak, WeakPerspectiveCamera};
use hopose::hand::{forward, HandParams, HandTemplate, BETA_LEN, FLEXION_JOINTS, WRIST};
use hopose::synth::{generate_corpus, generate_synthetic, Corruption, NoiseConfig, SynthConfig};
use hopose::{Vec2, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cam() -> WeakPerspectiveCamera {
    WeakPerspectiveCamera::new(1.2, Vec2::new(256.0, 256.0)).unwrap()
}

fn flexed(template: &HandTemplate, degrees: f64) -> HandParams {
    let mut p = HandParams::default();
    for &j in &FLEXION_JOINTS {
        let slot = template.slot_of_joint(j).unwrap();
        p.set_joint_rotation(slot, &(template.flexion_axis(j).unwrap() * degrees.to_radians()));
    }
    p
}

/// A frame whose 2D joints and box agree exactly with its 3D prediction.
fn consistent_frame(template: &HandTemplate, params: HandParams, index: u64) -> FrameRecord {
    let out = forward(template, &params);
    let root = out.joints3d[WRIST];
    let j3d: Vec<Vec3> = out.joints3d.iter().map(|p| p - root).collect();
    let vertices: Vec<Vec3> = out.vertices.iter().map(|p| p - root).collect();
    let gt_hand_box = bbox_of_points(&project_weak(&cam(), &vertices)).unwrap();
    FrameRecord { frame_index: index, prediction: HandPrediction { j2d: project_weak(&cam(), &j3d), j3d, vertices, params }, gt_hand_box }
}

#[test]
fn constructed_frame_passes_spatial_checks() {
    let t = HandTemplate::embedded();
    let f = consistent_frame(&t, flexed(&t, 30.0), 0);
    let rep = spatial_check(&f, &t, &FilterConfig::default()).unwrap();
    assert!(rep.passed(), "{rep:?}");
    assert!((rep.iou.unwrap() - 1.0).abs() < 1e-12);
    assert!(rep.reprojection.unwrap() < 1e-12);
}

#[test]
fn shifted_box_fails_iou_only() {
    let t = HandTemplate::embedded();
    let mut f = consistent_frame(&t, flexed(&t, 30.0), 0);
    // equal-size boxes offset by a third of their width overlap at IoU 1/2
    let shift = f.gt_hand_box.width() / 3.0;
    let shifted = f.gt_hand_box.translated(Vec2::new(shift, 0.0));
    assert!((iou(&f.gt_hand_box, &shifted) - 0.5).abs() < 1e-12);
    f.gt_hand_box = shifted;
    let rep = spatial_check(&f, &t, &FilterConfig::default()).unwrap();
    assert_eq!(rep.failed, vec![Constraint::IoU]);
}

#[test]
fn overbent_finger_fails_joint_angle_only() {
    let t = HandTemplate::embedded();
    let mut p = flexed(&t, 30.0);
    let j = 10;
    p.set_joint_rotation(t.slot_of_joint(j).unwrap(), &(t.flexion_axis(j).unwrap() * 120f64.to_radians()));
    let f = consistent_frame(&t, p, 0);
    let rep = spatial_check(&f, &t, &FilterConfig::default()).unwrap();
    assert_eq!(rep.failed, vec![Constraint::JointAngle]);
    assert!((rep.angle_extent.unwrap().1 - 120.0).abs() < 1e-6);
}

#[test]
fn collapsed_joints_are_rejected_not_errors() {
    let t = HandTemplate::embedded();
    let mut f = consistent_frame(&t, flexed(&t, 30.0), 0);
    f.prediction.j3d = vec![Vec3::zeros(); 21];
    let rep = spatial_check(&f, &t, &FilterConfig::default()).unwrap();
    assert!(rep.failed.contains(&Constraint::IoU) && rep.failed.contains(&Constraint::Reprojection));
    assert!(rep.failed.contains(&Constraint::BoneLength));
}

#[test]
fn ensemble_average_examples() {
    let t = HandTemplate::embedded();
    let f = consistent_frame(&t, flexed(&t, 30.0), 0);
    let p = f.prediction.clone();
    let avg = ensemble_average(&vec![p.clone(); 8]).unwrap();
    assert!(avg.j3d.iter().zip(&p.j3d).all(|(a, b)| (a - b).norm() < 1e-12));
    assert!(avg.params.theta.iter().zip(&p.params.theta).all(|(a, b)| (a - b).abs() < 1e-15));

    let (mut a, mut b) = (p.clone(), p.clone());
    a.params.theta[0] += 1e-3;
    b.params.theta[0] -= 1e-3;
    assert!((ensemble_average(&[a, b]).unwrap().params.theta[0] - p.params.theta[0]).abs() < 1e-15);
    assert!(matches!(ensemble_average(&[]), Err(hopose::Error::EmptyEnsemble)));

    let mut r = ChaCha8Rng::seed_from_u64(61);
    let preds: Vec<HandPrediction> = (0..8)
        .map(|_| {
            let mut q = p.clone();
            q.j2d.iter_mut().for_each(|v| *v += Vec2::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)));
            q.params.beta.iter_mut().for_each(|v| *v += r.random_range(-1.0..1.0));
            q
        })
        .collect();
    let avg = ensemble_average(&preds).unwrap();
    for j in 0..21 {
        let mut m = Vec2::zeros();
        for q in &preds {
            m += q.j2d[j];
        }
        assert!((avg.j2d[j] - m / 8.0).norm() < 1e-12);
    }
    for k in 0..BETA_LEN {
        let m: f64 = preds.iter().map(|q| q.params.beta[k]).sum::<f64>() / 8.0;
        assert!((avg.params.beta[k] - m).abs() < 1e-12);
    }
}

#[test]
fn constant_sequence_is_smooth() {
    let t = HandTemplate::embedded();
    let frames: Vec<FrameRecord> = (0..10).map(|i| consistent_frame(&t, flexed(&t, 30.0), i)).collect();
    let flags = temporal_check(&frames, &[true; 10], &FilterConfig::default()).unwrap();
    assert!(flags.iter().all(TemporalFlags::passed));
}

#[test]
fn theta_jump_fails_smoothness_theta() {
    let t = HandTemplate::embedded();
    let mut frames: Vec<FrameRecord> = (0..10).map(|i| consistent_frame(&t, flexed(&t, 30.0), i)).collect();
    let mut p = frames[5].prediction.params.clone();
    p.theta[20] += 0.02;
    frames[5] = consistent_frame(&t, p, 5);
    let seq = SequenceRecord::new("jump", frames).unwrap();
    let dec = filter_sequence(&seq, &t, &FilterConfig::default()).unwrap();
    for d in &dec {
        if d.frame_index == 5 {
            assert!(d.failed_constraints.contains(&Constraint::SmoothnessTheta));
        } else {
            assert!(d.accepted, "{d:?}");
        }
    }
}

/// Window rule, evaluated by comparing every pair of frames.
fn brute_force_temporal(frames: &[FrameRecord], pass: &[bool], cfg: &FilterConfig) -> Vec<bool> {
    (0..frames.len())
        .map(|k| {
            let near: Vec<usize> =
                (0..frames.len()).filter(|&r| r != k && frames[k].frame_index.abs_diff(frames[r].frame_index) <= TEMPORAL_WINDOW).collect();
            near.is_empty()
                || near.iter().filter(|&&r| pass[r]).any(|&r| {
                    let (d2, dt) = frame_distances(&frames[k].prediction, &frames[r].prediction).unwrap();
                    d2 <= cfg.t_j && dt <= cfg.t_theta
                })
        })
        .collect()
}

#[test]
fn temporal_flags_match_brute_force() {
    let t = HandTemplate::embedded();
    let mut r = ChaCha8Rng::seed_from_u64(62);
    let mut noise = NoiseConfig::default();
    noise.mode_mut(Corruption::ThetaJump).rate = 0.15;
    noise.mode_mut(Corruption::Jitter2d).rate = 0.1;
    let cfg = FilterConfig::default();
    for s in 0..10 {
        let synth = generate_synthetic(&SynthConfig { seed: 100 + s, n_frames: 60, noise, ..Default::default() }, &t, 0).unwrap();
        // drop some frames so that indices have gaps
        let frames: Vec<FrameRecord> = synth.sequence.into_frames().into_iter().filter(|_| r.random::<f64>() > 0.2).collect();
        let pass: Vec<bool> = frames.iter().map(|_| r.random::<f64>() > 0.3).collect();
        let flags = temporal_check(&frames, &pass, &cfg).unwrap();
        let oracle = brute_force_temporal(&frames, &pass, &cfg);
        for (f, o) in flags.iter().zip(&oracle) {
            assert_eq!(f.passed(), *o);
        }
    }
}

#[test]
fn shape_check_examples() {
    let cfg = FilterConfig::default();
    assert!(shape_check(&[[0.3; BETA_LEN]; 12], &cfg).iter().all(|k| *k));
    assert_eq!(shape_check(&[[1.0; BETA_LEN]], &cfg), vec![true]);

    let mut r = ChaCha8Rng::seed_from_u64(63);
    let mut betas: Vec<[f64; BETA_LEN]> = (0..20).map(|_| std::array::from_fn(|_| 0.5 + r.random_range(-0.01..0.01))).collect();
    let n = betas.len() as f64;
    let mean: Vec<f64> = (0..BETA_LEN).map(|k| betas.iter().map(|b| b[k]).sum::<f64>() / n).collect();
    let sigma = (betas.iter().map(|b| b.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>()).sum::<f64>() / n).sqrt();
    let mut outlier = [0.0; BETA_LEN];
    for k in 0..BETA_LEN {
        outlier[k] = mean[k];
    }
    outlier[3] += 5.0 * sigma;
    betas.insert(7, outlier);
    let keep = shape_check(&betas, &cfg);
    assert_eq!(keep.iter().filter(|k| !**k).count(), 1);
    assert!(!keep[7]);
}

#[test]
fn clean_sequences_are_fully_accepted() {
    let t = HandTemplate::embedded();
    for s in generate_corpus(&SynthConfig { seed: 64, ..Default::default() }, &t, 5).unwrap() {
        let dec = filter_sequence(&s.sequence, &t, &FilterConfig::default()).unwrap();
        assert!(dec.iter().all(|d| d.accepted));
    }
}

#[test]
fn no_spatial_pass_rejects_everything() {
    let t = HandTemplate::embedded();
    let s = generate_synthetic(&SynthConfig { seed: 65, n_frames: 20, ..Default::default() }, &t, 0).unwrap();
    let cfg = FilterConfig { iou_min: 1.0 + 1e-6, ..Default::default() };
    let dec = filter_sequence(&s.sequence, &t, &cfg).unwrap();
    assert!(dec.iter().all(|d| !d.accepted && d.failed_constraints.contains(&Constraint::IoU)));
    assert!(dec.iter().all(|d| !d.failed_constraints.contains(&Constraint::ShapeDeviation)));
}

#[test]
fn decisions_are_deterministic_and_attributed() {
    let t = HandTemplate::embedded();
    let corpus = generate_corpus(&SynthConfig { seed: 66, noise: NoiseConfig::uniform(0.3), ..Default::default() }, &t, 4).unwrap();
    let seqs: Vec<SequenceRecord> = corpus.iter().map(|s| s.sequence.clone()).collect();
    let a = filter_corpus(&seqs, &t, &FilterConfig::default()).unwrap();
    let b: Vec<Vec<FilterDecision>> = seqs.iter().map(|s| filter_sequence(s, &t, &FilterConfig::default()).unwrap()).collect();
    assert_eq!(a, b);
    for d in a.iter().flatten() {
        assert_eq!(d.accepted, d.failed_constraints.is_empty());
    }
}

#[test]
fn spatial_stage_runs_before_temporal() {
    // a frame that only fails IoU is not a smoothness reference for its neighbours
    let t = HandTemplate::embedded();
    let mut frames: Vec<FrameRecord> = (0..3).map(|i| consistent_frame(&t, flexed(&t, 30.0), i)).collect();
    let mut p = frames[2].prediction.params.clone();
    p.theta[20] += 0.05;
    frames[2] = consistent_frame(&t, p, 2);
    frames[1].gt_hand_box = frames[1].gt_hand_box.translated(Vec2::new(500.0, 0.0));
    let dec = filter_sequence(&SequenceRecord::new("order", frames).unwrap(), &t, &FilterConfig::default()).unwrap();
    assert_eq!(dec[1].failed_constraints, vec![Constraint::IoU]);
    assert!(dec[2].failed_constraints.contains(&Constraint::SmoothnessTheta));
}

#[test]
fn config_validation() {
    assert!(FilterConfig::default().validate().is_ok());
    assert!(FilterConfig { t_j: 0.0, ..Default::default() }.validate().is_err());
    assert!(FilterConfig { angle_range: (90.0, 10.0), ..Default::default() }.validate().is_err());
    let json = r#"{"t_p": 0.7, "unknown": 1}"#;
    assert!(serde_json::from_str::<FilterConfig>(json).is_err());
    let parsed: FilterConfig = serde_json::from_str(r#"{"t_p": 0.7}"#).unwrap();
    assert_eq!(parsed, FilterConfig { t_p: 0.7, ..Default::default() });
}

#[test]
fn isolated_and_stranded_frames() {
    let t = HandTemplate::embedded();
    let synth = generate_synthetic(&SynthConfig { seed: 65, n_frames: 12, ..Default::default() }, &t, 0).unwrap();
    let all = synth.sequence.into_frames();
    // frames 0, 1, 2 and 9: the last one has no neighbour within the window
    let frames: Vec<FrameRecord> = [0, 1, 2, 9].iter().map(|&i| all[i].clone()).collect();
    let cfg = FilterConfig::default();

    let flags = temporal_check(&frames, &[true, true, true, true], &cfg).unwrap();
    assert!(flags.iter().all(|f| f.passed()));
    assert_eq!(flags[3].anchor, None);

    // frame 0 keeps its neighbours but none of them passed the spatial stage
    let flags = temporal_check(&frames, &[true, false, false, false], &cfg).unwrap();
    assert!(!flags[0].passed() && flags[0].anchor.is_none());
    assert!(flags[3].passed());
}
