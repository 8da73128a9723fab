use hopose::attention::{hand_loss, heatmap_loss, masked_total_loss, object_loss, softmax_rows, FeatureMap};
use hopose::filter::{filter_sequence, shape_check, FilterConfig};
use hopose::geometry::{iou, project_weak, Box2, Rotation3, WeakPerspectiveCamera};
use hopose::hand::{forward, normalized_bone_lengths, HandParams, HandTemplate, BETA_LEN, THETA_LEN, WRIST};
use hopose::metrics::{aligned_error, f_score, pck_auc, AUC_MAX_MM, AUC_STEPS};
use hopose::object::conf_target;
use hopose::synth::{generate_synthetic, NoiseConfig, SynthConfig};
use hopose::{Vec2, Vec3};
use nalgebra::{DMatrix, Matrix3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn boxes() -> impl Strategy<Value = Box2> {
    (-50.0..50.0, -50.0..50.0, 0.0..40.0, 0.0..40.0)
        .prop_map(|(x, y, w, h): (f64, f64, f64, f64)| Box2::new(Vec2::new(x, y), Vec2::new(x + w, y + h)).unwrap())
}

fn params() -> impl Strategy<Value = HandParams> {
    (prop::collection::vec(-0.8..0.8f64, THETA_LEN), prop::collection::vec(-2.0..2.0f64, BETA_LEN))
        .prop_map(|(t, b)| HandParams::from_slices(&t, &b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iou_symmetric_and_bounded(a in boxes(), b in boxes()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn rotations_are_orthonormal(v in vec3(6.0)) {
        let m = *Rotation3::from_axis_angle(&v).matrix();
        prop_assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-9);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn weak_projection_equivariant(s in 0.1..5.0f64, p in vec3(100.0), d in vec3(100.0)) {
        let cam = WeakPerspectiveCamera::new(s, Vec2::new(3.0, 4.0)).unwrap();
        let a = project_weak(&cam, &[p + d])[0];
        let b = project_weak(&cam, &[p])[0] + s * d.xy();
        prop_assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-300.0..300.0f64, 24)) {
        let m = softmax_rows(&DMatrix::from_vec(4, 6, vals));
        for row in m.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn conf_target_in_unit_interval(x in -50.0..50.0f64, y in -50.0..50.0f64) {
        let c = conf_target(&Vec2::new(x, y));
        prop_assert!(c > 0.0 && c <= 1.0);
        prop_assert_eq!(c == 1.0, x == 0.0 && y == 0.0);
    }

    #[test]
    fn losses_non_negative(a in 0.0..1e3f64, b in 0.0..1e3f64, flag: bool, vals in prop::collection::vec(-1.0..1.0f64, 18)) {
        prop_assert!(hand_loss(a, b) >= 0.0);
        prop_assert!(object_loss(a, b) >= 0.0);
        prop_assert!(masked_total_loss(a, b, flag) >= 0.0);
        let p = FeatureMap::new(3, 3, 2, vals.clone()).unwrap();
        let g = FeatureMap::new(3, 3, 2, vals.iter().map(|v| v * 0.5).collect()).unwrap();
        let l = heatmap_loss(&p, &g).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, vals.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_rigid_equivariance(p in params(), g in vec3(1.5)) {
        let t = HandTemplate::embedded();
        let mut q = p.clone();
        q.set_joint_rotation(0, &Vec3::zeros());
        let base = forward(&t, &q);
        q.set_joint_rotation(0, &g);
        let rotated = forward(&t, &q);
        let r = Rotation3::from_axis_angle(&g);
        let root = base.joints3d[WRIST];
        for (a, b) in rotated.joints3d.iter().zip(&base.joints3d) {
            prop_assert!((a - (r.rotate(&(b - root)) + root)).norm() < 1e-9);
        }
    }

    #[test]
    fn normalized_bones_similarity_invariant(p in params(), g in vec3(3.0), s in 0.1..10.0f64, d in vec3(500.0)) {
        let j = forward(&HandTemplate::embedded(), &p).joints3d;
        let r = Rotation3::from_axis_angle(&g);
        let moved: Vec<Vec3> = j.iter().map(|x| s * r.rotate(x) + d).collect();
        for (a, b) in normalized_bone_lengths(&j).unwrap().iter().zip(normalized_bone_lengths(&moved).unwrap()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn aligned_error_similarity_invariant(pts in prop::collection::vec(vec3(50.0), 10..30), g in vec3(3.0), s in 0.2..5.0f64, d in vec3(100.0), noise in prop::collection::vec(vec3(5.0), 30)) {
        let gt: Vec<Vec3> = pts.clone();
        let pred: Vec<Vec3> = pts.iter().zip(&noise).map(|(p, n)| p + n).collect();
        let r = Rotation3::from_axis_angle(&g);
        let moved: Vec<Vec3> = pred.iter().map(|x| s * r.rotate(x) + d).collect();
        prop_assert!((aligned_error(&pred, &gt).unwrap() - aligned_error(&moved, &gt).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn f_score_monotone_in_threshold(pts in prop::collection::vec(vec3(50.0), 10..20), noise in prop::collection::vec(vec3(10.0), 20), t1 in 0.0..20.0f64, dt in 0.0..20.0f64) {
        let pred: Vec<Vec3> = pts.iter().zip(&noise).map(|(p, n)| p + n).collect();
        prop_assert!(f_score(&pred, &pts, t1).unwrap() <= f_score(&pred, &pts, t1 + dt).unwrap());
    }

    #[test]
    fn pck_auc_drops_when_errors_grow(errs in prop::collection::vec(0.0..80.0f64, 1..100), c in 0.0..20.0f64) {
        let a = pck_auc(&errs, AUC_MAX_MM, AUC_STEPS).unwrap();
        let shifted: Vec<f64> = errs.iter().map(|e| e + c).collect();
        let b = pck_auc(&shifted, AUC_MAX_MM, AUC_STEPS).unwrap();
        prop_assert!(b <= a);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn shape_check_keeps_identical_shapes(beta in prop::collection::vec(-3.0..3.0f64, BETA_LEN), n in 1usize..30) {
        let b: [f64; BETA_LEN] = beta.try_into().unwrap();
        prop_assert!(shape_check(&vec![b; n], &FilterConfig::default()).iter().all(|k| *k));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn loosening_a_threshold_never_shrinks_acceptance(seed in 0u64..10_000, which in 0usize..7, factor in 1.0..3.0f64) {
        let t = HandTemplate::embedded();
        let cfg = SynthConfig { seed, n_frames: 60, noise: NoiseConfig::uniform(0.2), ..Default::default() };
        let s = generate_synthetic(&cfg, &t, 0).unwrap();
        let base = FilterConfig::default();
        let mut loose = base.clone();
        match which {
            0 => loose.iou_min /= factor,
            1 => loose.t_p *= factor,
            2 => loose.bone_min /= factor,
            3 => loose.angle_range.1 *= factor,
            4 => loose.t_j *= factor,
            5 => loose.t_theta *= factor,
            _ => loose.shape_sigma_mult *= factor,
        }
        let count = |c: &FilterConfig| filter_sequence(&s.sequence, &t, c).unwrap().iter().filter(|d| d.accepted).count();
        prop_assert!(count(&loose) >= count(&base));
    }
}
