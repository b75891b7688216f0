use iepg_core::pose::{
    gen_dataset, kp, project_at_yaw, render_heatmaps, render_image, render_semantics,
    skeleton_at_yaw, DatasetConfig, Person, PoseSkeleton, BACKGROUND, K,
};
use iepg_core::Error;
use proptest::prelude::*;

fn person() -> Person {
    Person::random(0, 17)
}

#[test]
fn frontal_shoulders_symmetric_about_torso_centre() {
    let s = skeleton_at_yaw(&person(), 0.0);
    let centre = s.points[kp::NECK][0];
    let r = s.points[kp::R_SHOULDER][0];
    let l = s.points[kp::L_SHOULDER][0];
    assert!(((centre - r) - (l - centre)).abs() < 1e-12);
    assert!(s.visible[kp::R_SHOULDER] && s.visible[kp::L_SHOULDER]);
}

#[test]
fn profile_collapses_shoulders() {
    let p = project_at_yaw(&person(), 90.0);
    assert!((p[kp::R_SHOULDER][0] - p[kp::L_SHOULDER][0]).abs() < 0.01);
}

#[test]
fn half_turn_is_mirror_with_sides_swapped() {
    // Rotating by 180° about the vertical axis negates the lateral offset of
    // every joint; for a left/right symmetric figure that is the frontal view
    // with side labels exchanged.
    let p = person();
    let front = project_at_yaw(&p, 0.0);
    let back = project_at_yaw(&p, 180.0);
    for k in 0..K {
        let m = iepg_core::pose::mirror_index(k);
        assert!((back[k][0] - (1.0 - front[k][0])).abs() < 1e-9);
        assert!((back[k][0] - front[m][0]).abs() < 1e-9);
        assert!((back[k][1] - front[m][1]).abs() < 1e-9);
    }
}

#[test]
fn turning_hides_far_side_and_face() {
    let p = person();
    let s = skeleton_at_yaw(&p, 90.0);
    assert!(!s.visible[kp::R_SHOULDER]);
    assert!(!skeleton_at_yaw(&p, 180.0).visible[kp::NOSE]);
    assert!(skeleton_at_yaw(&p, 0.0).visible.iter().all(|&v| v));
}

fn mean_displacement(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum::<f64>()
        / a.len() as f64
}

#[test]
fn neighbouring_yaws_move_less_than_wider_gaps() {
    for seed in 0..28 {
        let p = Person::random(seed as usize, seed);
        for y in (0..24).map(|i| i as f64 * 15.0) {
            let base = project_at_yaw(&p, y);
            let d15 = mean_displacement(&base, &project_at_yaw(&p, y + 15.0));
            let d30 = mean_displacement(&base, &project_at_yaw(&p, y + 30.0));
            assert!(d15 <= d30, "person {seed} yaw {y}: {d15} > {d30}");
        }
    }
}

proptest! {
    #[test]
    fn opposite_yaws_are_mirror_images(seed in 0u64..200, step in 0usize..24, frac in 0.0f64..1.0) {
        let p = Person::random(0, seed);
        let yaw = (step as f64 + frac) * 15.0;
        prop_assume!(yaw > 0.0 && yaw < 360.0);
        let a = skeleton_at_yaw(&p, 360.0 - yaw);
        let b = skeleton_at_yaw(&p, yaw).mirrored();
        prop_assert_eq!(&a.visible, &b.visible);
        for k in 0..K {
            prop_assert!((a.points[k][0] - b.points[k][0]).abs() < 1e-9);
            prop_assert!((a.points[k][1] - b.points[k][1]).abs() < 1e-9);
        }
    }
}

#[test]
fn invisible_skeleton_renders_background() {
    let s = PoseSkeleton::invisible();
    let img = render_image(&person(), &s, 32);
    for y in 0..32 {
        for x in 0..32 {
            assert_eq!(img.pixel(y, x), BACKGROUND);
        }
    }
    assert!(render_semantics(&s, 32).labels.iter().all(|&l| l == 0));
    assert!(render_heatmaps(&s, 1.5, 32).data().iter().all(|&v| v == 0.0));
}

#[test]
fn rendering_is_deterministic() {
    let p = person();
    let s = skeleton_at_yaw(&p, 45.0);
    assert_eq!(render_image(&p, &s, 64), render_image(&p, &s, 64));
    assert_eq!(render_semantics(&s, 64), render_semantics(&s, 64));
}

/// Independent capsule rasterizer: distance from each pixel centre to each
/// limb segment, computed by projecting onto the segment directly.
fn oracle(s: &PoseSkeleton, size: usize) -> (usize, [usize; 7]) {
    let caps = iepg_core::pose::render::capsules(s);
    let mut covered = 0;
    let mut hist = [0usize; 7];
    for row in 0..size {
        for col in 0..size {
            let px = (col as f64 + 0.5) / size as f64;
            let py = (row as f64 + 0.5) / size as f64;
            let mut any = false;
            let mut label = 0u8;
            for c in &caps {
                let (ax, ay, bx, by) = (c.a[0], c.a[1], c.b[0], c.b[1]);
                let (vx, vy) = (bx - ax, by - ay);
                let (wx, wy) = (px - ax, py - ay);
                let l2 = vx * vx + vy * vy;
                let d = if l2 == 0.0 {
                    (wx * wx + wy * wy).sqrt()
                } else {
                    let t = ((wx * vx + wy * vy) / l2).clamp(0.0, 1.0);
                    ((ax + t * vx - px).powi(2) + (ay + t * vy - py).powi(2)).sqrt()
                };
                let (d_px, r_px) = (d * size as f64, c.radius * size as f64);
                if d_px < r_px + 0.5 {
                    any = true;
                }
                if d <= c.radius {
                    label = c.part as u8;
                }
            }
            covered += any as usize;
            hist[label as usize] += 1;
        }
    }
    (covered, hist)
}

#[test]
fn frontal_coverage_and_labels_match_rasterization_oracle() {
    let p = person();
    let s = skeleton_at_yaw(&p, 0.0);
    let img = render_image(&p, &s, 64);
    let sem = render_semantics(&s, 64);
    let (covered, hist) = oracle(&s, 64);
    let non_bg = (0..64)
        .flat_map(|y| (0..64).map(move |x| (y, x)))
        .filter(|&(y, x)| img.pixel(y, x) != BACKGROUND)
        .count();
    assert_eq!(non_bg, covered);
    assert!(covered > 200);
    assert_eq!(sem.histogram(), hist);
}

#[test]
fn semantic_foreground_is_image_foreground() {
    for seed in 0..5 {
        let p = Person::random(0, seed);
        for yaw in [0.0, 30.0, 90.0, 135.0, 270.0] {
            let s = skeleton_at_yaw(&p, yaw);
            let img = render_image(&p, &s, 64);
            let sem = render_semantics(&s, 64);
            for (i, &l) in sem.labels.iter().enumerate() {
                if l != 0 {
                    assert_ne!(img.pixel(i / 64, i % 64), BACKGROUND);
                }
            }
        }
    }
}

#[test]
fn heatmap_peaks_and_mass() {
    let s = skeleton_at_yaw(&person(), 90.0);
    let sigma = 1.5;
    let h = render_heatmaps(&s, sigma, 64);
    for k in 0..K {
        let ch = &h.data()[k * 4096..(k + 1) * 4096];
        if !s.visible[k] {
            assert!(ch.iter().all(|&v| v == 0.0));
            continue;
        }
        let (arg, &peak) = ch
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert_eq!(peak, 1.0);
        let px = (s.points[k][0] * 64.0 - 0.5).round() as usize;
        let py = (s.points[k][1] * 64.0 - 0.5).round() as usize;
        assert_eq!(arg, py * 64 + px);
        // Continuous integral of the bump over the plane: 2πσ².
        let integral = 2.0 * std::f64::consts::PI * sigma * sigma;
        let total: f64 = ch.iter().sum();
        assert!((total - integral).abs() / integral < 0.01, "{total} vs {integral}");
    }
}

#[test]
fn default_dataset_shape_and_split() {
    let d = gen_dataset(&DatasetConfig::default()).unwrap();
    assert_eq!(d.frame_count(), 672);
    assert_eq!(d.train_ids.len(), 23);
    assert_eq!(d.test_ids.len(), 5);
    assert!(d.train_ids.iter().all(|i| !d.test_ids.contains(i)));
}

#[test]
fn dataset_is_deterministic_per_seed() {
    let cfg = DatasetConfig {
        n_persons: 4,
        yaw_step_deg: 90.0,
        image_size: 32,
        seed: 9,
        test_persons: None,
    };
    let a = gen_dataset(&cfg).unwrap();
    assert_eq!(a.frame_count(), 16);
    assert_eq!(a.digest(), gen_dataset(&cfg).unwrap().digest());
    let other = gen_dataset(&DatasetConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.digest(), other.digest());
}

#[test]
fn indivisible_yaw_step_is_rejected() {
    let cfg = DatasetConfig {
        yaw_step_deg: 25.0,
        ..DatasetConfig::default()
    };
    assert!(matches!(gen_dataset(&cfg), Err(Error::Config(_))));
}
