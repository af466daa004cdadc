use pointkit::geometry::{euclidean, BoxRegion, ImageMeta, Mask, Point2D};
use pointkit::grpo::{clipped_term, group_advantages, grpo_loss, GroupRollout, SurrogateParams};
use pointkit::parser::{parse, parse_with, ParseOptions, TaskKind};
use pointkit::reward::{
    compose, dis_reward, trace_reward, PresetTable, Thresholds, Verification,
};
use pointkit::spatial::{
    check_relation, lift_trace, Box3, CameraIntrinsics, DepthImage, Point3D, Relation, RelationSpec,
    SceneObject, SceneSpec,
};
use pointkit::trace::{
    mae, path_length, process_trace, resample_equidistant, rmse, select_longest, smooth_spline,
    NaturalSpline, Trajectory2D,
};
use proptest::prelude::*;

fn dims() -> ImageMeta {
    ImageMeta::new(1000, 1000).unwrap()
}

fn point() -> impl Strategy<Value = Point2D> {
    (0.0..1000.0f64, 0.0..1000.0f64).prop_map(|(x, y)| Point2D::new(x, y))
}

fn trajectory(min: usize, max: usize) -> impl Strategy<Value = Trajectory2D> {
    prop::collection::vec(point(), min..=max)
        .prop_filter("non-degenerate", |p| path_length(p) > 1e-3)
        .prop_map(|p| Trajectory2D::new(p, dims()).unwrap())
}

fn small_mask() -> impl Strategy<Value = Mask> {
    (1u32..12, 1u32..12)
        .prop_flat_map(|(w, h)| (Just((w, h)), prop::collection::vec(any::<bool>(), (w * h) as usize)))
        .prop_map(|((w, h), bits)| Mask::from_bitmap(ImageMeta::new(w, h).unwrap(), bits).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mask_forms_agree(mask in small_mask()) {
        let d = mask.dims();
        let bits = mask.to_bitmap();
        let rle = Mask::from_rle(d, mask.to_rle_counts()).unwrap();
        let boxes = Mask::from_boxes(d, mask.to_row_boxes()).unwrap();
        prop_assert_eq!(&rle.to_bitmap(), &bits);
        prop_assert_eq!(&boxes.to_bitmap(), &bits);
        prop_assert_eq!(mask.set_count(), bits.iter().filter(|&&b| b).count());
        for cy in 0..d.height {
            for cx in 0..d.width {
                let p = Point2D::new(cx as f64 + 0.5, cy as f64 + 0.5);
                prop_assert_eq!(rle.contains(p), mask.contains(p));
                prop_assert_eq!(boxes.contains(p), mask.contains(p));
            }
        }
    }

    #[test]
    fn triangle_inequality(a in point(), b in point(), c in point()) {
        prop_assert!(euclidean(a, c) <= euclidean(a, b) + euclidean(b, c) + 1e-9);
        prop_assert_eq!(euclidean(a, b), euclidean(b, a));
    }

    #[test]
    fn parse_is_total(raw in ".{0,200}", t in 0usize..7) {
        let task = TaskKind::ALL[t];
        let r = parse(&raw, task);
        prop_assert_eq!(r.tags_valid, r.failure_reason.is_none());
        let s = parse_with(&raw, task, ParseOptions::strict());
        prop_assert_eq!(s.tags_valid, s.failure_reason.is_none());
    }

    #[test]
    fn parse_is_total_on_tag_soup(
        parts in prop::collection::vec(
            prop::sample::select(vec![
                "<think>", "</think>", "<answer>", "</answer>", "<point>", "</point>",
                "[", "]", "[[1, 2]]", ",", " ", "x", "1e3", "-.5", "nan",
            ]),
            0..30,
        ),
        t in 0usize..7,
    ) {
        let raw: String = parts.concat();
        let task = TaskKind::ALL[t];
        let lenient = parse(&raw, task);
        let strict = parse_with(&raw, task, ParseOptions::strict());
        // strict acceptance implies lenient acceptance
        if strict.tags_valid {
            prop_assert!(lenient.tags_valid);
        }
    }

    #[test]
    fn canonical_round_trip(pts in prop::collection::vec((-1e4..1e4f64, -1e4..1e4f64), 8), think in "[a-z ]{0,30}") {
        let body: Vec<String> = pts.iter().map(|(x, y)| format!("[{x}, {y}]")).collect();
        let raw = format!("  <think>{think}</think> <answer><point>[{}]</point></answer>\n", body.join(","));
        let first = parse(&raw, TaskKind::VTG);
        prop_assert!(first.tags_valid);
        let canonical = first.to_canonical();
        let again = parse_with(&canonical, TaskKind::VTG, ParseOptions::strict());
        prop_assert!(again.tags_valid);
        prop_assert_eq!(&again.points, &first.points);
        prop_assert_eq!(&again.think_text, &first.think_text);
        prop_assert_eq!(again.to_canonical(), canonical);
    }

    #[test]
    fn composed_reward_is_bounded(
        pts in prop::collection::vec((-50.0..250.0f64, -50.0..250.0f64), 1..10),
        t in 0usize..3,
        broken in any::<bool>(),
    ) {
        let task = [TaskKind::REG, TaskKind::RRG, TaskKind::OFG][t];
        let d = ImageMeta::new(200, 200).unwrap();
        let mask = Mask::from_boxes(d, vec![BoxRegion { x0: 40, y0: 60, x1: 90, y1: 80 }]).unwrap();
        let body: Vec<String> = pts.iter().map(|(x, y)| format!("[{x}, {y}]")).collect();
        let close = if broken { "" } else { "</answer>" };
        let raw = format!("<think>t</think><answer><point>[{}]</point>{close}", body.join(", "));
        let presets = PresetTable::builtin();
        let b = compose(&parse(&raw, task), &Verification::mask(mask), presets.get(task).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&b.total));
        for v in b.components.values() {
            prop_assert!((0.0..=1.0).contains(v));
        }
        if broken {
            prop_assert_eq!(b.total, 0.0);
        }
    }

    #[test]
    fn distance_rewards_are_monotone(a in 0.0..500.0f64, b in 0.0..500.0f64) {
        let t = Thresholds::default();
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(dis_reward(near, &t) >= dis_reward(far, &t));
        prop_assert!(trace_reward(near, &t) >= trace_reward(far, &t));
    }

    #[test]
    fn trace_metrics_properties(a in trajectory(2, 12), b in trajectory(2, 12), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
        let (r, m) = (rmse(&a, &b).unwrap(), mae(&a, &b).unwrap());
        prop_assert!(r >= m - 1e-12);
        prop_assert_eq!(r, rmse(&b, &a).unwrap());
        prop_assert_eq!(m, mae(&b, &a).unwrap());
        let shift = |t: &Trajectory2D| {
            Trajectory2D::new(t.points().iter().map(|p| Point2D::new(p.x + dx, p.y + dy)).collect(), t.dims()).unwrap()
        };
        prop_assert!((rmse(&shift(&a), &shift(&b)).unwrap() - r).abs() < 1e-6);
    }

    #[test]
    fn resample_is_idempotent(
        start in point(),
        step in 1.0..50.0f64,
        turns in prop::collection::vec(-3.0..3.0f64, 1..15),
    ) {
        // a polyline with equal segment lengths is already equidistant
        let mut pts = vec![start];
        let mut heading = 0.0f64;
        for turn in &turns {
            heading += turn;
            let last = *pts.last().unwrap();
            pts.push(Point2D::new(last.x + step * heading.cos(), last.y + step * heading.sin()));
        }
        let t = Trajectory2D::new(pts, dims()).unwrap();
        let n = t.len();
        let again = resample_equidistant(&t, n).unwrap();
        let tol = 1e-6 * t.path_length();
        for (p, q) in t.points().iter().zip(again.points()) {
            prop_assert!(euclidean(*p, *q) <= tol);
        }
    }

    #[test]
    fn resample_keeps_endpoints(t in trajectory(2, 15), n in 2usize..20) {
        let out = resample_equidistant(&t, n).unwrap();
        prop_assert_eq!(out.len(), n);
        prop_assert_eq!(out.points()[0], t.points()[0]);
        prop_assert_eq!(*out.points().last().unwrap(), *t.points().last().unwrap());
    }

    #[test]
    fn select_longest_ignores_order(ts in prop::collection::vec(trajectory(2, 6), 1..6), seed in any::<u64>()) {
        let best = select_longest(&ts).unwrap().path_length();
        let mut shuffled = ts.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed as usize).wrapping_add(i * 7) % n);
        }
        prop_assert_eq!(select_longest(&shuffled).unwrap().path_length(), best);
        prop_assert!(ts.iter().all(|t| t.path_length() <= best));
    }

    #[test]
    fn chain_emits_eight_points(t in trajectory(4, 20)) {
        let s = smooth_spline(&t, 16);
        prop_assert!(s.smoothed);
        for (j, k) in t.points().iter().enumerate() {
            prop_assert!(euclidean(s.trajectory.points()[16 * j], *k) <= 1e-9);
        }
        let out = process_trace(&t, 8, true).unwrap();
        prop_assert_eq!(out.len(), 8);
    }

    #[test]
    fn short_inputs_pass_through(t in trajectory(2, 3)) {
        let s = smooth_spline(&t, 16);
        prop_assert!(!s.smoothed);
        prop_assert_eq!(s.trajectory, t);
    }

    #[test]
    fn left_and_right_are_exclusive(
        x in -600.0..600.0f64, y in -400.0..0.0f64, z in 700.0..1500.0f64,
        m in 0.0..60.0f64,
        bx in -200.0..200.0f64, w in -200.0..200.0f64,
    ) {
        let w = 20.0 + w.abs();
        let scene = SceneSpec {
            objects: vec![SceneObject { name: "o".into(), bounds: Box3::from([bx, -150.0, 1000.0, bx + w, 0.0, 1100.0]) }],
            table_z: 0.0,
        };
        let k = CameraIntrinsics::new(550.0, 550.0, 320.0, 240.0).unwrap();
        let px = k.project(Point3D::new(x, y, z));
        let check = |relation| {
            let spec = RelationSpec { relation, anchors: vec!["o".into()], margin: m };
            check_relation((px.x, px.y, z), &scene, &spec, &k).unwrap()
        };
        prop_assert!(!(check(Relation::Left) && check(Relation::Right)));
        prop_assert!(!(check(Relation::Front) && check(Relation::Behind)));
    }

    #[test]
    fn lifted_waypoints_are_evenly_spaced(t in trajectory(2, 10), n in 2usize..30, z in 600.0..1700.0f64) {
        let depth = DepthImage::uniform(dims(), z).unwrap();
        let k = CameraIntrinsics::new(600.0, 600.0, 500.0, 500.0).unwrap();
        let w = lift_trace(&t, &depth, &k, n).unwrap();
        prop_assert_eq!(w.len(), n);
        let lifted: Vec<Point3D> = t.points().iter().map(|&p| k.backproject_with_depth(p, z)).collect();
        let pos = arc_positions_3d(&lifted, &w.iter().map(|p| p.position).collect::<Vec<_>>());
        let total = *pos.last().unwrap();
        for (j, p) in pos.iter().enumerate() {
            prop_assert!((p - j as f64 * total / (n - 1) as f64).abs() <= 1e-6 * total);
        }
    }

    #[test]
    fn advantages_sum_to_zero_and_are_affine_invariant(
        r in prop::collection::vec(0.0..1.0f64, 2..16),
        shift in -5.0..5.0f64,
        scale in 0.01..100.0f64,
    ) {
        let a = group_advantages(&r, 1e-8).unwrap();
        let std = {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r.len() as f64).sqrt()
        };
        prop_assume!(std > 1e-6);
        prop_assert!(a.iter().sum::<f64>().abs() < 1e-9);
        let shifted: Vec<f64> = r.iter().map(|x| x + shift).collect();
        let scaled: Vec<f64> = r.iter().map(|x| x * scale).collect();
        for (x, y) in a.iter().zip(group_advantages(&shifted, 1e-8).unwrap()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        for (x, y) in a.iter().zip(group_advantages(&scaled, 1e-8).unwrap()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn unbounded_clip_is_plain_importance_weighting(
        lens in prop::collection::vec(1usize..4, 2..6),
        seed in prop::collection::vec(-1.0..1.0f64, 40),
        rewards in prop::collection::vec(0.0..1.0f64, 6),
    ) {
        let g = lens.len();
        let mut it = seed.iter().cycle();
        let responses: Vec<Vec<usize>> = lens.iter().map(|&l| vec![0; l]).collect();
        let logp_new: Vec<Vec<f64>> = lens.iter().map(|&l| (0..l).map(|_| -1.0 + it.next().unwrap()).collect()).collect();
        let logp_old: Vec<Vec<f64>> = lens.iter().map(|&l| (0..l).map(|_| -1.0 + it.next().unwrap() * 0.5).collect()).collect();
        let rollout = GroupRollout::new(responses, logp_new.clone(), logp_old.clone(), None, rewards[..g].to_vec(), 1e-8).unwrap();
        let out = grpo_loss(&rollout, &SurrogateParams { clip_eps: 1e12, kl_coeff: 0.0 }).unwrap();
        let mut plain = 0.0;
        for i in 0..g {
            for t in 0..lens[i] {
                plain += (logp_new[i][t] - logp_old[i][t]).exp() * rollout.advantages[i][t];
            }
        }
        plain /= g as f64;
        prop_assert!((out.objective - plain).abs() <= 1e-12 * plain.abs().max(1.0));
    }

    #[test]
    fn clipped_term_never_exceeds_unclipped(lp in -3.0..0.0f64, lo in -3.0..0.0f64, adv in -3.0..3.0f64, eps in 0.01..0.9f64) {
        let (term, _) = clipped_term(lp, lo, adv, eps);
        prop_assert!(term <= (lp - lo).exp() * adv + 1e-12);
    }
}

/// Arc-length position of each waypoint along the lifted polyline.
fn arc_positions_3d(curve: &[Point3D], pts: &[Point3D]) -> Vec<f64> {
    let total: f64 = curve.windows(2).map(|w| w[0].distance(w[1])).sum();
    let tol = 1e-9 * total.max(1.0);
    let (mut seg, mut acc) = (0usize, 0.0);
    pts.iter()
        .map(|&p| loop {
            let (a, b) = (curve[seg], curve[seg + 1]);
            let len = a.distance(b);
            let t = if len > 0.0 { (p.sub(a).dot(b.sub(a)) / (len * len)).clamp(0.0, 1.0) } else { 0.0 };
            if a.add(b.sub(a).scale(t)).distance(p) <= tol || seg + 2 == curve.len() {
                break acc + t * len;
            }
            acc += len;
            seg += 1;
        })
        .collect()
}

/// Natural spline second derivatives by dense Gaussian elimination.
fn natural_second_derivatives(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    a[0][0] = 1.0;
    a[n - 1][n - 1] = 1.0;
    for i in 1..n - 1 {
        a[i][i - 1] = 1.0;
        a[i][i] = 4.0;
        a[i][i + 1] = 1.0;
        a[i][n] = 6.0 * (y[i - 1] - 2.0 * y[i] + y[i + 1]);
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        a.swap(col, pivot);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

#[test]
fn spline_matches_linear_system_oracle_on_squares() {
    let y = [0.0, 1.0, 4.0, 9.0];
    let m = natural_second_derivatives(&y);
    // interior: M1 = 2.4, M2 = 2.4 for y = x^2 with natural ends
    assert!((m[1] - 2.4).abs() < 1e-12 && (m[2] - 2.4).abs() < 1e-12);
    let s = NaturalSpline::fit(&y);
    for k in 0..3 {
        let u = 0.5;
        let expected = (1.0 - u) * y[k]
            + u * y[k + 1]
            + (((1.0 - u).powi(3) - (1.0 - u)) * m[k] + (u * u * u - u) * m[k + 1]) / 6.0;
        assert!((s.eval(k as f64 + u) - expected).abs() < 1e-12, "segment {k}");
    }
    // and through the dense sampler: sample 8 of 16 is each segment midpoint
    let t = Trajectory2D::new(
        y.iter().enumerate().map(|(i, &v)| Point2D::new(i as f64, v)).collect(),
        ImageMeta::new(20, 20).unwrap(),
    )
    .unwrap();
    let dense = smooth_spline(&t, 16).trajectory;
    assert!((dense.points()[8].y - s.eval(0.5)).abs() < 1e-12);
    assert!((dense.points()[8].x - 0.5).abs() < 1e-12);
}

#[test]
fn spline_of_a_line_is_the_line() {
    let t = Trajectory2D::new(
        (0..4).map(|i| Point2D::new(i as f64, 0.0)).collect(),
        ImageMeta::new(10, 10).unwrap(),
    )
    .unwrap();
    for p in smooth_spline(&t, 16).trajectory.points() {
        assert!(p.y.abs() < 1e-9);
    }
}
