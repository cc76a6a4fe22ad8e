use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;

use omnisched::branches::{adapt, enumerate_branches, BranchConfig, DeviceProfile};
use omnisched::metrics::{average_precision, detection_score, match_boxes, summarize, EvalConfig};
use omnisched::predictors::{assignment_latency, train_gbrt, GbrtParams};
use omnisched::scheduler::{best_uniform, heaviest_row, normalize_scores, solve, solve_bruteforce, ScheduleProblem};
use omnisched::simulator::{generate_scenario, EgoPath, ScenarioConfig};
use omnisched::tracker::{forecast, hungarian, min_eigenvalue, update, KalmanModel, TrackState};
use omnisched::types::{categorize, distribution, ego_transform, Box3D, CameraRig, CategoryLevel, EgoPose, ObjectClass, CATEGORY_COUNT};

fn class() -> impl Strategy<Value = ObjectClass> {
    prop::sample::select(ObjectClass::ALL.to_vec())
}

prop_compose! {
    fn boxes(max: usize)(v in prop::collection::vec(
        (-80.0..80.0f64, -80.0..80.0f64, 0.2..12.0f64, 0.2..4.0f64, 0.2..12.0f64, -15.0..15.0f64, -15.0..15.0f64, class(), 0.01..1.0f64),
        0..max,
    )) -> Vec<Box3D> {
        v.into_iter()
            .map(|(x, y, w, h, l, vx, vy, class, confidence)| Box3D {
                center: [x, y, h / 2.0],
                size: [w, h, l],
                velocity: [vx, vy, 0.0],
                yaw: 0.0,
                class,
                confidence,
            })
            .collect()
    }
}

prop_compose! {
    fn problem(max_rows: usize, max_views: usize)(m in 1..=max_rows, n in 1..=max_views)(
        scores in prop::collection::vec(prop::collection::vec(0u8..12, n), m),
        lats in prop::collection::vec(1u8..30, m),
        budget in 0.0..80.0f64,
        batched in any::<bool>(),
        alpha in 0.2..1.6f64,
    ) -> ScheduleProblem {
        let m = scores.len();
        let mut latencies: Vec<f64> = lats.iter().map(|&l| f64::from(l) / 2.0).collect();
        latencies[0] = 0.0;
        let scores = scores.iter().map(|r| r.iter().map(|&s| f64::from(s) / 10.0).collect()).collect();
        ScheduleProblem::new(enumerate_branches()[..m].to_vec(), scores, latencies, budget, if batched { alpha } else { 1.0 }).unwrap()
    }
}

fn pose() -> impl Strategy<Value = EgoPose> {
    (-100.0..100.0f64, -100.0..100.0f64, -3.1..3.1f64).prop_map(|(x, y, yaw)| EgoPose {
        position: [x, y],
        yaw,
        timestamp: 0.0,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn distribution_rows_are_normalized(bs in boxes(40), n in 1usize..9) {
        let rig = CameraRig::uniform(n);
        let d = distribution(&bs, &rig);
        prop_assert_eq!(d.len(), n);
        let mut counts = vec![0usize; n];
        for b in &bs {
            counts[omnisched::types::view_of(b.center, &rig)] += 1;
        }
        for (v, c) in d.iter().zip(counts) {
            prop_assert_eq!(v.as_slice().len(), CATEGORY_COUNT);
            prop_assert!(v.as_slice().iter().all(|x| (0.0..=1.0).contains(x)));
            let total: f64 = v.as_slice().iter().sum();
            if c == 0 {
                prop_assert!(v.as_slice().iter().all(|&x| x == 0.0));
            } else {
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn category_index_round_trips(bs in boxes(20)) {
        for b in &bs {
            let c = categorize(b);
            prop_assert!(c.index() < CATEGORY_COUNT);
            prop_assert_eq!(CategoryLevel::from_index(c.index()), c);
        }
    }

    #[test]
    fn ego_transform_round_trips(bs in boxes(10), a in pose(), b in pose()) {
        for x in &bs {
            let back = ego_transform(&ego_transform(x, &a, &b), &b, &a);
            for i in 0..3 {
                prop_assert!((back.center[i] - x.center[i]).abs() < 1e-9);
                prop_assert!((back.velocity[i] - x.velocity[i]).abs() < 1e-9);
            }
            prop_assert_eq!(back.size, x.size);
        }
    }

    #[test]
    fn solver_matches_exhaustive_search(p in problem(6, 4)) {
        let fast = solve(&p);
        let slow = solve_bruteforce(&p).unwrap();
        prop_assert_eq!(fast.predicted_objective, slow.predicted_objective);
        prop_assert_eq!(&fast.rows, &slow.rows);
        prop_assert!(fast.predicted_latency <= p.budget);
    }

    #[test]
    fn solver_dominates_uniform_assignments(p in problem(17, 6)) {
        let opt = solve(&p);
        let uni = best_uniform(&p);
        prop_assert!(opt.predicted_objective >= uni.predicted_objective);
        prop_assert!(uni.predicted_latency <= p.budget);
        prop_assert!(opt.predicted_latency <= p.budget);
    }

    #[test]
    fn larger_budget_never_lowers_the_objective(p in problem(8, 5), extra in 0.0..40.0f64) {
        let mut wider = p.clone();
        wider.budget += extra;
        prop_assert!(solve(&wider).predicted_objective >= solve(&p).predicted_objective - 1e-9);
    }

    #[test]
    fn scaling_scores_keeps_the_assignment(p in problem(8, 5), k in -2i32..=2) {
        let mut scaled = p.clone();
        let c = 2f64.powi(k);
        for row in &mut scaled.scores {
            for s in row.iter_mut() {
                *s *= c;
            }
        }
        prop_assert_eq!(solve(&scaled).rows, solve(&p).rows);
    }

    #[test]
    fn correct_detections_raise_ap_and_false_ones_do_not(
        ranked in prop::collection::vec(any::<bool>(), 0..30),
        spare in 1usize..5,
        at in any::<prop::sample::Index>(),
    ) {
        let gt = ranked.iter().filter(|&&h| h).count() + spare;
        let base = average_precision(&ranked, gt, 0.1).unwrap();
        let pos = at.index(ranked.len() + 1);
        let mut hit = ranked.clone();
        hit.insert(pos, true);
        prop_assert!(average_precision(&hit, gt, 0.1).unwrap() >= base - 1e-12);
        let mut miss = ranked.clone();
        miss.insert(pos, false);
        prop_assert!(average_precision(&miss, gt, 0.1).unwrap() <= base + 1e-12);
    }

    #[test]
    fn normalization_preserves_column_argmax(p in problem(10, 6)) {
        let r = heaviest_row(&p.latencies);
        let (norm, unscaled) = normalize_scores(&p.scores, r);
        for j in 0..p.views() {
            if unscaled.contains(&j) {
                continue;
            }
            let col = |m: &Vec<Vec<f64>>| {
                let best = m.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max);
                m.iter().map(|row| row[j] == best).collect::<Vec<bool>>()
            };
            prop_assert_eq!(col(&p.scores), col(&norm));
        }
    }

    #[test]
    fn upgrading_a_view_never_lowers_latency(rows in prop::collection::vec(0usize..17, 1..8), view in 0usize..8) {
        let device = DeviceProfile::bundled_orin();
        let branches = enumerate_branches();
        let mut a: Vec<BranchConfig> = rows.iter().map(|&i| branches[i]).collect();
        let j = view % a.len();
        let before = assignment_latency(&a, &device, 1.0).unwrap();
        let own = device.branch_latency(a[j]).unwrap();
        if let Some(&slower) = branches.iter().find(|b| device.branch_latency(**b).unwrap() > own) {
            a[j] = slower;
            prop_assert!(assignment_latency(&a, &device, 1.0).unwrap() >= before);
        }
    }

    #[test]
    fn adapt_is_a_monotone_subset(t1 in 0.0..900.0f64, t2 in 0.0..900.0f64) {
        let device = DeviceProfile::bundled_orin();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let small = adapt(&device, lo).unwrap().branches;
        let large = adapt(&device, hi).unwrap().branches;
        let all = enumerate_branches();
        prop_assert!(small.contains(&BranchConfig::Tracker));
        prop_assert!(small.iter().all(|b| large.contains(b)));
        prop_assert!(large.iter().all(|b| all.contains(b)));
    }

    #[test]
    fn matching_is_one_to_one(preds in boxes(15), gts in boxes(15), threshold in 0.5..4.0f64) {
        let m = match_boxes(&preds, &gts, threshold);
        let mut seen_p = HashMap::new();
        let mut seen_g = HashMap::new();
        for &(p, g) in &m.pairs {
            prop_assert!(seen_p.insert(p, ()).is_none());
            prop_assert!(seen_g.insert(g, ()).is_none());
            prop_assert_eq!(preds[p].class, gts[g].class);
            let d = (preds[p].center[0] - gts[g].center[0]).hypot(preds[p].center[1] - gts[g].center[1]);
            prop_assert!(d <= threshold);
        }
        prop_assert_eq!(m.pairs.len() + m.false_positives.len(), preds.len());
        prop_assert_eq!(m.pairs.len() + m.missed.len(), gts.len());
    }

    #[test]
    fn detection_scores_stay_in_unit_range(preds in boxes(15), gts in boxes(15)) {
        let r = summarize([(&preds[..], &gts[..])], &EvalConfig::default());
        prop_assert!((0.0..=1.0).contains(&r.summary.ds));
        prop_assert!((0.0..=1.0).contains(&r.summary.map));
        prop_assert!(r.summary.mate >= 0.0 && r.summary.mave >= 0.0);
    }

    #[test]
    fn detection_score_is_monotone(map in 0.0..1.0f64, mate in 0.0..2.0f64, mave in 0.0..2.0f64, d in 0.0..0.5f64) {
        prop_assert!(detection_score((map + d).min(1.0), mate, mave) >= detection_score(map, mate, mave));
        prop_assert!(detection_score(map, mate + d, mave) <= detection_score(map, mate, mave));
        prop_assert!(detection_score(map, mate, mave + d) <= detection_score(map, mate, mave));
    }

    #[test]
    fn hungarian_is_optimal(cost in prop::collection::vec(prop::collection::vec(0u8..50, 4), 1..5)) {
        let cost: Vec<Vec<f64>> = cost.iter().map(|r| r.iter().map(|&c| f64::from(c)).collect()).collect();
        let got = hungarian(&cost);
        let total: f64 = got.iter().enumerate().filter_map(|(i, c)| c.map(|c| cost[i][c])).sum();
        prop_assert_eq!(got.iter().filter(|c| c.is_some()).count(), cost.len());
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (0..4).collect();
        permute(&mut perm, 0, &mut |p| {
            best = best.min((0..cost.len()).map(|i| cost[i][p[i]]).sum());
        });
        prop_assert!((total - best).abs() < 1e-9);
    }

    #[test]
    fn covariance_stays_positive(steps in prop::collection::vec((0.01..1.0f64, any::<bool>(), -3.0..3.0f64), 1..200)) {
        let model = KalmanModel::default();
        let start = Box3D {
            center: [10.0, 5.0, 0.8],
            size: [1.9, 1.6, 4.6],
            velocity: [2.0, 0.0, 0.0],
            yaw: 0.0,
            class: ObjectClass::Car,
            confidence: 0.8,
        };
        let mut t = TrackState::birth(0, &start, &model);
        for (dt, observe, offset) in steps {
            t = forecast(&t, dt, &model);
            if observe {
                let mut d = t.to_box();
                d.center[0] += offset;
                d.velocity[1] -= offset;
                t = update(&t, &d, &model).track;
            }
            prop_assert!(min_eigenvalue(&t.covariance) >= -1e-9);
        }
    }

    #[test]
    fn gbrt_predictions_are_clamped(rows in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 3), 5..40), probe in prop::collection::vec(-5.0..5.0f64, 3)) {
        let y: Vec<f64> = rows.iter().map(|r| (r[0] + r[1] * r[2]).min(1.0)).collect();
        let (m, rep) = train_gbrt(&rows, &y, &GbrtParams { rounds: 10, max_depth: 3, learning_rate: 0.3, min_samples_leaf: 1 }).unwrap();
        let p = m.predict(&probe).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(rep.mse_per_round.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scenarios_keep_ids_stable_and_inside_the_world(seed in any::<u64>(), spawn in 0.0..3.0f64, initial in 0usize..30) {
        let cfg = ScenarioConfig {
            version: 1,
            seed,
            duration_s: 3.0,
            fps: 10.0,
            world_radius_m: 50.0,
            despawn_radius_m: 60.0,
            spawn_rate_per_s: spawn,
            initial_objects: initial,
            class_mix: BTreeMap::from([(ObjectClass::Car, 0.7), (ObjectClass::Pedestrian, 0.3)]),
            speed_ranges: BTreeMap::new(),
            position_jitter_m: 0.01,
            ego_path: EgoPath::Circular { radius_m: 20.0, speed_mps: 4.0 },
            rig: CameraRig::uniform(6),
            synthetic: true,
        };
        let frames = generate_scenario(&cfg);
        prop_assert_eq!(frames.len(), cfg.frame_count());
        let mut classes: HashMap<u64, ObjectClass> = HashMap::new();
        for w in frames.windows(2) {
            prop_assert!(w[1].timestamp > w[0].timestamp);
        }
        for f in &frames {
            prop_assert_eq!(f.ids.len(), f.boxes.len());
            for (id, b) in f.ids.iter().zip(&f.boxes) {
                prop_assert!(b.planar_distance() <= cfg.world_radius_m + 1e-9);
                prop_assert_eq!(*classes.entry(*id).or_insert(b.class), b.class);
            }
        }
        prop_assert_eq!(generate_scenario(&cfg), frames);
    }
}
