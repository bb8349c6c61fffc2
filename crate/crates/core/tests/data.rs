use std::f64::consts::PI;

use dyttp::data::*;
use dyttp::tensor::Rng;
use proptest::prelude::*;

/// Closed-form arc endpoint error of constant-velocity extrapolation (R=20 m,
/// 8 m/s, 0.1 s steps, 30-step horizon), computed by an independent script.
const ARC_CV_ENDPOINT_ERROR: f64 = 14.274423271766064;
const ARC_CV_ADE: f64 = 5.156591071663681;

fn cv_errors(history: &[Point], future: &[Point]) -> (f64, f64) {
    let t = history.len() - 1;
    let v = [history[t][0] - history[t - 1][0], history[t][1] - history[t - 1][1]];
    let mut sum = 0.0;
    let mut last = 0.0;
    for (k, gt) in future.iter().enumerate() {
        let s = (k + 1) as f64;
        let p = [history[t][0] + s * v[0], history[t][1] + s * v[1]];
        last = ((p[0] - gt[0]).powi(2) + (p[1] - gt[1]).powi(2)).sqrt();
        sum += last;
    }
    (sum / future.len() as f64, last)
}

fn noiseless() -> GenConfig {
    GenConfig {
        noise_std: 0.0,
        ..GenConfig::default()
    }
}

fn single(maneuver: Maneuver, origin: Point, heading: f64, speed: f64) -> Scenario {
    let path = AgentPath {
        origin,
        heading,
        speed,
        maneuver,
        first_valid: 0,
    };
    render_scenario("t".into(), &[path], &noiseless(), &mut Rng::seed(0))
}

#[test]
fn straight_line_is_extrapolated_exactly_by_constant_velocity() {
    let s = single(Maneuver::Straight, [100.0, -50.0], 0.0, 10.0);
    let (ade, fde) = cv_errors(s.history(0), s.future(0));
    assert_eq!(ade, 0.0);
    assert_eq!(fde, 0.0);

    let cfg = GenConfig {
        mix: ManeuverMix {
            straight: 1.0,
            left_turn: 0.0,
            right_turn: 0.0,
            lane_change: 0.0,
        },
        ..noiseless()
    };
    for i in 0..50 {
        let (s, _) = generate_scenario(3, i, &cfg);
        assert_eq!(s.kind, ScenarioKind::Straight);
        let (ade, _) = cv_errors(s.history(0), s.future(0));
        assert!(ade < 2e-3, "f32 storage only, got {ade}");
    }
}

#[test]
fn arc_defeats_constant_velocity() {
    let arc = Maneuver::Turn {
        radius: 20.0,
        start: 0.0,
        angle: PI,
    };
    let path = AgentPath {
        origin: [0.0, 0.0],
        heading: 0.0,
        speed: 8.0,
        maneuver: arc,
        first_valid: 0,
    };
    let exact: Vec<Point> = (0..50).map(|k| path.position(k)).collect();
    let (ade, fde) = cv_errors(&exact[..20], &exact[20..]);
    assert!((fde - ARC_CV_ENDPOINT_ERROR).abs() < 1e-9, "{fde}");
    assert!((ade - ARC_CV_ADE).abs() < 1e-9, "{ade}");
    assert!(fde > 2.0);

    let s = single(arc, [0.0, 0.0], 0.0, 8.0);
    let (_, fde) = cv_errors(s.history(0), s.future(0));
    assert!((fde - ARC_CV_ENDPOINT_ERROR).abs() < 1e-3, "{fde}");
}

#[test]
fn maneuver_shapes_follow_closed_forms() {
    let r = 15.0;
    let left = Maneuver::Turn {
        radius: r,
        start: 10.0,
        angle: PI / 2.0,
    };
    assert_eq!(left.local(5.0), [5.0, 0.0]);
    let quarter = left.local(10.0 + r * PI / 2.0);
    assert!((quarter[0] - (10.0 + r)).abs() < 1e-12 && (quarter[1] - r).abs() < 1e-12);
    let beyond = left.local(10.0 + r * PI / 2.0 + 7.0);
    assert!((beyond[0] - (10.0 + r)).abs() < 1e-12 && (beyond[1] - (r + 7.0)).abs() < 1e-12);
    let right = Maneuver::Turn {
        radius: r,
        start: 10.0,
        angle: -PI / 2.0,
    };
    assert!((right.local(10.0 + r * PI / 2.0)[1] + r).abs() < 1e-12);
    // Along-path distance on the arc equals travelled distance.
    let a = left.local(12.0);
    let b = left.local(12.001);
    let step = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    assert!((step - 0.001).abs() < 1e-9);

    let lc = Maneuver::LaneChange {
        start: 20.0,
        length: 30.0,
        offset: 3.5,
    };
    assert_eq!(lc.local(10.0), [10.0, 0.0]);
    assert_eq!(lc.local(35.0), [35.0, 1.75]);
    assert_eq!(lc.local(60.0), [60.0, 3.5]);
    assert_eq!(left.kind(), ScenarioKind::LeftTurn);
    assert_eq!(right.kind(), ScenarioKind::RightTurn);
    assert_eq!(lc.kind(), ScenarioKind::LaneChange);
}

#[test]
fn generated_scenarios_respect_the_contract() {
    let cfg = GenConfig::default();
    let split = generate_synthetic(400, 11, &cfg);
    let mut agent_counts = [0usize; 7];
    for s in split.iter() {
        s.validate().unwrap();
        assert_eq!((s.obs_len, s.pred_len), (20, 30));
        assert_eq!(s.focal, 0);
        let n = s.num_agents();
        assert!((1..=6).contains(&n));
        agent_counts[n] += 1;
        assert!(!s.lanes.is_empty());
        for a in 0..n {
            assert!(s.valid_history_steps(a) >= 1);
            assert!(s.history_mask(a).windows(2).all(|w| w[0] <= w[1]), "late starts only");
        }
    }
    assert!(agent_counts[1..].iter().all(|&c| c > 30), "{agent_counts:?}");
    assert!(split.iter().any(|s| s.valid_history_steps(s.num_agents() - 1) < 20));
}

#[test]
fn maneuver_mix_matches_configuration() {
    let split = generate_synthetic(4000, 5, &noiseless());
    let mut counts = std::collections::HashMap::new();
    for s in split.iter() {
        *counts.entry(s.kind).or_insert(0usize) += 1;
    }
    let frac = |k| counts.get(&k).copied().unwrap_or(0) as f64 / 4000.0;
    assert!((frac(ScenarioKind::Straight) - 0.40).abs() < 0.03);
    assert!((frac(ScenarioKind::LeftTurn) - 0.25).abs() < 0.03);
    assert!((frac(ScenarioKind::RightTurn) - 0.25).abs() < 0.03);
    assert!((frac(ScenarioKind::LaneChange) - 0.10).abs() < 0.03);
}

#[test]
fn focal_speed_stays_in_range() {
    let split = generate_synthetic(300, 9, &noiseless());
    for s in split.iter() {
        let h = s.history(0);
        let d = ((h[1][0] - h[0][0]).powi(2) + (h[1][1] - h[0][1]).powi(2)).sqrt();
        let speed = d / STEP_SECONDS;
        assert!((1.99..=15.01).contains(&speed), "{speed}");
    }
}

#[test]
fn split_is_exactly_eighty_twenty_and_disjoint() {
    let split = generate_synthetic(1000, 7, &GenConfig::default());
    assert_eq!(split.train.len(), 800);
    assert_eq!(split.val.len(), 200);
    assert_eq!(split.seed, 7);
    let mut ids: Vec<&str> = split.iter().map(|s| s.id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 1000);
    for s in &split.val {
        let index: usize = s.id.rsplit('-').next().unwrap().parse().unwrap();
        assert!(is_validation(7, index));
    }
    // Same id, same seed, same side regardless of dataset size.
    let small = generate_synthetic(37, 7, &GenConfig::default());
    for s in &small.val {
        assert!(split.val.iter().any(|v| v.id == s.id));
    }
    assert_ne!(
        (0..100).map(|i| is_validation(7, i)).collect::<Vec<_>>(),
        (0..100).map(|i| is_validation(8, i)).collect::<Vec<_>>()
    );
}

#[test]
fn same_seed_same_bytes() {
    let cfg = GenConfig::default();
    let a = encode_scenarios(&generate_synthetic(50, 42, &cfg)).unwrap();
    let b = encode_scenarios(&generate_synthetic(50, 42, &cfg)).unwrap();
    let c = encode_scenarios(&generate_synthetic(50, 43, &cfg)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn translation_and_permutation_helpers() {
    let (s, _) = generate_scenario(1, 4, &GenConfig::default());
    let t = s.translated([3.0, -2.0]);
    assert_eq!(t.history(0)[5][0], s.history(0)[5][0] + 3.0);
    assert_eq!(t.lanes[0].points[0][1], s.lanes[0].points[0][1] - 2.0);
    let n = s.num_agents();
    let order: Vec<usize> = (0..n).rev().collect();
    let p = s.permuted(&order);
    assert_eq!(p.focal, n - 1);
    assert_eq!(p.history(n - 1), s.history(0));
    assert_eq!(p.permuted(&order), s);
}

#[test]
fn container_round_trip() {
    let split = generate_synthetic(60, 2, &GenConfig::default());
    let dir = std::env::temp_dir().join(format!("dyttp-data-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("set.bin");
    save_scenarios(&split, &path).unwrap();
    let back = load_scenarios(&path).unwrap();
    assert_eq!(back, split);
    std::fs::remove_dir_all(&dir).unwrap();

    let empty = DatasetSplit {
        seed: 9,
        ..DatasetSplit::default()
    };
    assert_eq!(decode_scenarios(&encode_scenarios(&empty).unwrap()).unwrap(), empty);
}

#[test]
fn container_is_exact_after_one_round_trip() {
    let mut split = generate_synthetic(3, 2, &GenConfig::default());
    split.train[0].histories[0] = [0.1, 1.0 / 3.0];
    let once = decode_scenarios(&encode_scenarios(&split).unwrap()).unwrap();
    assert_eq!(once.train[0].histories[0], [0.1f32 as f64, (1.0f32 / 3.0) as f64]);
    let twice = decode_scenarios(&encode_scenarios(&once).unwrap()).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn truncated_or_corrupted_containers_fail_cleanly() {
    let bytes = encode_scenarios(&generate_synthetic(4, 1, &GenConfig::default())).unwrap();
    for cut in 0..bytes.len() {
        let err = decode_scenarios(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, DataError::Truncated(_)), "cut {cut}: {err}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_scenarios(&bad), Err(DataError::BadMagic { .. })));
    let mut bad = bytes.clone();
    bad[8] = 99;
    assert!(matches!(decode_scenarios(&bad), Err(DataError::BadVersion { found: 99, .. })));
    let mut bad = bytes.clone();
    bad.push(0);
    assert!(matches!(decode_scenarios(&bad), Err(DataError::Format(_))));
    assert!(matches!(
        load_scenarios(std::path::Path::new("/nonexistent/set.bin")),
        Err(DataError::Io { .. })
    ));
}

fn csv_rows(track: &str, kind: &str, steps: std::ops::Range<usize>, x0: f64) -> Vec<String> {
    steps
        .map(|k| {
            format!(
                "{:.1},{track},{kind},{},{},PIT",
                315_968_000.0 + k as f64 * 0.1,
                x0 + k as f64,
                2.0 * k as f64
            )
        })
        .collect()
}

fn csv_text(rows: &[String]) -> String {
    let mut text = String::from("TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n");
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    text
}

#[test]
fn minimal_argoverse_csv() {
    let text = csv_text(&csv_rows("00000000-a", "AGENT", 0..50, 0.0));
    let s = parse_argoverse_csv(text.as_bytes(), "one", vec![]).unwrap();
    assert_eq!(s.num_agents(), 1);
    assert_eq!((s.obs_len, s.pred_len), (20, 30));
    assert!(s.history_valid.iter().chain(&s.future_valid).all(|&v| v));
    assert_eq!(s.history(0)[3], [3.0, 6.0]);
    assert_eq!(s.future(0)[0], [20.0, 40.0]);
    assert_eq!(s.kind, ScenarioKind::Unknown);
}

#[test]
fn future_only_track_is_present_but_not_trainable() {
    let mut rows = csv_rows("b-other", "OTHERS", 25..50, 100.0);
    rows.extend(csv_rows("a-focal", "AGENT", 0..50, 0.0));
    rows.extend(csv_rows("c-av", "AV", 0..50, -10.0));
    let s = parse_argoverse_csv(csv_text(&rows).as_bytes(), "x", vec![]).unwrap();
    assert_eq!(s.num_agents(), 3);
    assert_eq!(s.focal, 0);
    assert_eq!(s.history(0)[0], [0.0, 0.0]);
    assert_eq!(s.valid_history_steps(1), 0);
    assert!(!s.is_trainable(1));
    assert_eq!(s.future_mask(1).iter().filter(|&&v| v).count(), 25);
    assert!(s.is_trainable(0) && s.is_trainable(2));
}

#[test]
fn row_order_does_not_matter() {
    let mut rows = csv_rows("a", "AGENT", 0..50, 0.0);
    rows.extend(csv_rows("b", "OTHERS", 0..40, 5.0));
    let sorted = parse_argoverse_csv(csv_text(&rows).as_bytes(), "x", vec![]).unwrap();
    let mut shuffled = rows.clone();
    Rng::seed(4).shuffle(&mut shuffled);
    let s = parse_argoverse_csv(csv_text(&shuffled).as_bytes(), "x", vec![]).unwrap();
    assert_eq!(s, sorted);
}

#[test]
fn argoverse_format_errors() {
    let missing = "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,CITY_NAME\n1.0,a,AGENT,0,PIT\n";
    let err = parse_argoverse_csv(missing.as_bytes(), "x", vec![]).unwrap_err();
    assert!(matches!(&err, DataError::Format(m) if m.contains("Y")), "{err}");

    let no_agent = csv_text(&csv_rows("a", "OTHERS", 0..50, 0.0));
    let err = parse_argoverse_csv(no_agent.as_bytes(), "x", vec![]).unwrap_err();
    assert!(matches!(&err, DataError::Format(m) if m.contains("AGENT")), "{err}");

    let short = csv_text(&csv_rows("a", "AGENT", 0..49, 0.0));
    let err = parse_argoverse_csv(short.as_bytes(), "x", vec![]).unwrap_err();
    assert!(matches!(err, DataError::Truncated(_)), "{err}");

    let mut rows = csv_rows("a", "AGENT", 0..50, 0.0);
    rows[3] = "x,a,AGENT,0,0,PIT".into();
    let err = parse_argoverse_csv(csv_text(&rows).as_bytes(), "x", vec![]).unwrap_err();
    assert!(matches!(err, DataError::Format(_)), "{err}");
}

#[test]
fn argoverse_files_and_lane_map() {
    let dir = std::env::temp_dir().join(format!("dyttp-csv-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let csv = dir.join("1234.csv");
    std::fs::write(&csv, csv_text(&csv_rows("a", "AGENT", 0..50, 0.0))).unwrap();
    let map = dir.join("map.json");
    std::fs::write(&map, r#"{"lanes":[{"id":"l1","points":[[0,0],[5,0.5]]}]}"#).unwrap();
    let s = load_argoverse_csv(&csv, Some(&map)).unwrap();
    assert_eq!(s.id, "1234");
    assert_eq!(s.lanes.len(), 1);
    assert_eq!(s.lanes[0].points[1], [5.0, 0.5]);
    std::fs::write(&map, r#"{"lanes":[{"id":"l1"}]}"#).unwrap();
    assert!(matches!(load_argoverse_csv(&csv, Some(&map)), Err(DataError::Format(_))));
    std::fs::remove_dir_all(&dir).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noiseless_labels_are_the_analytic_continuation(seed in any::<u64>(), index in 0usize..10_000) {
        let cfg = noiseless();
        let (s, paths) = generate_scenario(seed, index, &cfg);
        for (a, path) in paths.iter().enumerate() {
            for k in 0..50 {
                let want = path.position(k);
                let (got, valid) = if k < 20 {
                    (s.history(a)[k], s.history_mask(a)[k])
                } else {
                    (s.future(a)[k - 20], s.future_mask(a)[k - 20])
                };
                if valid {
                    prop_assert_eq!(got, [want[0] as f32 as f64, want[1] as f32 as f64]);
                }
            }
        }
    }

    #[test]
    fn round_trip_holds_for_generated_sets(seed in any::<u64>(), count in 0usize..12, noise in 0.0f64..0.5) {
        let cfg = GenConfig { noise_std: noise, ..GenConfig::default() };
        let split = generate_synthetic(count, seed, &cfg);
        prop_assert_eq!(decode_scenarios(&encode_scenarios(&split).unwrap()).unwrap(), split);
    }

    #[test]
    fn split_membership_is_a_function_of_id_and_seed(seed in any::<u64>(), count in 1usize..60) {
        let split = generate_synthetic(count, seed, &GenConfig::default());
        let val = (0..count).filter(|&i| is_validation(seed, i)).count();
        prop_assert_eq!(split.val.len(), val);
        prop_assert_eq!(split.len(), count);
        if count % 5 == 0 {
            prop_assert_eq!(val, count / 5);
        }
    }
}
