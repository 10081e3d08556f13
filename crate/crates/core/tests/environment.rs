use ovfl::environment::*;
use proptest::prelude::*;

#[test]
fn power_levels_are_uniform() {
    let mut env = Environment::new(WorldConfig::default(), 11).unwrap();
    let mut counts = [[0usize; 4]; 2];
    let mut slots = 0;
    while slots < 2000 {
        let d = env.next_round();
        for r in 0..d.labels().rows() {
            for (pu, &v) in d.labels().row(r).iter().enumerate() {
                counts[pu][v as usize - 1] += 1;
            }
        }
        slots += d.labels().rows();
    }
    for pu in counts {
        for c in pu {
            let p = c as f64 / slots as f64;
            assert!((p - 0.25).abs() < 0.05, "{p}");
        }
    }
}

#[test]
fn mobility_shifts_the_feature_distribution() {
    let world = WorldConfig { mobility_rate: 5.0, ..WorldConfig::default() };
    let mut env = Environment::new(world, 3).unwrap();
    let first = env.next_round();
    let start = env.state().positions.clone();
    for _ in 0..48 {
        env.next_round();
    }
    let last = env.next_round();
    let moved = env.state().positions.iter().zip(&start).map(|(a, b)| distance(*a, *b)).fold(0.0, f64::max);
    assert!(moved > 0.0 && moved <= 49.0 * 5.0 + 1e-9);
    let mean_rss = |d: &RoundDataset<f64>, k: usize| d.features()[k].data().chunks(102).map(|r| r[2..].iter().sum::<f64>() / 100.0).sum::<f64>() / 40.0;
    assert!((0..4).any(|k| (mean_rss(&first, k) - mean_rss(&last, k)).abs() > 0.1));
}

#[test]
fn static_users_keep_their_positions() {
    let world = WorldConfig { mobility_rate: 0.0, ..WorldConfig::default() };
    let mut env = Environment::new(world, 3).unwrap();
    let a = env.next_round();
    let b = env.next_round();
    for k in 0..4 {
        assert_eq!(&a.features()[k].data()[..2], &b.features()[k].data()[..2]);
    }
}

/// Position after travelling `s` meters along the polyline.
fn along(points: &[[f64; 2]], mut s: f64) -> [f64; 2] {
    for w in points.windows(2) {
        let len = distance(w[0], w[1]);
        if s <= len {
            let f = s / len;
            return [w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])];
        }
        s -= len;
    }
    *points.last().unwrap()
}

#[test]
fn trace_replay_follows_waypoints_in_order() {
    let routes = [
        vec![[10.0, 10.0], [210.0, 10.0], [210.0, 310.0]],
        vec![[400.0, 50.0], [100.0, 450.0], [50.0, 450.0]],
    ];
    let speeds = [4.0, 7.5];
    let traces = routes.iter().zip(speeds).map(|(r, v)| Trace::new(r.clone(), v).unwrap()).collect();
    let world = WorldConfig { num_sus: 2, ..WorldConfig::default() };
    let mut env = Environment::with_traces(world, traces, 0).unwrap();
    for round in 0..100 {
        let d = env.next_round();
        for k in 0..2 {
            let want = along(&routes[k], speeds[k] * round as f64);
            let got = &d.features()[k].data()[..2];
            assert!((got[0] - want[0]).abs() < 1e-9 && (got[1] - want[1]).abs() < 1e-9, "round {round} SU {k}");
        }
    }
}

#[test]
fn trace_setup_errors() {
    let t = Trace::new(vec![[0.0, 0.0], [10.0, 0.0]], 1.0).unwrap();
    assert!(Environment::with_traces(WorldConfig::default(), vec![t.clone()], 0).is_err());
    let outside = Trace::new(vec![[0.0, 0.0], [900.0, 0.0]], 1.0).unwrap();
    let world = WorldConfig { num_sus: 1, ..WorldConfig::default() };
    assert!(Environment::with_traces(world, vec![outside], 0).is_err());
    assert!(parse_trace("x,y\n1,2\n3").is_err());
    assert_eq!(parse_trace("x,y\n1,2\n3,4\n").unwrap(), vec![[1.0, 2.0], [3.0, 4.0]]);
}

#[test]
fn pu_count_sets_label_width() {
    for n in [1, 2, 4] {
        let world = WorldConfig::default().with_pus(n);
        let d = Environment::new(world, 1).unwrap().next_round();
        assert_eq!(d.labels().cols(), n);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn users_stay_inside_the_area(seed in 0u64..10_000, v in 0.0f64..80.0) {
        let world = WorldConfig { mobility_rate: v, rss_per_slot: 1, slots_per_round: 2, train_slots: 1, ..WorldConfig::default() };
        let mut env = Environment::new(world, seed).unwrap();
        for _ in 0..30 {
            env.next_round();
            for p in &env.state().positions {
                prop_assert!((0.0..=500.0).contains(&p[0]) && (0.0..=500.0).contains(&p[1]));
            }
        }
    }

    #[test]
    fn same_seed_same_stream(seed in 0u64..10_000) {
        let world = WorldConfig { rss_per_slot: 4, ..WorldConfig::default() };
        let a = SensingStream::new(Environment::new(world.clone(), seed).unwrap()).take_rounds(3);
        let b = SensingStream::new(Environment::new(world, seed).unwrap()).take_rounds(3);
        prop_assert_eq!(a, b);
    }
}
