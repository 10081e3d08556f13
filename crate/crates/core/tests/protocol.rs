mod common;

use common::{model, small_arch, synthetic_rounds};
use ovfl::environment::{Environment, RoundDataset, SensingStream, WorldConfig};
use ovfl::nn::{mse_loss, predict, Architecture, DenseMatrix, MlpParams, SplitModel};
use ovfl::protocol::*;
use ovfl::quantize::QuantizerSpec;
use ovfl::Error;
use proptest::prelude::*;

fn config(e: usize, eta: f64, quantizer: QuantizerSpec) -> ProtocolConfig {
    ProtocolConfig {
        local_iters: e,
        eta,
        quantizer,
        ..ProtocolConfig::default()
    }
}

fn trainer(m: SplitModel<f64>, cfg: ProtocolConfig) -> TrainerState<f64> {
    TrainerState::new(m, cfg).unwrap()
}

/// Loss seen by party `k` as a plain function of its own parameters.
fn party_loss(k: usize, rep: &ModelRepresentation<f64>, own: &MlpParams<f64>, x: &[DenseMatrix<f64>], y: &DenseMatrix<f64>) -> f64 {
    let mut inputs = rep.embeddings_q.clone();
    let head = if k == 0 {
        own
    } else {
        inputs[k - 1] = predict(own, &x[k - 1]).unwrap();
        &rep.head_q
    };
    let refs: Vec<_> = inputs.iter().collect();
    let pred = predict(head, &DenseMatrix::hconcat(&refs).unwrap()).unwrap();
    mse_loss(&pred, y).unwrap()
}

fn max_rel_fd_error(k: usize, rep: &ModelRepresentation<f64>, own: &MlpParams<f64>, x: &[DenseMatrix<f64>], y: &DenseMatrix<f64>) -> f64 {
    let features = (k > 0).then(|| &x[k - 1]);
    let (_, grads) = partial_gradient(k, rep, own, features, y).unwrap();
    let analytic = grads.flatten();
    let base = own.flatten();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        let up = party_loss(k, rep, &own.unflatten(&p).unwrap(), x, y);
        p[i] -= 2.0 * h;
        let down = party_loss(k, rep, &own.unflatten(&p).unwrap(), x, y);
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

#[test]
fn partial_gradients_match_finite_differences() {
    let arch = small_arch(3);
    let data = synthetic_rounds(&arch, 1, 12, 8, 5);
    let m = model(&arch, 9);
    let train = data[0].train();
    for q in [QuantizerSpec::identity(), QuantizerSpec::uniform(3), QuantizerSpec::hex(2)] {
        let rep = ModelRepresentation::build(&m, &train.features, &q).unwrap();
        for k in 0..=3 {
            let err = max_rel_fd_error(k, &rep, m.party(k), &train.features, &train.labels);
            assert!(err < 1e-4, "party {k} with {q:?}: {err}");
        }
    }
}

#[test]
fn partial_gradient_rejects_bad_inputs() {
    let arch = small_arch(2);
    let data = synthetic_rounds(&arch, 1, 6, 4, 1);
    let m = model(&arch, 1);
    let train = data[0].train();
    let rep = ModelRepresentation::build(&m, &train.features, &QuantizerSpec::identity()).unwrap();
    assert!(matches!(partial_gradient(3, &rep, &m.head, None, &train.labels), Err(Error::Protocol(_))));
    assert!(matches!(partial_gradient(1, &rep, m.party(1), None, &train.labels), Err(Error::Protocol(_))));
    let short = train.labels.select_rows(0..2).unwrap();
    assert!(matches!(partial_gradient(0, &rep, &m.head, None, &short), Err(Error::Shape { .. })));
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let arch = small_arch(2);
    let data = synthetic_rounds(&arch, 2, 6, 4, 2);
    let m = model(&arch, 2);
    let mut st = trainer(m.clone(), config(1, 0.0, QuantizerSpec::uniform(4)));
    run(&mut st, Algorithm::Ovfl, 50, &data).unwrap();
    assert_eq!(st.model, m);
}

#[test]
fn single_party_round_equals_joint_backprop_step() {
    let arch = small_arch(1);
    let data = synthetic_rounds(&arch, 3, 10, 6, 3);
    let mut st = trainer(model(&arch, 4), config(1, 0.05, QuantizerSpec::identity()));
    for d in &data {
        let mut expected = st.model.clone();
        let (_, grads) = expected.loss_and_grad(&d.train().features, &d.train().labels).unwrap();
        expected.axpy(-0.05, &grads).unwrap();
        ovfl_round(&mut st, d).unwrap();
        for (a, b) in st.model.flatten().iter().zip(expected.flatten()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn lossless_scalar_matches_identity_bit_for_bit() {
    let arch = small_arch(3);
    let data = synthetic_rounds(&arch, 5, 8, 5, 6);
    let mut a = trainer(model(&arch, 6), config(2, 0.05, QuantizerSpec::identity()));
    let mut b = trainer(model(&arch, 6), config(2, 0.05, QuantizerSpec::uniform(32)));
    let la = run(&mut a, Algorithm::Ovfl, 50, &data).unwrap();
    let lb = run(&mut b, Algorithm::Ovfl, 50, &data).unwrap();
    assert_eq!(a.model, b.model);
    let bits = |l: &RunLog| l.rounds.iter().map(|r| (r.bits_uplink, r.bits_downlink, r.test_loss.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&la), bits(&lb));
}

#[test]
fn bits_do_not_depend_on_local_iterations() {
    let arch = small_arch(2);
    let data = synthetic_rounds(&arch, 2, 8, 5, 7);
    let bits = |e| {
        let mut st = trainer(model(&arch, 7), config(e, 0.01, QuantizerSpec::uniform(4)));
        run(&mut st, Algorithm::Ovfl, 50, &data)
            .unwrap()
            .rounds
            .iter()
            .map(|r| (r.bits_uplink, r.bits_downlink))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(1), bits(4));
}

#[test]
fn uplink_bits_grow_strictly_with_resolution() {
    let arch = small_arch(2);
    let data = synthetic_rounds(&arch, 1, 8, 5, 8);
    let mut last = 0;
    for b in [1, 2, 4, 8, 16, 32] {
        let mut st = trainer(model(&arch, 8), config(1, 0.01, QuantizerSpec::uniform(b)));
        let up = ovfl_round(&mut st, &data[0]).unwrap().bits_uplink;
        assert!(up > last, "b={b}");
        last = up;
    }
}

#[test]
fn representation_bit_accounting() {
    let arch = small_arch(3);
    let data = synthetic_rounds(&arch, 1, 8, 5, 8);
    let m = model(&arch, 8);
    let rep = ModelRepresentation::build(&m, &data[0].train().features, &QuantizerSpec::uniform(4)).unwrap();
    // 5 rows x 4 embedding values at 4 bits plus a 64-bit range per SU.
    assert_eq!(rep.bits_up, vec![5 * 4 * 4 + 64; 3]);
    // Head (12, 6, 2): four tensors, each with its own range.
    let head_values = 12 * 6 + 6 + 6 * 2 + 2;
    assert_eq!(rep.head_bits, head_values * 4 + 4 * 64);
    assert_eq!(rep.bits_down, 3 * (rep.head_bits + 3 * (5 * 4 * 4 + 64)));
}

#[test]
fn centralized_uplink_is_raw_feature_bits() {
    let world = WorldConfig::default();
    let data = SensingStream::new(Environment::new(world, 0).unwrap()).take_rounds(1);
    let mut st = trainer(SplitModel::init(&Architecture::sensing(4, 2), 0).unwrap(), config(1, 1e-4, QuantizerSpec::identity()));
    let m = cc_round(&mut st, &data[0]).unwrap();
    assert_eq!(m.bits_uplink, 4 * 20 * 102 * 32);
    assert_eq!(m.bits_uplink, 261_120);
    assert_eq!(m.bits_downlink, 0);
}

#[test]
fn centralized_matches_ovfl_without_staleness() {
    let arch = small_arch(3);
    let data = synthetic_rounds(&arch, 3, 8, 5, 10);
    let mut a = trainer(model(&arch, 10), config(1, 0.05, QuantizerSpec::identity()));
    let mut b = trainer(model(&arch, 10), config(1, 0.05, QuantizerSpec::identity()));
    run(&mut a, Algorithm::Cc, 50, &data).unwrap();
    run(&mut b, Algorithm::Ovfl, 50, &data).unwrap();
    for (x, y) in a.model.flatten().iter().zip(b.model.flatten()) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn no_wall(mut m: RoundMetrics) -> RoundMetrics {
    m.wall_time = 0.0;
    m
}

#[test]
fn lazy_baseline_freezes_after_cutoff() {
    let arch = small_arch(2);
    let data = synthetic_rounds(&arch, 6, 8, 5, 11);
    let cfg = config(2, 0.05, QuantizerSpec::uniform(4));
    let mut lazy = trainer(model(&arch, 11), cfg.clone());
    let mut full = trainer(model(&arch, 11), cfg);
    for d in &data[..3] {
        let l = lc_round(&mut lazy, d, 3).unwrap();
        let f = ovfl_round(&mut full, d).unwrap();
        assert_eq!(no_wall(l), no_wall(f));
    }
    assert_eq!(lazy.model, full.model);
    let frozen = lazy.model.clone();
    for d in &data[3..] {
        let m = lc_round(&mut lazy, d, 3).unwrap();
        assert_eq!((m.bits_uplink, m.bits_downlink), (0, 0));
        assert_eq!(lazy.model, frozen);
    }
    assert!(matches!(lc_round(&mut lazy, &data[0], 0), Err(Error::Config(_))));
}

#[test]
fn evaluation_examples() {
    let arch = small_arch(2);
    let data = synthetic_rounds(&arch, 1, 9, 5, 12);
    let d = &data[0];
    let zero = model(&arch, 12).zeros_like();
    let loss = evaluate(&zero, d, EvalMode::FullPrecision, &QuantizerSpec::identity()).unwrap();
    let labels = d.test().labels.data();
    let mean_sq = labels.iter().map(|v| v * v).sum::<f64>() / labels.len() as f64;
    assert!((loss - mean_sq).abs() < 1e-12);

    let m = model(&arch, 12);
    let full = evaluate(&m, d, EvalMode::FullPrecision, &QuantizerSpec::uniform(32)).unwrap();
    let quant = evaluate(&m, d, EvalMode::Quantized, &QuantizerSpec::uniform(32)).unwrap();
    assert_eq!(full, quant);
    assert_eq!(full, evaluate(&m, d, EvalMode::FullPrecision, &QuantizerSpec::uniform(32)).unwrap());
    let coarse = evaluate(&m, d, EvalMode::Quantized, &QuantizerSpec::uniform(1)).unwrap();
    assert_ne!(full, coarse);

    let no_test = RoundDataset::new(1, d.features().to_vec(), d.labels().clone(), 9).unwrap();
    assert!(evaluate(&m, &no_test, EvalMode::FullPrecision, &QuantizerSpec::identity()).is_err());
}

#[test]
fn test_loss_is_measured_after_the_update() {
    let arch = small_arch(2);
    let data = synthetic_rounds(&arch, 1, 9, 5, 13);
    let mut st = trainer(model(&arch, 13), config(1, 0.05, QuantizerSpec::uniform(4)));
    let before = st.model.loss(&data[0].train().features, &data[0].train().labels).unwrap();
    let m = ovfl_round(&mut st, &data[0]).unwrap();
    assert_eq!(m.round, 1);
    assert_eq!(m.train_loss_pre, before);
    let after = evaluate(&st.model, &data[0], EvalMode::FullPrecision, &QuantizerSpec::identity()).unwrap();
    assert_eq!(m.test_loss, after);
}

#[test]
fn divergence_reports_the_round() {
    let arch = small_arch(2);
    let data = synthetic_rounds(&arch, 40, 8, 5, 14);
    let mut st = trainer(model(&arch, 14), config(4, 1e6, QuantizerSpec::identity()));
    let err = run(&mut st, Algorithm::Ovfl, 50, &data).unwrap_err();
    match err {
        Error::Divergence { round, .. } => assert!((1..=40).contains(&round)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let arch = small_arch(2);
    let bad = [
        config(0, 0.1, QuantizerSpec::identity()),
        config(1, -1.0, QuantizerSpec::identity()),
        config(1, 0.1, QuantizerSpec::uniform(0)),
        ProtocolConfig { weight_clip: Some(0.0), ..ProtocolConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(TrainerState::new(model(&arch, 0), cfg), Err(Error::Config(_))));
    }
    let data = synthetic_rounds(&small_arch(3), 1, 8, 5, 0);
    let mut st = trainer(model(&arch, 0), ProtocolConfig::default());
    assert!(matches!(ovfl_round(&mut st, &data[0]), Err(Error::Shape { .. })));
    let arch2 = small_arch(2);
    let data2 = synthetic_rounds(&arch2, 1, 8, 5, 0);
    assert!(matches!(ovfl_round_ordered(&mut st, &data2[0], &[0, 1, 1]), Err(Error::Protocol(_))));
}

#[test]
fn weight_clip_bounds_every_parameter() {
    let arch = small_arch(2);
    let data = synthetic_rounds(&arch, 5, 8, 5, 15);
    let cfg = ProtocolConfig { weight_clip: Some(0.2), record_trace: true, ..config(2, 0.5, QuantizerSpec::uniform(3)) };
    let mut st = trainer(model(&arch, 15), cfg);
    run(&mut st, Algorithm::Ovfl, 50, &data).unwrap();
    assert!(st.model.max_abs() <= 0.2);
}

#[test]
fn trace_records_every_iteration() {
    let arch = small_arch(2);
    let data = synthetic_rounds(&arch, 3, 8, 5, 16);
    let cfg = ProtocolConfig { record_trace: true, ..config(3, 0.05, QuantizerSpec::uniform(2)) };
    let mut st = trainer(model(&arch, 16), cfg);
    let log = run(&mut st, Algorithm::Ovfl, 50, &data).unwrap();
    let trace = log.trace.unwrap();
    assert_eq!(trace.iterations.len(), 3 * 3 * 3);
    assert_eq!(trace.num_params, st.model.num_params());
    // three pairs per party and round when the parameters moved
    assert!(trace.smoothness_ratios.len() <= 3 * 3 * 3);
    assert!(!trace.smoothness_ratios.is_empty());
    assert!(trace.iterations.iter().any(|s| s.quant_gap > 0.0));
}

#[test]
fn untraced_runs_have_no_trace() {
    let arch = small_arch(2);
    let data = synthetic_rounds(&arch, 1, 8, 5, 17);
    let mut st = trainer(model(&arch, 17), ProtocolConfig::default());
    assert!(run(&mut st, Algorithm::Ovfl, 50, &data).unwrap().trace.is_none());
}

#[test]
fn f32_trainer_runs() {
    let arch = small_arch(2);
    let data: Vec<_> = synthetic_rounds(&arch, 3, 8, 5, 18).iter().map(|d| d.cast::<f32>()).collect();
    let mut st = TrainerState::new(SplitModel::<f32>::init(&arch, 18).unwrap(), config(2, 0.05, QuantizerSpec::hex(3))).unwrap();
    let log = run(&mut st, Algorithm::Ovfl, 50, &data).unwrap();
    assert_eq!(log.rounds.len(), 3);
    assert!(log.rounds.iter().all(|r| r.test_loss.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn party_order_does_not_matter(seed in 0u64..1000, order in Just(vec![0usize, 1, 2, 3]).prop_shuffle(), b in 1u32..6, hex in any::<bool>()) {
        let arch = small_arch(3);
        let data = synthetic_rounds(&arch, 2, 8, 5, seed);
        let q = if hex { QuantizerSpec::hex(b) } else { QuantizerSpec::uniform(b) };
        let mut a = trainer(model(&arch, seed), config(3, 0.05, q));
        let mut c = trainer(model(&arch, seed), config(3, 0.05, q));
        for d in &data {
            let ma = ovfl_round(&mut a, d).unwrap();
            let mc = ovfl_round_ordered(&mut c, d, &order).unwrap();
            prop_assert_eq!(no_wall(ma), no_wall(mc));
        }
        prop_assert_eq!(&a.model, &c.model);
    }

    #[test]
    fn lossless_equivalence_holds_for_any_seed(seed in 0u64..1000, e in 1usize..4) {
        let arch = small_arch(2);
        let data = synthetic_rounds(&arch, 3, 8, 5, seed);
        let mut a = trainer(model(&arch, seed), config(e, 0.05, QuantizerSpec::identity()));
        let mut b = trainer(model(&arch, seed), config(e, 0.05, QuantizerSpec::uniform(32)));
        run(&mut a, Algorithm::Ovfl, 50, &data).unwrap();
        run(&mut b, Algorithm::Ovfl, 50, &data).unwrap();
        prop_assert_eq!(a.model, b.model);
    }
}

#[test]
fn finer_quantization_tracks_the_lossless_run() {
    let arch = small_arch(3);
    let data = synthetic_rounds(&arch, 20, 10, 6, 21);
    let trajectory = |b| {
        let mut st = trainer(model(&arch, 21), config(2, 0.05, QuantizerSpec::uniform(b)));
        data.iter()
            .map(|d| {
                ovfl_round(&mut st, d).unwrap();
                st.model.flatten()
            })
            .collect::<Vec<_>>()
    };
    let reference = trajectory(32);
    let median_gap = |b| {
        let mut gaps: Vec<f64> = trajectory(b)
            .iter()
            .zip(&reference)
            .map(|(a, r)| a.iter().zip(r).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .collect();
        gaps.sort_by(f64::total_cmp);
        gaps[gaps.len() / 2]
    };
    let gaps: Vec<f64> = [2, 4, 8, 32].iter().map(|&b| median_gap(b)).collect();
    for w in gaps.windows(2) {
        assert!(w[1] <= w[0], "{gaps:?}");
    }
    assert_eq!(gaps[3], 0.0);
}
