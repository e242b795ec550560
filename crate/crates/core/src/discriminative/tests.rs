use super::*;
use crate::corpus::fixtures::unit;
use crate::corpus::ValenceLabel;
use proptest::prelude::*;

fn fixture() -> (Vec<FunctionalUnit>, Vocabulary) {
    let units = vec![
        unit("a", "my boss yelled at me", ValenceLabel::Negative, &[(1, 2, true), (2, 3, false)]),
        unit("b", "we went to the sea", ValenceLabel::Positive, &[(4, 5, true)]),
        unit("c", "then I went home", ValenceLabel::Neutral, &[(3, 4, false)]),
        unit("d", "nothing else", ValenceLabel::Neutral, &[]),
    ];
    let vocab = Vocabulary::build(units.iter());
    (units, vocab)
}

fn model(vocab: &Vocabulary) -> DualHeadClassifier {
    DualHeadClassifier::init(&EncoderConfig {
        vocab_size: vocab.len(),
        hidden_dim: 8,
        n_layers: 1,
        n_heads: 2,
        max_seq_len: 32,
        dropout_rate: 0.1,
        seed: 5,
    })
    .unwrap()
}

fn encode_all(units: &[FunctionalUnit], vocab: &Vocabulary) -> Vec<DiscriminativeExample> {
    units.iter().map(|u| encode_discriminative(u, vocab, None).unwrap()).collect()
}

fn grad_norm(m: &DualHeadClassifier, ids: &[ParamId]) -> f64 {
    ids.iter()
        .flat_map(|&id| m.params().grad(id).data().iter().map(|x| x * x))
        .sum::<f64>()
}

#[test]
fn interpolation_examples() {
    assert_eq!(interpolated_loss(0.5, 4.0, 2.0).unwrap(), 3.0);
    assert_eq!(interpolated_loss(0.0, 7.5, 1.25).unwrap(), 1.25);
    assert_eq!(interpolated_loss(1.0, 7.5, 1.25).unwrap(), 7.5);
    assert!((interpolated_loss(0.3, 2.0, 1.0).unwrap() - 1.3).abs() < 1e-15);
    assert!(interpolated_loss(1.1, 1.0, 1.0).is_err());
    assert!(interpolated_loss(0.5, f64::NAN, 1.0).is_err());
    assert!(interpolated_loss(0.5, -1.0, 1.0).is_err());
}

#[test]
fn probabilities_are_normalized_and_reproducible() {
    let (units, vocab) = fixture();
    let m = model(&vocab);
    let batch = encode_all(&units, &vocab);
    let v = m.forward_single(&batch, Task::Valence).unwrap();
    assert_eq!(v.probs.len(), 4);
    let e = m.forward_single(&batch, Task::Ec).unwrap();
    assert_eq!(e.probs.len(), 4);
    for row in v.probs.iter().chain(&e.probs) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(v, model(&vocab).forward_single(&batch, Task::Valence).unwrap());
}

#[test]
fn ec_task_needs_candidates() {
    let (units, vocab) = fixture();
    let m = model(&vocab);
    let batch = encode_all(&units[3..], &vocab);
    assert!(m.forward_single(&batch, Task::Ec).is_err());
    assert!(m.forward_single(&batch, Task::Valence).is_ok());
}

#[test]
fn joint_loss_is_the_interpolation_of_head_losses() {
    let (units, vocab) = fixture();
    let m = model(&vocab);
    let batch = encode_all(&units, &vocab);
    let out = m.forward_joint(&batch, 0.3).unwrap();
    let v = m.forward_single(&batch, Task::Valence).unwrap();
    let e = m.forward_single(&batch, Task::Ec).unwrap();
    assert!((out.valence.loss - v.loss).abs() < 1e-12);
    assert!((out.ec.loss - e.loss).abs() < 1e-12);
    assert_eq!(out.loss_total, 0.3 * out.valence.loss + 0.7 * out.ec.loss);
    assert_eq!(m.forward_joint(&batch, 1.0).unwrap().loss_total, out.valence.loss);
}

#[test]
fn lambda_endpoints_block_the_other_head() {
    let (units, vocab) = fixture();
    let batch = encode_all(&units, &vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (lambda, silent, live) in [(1.0, Task::Ec, Task::Valence), (0.0, Task::Valence, Task::Ec)] {
        let mut m = model(&vocab);
        m.params_mut().zero_grads();
        m.train_joint(&batch, lambda, &mut rng).unwrap();
        assert_eq!(grad_norm(&m, &m.head_params(silent)), 0.0, "lambda {lambda}");
        assert!(grad_norm(&m, &m.head_params(live)) > 0.0);
        assert!(grad_norm(&m, &m.encoder_params()) > 0.0);
    }
}

#[test]
fn teacher_forcing_at_one_always_uses_gold() {
    let (units, vocab) = fixture();
    let refs: Vec<&FunctionalUnit> = units.iter().collect();
    let mut m = model(&vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for order in [TaskOrder::ValFirst, TaskOrder::EcFirst] {
        let out = m.train_two_step(&refs, &vocab, order, 0.5, 1.0, &mut rng).unwrap();
        assert!(out.contexts.iter().all(|c| c.source == ContextSource::GroundTruth));
    }
    let out = m.forward_two_step(&refs, &vocab, TaskOrder::EcFirst, 0.4, true).unwrap();
    assert_eq!(out.contexts[0], TwoStepContext::ec(vec!["boss".into()], ContextSource::GroundTruth));
    assert_eq!(out.contexts[3], TwoStepContext::ec(vec![], ContextSource::GroundTruth));
}

#[test]
fn inference_contexts_follow_step_one_argmax() {
    let (units, vocab) = fixture();
    let refs: Vec<&FunctionalUnit> = units.iter().collect();
    let m = model(&vocab);
    let out = m.forward_two_step(&refs, &vocab, TaskOrder::ValFirst, 0.5, false).unwrap();
    let single = m.forward_single(&encode_all(&units, &vocab), Task::Valence).unwrap();
    assert_eq!(out.first, single);
    for (ctx, p) in out.contexts.iter().zip(&out.first.probs) {
        assert_eq!(*ctx, TwoStepContext::valence(argmax(p), ContextSource::Predicted));
    }
    // One EC row per candidate; the candidate-free unit contributes none.
    assert_eq!(out.second.probs.len(), 4);
}

#[test]
fn predict_unit_paths() {
    let (units, vocab) = fixture();
    let m = model(&vocab);
    for setting in [
        DiscSetting::Single,
        DiscSetting::Joint,
        DiscSetting::TwoStep { order: TaskOrder::ValFirst, oracle: false },
        DiscSetting::TwoStep { order: TaskOrder::EcFirst, oracle: true },
    ] {
        for u in &units {
            let (v, ec) = m.predict_unit(u, &vocab, setting).unwrap();
            assert!(v < 3);
            assert_eq!(ec.len(), u.candidates.len());
            assert!(ec.iter().all(|&c| c < 2));
            assert_eq!((v, ec), m.predict_unit(u, &vocab, setting).unwrap());
        }
    }
    let single = m.predict_unit(&units[0], &vocab, DiscSetting::Single).unwrap();
    let two = m
        .predict_unit(&units[0], &vocab, DiscSetting::TwoStep { order: TaskOrder::ValFirst, oracle: false })
        .unwrap();
    assert_eq!(single.0, two.0);
}

#[test]
fn overlong_context_is_an_error() {
    let (units, vocab) = fixture();
    let m = DualHeadClassifier::init(&EncoderConfig {
        max_seq_len: 7,
        ..model(&vocab).config().clone()
    })
    .unwrap();
    assert!(m.predict_unit(&units[0], &vocab, DiscSetting::Single).is_ok());
    let res = m.predict_unit(&units[0], &vocab, DiscSetting::TwoStep { order: TaskOrder::ValFirst, oracle: false });
    assert!(matches!(res, Err(Error::SequenceTooLong { .. })));
}

#[test]
fn checkpoint_round_trip() {
    let (_, vocab) = fixture();
    let m = model(&vocab);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    m.save(&p).unwrap();
    let back = DualHeadClassifier::load(&p).unwrap();
    assert_eq!(back.params().fingerprint(), m.params().fingerprint());
}

#[test]
fn teacher_forcing_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for p in [0.1, 0.5, 1.0, 0.0] {
        let hits = (0..10_000).filter(|_| teacher_force(&mut rng, p)).count();
        assert!((hits as f64 / 10_000.0 - p).abs() <= 0.02, "p={p} hits={hits}");
    }
}

proptest! {
    #[test]
    fn loss_is_linear_in_lambda(lv in 0.0f64..50.0, le in 0.0f64..50.0, lambda in 0.0f64..=1.0) {
        let l0 = interpolated_loss(0.0, lv, le).unwrap();
        let l1 = interpolated_loss(1.0, lv, le).unwrap();
        let l = interpolated_loss(lambda, lv, le).unwrap();
        prop_assert!((l - l0 - lambda * (l1 - l0)).abs() <= 1e-9);
    }

    #[test]
    fn argmax_survives_increasing_transforms(xs in proptest::collection::vec(-20.0f64..20.0, 1..5)) {
        let a = argmax(&xs);
        let t: Vec<f64> = xs.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(argmax(&t), a);
        let cubed: Vec<f64> = xs.iter().map(|x| x * x * x).collect();
        prop_assert_eq!(argmax(&cubed), a);
    }
}

#[test]
fn argmax_ties_go_to_lowest_code() {
    assert_eq!(argmax(&[0.5, 0.5]), 0);
    assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
}
