use rand::SeedableRng;

use super::*;
use crate::backbone::DecoderConfig;
use crate::corpus::fixtures::unit;
use crate::corpus::ValenceLabel;

fn fixture() -> (Vec<FunctionalUnit>, Vocabulary) {
    let units = vec![
        unit("a", "my boss yelled at me", ValenceLabel::Negative, &[(1, 2, true), (2, 3, false), (4, 5, false)]),
        unit("b", "we went to the sea", ValenceLabel::Positive, &[(4, 5, true)]),
        unit("c", "then I went home", ValenceLabel::Neutral, &[(3, 4, false)]),
        unit("d", "nothing else", ValenceLabel::Neutral, &[]),
    ];
    let vocab = Vocabulary::build(units.iter());
    (units, vocab)
}

fn decoder(vocab: &Vocabulary, seed: u64) -> Decoder {
    Decoder::init(&DecoderConfig {
        vocab_size: vocab.len(),
        hidden_dim: 8,
        n_layers: 1,
        n_heads: 2,
        max_seq_len: 40,
        dropout_rate: 0.0,
        seed,
    })
    .unwrap()
}

/// `-ln softmax(row)[target]`, computed directly.
fn nll(row: &[f64], target: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
    -(row[target] - max - z.ln())
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let (units, vocab) = fixture();
    let mut dec = decoder(&vocab, 0);
    let emb = dec.body().token_embedding();
    dec.params_mut().value_mut(emb).fill(0.0);
    let prompts: Vec<PromptSequence> = units
        .iter()
        .map(|u| render_prompt_valence(u, &vocab, LossScope::Full).unwrap())
        .collect();
    let refs: Vec<&PromptSequence> = prompts.iter().collect();
    let loss = lm_loss(&dec, &refs).unwrap();
    assert!((loss - (vocab.len() as f64).ln()).abs() < 1e-6);
}

#[test]
fn masked_loss_matches_manual_recomputation() {
    let (units, vocab) = fixture();
    let dec = decoder(&vocab, 1);
    let prompts: Vec<PromptSequence> = units[..3]
        .iter()
        .map(|u| render_prompt_two_step(u, &vocab, TaskOrder::EcFirst, LossScope::TargetsOnly).unwrap())
        .collect();
    let refs: Vec<&PromptSequence> = prompts.iter().collect();
    let mut sum = 0.0;
    let mut count = 0;
    let mut per_seq = Vec::new();
    for p in &prompts {
        let logits = dec.forward(&[p.input_ids.clone()], &[vec![true; p.len()]]).unwrap().remove(0);
        let mut s = 0.0;
        for slot in &p.target_slots {
            s += nll(logits.row(slot.position - 1), p.input_ids[slot.position]);
        }
        per_seq.push((s / p.target_slots.len() as f64, p.target_slots.len()));
        sum += s;
        count += p.target_slots.len();
    }
    let batch = lm_loss(&dec, &refs).unwrap();
    assert!((batch - sum / count as f64).abs() < 1e-12);
    // Same value as the count-weighted mean of per-sequence losses.
    let weighted: f64 = per_seq.iter().map(|(l, n)| l * *n as f64).sum::<f64>() / count as f64;
    assert!((batch - weighted).abs() < 1e-12);
    for p in &prompts {
        let single = lm_loss(&dec, &[p]).unwrap();
        let (l, _) = per_seq[prompts.iter().position(|q| q == p).unwrap()];
        assert!((single - l).abs() < 1e-12);
    }
}

#[test]
fn empty_mask_is_an_error() {
    let (units, vocab) = fixture();
    let dec = decoder(&vocab, 0);
    let mut p = render_prompt_valence(&units[0], &vocab, LossScope::Full).unwrap();
    p.loss_mask.iter_mut().for_each(|m| *m = false);
    assert!(lm_loss(&dec, &[&p]).is_err());
}

#[test]
fn loss_decreases_under_gradient_steps() {
    let (units, vocab) = fixture();
    let mut dec = decoder(&vocab, 2);
    let prompts = training_prompts(&units, &vocab, GenObjective::Joint, LossScope::Full).unwrap();
    let refs: Vec<&PromptSequence> = prompts.iter().take(4).map(|t| &t.prompt).collect();
    let before = lm_loss(&dec, &refs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        dec.params_mut().zero_grads();
        train_lm(&mut dec, &refs, &mut rng).unwrap();
        let ids: Vec<_> = dec.params().ids().collect();
        for id in ids {
            let grad = dec.params().grad(id).clone();
            dec.params_mut().value_mut(id).add_scaled(&grad, -0.5);
        }
    }
    let after = lm_loss(&dec, &refs).unwrap();
    assert!(after < before * 0.8, "{before} -> {after}");
}

#[test]
fn decoding_is_schema_valid_and_deterministic() {
    let (units, vocab) = fixture();
    let dec = decoder(&vocab, 3);
    let p = render_prompt_ec(&units[0], &vocab, LossScope::Full).unwrap();
    let c = GenerationConstraint::from_prompt(&p);
    assert_eq!(c.len(), 3);
    assert!(c.schedule.iter().all(|s| s.forced == vocab.ecpred_sep()));
    let codes = constrained_decode(&dec, &p.input_ids[..p.prefix_len()], &c).unwrap();
    assert_eq!(codes.len(), 3);
    assert!(codes.iter().all(|&c| c < 2));
    assert_eq!(codes, constrained_decode(&dec, &p.input_ids[..p.prefix_len()], &c).unwrap());

    let v = render_prompt_valence(&units[1], &vocab, LossScope::Full).unwrap();
    let codes = constrained_decode(&dec, &v.input_ids[..v.prefix_len()], &GenerationConstraint::from_prompt(&v)).unwrap();
    assert_eq!(codes.len(), 1);
    assert!(codes[0] < 3);
}

#[test]
fn overlong_prefix_is_rejected() {
    let (units, vocab) = fixture();
    let dec = Decoder::init(&DecoderConfig { max_seq_len: 8, ..decoder(&vocab, 0).config().clone() }).unwrap();
    let p = render_prompt_ec(&units[0], &vocab, LossScope::Full).unwrap();
    let res = constrained_decode(&dec, &p.input_ids[..p.prefix_len()], &GenerationConstraint::from_prompt(&p));
    assert!(matches!(res, Err(Error::SequenceTooLong { .. })));
}

#[test]
fn oracle_decoding_keeps_gold_first_task() {
    let (units, vocab) = fixture();
    let dec = decoder(&vocab, 4);
    for order in [TaskOrder::ValFirst, TaskOrder::EcFirst] {
        let p = render_prompt_two_step(&units[0], &vocab, order, LossScope::Full).unwrap();
        let second = oracle_decode(&dec, &p, order).unwrap();
        let expected = match order {
            TaskOrder::ValFirst => 3,
            TaskOrder::EcFirst => 1,
        };
        assert_eq!(second.len(), expected);
        let first = &p.target_slots[0];
        assert_eq!(p.input_ids[first.position], first.gold_token());
    }
}

#[test]
fn two_step_prediction_orders() {
    let (units, vocab) = fixture();
    let dec = decoder(&vocab, 5);
    for u in &units {
        for setting in [
            GenSetting::Separate,
            GenSetting::TwoStep { order: TaskOrder::ValFirst, oracle: false },
            GenSetting::TwoStep { order: TaskOrder::EcFirst, oracle: false },
            GenSetting::TwoStep { order: TaskOrder::EcFirst, oracle: true },
        ] {
            let (v, ec) = predict_unit(&dec, u, &vocab, setting).unwrap();
            assert!(v < 3);
            assert_eq!(ec.len(), u.candidates.len());
        }
    }
}

#[test]
fn prompt_sets_per_objective() {
    let (units, vocab) = fixture();
    let count = |obj| {
        let ps = training_prompts(&units, &vocab, obj, LossScope::Full).unwrap();
        let n = |k| ps.iter().filter(|p| p.kind == k).count();
        (n(PromptKind::Valence), n(PromptKind::Ec), ps.len())
    };
    assert_eq!(count(GenObjective::Joint), (4, 3, 7));
    assert_eq!(count(GenObjective::Single(Task::Ec)), (0, 3, 3));
    assert_eq!(count(GenObjective::Single(Task::Valence)), (4, 0, 4));
    assert_eq!(count(GenObjective::TwoStep(TaskOrder::EcFirst)), (1, 0, 4));
}

#[test]
fn joint_mix_override() {
    let (units, vocab) = fixture();
    let ps = training_prompts(&units, &vocab, GenObjective::Joint, LossScope::Full).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let natural = mix_prompts(ps.clone(), None, &mut rng).unwrap();
    assert_eq!(natural, ps);
    let mixed = mix_prompts(ps, Some(0.5), &mut rng).unwrap();
    let ec = mixed.iter().filter(|p| p.kind == PromptKind::Ec).count();
    assert_eq!(ec, 4);
    assert_eq!(mixed.len(), 8);
}

#[test]
fn mixed_batch_padding() {
    let (units, vocab) = fixture();
    let items = training_prompts(&units[2..], &vocab, GenObjective::Joint, LossScope::Full).unwrap();
    let batch = MixedBatch { items };
    let (ids, mask) = batch.padded(vocab.pad());
    let width = batch.items.iter().map(|t| t.prompt.len()).max().unwrap();
    for ((row, m), t) in ids.iter().zip(&mask).zip(&batch.items) {
        assert_eq!(row.len(), width);
        assert_eq!(m.iter().filter(|&&b| b).count(), t.prompt.len());
        assert!(row[t.prompt.len()..].iter().all(|&x| x == vocab.pad()));
    }
}
