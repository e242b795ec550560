use proptest::prelude::*;

use super::*;

struct Toy {
    params: ParamStore,
}

impl Trainable for Toy {
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

fn toy() -> Toy {
    let mut params = ParamStore::new();
    params.add("w", Matrix::from_vec(1, 2, vec![1.0, -2.0]));
    Toy { params }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        max_epochs: 12,
        learning_rate: 0.05,
        hidden_dim: 8,
        n_heads: 2,
        ..TrainConfig::defaults(&RegimeConfig::new(Family::Disc, Setting::Joint), Profile::Desk)
    }
}

/// Quadratic pull of both weights towards the mean item value.
fn quad_step(m: &mut Toy, batch: &[&f64], _: &mut ChaCha8Rng) -> Result<f64> {
    let target = batch.iter().copied().sum::<f64>() / batch.len() as f64;
    let id = m.params.ids().next().unwrap();
    let w = m.params.value(id).data().to_vec();
    let g: Vec<f64> = w.iter().map(|x| 2.0 * (x - target)).collect();
    m.params.grad_mut(id).data_mut().copy_from_slice(&g);
    Ok(w.iter().map(|x| (x - target).powi(2)).sum())
}

fn weight(m: &Toy) -> Vec<f64> {
    m.params.value(m.params.ids().next().unwrap()).data().to_vec()
}

#[test]
fn schedule_spot_values() {
    assert_eq!(lr_at(0, 100, 1e-3, 0.1).unwrap(), 0.0);
    assert_eq!(lr_at(10, 100, 1e-3, 0.1).unwrap(), 1e-3);
    assert!((lr_at(55, 100, 1e-3, 0.1).unwrap() - 5.0e-4).abs() < 1e-18);
    assert_eq!(lr_at(100, 100, 1e-3, 0.1).unwrap(), 0.0);
    assert!(lr_at(101, 100, 1e-3, 0.1).is_err());
    // Tiny runs still get one warmup step.
    assert_eq!(warmup_steps(3, 0.1), 1);
    assert_eq!(lr_at(1, 3, 2.0, 0.1).unwrap(), 2.0);
}

proptest! {
    #[test]
    fn schedule_is_piecewise_linear_with_peak_max(total in 2usize..400, wf in 0.0f64..0.9, peak in 1e-6f64..1.0) {
        let trace: Vec<f64> = (0..=total).map(|s| lr_at(s, total, peak, wf).unwrap()).collect();
        let max = trace.iter().cloned().fold(0.0, f64::max);
        prop_assert!((max - peak).abs() <= peak * 1e-12);
        let w = warmup_steps(total, wf);
        // Constant slope on each side of the apex.
        for s in 1..total {
            let (a, b, c) = (trace[s - 1], trace[s], trace[s + 1]);
            if s != w {
                prop_assert!(((b - a) - (c - b)).abs() <= peak * 1e-9);
            }
        }
    }
}

#[test]
fn published_defaults() {
    let cfg = |id: &str| TrainConfig::defaults(&id.parse().unwrap(), Profile::Published);
    let joint = cfg("disc:joint");
    assert_eq!((joint.learning_rate, joint.lambda), (1e-5, 0.3));
    assert_eq!((joint.batch_size, joint.max_epochs, joint.early_stop_patience), (32, 30, 5));
    assert_eq!(joint.warmup_fraction, 0.1);
    assert_eq!(cfg("disc:single-val").learning_rate, 5e-5);
    assert_eq!(cfg("disc:single-ec").learning_rate, 4e-5);
    let ve = cfg("disc:two-step-val-ec");
    assert_eq!((ve.learning_rate, ve.lambda, ve.tf_prob), (4e-5, 0.5, 1.0));
    let ev = cfg("disc:two-step-ec-val");
    assert_eq!((ev.learning_rate, ev.lambda, ev.tf_prob), (6e-5, 0.4, 0.1));
    let oracle = cfg("disc:two-step-ec-val:oracle");
    assert_eq!((oracle.learning_rate, oracle.lambda), (6e-5, 0.4));
    assert_eq!(cfg("gen:single-val").learning_rate, 9e-3);
    assert_eq!(cfg("gen:single-ec").learning_rate, 8e-3);
    assert_eq!(cfg("gen:two-step-val-ec").learning_rate, 9e-4);
    assert_eq!(cfg("gen:two-step-ec-val").learning_rate, 7e-4);
    assert_eq!(cfg("gen:joint").learning_rate, 8e-3);
    assert_eq!(cfg("gen:joint").max_epochs, 60);
    // The first phase of domain adaptation trains the first task alone.
    assert_eq!(cfg("gen:two-step-ec-val:domain-adapt").adapt_learning_rate, 8e-3);
    assert_eq!(cfg("gen:two-step-val-ec:domain-adapt").adapt_learning_rate, 9e-3);
}

#[test]
fn adamw_first_step_by_hand() {
    let mut m = toy();
    let id = m.params.ids().next().unwrap();
    m.params.grad_mut(id).data_mut().copy_from_slice(&[0.5, -4.0]);
    let cfg = small_config();
    let mut opt = AdamW::new(&m.params, &cfg);
    opt.step(&mut m.params, 0.1);
    // Bias-corrected moments equal g and g², so the update is g/(|g|+eps).
    let expect = |w: f64, g: f64| w - 0.1 * (g / (g.abs() + 1e-8) + 0.01 * w);
    let w = weight(&m);
    assert!((w[0] - expect(1.0, 0.5)).abs() < 1e-15);
    assert!((w[1] - expect(-2.0, -4.0)).abs() < 1e-15);
}

#[test]
fn converges_and_trace_matches_schedule() {
    let items: Vec<f64> = vec![3.0; 6];
    let mut m = toy();
    let cfg = small_config();
    let log = train(&mut m, &items, &cfg, quad_step, |m| {
        Ok(-weight(m).iter().map(|x| (x - 3.0).powi(2)).sum::<f64>())
    })
    .unwrap();
    assert_eq!(log.total_steps, 36);
    for (k, lr) in log.lr_trace.iter().enumerate() {
        assert_eq!(*lr, lr_at(k + 1, 36, cfg.learning_rate, cfg.warmup_fraction).unwrap());
    }
    assert!(log.train_loss.last().unwrap() < &log.train_loss[0]);
    assert_eq!(log.best_checkpoint, m.params.fingerprint());
}

#[test]
fn patience_stops_six_epochs_in() {
    let items = vec![0.0; 4];
    let mut m = toy();
    let mut epoch = 0;
    let log = train(&mut m, &items, &small_config(), quad_step, |_| {
        epoch += 1;
        Ok(if epoch == 1 { 0.5 } else { 0.4 })
    })
    .unwrap();
    assert_eq!(log.stopping_epoch, 6);
    assert_eq!(log.best_epoch, 1);
}

#[test]
fn best_checkpoint_is_restored() {
    let items = vec![0.0; 4];
    let metrics = [0.1, 0.3, 0.2, 0.3, 0.25, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut snapshots = Vec::new();
    let mut m = toy();
    let log = train(&mut m, &items, &small_config(), quad_step, |m| {
        snapshots.push(weight(m));
        Ok(metrics[snapshots.len() - 1])
    })
    .unwrap();
    // Ties do not replace the earlier best.
    assert_eq!(log.best_epoch, 2);
    assert_eq!(weight(&m), snapshots[1]);
    let best = log.val_metric[log.best_epoch - 1];
    assert!(log.val_metric[..log.best_epoch].iter().all(|&v| v <= best));
}

#[test]
fn same_seed_same_log() {
    let items: Vec<f64> = (0..7).map(|i| i as f64).collect();
    let run = |seed| {
        let mut m = toy();
        let cfg = TrainConfig { seed, ..small_config() };
        train(&mut m, &items, &cfg, quad_step, |m| Ok(-weight(m)[0].abs())).unwrap()
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4).train_loss, run(5).train_loss);
}

#[test]
fn nan_loss_names_the_step() {
    let items = vec![0.0; 4];
    let mut m = toy();
    let mut calls = 0;
    let res = train(
        &mut m,
        &items,
        &small_config(),
        |m, b, r| {
            calls += 1;
            if calls == 3 {
                Ok(f64::NAN)
            } else {
                quad_step(m, b, r)
            }
        },
        |_| Ok(0.0),
    );
    match res {
        Err(Error::Training { step, .. }) => assert_eq!(step, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn overflowing_weights_stop_training() {
    let items = vec![0.0; 4];
    let mut m = toy();
    let mut calls = 0;
    let res = train(
        &mut m,
        &items,
        &small_config(),
        |m, b, r| {
            calls += 1;
            let loss = quad_step(m, b, r);
            if calls == 2 {
                let id = m.params.ids().next().unwrap();
                m.params.value_mut(id).data_mut()[0] = f64::INFINITY;
            }
            loss
        },
        |_| Ok(0.0),
    );
    match res {
        Err(Error::Training { step, message }) => {
            assert_eq!(step, 2);
            assert!(message.contains("w"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn config_text_and_env_overrides() {
    let src = parse_config_text("# comment\nlearning_rate = 2e-3\nloss_scope = targets-only\n\ngrad_clip=1.5 # trailing\n")
        .unwrap()
        .with_env([("MTLAFFECT_LEARNING_RATE", "7e-4"), ("HOME", "/root"), ("MTLAFFECT_ORACLE", "true")])
        .unwrap();
    let regime = src.regime("disc:two-step-val-ec".parse().unwrap()).unwrap();
    assert!(regime.oracle);
    let base = TrainConfig::defaults(&regime, Profile::Published);
    let cfg = src.apply(&base).unwrap();
    assert_eq!(cfg.learning_rate, 7e-4);
    assert_eq!(cfg.loss_scope, LossScope::TargetsOnly);
    assert_eq!(cfg.grad_clip, Some(1.5));
    assert_eq!(cfg.lambda, base.lambda);

    let none = parse_config_text("grad_clip = none\nmix_ec_fraction=0.5").unwrap();
    let cfg = none.apply(&cfg).unwrap();
    assert_eq!((cfg.grad_clip, cfg.mix_ec_fraction), (None, Some(0.5)));
}

#[test]
fn config_errors_name_the_key() {
    let key_of = |r: Result<ConfigSource>| match r {
        Err(Error::Config { key, .. }) => key,
        other => panic!("{other:?}"),
    };
    assert_eq!(key_of(parse_config_text("learnin_rate = 1")), "learnin_rate");
    assert_eq!(key_of(ConfigSource::default().with_env([("MTLAFFECT_BOGUS", "1")])), "bogus");
    assert!(matches!(parse_config_text("just words"), Err(Error::Parse { line: 1, .. })));

    let base = small_config();
    for (text, key) in [
        ("batch_size = -3", "batch_size"),
        ("warmup_fraction = 1.0", "warmup_fraction"),
        ("early_stop_patience = 0", "early_stop_patience"),
        ("lambda = 1.5", "lambda"),
    ] {
        match parse_config_text(text).unwrap().apply(&base) {
            Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
    }
    let src = parse_config_text("domain_adapt = true").unwrap();
    assert!(matches!(src.regime("disc:joint".parse().unwrap()), Err(Error::Regime { .. })));
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.cfg");
    std::fs::write(&p, "profile = published\nsetting = joint\nseed = 9\n").unwrap();
    let none: [(&str, &str); 0] = [];
    let (regime, cfg) =
        load_train_config(Some(&p), "gen:single-val".parse().unwrap(), Profile::Desk, none).unwrap();
    assert_eq!(regime.id(), "gen:joint");
    assert_eq!((cfg.learning_rate, cfg.seed), (8e-3, 9));
}
