use apct_core::exec::Exec;
use apct_core::geometry::{gen_shape, PointCloud};
use apct_core::model::{forward, prepare, ForwardOptions, MaskSource, ModelConfig, ModelParams};
use apct_core::rng::StreamKey;
use apct_core::tensor::{AdamW, AdamWState, Tape};
use apct_core::training::{lr_at, total_loss_var, train, TrainConfig};
use apct_core::Error;
use proptest::prelude::*;

fn small_set(per_class: usize, seed: u64) -> Vec<PointCloud> {
    (0..8)
        .flat_map(|c| (0..per_class).map(move |i| (c, i)))
        .map(|(c, i)| {
            let mut pc = gen_shape(c, seed * 1000 + (c * per_class + i) as u64, 128).unwrap();
            pc.id = format!("s{c}_{i}");
            pc
        })
        .collect()
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 3, warmup_epochs: 1, batch_size: 4, seed, ..TrainConfig::default() }
}

fn bits(p: &ModelParams<f32>) -> Vec<u32> {
    p.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn identical_seeds_give_identical_runs_in_either_execution_mode() {
    let cfg = ModelConfig::desk();
    let data = small_set(2, 1);
    let eval = small_set(1, 2);
    let (pa, la) = train(&cfg, &quick(7), &data, Some(&eval), Exec::Parallel, None).unwrap();
    let (pb, lb) = train(&cfg, &quick(7), &data, Some(&eval), Exec::Sequential, None).unwrap();
    assert!(la.same_trajectory(&lb));
    assert_eq!(bits(&pa), bits(&pb));
    assert_eq!(la.epochs.len(), 3);
    assert!(la.epochs.iter().all(|r| r.eval_acc.is_some()));

    let (pc, lc) = train(&cfg, &quick(8), &data, None, Exec::Parallel, None).unwrap();
    assert_ne!(bits(&pa), bits(&pc));
    assert!(lc.epochs.iter().all(|r| r.eval_acc.is_none()));
}

#[test]
fn all_four_ablation_cells_train() {
    let cfg = ModelConfig::desk();
    let data = small_set(1, 3);
    for (drop, aux) in [(false, false), (false, true), (true, false), (true, true)] {
        let tc = TrainConfig { drop, aux, epochs: 2, ..quick(0) };
        let (params, log) = train(&cfg, &tc, &data, None, Exec::Parallel, None).unwrap();
        assert!(params.is_finite());
        assert!(log.epochs.iter().all(|r| r.train_loss.is_finite()));
    }
}

#[test]
fn log_round_trips_through_jsonl() {
    let (_, log) = train(&ModelConfig::desk(), &TrainConfig { epochs: 2, ..quick(1) }, &small_set(1, 4), None, Exec::Parallel, None).unwrap();
    let text = log.to_jsonl().unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(apct_core::training::TrainLog::from_jsonl(&text).unwrap(), log);
}

#[test]
fn one_small_step_lowers_the_sample_loss() {
    let cfg = ModelConfig::desk();
    for seed in 0..10u64 {
        let mut params = ModelParams::<f32>::init(&cfg, seed).unwrap();
        let pc = gen_shape(seed as usize % 8, 500 + seed, 256).unwrap();
        let input = prepare::<f32>(&pc, &cfg).unwrap();
        let label = input.label as usize;

        let (before, grads, masks) = {
            let mut tape = Tape::new();
            let mut r = StreamKey::new(seed).with_str("mask").rng();
            let out = forward(&mut tape, &params, &input, ForwardOptions::train(true, true), MaskSource::Sample(&mut r)).unwrap();
            let loss = total_loss_var(&mut tape, out.logits, &out.aux_probs, label, 1.0).unwrap();
            let before = tape.value(loss).item();
            let mut g = tape.backward(loss).unwrap();
            let grads: Vec<_> = out
                .params
                .iter()
                .zip(params.tensors())
                .map(|(&v, t)| g.take(v).unwrap_or_else(|| apct_core::tensor::Tensor::zeros(t.shape())))
                .collect();
            (before, grads, out.masks)
        };

        let mut state = AdamWState::for_params(params.tensors());
        let names = params.names().to_vec();
        AdamW::default().step(params.tensors_mut(), &grads, &names, &mut state, 1e-4, 0.05).unwrap();

        let mut tape = Tape::new();
        let out = forward(&mut tape, &params, &input, ForwardOptions::train(true, true), MaskSource::Replay(&masks)).unwrap();
        let loss = total_loss_var(&mut tape, out.logits, &out.aux_probs, label, 1.0).unwrap();
        let after = tape.value(loss).item();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn divergence_returns_the_last_good_parameters() {
    let cfg = ModelConfig::desk();
    let tc = TrainConfig { lr: 1e30, min_lr: 1e29, weight_decay: 0.0, ..quick(0) };
    match train(&cfg, &tc, &small_set(1, 5), None, Exec::Parallel, None) {
        Err(Error::Diverged { checkpoint, step, .. }) => {
            assert!(step >= 1);
            assert!(checkpoint.is_finite());
        }
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn bad_inputs_are_rejected_before_training() {
    let cfg = ModelConfig::desk();
    assert!(matches!(train(&cfg, &quick(0), &[], None, Exec::Parallel, None), Err(Error::Config(_))));
    let mut data = small_set(1, 6);
    data[0].label = 8;
    assert!(matches!(train(&cfg, &quick(0), &data, None, Exec::Parallel, None), Err(Error::Class(8))));
    let tc = TrainConfig { warmup_epochs: 3, epochs: 3, ..quick(0) };
    assert!(matches!(train(&cfg, &tc, &small_set(1, 6), None, Exec::Parallel, None), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn schedule_is_continuous(
        total in 2usize..400,
        warm_frac in 0.0f64..0.9,
        base in 1e-5f64..1e-2,
        min_frac in 0.0f64..0.5,
    ) {
        let warmup = ((total as f64) * warm_frac) as usize;
        let min = (base * min_frac).max(1e-9);
        let bound = if warmup > 0 { base / warmup as f64 } else { 0.0 }
            + (base - min) * std::f64::consts::PI / 2.0 / (total - warmup) as f64;
        let mut prev = lr_at(0, total, warmup, base, min).unwrap();
        for s in 1..=total {
            let lr = lr_at(s, total, warmup, base, min).unwrap();
            prop_assert!((lr - prev).abs() <= bound + 1e-15, "step {}: {} -> {}", s, prev, lr);
            let floor = if s < warmup { 0.0 } else { min };
            prop_assert!(lr >= floor - 1e-15 && lr <= base + 1e-15);
            prev = lr;
        }
        prop_assert!((lr_at(total, total, warmup, base, min).unwrap() - min).abs() < 1e-15);
        prop_assert!(lr_at(total + 1, total, warmup, base, min).is_err());
    }
}
