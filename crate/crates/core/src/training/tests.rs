use super::*;
use crate::corpus::{generate_synthetic, SyntheticSpec, Task};

fn corpus(n: usize, seed: u64) -> ParallelCorpus {
    generate_synthetic(&SyntheticSpec::new(Task::Copy, n, 2, 4, 9, seed))
    .unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        epochs,
        token_budget: 64,
        weight_decay: 0.0,
        ..TrainConfig::default()
    }
}

#[test]
fn seed_mixing_is_stable_and_sensitive() {
    assert_eq!(mix_seed(&[1, 2]), mix_seed(&[1, 2]));
    assert_ne!(mix_seed(&[1, 2]), mix_seed(&[2, 1]));
    assert_ne!(mix_seed(&[1]), mix_seed(&[1, 0]));
}

#[test]
fn zero_epochs_return_the_initial_model() {
    let (train, dev) = (corpus(20, 1), corpus(5, 2));
    let (net, report) = train_nat_baseline(&train, &dev, Arch::BirnnTagger, &quick(0)).unwrap();
    assert!(report.epochs.is_empty());
    assert_eq!(net.params, new_network(Arch::BirnnTagger, &train, &dev, &quick(0)).unwrap().params);
}

fn zero_param(net: &mut InferenceNetwork, name: &str) {
    let i = net.params.names().iter().position(|n| n == name).unwrap();
    net.params.values_mut()[i].fill(0.0);
}

#[test]
fn uniform_network_loss_is_log_vocab_plus_log_lengths() {
    let (train, dev) = (corpus(6, 3), corpus(2, 4));
    for arch in [Arch::BirnnTagger, Arch::MaskedConditional] {
        let mut net = new_network(arch, &train, &dev, &quick(1)).unwrap();
        for name in ["out.w", "out.b", "length.w", "length.b"] {
            zero_param(&mut net, name);
        }
        let mut g = Graph::new();
        let p = net.params.bind(&mut g, false);
        let l = nat_loss(&net, &mut g, &p, &train.sources(), &train.targets(), 7).unwrap();
        let expected = 9f64.ln() + (net.max_len() as f64).ln();
        assert!((g.scalar(l) - expected).abs() < 1e-12, "{arch}");
    }
}

#[test]
fn teacher_training_is_deterministic_and_learns() {
    let (train, dev) = (corpus(60, 5), corpus(10, 6));
    let (a, ra) = train_teacher(&train, &dev, &quick(3)).unwrap();
    let (b, rb) = train_teacher(&train, &dev, &quick(3)).unwrap();
    assert_eq!(a.params.hash(), b.params.hash());
    assert_eq!(ra, rb);
    assert_eq!(ra.epochs.len(), 4);
    let losses: Vec<f64> = ra.epochs.iter().filter_map(|e| e.train_loss).collect();
    assert!(losses.last() < losses.first(), "{losses:?}");
    let best = ra.epochs.iter().filter_map(|e| e.dev_bleu).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(ra.best_metric, Some(best));
}

#[test]
fn beam_one_distillation_is_greedy() {
    let (train, dev) = (corpus(12, 7), corpus(4, 8));
    let (teacher, _) = train_teacher(&train, &dev, &quick(1)).unwrap();
    let (distilled, stats) = distill(&teacher, &train, 1).unwrap();
    assert_eq!(distilled.len(), train.len());
    assert_eq!(stats.pairs, train.len());
    let max_len = max_decode_len(&train.sources());
    for (p, d) in train.pairs.iter().zip(&distilled.pairs) {
        assert_eq!(d.source, p.source);
        assert_eq!(d.target.last(), Some(&crate::corpus::EOS));
        let g = teacher.greedy_decode(&p.source, max_len).unwrap();
        if g.last() == Some(&crate::corpus::EOS) {
            assert_eq!(d.target, g);
        }
    }
}

#[test]
fn engine_training_keeps_the_teacher_and_never_loses_to_init() {
    let (train, dev) = (corpus(40, 9), corpus(8, 10));
    let (teacher, _) = train_teacher(&train, &dev, &quick(2)).unwrap();
    let hash = teacher.params.hash();
    let (init, _) = train_nat_baseline(&train, &dev, Arch::BirnnTagger, &quick(1)).unwrap();
    for o2 in [OperatorKind::Sx, OperatorKind::St] {
        let cfg = TrainConfig {
            o2,
            early_stop: EarlyStop::DevEnergy,
            ..quick(2)
        };
        let (net, report) = train_engine(&teacher, &train, &dev, &init, &cfg).unwrap();
        assert_eq!(teacher.params.hash(), hash);
        let e0 = report.epochs[0].dev_energy.unwrap();
        let best = report.best_metric.unwrap();
        assert!(best.is_finite() && best <= e0);
        // the length head is untouched
        for i in init.length_head_params() {
            assert_eq!(net.params.values()[i], init.params.values()[i]);
        }
    }
}

#[test]
fn baseline_rejects_energy_selection() {
    let (train, dev) = (corpus(6, 11), corpus(2, 12));
    let cfg = TrainConfig {
        early_stop: EarlyStop::DevEnergy,
        ..quick(1)
    };
    assert!(train_nat_baseline(&train, &dev, Arch::BirnnTagger, &cfg).is_err());
}

#[test]
fn grid_fills_every_cell() {
    let (train, dev) = (corpus(16, 13), corpus(4, 14));
    let (teacher, _) = train_teacher(&train, &dev, &quick(1)).unwrap();
    let (init, _) = train_nat_baseline(&train, &dev, Arch::MaskedConditional, &quick(1)).unwrap();
    let grid = operator_grid(&teacher, &train, &dev, &init, &quick(1), 3).unwrap();
    assert_eq!(grid.cells.len(), 25);
    for c in &grid.cells {
        assert!(c.error.is_none(), "{c:?}");
        assert!(c.dev_energy.unwrap().is_finite());
        assert!((0.0..=100.0).contains(&c.dev_bleu.unwrap()));
    }
    let tsv = grid.to_tsv();
    let header: Vec<&str> = tsv.lines().next().unwrap().split('\t').map(str::trim).collect();
    assert_eq!(header, ["o1\\o2", "sx", "stl", "sg", "st", "gx"]);
    // thread count does not change results
    let serial = operator_grid(&teacher, &train, &dev, &init, &quick(1), 1).unwrap();
    assert_eq!(serial, grid);
}

#[test]
fn lr_sweep_keeps_the_best_run() {
    let cfg = TrainConfig {
        lr_grid: vec![1e-3, 2e-3, 3e-3],
        early_stop: EarlyStop::DevEnergy,
        ..TrainConfig::default()
    };
    let (m, r, table) = sweep_lr(&cfg, |c| {
        let mut r = ExperimentReport::new("x", c);
        r.push(EpochRecord {
            epoch: 0,
            train_loss: None,
            dev_bleu: None,
            dev_energy: Some((c.lr - 2e-3).abs()),
        });
        Ok((c.lr, r))
    })
    .unwrap();
    assert_eq!(m, 2e-3);
    assert_eq!(r.config.lr, 2e-3);
    assert_eq!(table.len(), 3);
}
