//! End-to-end learning checks on the copy task. Models are trained once and
//! shared by every test in this file.

use std::sync::OnceLock;

use nat_engine::cli;
use nat_engine::corpus::{generate_synthetic, ParallelCorpus, SyntheticSpec, Task, EOS};
use nat_engine::eval::bleu_stripped;
use nat_engine::infnet::{Arch, InferenceNetwork};
use nat_engine::teacher::TeacherModel;
use nat_engine::training::{distill, max_decode_len, train_nat_baseline, train_teacher, Preset, TrainConfig};

struct Fixture {
    train: ParallelCorpus,
    dev: ParallelCorpus,
    teacher: TeacherModel,
    tagger: InferenceNetwork,
    cmlm: InferenceNetwork,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let spec = |n, seed| SyntheticSpec::new(Task::Copy, n, 3, 8, 20, seed);
        let train = generate_synthetic(&spec(2000, 21)).unwrap();
        let dev = generate_synthetic(&spec(200, 22)).unwrap();
        let tcfg = TrainConfig {
            epochs: 60,
            ..Preset::Teacher.config()
        };
        let (teacher, _) = train_teacher(&train, &dev, &tcfg).unwrap();
        let ncfg = Preset::Baseline.config();
        let (tagger, _) = train_nat_baseline(&train, &dev, Arch::BirnnTagger, &ncfg).unwrap();
        let (cmlm, _) = train_nat_baseline(&train, &dev, Arch::MaskedConditional, &ncfg).unwrap();
        Fixture {
            train,
            dev,
            teacher,
            tagger,
            cmlm,
        }
    })
}

fn oracle_bleu(net: &InferenceNetwork, dev: &ParallelCorpus) -> f64 {
    let lengths: Vec<usize> = dev.pairs.iter().map(|p| p.target.len()).collect();
    let hyps: Vec<Vec<usize>> = net
        .decode(&dev.sources(), Some(&lengths), 1, 1)
        .unwrap()
        .into_iter()
        .map(|s| s.tokens)
        .collect();
    bleu_stripped(&hyps, &dev.targets()).unwrap()
}

#[test]
fn copy_teacher_reproduces_held_out_sources() {
    let f = fixture();
    let sources = f.dev.sources();
    let out = f.teacher.greedy_decode_batch(&sources, max_decode_len(&sources)).unwrap();
    let exact = out
        .iter()
        .zip(&sources)
        .filter(|(o, s)| o.len() == s.len() + 1 && o[..s.len()] == s[..] && o[s.len()] == EOS)
        .count();
    let share = exact as f64 / sources.len() as f64;
    assert!(share >= 0.95, "greedy copies {share:.3}");
    let bleu = bleu_stripped(&out, &f.dev.targets()).unwrap();
    assert!(bleu > 90.0, "teacher dev BLEU {bleu:.2}");
}

#[test]
fn copy_baselines_exceed_80_bleu_at_oracle_length() {
    let f = fixture();
    for (name, net) in [("tagger", &f.tagger), ("cmlm", &f.cmlm)] {
        let b = oracle_bleu(net, &f.dev);
        assert!(b > 80.0, "{name} BLEU {b:.2}");
    }
}

#[test]
fn copy_length_head_ranks_source_plus_one_first() {
    let f = fixture();
    let sources = f.dev.sources();
    let preds = f.cmlm.predict_length_batch(&sources, 1).unwrap();
    let hits = preds.iter().zip(&sources).filter(|(p, s)| p.best() == s.len() + 1).count();
    let share = hits as f64 / sources.len() as f64;
    assert!(share >= 0.9, "top-1 length correct on {share:.3}");
}

#[test]
fn copy_length_beam_is_close_to_oracle_length() {
    let f = fixture();
    for net in [&f.tagger, &f.cmlm] {
        let hyps: Vec<Vec<usize>> = net
            .decode(&f.dev.sources(), None, 3, 1)
            .unwrap()
            .into_iter()
            .map(|s| s.tokens)
            .collect();
        let beam = bleu_stripped(&hyps, &f.dev.targets()).unwrap();
        let oracle = oracle_bleu(net, &f.dev);
        assert!(oracle - beam < 2.0, "oracle {oracle:.2} vs length beam {beam:.2}");
    }
}

#[test]
fn distilled_targets_rarely_cost_more_energy_than_references() {
    let f = fixture();
    let (d, stats) = distill(&f.teacher, &f.train, 5).unwrap();
    assert_eq!(d.len(), f.train.len());
    assert_eq!(stats.pairs, f.train.len());
    let src = f.train.sources();
    let e_ref = f.teacher.energies(&src, &f.train.targets()).unwrap();
    let e_dis = f.teacher.energies(&src, &d.targets()).unwrap();
    let share = e_dis.iter().zip(&e_ref).filter(|(a, b)| a <= b).count() as f64 / e_ref.len() as f64;
    assert!(share >= 0.8, "distilled energy <= reference on {share:.3}");
}

#[test]
fn refine_eval_does_not_lose_bleu_with_more_rounds() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    f.dev.write_text(&data.join("dev")).unwrap();
    f.dev.vocab_src.save(&data.join("vocab.src")).unwrap();
    f.dev.vocab_tgt.save(&data.join("vocab.tgt")).unwrap();
    f.cmlm.save(&dir.path().join("distill")).unwrap();
    let args: Vec<String> = [
        "refine-eval",
        "--regimes",
        "distill",
        "--iterations",
        "1,10",
        "--run-dir",
        &dir.path().display().to_string(),
        "--data-dir",
        &data.display().to_string(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cli::run(&args).unwrap();
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("refine.json")).unwrap()).unwrap();
    let row = &table["rows"][0][1];
    let (one, ten) = (row[0].as_f64().unwrap(), row[1].as_f64().unwrap());
    assert!(ten >= one, "1 round {one:.2}, 10 rounds {ten:.2}");
}
