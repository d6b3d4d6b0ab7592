//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test --release --test acceptance`, or pick
//! criteria by number (`... -- 1 2 4`). A criterion that misses its target
//! prints FAIL but the process still exits 0 so the rest of the test suite
//! keeps running; set `ACCEPTANCE_STRICT=1` to turn any FAIL into a nonzero
//! exit. A panic inside a criterion is always a nonzero exit.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nat_engine::autodiff::{grad_check, Graph, Matrix};
use nat_engine::cli;
use nat_engine::corpus::{generate_synthetic, ParallelCorpus, SentencePair, SyntheticSpec, Task, Vocabulary, EOS};
use nat_engine::eval::{bleu_stripped, brute_force_argmin};
use nat_engine::infnet::{Arch, InferenceNetwork};
use nat_engine::operators::{apply_backward, apply_forward, sample_gumbel, NoiseStream, OperatorKind};
use nat_engine::teacher::{TeacherConfig, TeacherModel};
use nat_engine::training::{
    dev_energy_and_bleu, distill, operator_grid, train_engine, train_nat_baseline, train_teacher, Preset,
    TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: impl Into<String>) -> Line {
    Line {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn c1_operators() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut stream = NoiseStream::new(2);
    let mut worst_sum: f64 = 0.0;
    let mut negative = false;
    let mut st_stl_equal = true;
    let mut fd_err: f64 = 0.0;
    let mut stl_exact = true;
    let mut st_sx_exact = true;
    for i in 0..1000 {
        let n = rng.gen_range(2..20);
        let scale = if i % 2 == 0 { 3.0 } else { 50.0 };
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let noise = sample_gumbel(n, &mut stream);
        for kind in OperatorKind::ALL {
            let nz = kind.needs_noise().then_some(noise.as_slice());
            let y = apply_forward(kind, &z, nz).unwrap();
            worst_sum = worst_sum.max((y.iter().sum::<f64>() - 1.0).abs());
            negative |= y.iter().any(|&v| v < 0.0);
        }
        st_stl_equal &= apply_forward(OperatorKind::St, &z, None).unwrap()
            == apply_forward(OperatorKind::Stl, &z, None).unwrap();

        let up: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        stl_exact &= apply_backward(OperatorKind::Stl, &z, None, &up).unwrap() == up;
        st_sx_exact &= apply_backward(OperatorKind::St, &z, None, &up).unwrap()
            == apply_backward(OperatorKind::Sx, &z, None, &up).unwrap();
        if i % 2 == 0 {
            for (kind, nz) in [(OperatorKind::Sx, None), (OperatorKind::Gx, Some(noise.as_slice()))] {
                let analytic = apply_backward(kind, &z, nz, &up).unwrap();
                // u.y equals u_m + sum_i (u_i - u_m) y_i on the simplex; the
                // second form drops the O(1) part that cancels in the
                // difference, so saturated outputs are resolved to full
                // precision
                let y0 = apply_forward(kind, &z, nz).unwrap();
                let m = y0.iter().enumerate().fold(0, |b, (i, &v)| if v > y0[b] { i } else { b });
                let f = |zz: &[f64]| -> f64 {
                    let y = apply_forward(kind, zz, nz).unwrap();
                    y.iter().zip(&up).map(|(a, b)| a * (b - up[m])).sum()
                };
                let eps = 1e-6;
                let mut numeric = vec![0.0; n];
                let mut probe = z.clone();
                for k in 0..n {
                    probe[k] = z[k] + eps;
                    let plus = f(&probe);
                    probe[k] = z[k] - eps;
                    let minus = f(&probe);
                    probe[k] = z[k];
                    numeric[k] = (plus - minus) / (2.0 * eps);
                }
                let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let norm = numeric.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
                fd_err = fd_err.max(diff / norm);
            }
        }
    }
    let pass = worst_sum <= 1e-9 && !negative && st_stl_equal && fd_err < 1e-6 && stl_exact && st_sx_exact;
    line(
        pass,
        format!(
            "simplex max |sum-1| {worst_sum:.1e}, negatives {negative}; ST==STL fwd {st_stl_equal}; \
             SX/GX bwd vs FD rel err {fd_err:.1e} (< 1e-6); STL bwd == upstream {stl_exact}; ST bwd == SX bwd {st_sx_exact}"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn random_target(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<usize> {
    let len = rng.gen_range(1..=max_len);
    let mut t: Vec<usize> = (0..len - 1)
        .map(|_| loop {
            let k = rng.gen_range(0..vocab);
            if k != EOS {
                break k;
            }
        })
        .collect();
    t.push(EOS);
    t
}

fn generalized(teacher: &TeacherModel, source: &[usize], z: &Matrix, o1: OperatorKind, o2: OperatorKind) -> f64 {
    let mut g = Graph::new();
    let p = teacher.params.bind(&mut g, false);
    let zv = g.constant(z.clone());
    let mut noise = NoiseStream::new(0);
    let e = teacher.generalized_energy_single(&mut g, &p, source, zv, o1, o2, &mut noise).unwrap();
    g.scalar(e)
}

fn c2_one_hot_reduction() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_discrete, mut worst_sx): (f64, f64) = (0.0, 0.0);
    for i in 0..100 {
        let (sv, tv) = (rng.gen_range(6..10), rng.gen_range(6..10));
        let teacher = TeacherModel::new(TeacherConfig::new(sv, tv), 100 + i).unwrap();
        let source: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(5..sv)).collect();
        let target = random_target(&mut rng, tv, 5);
        let exact = teacher.energy(&source, &target).unwrap();
        let one_hot = Matrix::from_shape_fn((target.len(), tv), |(t, k)| if target[t] == k { 1.0 } else { 0.0 });
        for o1 in [OperatorKind::Stl, OperatorKind::St] {
            for o2 in [OperatorKind::Stl, OperatorKind::St] {
                worst_discrete = worst_discrete.max((generalized(&teacher, &source, &one_hot, o1, o2) - exact).abs());
            }
        }
        let saturated = one_hot.mapv(|v| if v > 0.5 { 40.0 } else { -40.0 });
        worst_sx = worst_sx.max((generalized(&teacher, &source, &saturated, OperatorKind::Sx, OperatorKind::Sx) - exact).abs());
    }
    line(
        worst_discrete <= 1e-9 && worst_sx <= 1e-6,
        format!("100 instances: STL/ST max |diff| {worst_discrete:.1e} (<= 1e-9), SX at +-40 max |diff| {worst_sx:.1e} (<= 1e-6)"),
    )
}

// ---------------------------------------------------------------- 3

fn c3_gradient_check() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for steps in 1..=3 {
        for i in 0..4 {
            let teacher = TeacherModel::new(TeacherConfig::new(8, 8), 10 * steps as u64 + i).unwrap();
            let source: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(5..8)).collect();
            let z = Matrix::from_shape_fn((steps, 8), |_| rng.gen_range(-2.0..2.0));
            let err = grad_check(
                |g: &mut Graph, z| {
                    let p = teacher.params.bind(g, false);
                    let mut noise = NoiseStream::new(0);
                    teacher.generalized_energy_single(g, &p, &source, z, OperatorKind::Sx, OperatorKind::Sx, &mut noise)
                },
                &z,
                1e-5,
            )
            .unwrap();
            worst = worst.max(err);
            count += 1;
        }
    }
    line(worst < 1e-4, format!("{count} instances, |V|=8, T in 1..=3: max rel err {worst:.1e} (< 1e-4)"))
}

// ---------------------------------------------------------------- 4

/// Small corpus over a 6-word target vocabulary (one non-reserved word) whose
/// output length depends on the source, so trained teachers are not trivial.
fn counting_corpus(rng: &mut ChaCha8Rng, n: usize) -> ParallelCorpus {
    let vocab_src = Vocabulary::synthetic(10).unwrap();
    let vocab_tgt = Vocabulary::synthetic(6).unwrap();
    let pairs = (0..n)
        .map(|_| {
            let source: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(5..10)).collect();
            let count = source.iter().filter(|&&t| t >= 8).count().min(2);
            let mut target = vec![5; count];
            target.push(EOS);
            SentencePair { source, target }
        })
        .collect();
    ParallelCorpus {
        pairs,
        vocab_src,
        vocab_tgt,
    }
}

fn c4_oracle_equivalence() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut agree = 0;
    let mut worst: f64 = 0.0;
    for t in 0..10u64 {
        let train = counting_corpus(&mut rng, 60);
        let dev = counting_corpus(&mut rng, 10);
        let cfg = TrainConfig {
            epochs: 1 + (t as usize % 4),
            seed: t,
            ..Preset::Teacher.config()
        };
        let (teacher, _) = train_teacher(&train, &dev, &cfg).unwrap();
        for _ in 0..5 {
            let source: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(5..10)).collect();
            let (_, oracle) = brute_force_argmin(&teacher, &source, 3).unwrap();
            let beam = teacher.beam_search(&source, 216, 3).unwrap();
            let e = teacher.energy(&source, &beam.tokens).unwrap();
            if e == oracle {
                agree += 1;
            }
            worst = worst.max((e - oracle).abs());
        }
    }
    line(agree == 50, format!("|V|=6, max_len=3, beam 216: {agree}/50 exact energy matches (max |diff| {worst:.1e})"))
}

// ---------------------------------------------------------------- 5-7 shared

struct Pipeline {
    teacher: TeacherModel,
    dev: ParallelCorpus,
    train: ParallelCorpus,
    reference: InferenceNetwork,
    distilled: InferenceNetwork,
    engine: InferenceNetwork,
    not_worse_share: f64,
    seconds: f64,
}

fn build_pipeline(swap_prob: f64, teacher_epochs: usize) -> Pipeline {
    let start = Instant::now();
    let spec = |n, seed| SyntheticSpec {
        swap_prob,
        ..SyntheticSpec::new(Task::ShiftedSubstitution, n, 3, 8, 20, seed)
    };
    let train = generate_synthetic(&spec(2000, 1)).unwrap();
    let dev = generate_synthetic(&spec(200, 2)).unwrap();
    let tcfg = TrainConfig {
        epochs: teacher_epochs,
        ..Preset::Teacher.config()
    };
    let (teacher, _) = train_teacher(&train, &dev, &tcfg).unwrap();
    let (dtrain, _) = distill(&teacher, &train, 5).unwrap();
    let e_ref = teacher.energies(&train.sources(), &train.targets()).unwrap();
    let e_dis = teacher.energies(&train.sources(), &dtrain.targets()).unwrap();
    let not_worse_share = e_dis.iter().zip(&e_ref).filter(|(d, r)| d <= r).count() as f64 / e_ref.len() as f64;
    let ncfg = Preset::Baseline.config();
    let (reference, _) = train_nat_baseline(&train, &dev, Arch::MaskedConditional, &ncfg).unwrap();
    let (distilled, _) = train_nat_baseline(&dtrain, &dev, Arch::MaskedConditional, &ncfg).unwrap();
    let (engine, _) = train_engine(&teacher, &train, &dev, &distilled, &Preset::Engine.config()).unwrap();
    Pipeline {
        teacher,
        dev,
        train,
        reference,
        distilled,
        engine,
        not_worse_share,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn c5_regime_ordering(p: &Pipeline) -> Line {
    let (er, br) = dev_energy_and_bleu(&p.teacher, &p.reference, &p.dev).unwrap();
    let (ed, bd) = dev_energy_and_bleu(&p.teacher, &p.distilled, &p.dev).unwrap();
    let (ee, be) = dev_energy_and_bleu(&p.teacher, &p.engine, &p.dev).unwrap();
    let pass = ee < ed && ed < er && be >= bd - 1.0 && p.seconds < 600.0;
    line(
        pass,
        format!(
            "dev energy engine {ee:.3} < distill {ed:.3} < reference {er:.3}: {}; \
             BLEU engine {be:.2} >= distill {bd:.2} - 1: {}; BLEU reference {br:.2}; \
             distilled target energy <= reference on {:.1}% of pairs; pipeline {:.0} s (< 600)",
            ee < ed && ed < er,
            be >= bd - 1.0,
            100.0 * p.not_worse_share,
            p.seconds
        ),
    )
}

fn c6_operator_grid(p: &Pipeline) -> Line {
    let start = Instant::now();
    let grid = operator_grid(&p.teacher, &p.train, &p.dev, &p.distilled, &Preset::Engine.config(), 4).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let sx = grid.row_mean_energy(OperatorKind::Sx).unwrap_or(f64::NAN);
    let stl = grid.row_mean_energy(OperatorKind::Stl).unwrap_or(f64::NAN);
    let min = grid.min_energy().unwrap_or(f64::NAN);
    let chosen = grid.cell(OperatorKind::Sx, OperatorKind::St).dev_energy.unwrap_or(f64::NAN);
    let failed = grid.cells.iter().filter(|c| c.error.is_some()).count();
    let pass = sx < stl && chosen <= 1.05 * min && secs < 1800.0;
    println!("{}", grid.to_tsv());
    line(
        pass,
        format!(
            "row means SX {sx:.3} < STL {stl:.3}: {}; (SX,ST) {chosen:.3} within 5% of min {min:.3}: {}; \
             failed cells {failed}; {secs:.0} s with --jobs 4 (< 1800)",
            sx < stl,
            chosen <= 1.05 * min
        ),
    )
}

fn refine_bleu(net: &InferenceNetwork, dev: &ParallelCorpus, oracle: bool, iterations: usize) -> f64 {
    let lengths: Vec<usize> = dev.pairs.iter().map(|p| p.target.len()).collect();
    let hyps: Vec<Vec<usize>> = net
        .decode(&dev.sources(), oracle.then_some(lengths.as_slice()), 3, iterations)
        .unwrap()
        .into_iter()
        .map(|s| s.tokens)
        .collect();
    bleu_stripped(&hyps, &dev.targets()).unwrap()
}

fn c7_refinement(p: &Pipeline) -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for (mode, oracle) in [("oracle length", true), ("length beam 3", false)] {
        let b1 = refine_bleu(&p.distilled, &p.dev, oracle, 1);
        let b10 = refine_bleu(&p.distilled, &p.dev, oracle, 10);
        let e1 = refine_bleu(&p.engine, &p.dev, oracle, 1);
        pass &= b10 >= b1 && e1 >= b1;
        parts.push(format!("{mode}: baseline {b1:.2} -> {b10:.2} at 10 iters, engine {e1:.2} at 1 iter"));
    }
    line(pass, parts.join("; "))
}

// ---------------------------------------------------------------- 8

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Manifest with the wall-clock fields dropped and the run directory
/// replaced by a placeholder.
fn normalized_manifest(bytes: &[u8], root: &Path) -> String {
    let mut m: cli::RunManifest = serde_json::from_slice(bytes).unwrap();
    m.started_unix = 0;
    m.finished_unix = 0;
    serde_json::to_string(&m).unwrap().replace(&root.display().to_string(), "<run>")
}

fn run_cli_pipeline(root: &Path) {
    let run = root.display().to_string();
    let data = root.join("data").display().to_string();
    let steps: [&[&str]; 11] = [
        &["gen-data", "--n-train", "150", "--n-dev", "30", "--n-test", "30", "--seed", "11"],
        &["train-teacher", "--epochs", "3"],
        &["distill"],
        &["train-nat", "--targets", "reference", "--epochs", "2"],
        &["train-nat", "--targets", "distill", "--epochs", "2"],
        &["train-engine", "--epochs", "2"],
        &["grid", "--epochs", "1", "--jobs", "3"],
        &["evaluate", "--regimes", "teacher,baseline,distill,engine", "--oracle-length", "false"],
        &["decode", "--net", &format!("{run}/engine"), "--iterations", "3"],
        &["refine-eval", "--iterations", "1,10"],
        &["evaluate", "--regimes", "engine", "--out", &format!("{run}/eval-oracle")],
    ];
    for step in steps {
        let mut args: Vec<String> = step.iter().map(|s| s.to_string()).collect();
        args.extend(["--run-dir".into(), run.clone(), "--data-dir".into(), data.clone(), "--seed".into(), "11".into()]);
        cli::run(&args).unwrap();
    }
}

fn c8_determinism() -> Line {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_cli_pipeline(a.path());
    run_cli_pipeline(b.path());
    let fa = files_under(a.path());
    let fb = files_under(b.path());
    let same_set = fa.keys().eq(fb.keys());
    let mut differing = Vec::new();
    for (name, bytes) in &fa {
        let Some(other) = fb.get(name) else { continue };
        let equal = if name.to_string_lossy().ends_with(".manifest.json") {
            normalized_manifest(bytes, a.path()) == normalized_manifest(other, b.path())
        } else {
            bytes == other
        };
        if !equal {
            differing.push(name.display().to_string());
        }
    }
    line(
        same_set && differing.is_empty(),
        format!(
            "two CLI pipelines (11 commands incl. grid): {} files, identical set {same_set}, differing {:?}",
            fa.len(),
            differing
        ),
    )
}

// ---------------------------------------------------------------- driver

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w == id);
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failures = 0;
    let mut panics = 0;

    let mut report = |id: &str, name: &str, limit: Option<f64>, f: &mut dyn FnMut() -> Line| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f()));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(l) => {
                let in_time = limit.is_none_or(|t| secs < t);
                (l.pass && in_time, l.detail)
            }
            Err(e) => {
                panics += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass && !id.ends_with('*') {
            failures += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("[{verdict}] {id:<3} {name}: {detail} [{secs:.1} s]");
    };

    if selected("1") {
        report("1", "operator suite", Some(10.0), &mut c1_operators);
    }
    if selected("2") {
        report("2", "one-hot reduction", Some(30.0), &mut c2_one_hot_reduction);
    }
    if selected("3") {
        report("3", "generalized-energy gradient check", Some(60.0), &mut c3_gradient_check);
    }
    if selected("4") {
        report("4", "beam search vs exhaustive argmin", Some(60.0), &mut c4_oracle_equivalence);
    }
    if ["5", "6", "7"].iter().any(|id| selected(id)) {
        let mut plain = None;
        report("5", "regime ordering (shifted-substitution, vocab 20, 2k pairs)", None, &mut || {
            let p = build_pipeline(0.0, Preset::Teacher.config().epochs);
            let l = c5_regime_ordering(&p);
            plain = Some(p);
            l
        });
        if let Some(p) = &plain {
            if selected("5") {
                report("5*", "supplementary: same ordering with two references per long source (swap_prob 0.5)", None, &mut || {
                    let q = build_pipeline(0.5, 30);
                    c5_regime_ordering(&q)
                });
            }
            if selected("6") {
                report("6", "operator grid direction", None, &mut || c6_operator_grid(p));
            }
            if selected("7") {
                report("7", "refinement direction", None, &mut || c7_refinement(p));
            }
        }
    }
    if selected("8") {
        report("8", "determinism across two CLI runs", None, &mut c8_determinism);
    }

    println!("acceptance: {failures} criterion failure(s), {panics} panic(s)");
    if panics > 0 || (strict && failures > 0) {
        std::process::exit(1);
    }
}
