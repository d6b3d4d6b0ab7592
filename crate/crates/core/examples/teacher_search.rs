//! Trains a small autoregressive teacher on a copy task, then compares
//! greedy search, beam search and the exhaustive minimum of its energy.

use nat_engine::corpus::{generate_synthetic, SyntheticSpec, Task};
use nat_engine::eval::brute_force_argmin;
use nat_engine::teacher::{TeacherConfig, TeacherModel};
use nat_engine::training::{train_teacher, Preset, TrainConfig};

fn main() -> nat_engine::Result<()> {
    let train = generate_synthetic(&SyntheticSpec::new(Task::Copy, 400, 2, 5, 10, 1))?;
    let dev = generate_synthetic(&SyntheticSpec::new(Task::Copy, 50, 2, 5, 10, 2))?;
    let cfg = TrainConfig { epochs: 25, ..Preset::Teacher.config() };
    let (teacher, report) = train_teacher(&train, &dev, &cfg)?;
    println!("{}", report.to_tsv());

    let source = &dev.pairs[0].source;
    let greedy = teacher.greedy_decode(source, 12)?;
    let beam = teacher.beam_search(source, 4, 12)?;
    println!("source {:?}", dev.vocab_src.decode(source));
    println!("greedy {:?}  E = {:.4}", dev.vocab_tgt.decode(&greedy), teacher.energy(source, &greedy)?);
    println!("beam   {:?}  E = {:.4}", dev.vocab_tgt.decode(&beam.tokens), teacher.energy(source, &beam.tokens)?);

    // exhaustive search is only feasible for a tiny output vocabulary
    let tiny = TeacherModel::new(TeacherConfig::new(6, 6), 3)?;
    let src = [5, 5];
    let (best, e) = brute_force_argmin(&tiny, &src, 3)?;
    let b = tiny.beam_search(&src, 216, 3)?;
    println!("\ntiny teacher: argmin {best:?} E = {e:.6}; beam {:?} E = {:.6}", b.tokens, tiny.energy(&src, &b.tokens)?);
    Ok(())
}
