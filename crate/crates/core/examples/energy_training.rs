//! The whole training pipeline through the library API: synthetic data, a
//! teacher, distillation, a cross-entropy baseline and energy training,
//! ending in a comparison of dev energy and BLEU.

use nat_engine::corpus::{generate_synthetic, SyntheticSpec, Task};
use nat_engine::infnet::Arch;
use nat_engine::training::{
    dev_energy_and_bleu, distill, train_engine, train_nat_baseline, train_teacher, Preset, TrainConfig,
};

fn main() -> nat_engine::Result<()> {
    let spec = |n, seed| SyntheticSpec::new(Task::ShiftedSubstitution, n, 3, 6, 14, seed);
    let train = generate_synthetic(&spec(1500, 1))?;
    let dev = generate_synthetic(&spec(100, 2))?;

    let (teacher, _) = train_teacher(&train, &dev, &TrainConfig { epochs: 20, ..Preset::Teacher.config() })?;
    let (distilled, stats) = distill(&teacher, &train, 5)?;
    println!("distilled {} pairs ({} greedy fallbacks)", stats.pairs, stats.greedy_fallbacks);

    let nat = TrainConfig { epochs: 6, ..Preset::Baseline.config() };
    let (reference_net, _) = train_nat_baseline(&train, &dev, Arch::MaskedConditional, &nat)?;
    let (distill_net, _) = train_nat_baseline(&distilled, &dev, Arch::MaskedConditional, &nat)?;
    let engine_cfg = TrainConfig { epochs: 4, ..Preset::Engine.config() };
    let (engine_net, report) = train_engine(&teacher, &train, &dev, &distill_net, &engine_cfg)?;
    println!("{}", report.to_tsv());

    for (name, net) in [("reference", &reference_net), ("distill", &distill_net), ("engine", &engine_net)] {
        let (e, b) = dev_energy_and_bleu(&teacher, net, &dev)?;
        println!("{name:<10} dev energy {e:7.3}  BLEU {b:6.2}");
    }
    Ok(())
}
