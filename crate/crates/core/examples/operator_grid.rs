//! A miniature 5x5 operator grid: one short energy-training run per
//! (O1, O2) pair, run on several threads.

use nat_engine::corpus::{generate_synthetic, SyntheticSpec, Task};
use nat_engine::infnet::Arch;
use nat_engine::operators::OperatorKind;
use nat_engine::training::{operator_grid, train_nat_baseline, train_teacher, Preset, TrainConfig};

fn main() -> nat_engine::Result<()> {
    let spec = |n, seed| SyntheticSpec::new(Task::Copy, n, 2, 5, 12, seed);
    let train = generate_synthetic(&spec(600, 1))?;
    let dev = generate_synthetic(&spec(60, 2))?;
    let (teacher, _) = train_teacher(&train, &dev, &TrainConfig { epochs: 20, ..Preset::Teacher.config() })?;
    let (init, _) = train_nat_baseline(&train, &dev, Arch::BirnnTagger, &TrainConfig { epochs: 4, ..Preset::Baseline.config() })?;
    let cfg = TrainConfig { epochs: 3, ..Preset::Engine.config() };
    let grid = operator_grid(&teacher, &train, &dev, &init, &cfg, 4)?;
    println!("{}", grid.to_tsv());
    for o1 in OperatorKind::ALL {
        println!("row {:<3} mean energy {:.3}", o1.name(), grid.row_mean_energy(o1).unwrap_or(f64::NAN));
    }
    Ok(())
}
