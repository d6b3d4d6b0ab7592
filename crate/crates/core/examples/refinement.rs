//! Mask-predict decoding with a masked-conditional network: the output after
//! each round, and BLEU as a function of the number of rounds.

use nat_engine::corpus::{generate_synthetic, strip_eos, SyntheticSpec, Task};
use nat_engine::eval::bleu_stripped;
use nat_engine::infnet::Arch;
use nat_engine::training::{train_nat_baseline, Preset, TrainConfig};

fn main() -> nat_engine::Result<()> {
    let spec = |n, seed| SyntheticSpec::new(Task::ShiftedSubstitution, n, 3, 8, 20, seed);
    let train = generate_synthetic(&spec(2000, 1))?;
    let dev = generate_synthetic(&spec(100, 2))?;
    let (net, _) = train_nat_baseline(&train, &dev, Arch::MaskedConditional, &TrainConfig { epochs: 10, ..Preset::Baseline.config() })?;

    let sources = dev.sources();
    let lengths: Vec<usize> = dev.pairs.iter().map(|p| p.target.len()).collect();
    let first = [sources[0]];
    let mut cur = net.decode_at_lengths(&first, &lengths[..1])?;
    println!("reference  {:?}", dev.vocab_tgt.decode(strip_eos(&dev.pairs[0].target)));
    println!("round 1    {:?}", dev.vocab_tgt.decode(strip_eos(&cur[0].tokens)));
    for i in 1..4 {
        cur = net.refine_batch(&first, &cur, i, 4)?;
        println!("round {}    {:?}", i + 1, dev.vocab_tgt.decode(strip_eos(&cur[0].tokens)));
    }

    for iterations in [1, 2, 4, 10] {
        let hyps: Vec<Vec<usize>> = net
            .decode(&sources, Some(&lengths), 3, iterations)?
            .into_iter()
            .map(|s| s.tokens)
            .collect();
        println!("{iterations:>2} rounds: BLEU {:.2}", bleu_stripped(&hyps, &dev.targets())?);
    }
    let beam = net.decode(&sources, None, 3, 1)?;
    let hyps: Vec<Vec<usize>> = beam.into_iter().map(|s| s.tokens).collect();
    println!("predicted lengths (beam 3): BLEU {:.2}", bleu_stripped(&hyps, &dev.targets())?);
    Ok(())
}
