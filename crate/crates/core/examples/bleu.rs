//! Corpus BLEU on whitespace-tokenised sentences.

use nat_engine::eval::bleu;

fn main() -> nat_engine::Result<()> {
    let split = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let hyps = ["the cat sat on the mat", "a dog barked loudly"].map(split);
    let refs = ["the cat sat on a mat", "the dog barked loudly"].map(split);
    println!("BLEU = {:.2}", bleu(&hyps, &refs)?);
    println!("identical = {:.2}", bleu(&refs, &refs)?);
    Ok(())
}
