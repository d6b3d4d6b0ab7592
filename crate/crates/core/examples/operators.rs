//! The five logit-to-simplex operators on one vector: forward outputs and
//! the gradient each one passes back for the same upstream signal.

use nat_engine::operators::{apply_backward, apply_forward, sample_gumbel, NoiseStream, OperatorKind};

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:7.4}")).collect::<Vec<_>>().join(" ")
}

fn main() -> nat_engine::Result<()> {
    let z = [1.2, -0.3, 0.4, 2.0, -1.1];
    let upstream = [0.5, -1.0, 0.25, 0.0, 1.0];
    let mut stream = NoiseStream::new(7);
    let noise = sample_gumbel(z.len(), &mut stream);

    println!("logits    {}", fmt(&z));
    println!("upstream  {}\n", fmt(&upstream));
    for kind in OperatorKind::ALL {
        let n = kind.needs_noise().then_some(noise.as_slice());
        let fwd = apply_forward(kind, &z, n)?;
        let bwd = apply_backward(kind, &z, n, &upstream)?;
        println!("{:<4} fwd {}   (sum {:.3})", kind.name(), fmt(&fwd), fwd.iter().sum::<f64>());
        println!("     bwd {}", fmt(&bwd));
    }
    Ok(())
}
