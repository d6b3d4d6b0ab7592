//! Checks the reverse-mode gradient of the teacher's generalized energy with
//! respect to the inference-network logits against central differences.

use nat_engine::autodiff::{grad_check, Graph};
use nat_engine::operators::{NoiseStream, OperatorKind};
use nat_engine::teacher::{TeacherConfig, TeacherModel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> nat_engine::Result<()> {
    let mut cfg = TeacherConfig::new(8, 8);
    cfg.dropout = 0.0;
    let teacher = TeacherModel::new(cfg, 11)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let source = [5, 6, 7];
    for steps in 1..=3 {
        let z = Array2::from_shape_fn((steps, 8), |_| rng.gen_range(-2.0..2.0));
        let err = grad_check(
            |g: &mut Graph, z| {
                let p = teacher.params.bind(g, false);
                let mut noise = NoiseStream::new(0);
                teacher.generalized_energy_single(g, &p, &source, z, OperatorKind::Sx, OperatorKind::Sx, &mut noise)
            },
            &z,
            1e-5,
        )?;
        println!("T = {steps}: max relative error {err:.2e}");
    }
    Ok(())
}
