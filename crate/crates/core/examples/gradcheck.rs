//! Backpropagation through time against central differences on one small
//! streaming instance, then the full randomized suite.

use dcmz::bptt::{gradcheck, Encoding, Example};
use dcmz::masking::MaskSet;
use dcmz::{checks, SystemParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dcmz::Result<()> {
    let n_mask = 6;
    let params = SystemParams::new(0.241, 0.8, 0.241 * 0.5 * n_mask as f64, std::f64::consts::FRAC_PI_4, n_mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut masks = MaskSet::uniform(n_mask, 2, 3, 0.8, &mut rng);
    for u in masks.u.iter_mut() {
        *u = rng.gen_range(-2.0..2.0);
    }
    let inputs: Vec<f64> = (0..4 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = [0, 2, 1, 1];
    let ex = Example { inputs: &inputs, labels: &labels };

    let report = gradcheck(&masks, &params, Encoding::Streaming, &ex, 1e-6)?;
    println!("{:>5}  {:>14}  {:>14}", "param", "backprop", "finite diff");
    for (i, (a, n)) in report.components.iter().enumerate().take(12) {
        println!("{i:5}  {a:+.7e}  {n:+.7e}");
    }
    println!("... {} parameters, max relative error {:.2e}\n", report.n_params, report.max_rel_error);

    println!("{}", checks::gradcheck_suite(1)?);
    Ok(())
}
