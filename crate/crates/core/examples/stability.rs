//! Random initial history, zero drive: watch both models fall back to rest.

use dcmz::masking::DriveSequence;
use dcmz::{checks, fast_model, SystemParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dcmz::Result<()> {
    let params = SystemParams::default();
    let n = params.mask_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let history: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.4..0.4)).collect();
    let drive = DriveSequence::from_phases(n, vec![0.0; 50 * n])?;
    let trace = fast_model::forward(&drive, &params, Some(&history))?;
    for p in [0, 1, 2, 5, 10, 20, 30, 40, 49] {
        let peak = trace.period(p).iter().fold(0.0f64, |m, a| m.max(a.abs()));
        println!("period {p:2}: max |a| = {peak:.3e}");
    }
    println!();
    println!("{}", checks::stability_suite(&params, 50, 1)?);
    Ok(())
}
