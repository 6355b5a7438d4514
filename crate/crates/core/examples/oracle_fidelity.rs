//! Compares the fast model with a fine integration of the delay equation at
//! the laboratory parameters.

use dcmz::masking::DriveSequence;
use dcmz::{checks, dde_oracle, fast_model, SystemParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dcmz::Result<()> {
    let params = SystemParams::default();
    let n = params.mask_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let drive = DriveSequence::from_phases(n, z)?;

    let fast = fast_model::forward(&drive, &params, None)?;
    let fine = dde_oracle::integrate(&drive, &params, params.step_len() / 100.0, &|_| 0.0)?;
    let oracle = dde_oracle::averaged(&fine, params.step_len())?;
    println!("step   fast       oracle");
    for j in (2 * n..2 * n + 10).chain(3 * n - 3..3 * n) {
        println!("{j:5}  {:+.6}  {:+.6}", fast.a_bar[j], oracle[j]);
    }
    println!();
    println!("{}", checks::oracle_suite(&params, 20, 1.0, 1)?);
    Ok(())
}
